"""SI-SDR, processing pipelines (beamformer / neural filter / post-filter chains) and ΔSI-SDR reports."""
from __future__ import annotations

import csv
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import signal as sig
from .acoustics import RenderedSample
from .beamforming import oracle_mvdr_enhance
from .neural.checkpoint import load_checkpoint
from .neural.model import Model, predict_mask

SI_SDR_CAP_DB = 100.0


class PipelineError(ValueError):
    pass


def si_sdr(est: np.ndarray, ref: np.ndarray) -> float:
    """Scale-invariant SDR in dB, capped at +-100 dB."""
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"si_sdr: length mismatch {est.shape} vs {ref.shape}")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ValueError("si_sdr: reference signal has zero energy")
    alpha = float(np.dot(est, ref)) / ref_energy
    proj = alpha * ref
    num = float(np.dot(proj, proj))
    res = proj - est
    den = float(np.dot(res, res))
    if den == 0.0:
        return SI_SDR_CAP_DB
    if num == 0.0:
        return -SI_SDR_CAP_DB
    return float(np.clip(10 * np.log10(num / den), -SI_SDR_CAP_DB, SI_SDR_CAP_DB))


# ---------------------------------------------------------------------------
# pipelines

IDENTITY = "identity"
MVDR = "mvdr-oracle"


@dataclass
class PipelineSpec:
    """Ordered stages: ``"identity"``, ``"mvdr-oracle"``, or a model (object or checkpoint path)."""

    stages: list
    tag: str = ""

    def __post_init__(self):
        if not self.stages:
            raise PipelineError("a pipeline needs at least one stage")
        self.stages = [_load_stage(s) for s in self.stages]
        if not self.tag:
            self.tag = "+".join(_stage_name(s) for s in self.stages)
        multichannel = True
        for s in self.stages:
            if isinstance(s, Model) and not s.config.single_channel and not multichannel:
                raise PipelineError(f"stage {_stage_name(s)}: a spatial filter cannot follow a single-channel stage")
            if s == MVDR and not multichannel:
                raise PipelineError(f"stage {MVDR}: needs the multichannel mixture")
            if s != IDENTITY:
                multichannel = False

    @classmethod
    def parse(cls, text: str) -> "PipelineSpec":
        """``"mvdr-oracle+pf.ckpt"`` style description."""
        return cls([p.strip() for p in text.split("+") if p.strip()], tag=text)


def _load_stage(stage):
    if isinstance(stage, Model) or stage in (IDENTITY, MVDR):
        return stage
    path = Path(stage)
    if not path.exists():
        raise FileNotFoundError(f"pipeline stage {stage!r}: no such checkpoint")
    model = load_checkpoint(path)
    model.source = str(path)
    return model


def _stage_name(stage) -> str:
    if isinstance(stage, Model):
        return getattr(stage, "source", None) and Path(stage.source).stem or stage.config.variant
    return str(stage)


def run_pipeline(spec: PipelineSpec, sample: RenderedSample, seed: int = 0,
                 params: sig.StftParams = sig.DEFAULT_STFT) -> np.ndarray:
    """Apply the stages in the STFT domain and return the mono output waveform.

    A pipeline made only of identity stages returns the reference channel
    unchanged (no STFT round trip).
    """
    if all(s == IDENTITY for s in spec.stages):
        return sample.noisy[0].copy()
    rng = np.random.default_rng(seed)
    n = sample.n_samples
    current = sig.stft(sample.noisy, params)  # (C, F, T) while multichannel
    for stage in spec.stages:
        name = _stage_name(stage)
        if stage == IDENTITY:
            continue
        if stage == MVDR:
            if current.ndim != 3:
                raise PipelineError(f"stage {name}: expected a multichannel spectrogram, got {current.shape}")
            speech = sig.stft(sample.reverberant_target, params)
            noise = sig.stft(sample.noise, params)
            current = oracle_mvdr_enhance(current, speech, noise)
            continue
        cfg = stage.config
        if cfg.single_channel:
            ref = current[0] if current.ndim == 3 else current
            net_in = ref
        else:
            if current.ndim != 3 or current.shape[0] != cfg.channels:
                raise PipelineError(f"stage {name}: {cfg.variant} needs a {cfg.channels}-channel spectrogram, "
                                    f"got {current.shape}")
            ref, net_in = current[0], current
        if ref.shape[0] != cfg.n_bins:
            raise PipelineError(f"stage {name}: model expects {cfg.n_bins} bins, got {ref.shape[0]}")
        mask = sig.uncompress_mask(predict_mask(stage, net_in, rng))
        current = sig.apply_mask(mask, ref)
    if current.ndim == 3:
        current = current[0]
    return sig.istft(current, params, n)


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    pipeline: str
    split: str
    sample_ids: list[str]
    si_sdr_in: np.ndarray
    si_sdr_out: np.ndarray
    external: np.ndarray | None = field(default=None, repr=False)

    @property
    def delta(self) -> np.ndarray:
        return self.si_sdr_out - self.si_sdr_in

    @property
    def n(self) -> int:
        return len(self.sample_ids)

    @property
    def mean_delta(self) -> float:
        return float(np.mean(self.delta))

    @property
    def ci95(self) -> float:
        if self.n < 2:
            return 0.0
        return float(1.96 * np.std(self.delta, ddof=1) / np.sqrt(self.n))

    def rows(self) -> list[dict]:
        out = []
        for j, sid in enumerate(self.sample_ids):
            row = {"sample_id": sid, "pipeline": self.pipeline, "si_sdr_in": self.si_sdr_in[j],
                   "si_sdr_out": self.si_sdr_out[j], "delta": self.delta[j]}
            if self.external is not None:
                row["external"] = self.external[j]
            out.append(row)
        return out


def external_metric(command: str, ref: np.ndarray, est: np.ndarray, sample_rate: int) -> float:
    """Run ``command`` with ``{ref}`` and ``{est}`` replaced by WAV paths; the last output line is the score."""
    with tempfile.TemporaryDirectory() as tmp:
        ref_path, est_path = Path(tmp) / "ref.wav", Path(tmp) / "est.wav"
        sig.write_wav(ref_path, ref, sample_rate)
        sig.write_wav(est_path, est, sample_rate)
        argv = [a.format(ref=ref_path, est=est_path) for a in shlex.split(command)]
        out = subprocess.run(argv, capture_output=True, text=True, check=True).stdout
    lines = out.strip().splitlines()
    if not lines:
        raise RuntimeError(f"external metric {command!r} printed nothing")
    return float(lines[-1].split()[-1])


def evaluate(pipelines: Sequence[PipelineSpec], samples: Sequence[RenderedSample], split: str = "test",
             out_dir: str | Path | None = None, metric_command: str | None = None,
             seed: int = 0) -> list[EvalReport]:
    """ΔSI-SDR of every pipeline on every sample, relative to the noisy reference channel."""
    if not samples:
        raise ValueError("evaluate: empty split")
    base = np.array([si_sdr(s.noisy[0], s.target) for s in samples])
    ids = [s.sample_id or str(j) for j, s in enumerate(samples)]
    reports = []
    for spec in pipelines:
        out = np.empty(len(samples))
        ext = np.empty(len(samples)) if metric_command else None
        for j, s in enumerate(samples):
            est = run_pipeline(spec, s, seed=seed + j)
            out[j] = si_sdr(est, s.target)
            if ext is not None:
                ext[j] = external_metric(metric_command, s.target, est, s.sample_rate)
        reports.append(EvalReport(spec.tag, split, ids, base.copy(), out, ext))
    if out_dir is not None:
        write_reports(reports, out_dir)
    return reports


def write_reports(reports: Sequence[EvalReport], out_dir: str | Path):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    has_ext = any(r.external is not None for r in reports)
    fields = ["sample_id", "pipeline", "si_sdr_in", "si_sdr_out", "delta"] + (["external"] if has_ext else [])
    with open(out_dir / "per_sample.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in reports:
            for row in r.rows():
                w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pipeline", "split", "n", "delta_si_sdr_db", "ci95_db", "si_sdr_in_db", "si_sdr_out_db"])
        for r in reports:
            w.writerow([r.pipeline, r.split, r.n, repr(r.mean_delta), repr(r.ci95),
                        repr(float(np.mean(r.si_sdr_in))), repr(float(np.mean(r.si_sdr_out)))])
    (out_dir / "summary.txt").write_text(format_table(reports) + "\n")


def format_table(reports: Sequence[EvalReport]) -> str:
    header = ("pipeline", "n", "ΔSI-SDR [dB]", "95% CI", "in [dB]", "out [dB]")
    rows = [(r.pipeline, str(r.n), f"{r.mean_delta:+.2f}", f"±{r.ci95:.2f}",
             f"{np.mean(r.si_sdr_in):.2f}", f"{np.mean(r.si_sdr_out):.2f}") for r in reports]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(header)]
    line = lambda cells: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    return "\n".join([line(header), line(["-" * w for w in widths])] + [line(r) for r in rows])


__all__ = [
    "EvalReport", "IDENTITY", "MVDR", "PipelineError", "PipelineSpec", "SI_SDR_CAP_DB", "evaluate",
    "external_metric", "format_table", "run_pipeline", "si_sdr", "write_reports",
]
