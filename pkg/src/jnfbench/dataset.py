"""Simulated six-speaker datasets: rendering, on-disk layout and manifest validation.

Layout::

    <root>/<split>/manifest.jsonl
    <root>/<split>/<sample_id>/noisy.wav    3 channels, float32
    <root>/<split>/<sample_id>/target.wav   mono, dry target aligned to mic 0
    <root>/<split>/<sample_id>/noise.wav    3 channels, sum of reverberant interferers

Each manifest line holds ``id``, ``split``, ``files``, ``scene``, ``seed``,
``snr_db``, ``sources`` (utterance ids, target first) and ``sample_rate``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .acoustics import N_INTERFERERS, RenderedSample, Scene, render_scene, sample_scene, simulate_rir
from .corpus import substream
from .signal import read_wav, write_wav

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
DEFAULT_COUNTS = {"train": 6000, "val": 1000, "test": 600}
SOURCES_PER_SAMPLE = 1 + N_INTERFERERS


class DatasetError(ValueError):
    pass


@dataclass
class SplitPlan:
    split: str
    count: int
    pool: list[str]


def plan_splits(utterance_ids: Sequence[str], counts: dict[str, int]) -> list[SplitPlan]:
    """Partition utterances into disjoint per-split pools proportional to sample counts."""
    active = [(s, n) for s, n in counts.items() if n > 0]
    total = sum(n for _, n in active)
    ids = list(utterance_ids)
    need = SOURCES_PER_SAMPLE * len(active)
    if len(ids) < need:
        raise DatasetError(f"corpus too small: {len(ids)} utterances, need at least {need} "
                           f"({SOURCES_PER_SAMPLE} per split for splits {[s for s, _ in active]})")
    plans, start = [], 0
    for j, (split, n) in enumerate(active):
        remaining = len(ids) - start
        reserve = SOURCES_PER_SAMPLE * (len(active) - j - 1)
        if j == len(active) - 1:
            size = remaining
        else:
            size = max(SOURCES_PER_SAMPLE, int(round(len(ids) * n / total)))
            size = min(size, remaining - reserve)
        plans.append(SplitPlan(split, n, ids[start:start + size]))
        start += size
    return plans


def _fit_length(x: np.ndarray, n: int) -> np.ndarray:
    if len(x) >= n:
        return x[:n]
    return x[np.arange(n) % len(x)]


def render_sample(corpus, pool: Sequence[str], split: str, index: int, root_seed: int) -> tuple[RenderedSample, dict]:
    """Render sample ``index`` of ``split``; returns the sample and its manifest record."""
    rng = substream(root_seed, f"simulate/{split}", index)
    scene_seed = int(rng.integers(0, 2**31 - 1))
    scene = sample_scene(scene_seed)
    chosen = [pool[i] for i in rng.choice(len(pool), SOURCES_PER_SAMPLE, replace=False)]
    target = corpus.load(chosen[0])
    n = len(target)
    interferers = [_fit_length(corpus.load(u), n) for u in chosen[1:]]
    rir = simulate_rir(scene)
    sample = render_scene(scene, target, interferers, rir=rir)
    sample.sample_id = f"{split}-{index:05d}"
    record = {
        "id": sample.sample_id,
        "split": split,
        "seed": scene_seed,
        "snr_db": round(float(sample.snr_db), 6),
        "sources": chosen,
        "sample_rate": sample.sample_rate,
        "n_samples": n,
        "scene": scene.to_dict(),
        "files": {k: f"{sample.sample_id}/{k}.wav" for k in ("noisy", "target", "noise")},
    }
    return sample, record


def simulate_split(corpus, plan: SplitPlan, root_seed: int, out_dir: str | Path | None = None,
                   progress=None) -> list[RenderedSample]:
    """Render all samples of one split, writing WAVs and the manifest when ``out_dir`` is given."""
    samples, records = [], []
    split_dir = Path(out_dir) / plan.split if out_dir is not None else None
    if split_dir is not None:
        split_dir.mkdir(parents=True, exist_ok=True)
    for j in range(plan.count):
        sample, record = render_sample(corpus, plan.pool, plan.split, j, root_seed)
        if split_dir is not None:
            d = split_dir / sample.sample_id
            d.mkdir(exist_ok=True)
            write_wav(d / "noisy.wav", sample.noisy, sample.sample_rate)
            write_wav(d / "target.wav", sample.target, sample.sample_rate)
            write_wav(d / "noise.wav", sample.noise, sample.sample_rate)
        samples.append(sample)
        records.append(record)
        if progress is not None:
            progress(plan.split, j + 1, plan.count)
    if split_dir is not None:
        write_manifest(split_dir / "manifest.jsonl", records)
    return samples


def simulate_dataset(corpus, counts: dict[str, int], root_seed: int,
                     out_dir: str | Path | None = None, progress=None) -> dict[str, list[RenderedSample]]:
    return {p.split: simulate_split(corpus, p, root_seed, out_dir, progress)
            for p in plan_splits(corpus.ids, counts)}


def write_manifest(path: str | Path, records: Iterable[dict]):
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest {path} not found")
    records = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{line_no}: malformed manifest line ({exc.msg})") from None
    return records


def validate_split(split_dir: str | Path) -> list[dict]:
    split_dir = Path(split_dir)
    records = read_manifest(split_dir / "manifest.jsonl")
    ids = [r["id"] for r in records]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"{split_dir}: duplicate sample ids")
    for r in records:
        for rel in r["files"].values():
            if not (split_dir / rel).exists():
                raise DatasetError(f"{split_dir}: missing file {rel} for sample {r['id']}")
    return records


def validate_dataset(root: str | Path) -> dict[str, list[dict]]:
    """Check every split present under ``root`` and source-utterance disjointness across splits."""
    root = Path(root)
    manifests = {s: validate_split(root / s) for s in SPLITS if (root / s / "manifest.jsonl").exists()}
    if not manifests:
        raise DatasetError(f"{root}: no split manifests found")
    used = {s: {u for r in recs for u in r["sources"]} for s, recs in manifests.items()}
    names = list(used)
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            shared = used[names[a]] & used[names[b]]
            if shared:
                raise DatasetError(f"splits {names[a]} and {names[b]} share {len(shared)} source utterances "
                                   f"(e.g. {sorted(shared)[0]})")
    return manifests


def load_split(root: str | Path, split: str, limit: int | None = None) -> list[RenderedSample]:
    """Load a split after validating the whole dataset."""
    manifests = validate_dataset(root)
    if split not in manifests:
        raise DatasetError(f"{root}: split {split!r} not found")
    split_dir = Path(root) / split
    samples = []
    for r in manifests[split][:limit]:
        noisy, rate = read_wav(split_dir / r["files"]["noisy"])
        target, _ = read_wav(split_dir / r["files"]["target"])
        noise, _ = read_wav(split_dir / r["files"]["noise"])
        samples.append(RenderedSample(noisy=noisy, target=target[0], noise=noise, snr_db=r["snr_db"],
                                      scene=Scene.from_dict(r["scene"]), sample_rate=rate, sample_id=r["id"]))
    return samples


def snr_summary(samples: Sequence[RenderedSample]) -> dict[str, float]:
    snr = np.array([s.snr_db for s in samples])
    return {"n": len(snr), "mean": float(snr.mean()), "p2.5": float(np.percentile(snr, 2.5)),
            "p97.5": float(np.percentile(snr, 97.5)),
            "frac_in_-9_2": float(np.mean((snr >= -9) & (snr <= 2)))}


__all__ = [
    "DEFAULT_COUNTS", "DatasetError", "SPLITS", "SplitPlan", "load_split", "plan_splits", "read_manifest",
    "render_sample", "simulate_dataset", "simulate_split", "snr_summary", "validate_dataset",
    "validate_split", "write_manifest",
]
