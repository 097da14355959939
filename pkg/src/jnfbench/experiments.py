"""Desk-scale ablation protocol: train every filter variant on a small simulated set and compare ΔSI-SDR.

One run (one seed) simulates its own train/val/test scenes with synthetic
speech, trains the seven variants with reduced LSTM sizes and a short
schedule, and evaluates every variant on the test scenes. The trend checks
compare the mean ΔSI-SDR values; a verdict over several seeds is taken by
majority.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

from .corpus import SyntheticCorpus, substream
from .dataset import SOURCES_PER_SAMPLE, simulate_dataset
from .evaluation import EvalReport, PipelineSpec, evaluate
from .neural.model import VARIANTS, ModelConfig, build_model
from .training import TrainConfig, center_crop, fit_input_scale, train

log = logging.getLogger(__name__)

SPATIAL = tuple(v for v in VARIANTS if v != "PF")


@dataclass
class DeskProtocol:
    n_train: int = 200
    n_val: int = 20
    n_test: int = 20
    hidden: tuple[int, int] = (64, 32)
    pf_hidden: tuple[int, int] = (64, 64)
    max_epochs: int = 6
    patience: int = 20
    crop_seconds: float = 0.5
    val_crop_seconds: float = 2.0
    batch_size: int = 6
    dtype: str = "float32"
    variants: tuple[str, ...] = VARIANTS


@dataclass
class DeskResult:
    seed: int
    reports: dict[str, EvalReport]
    best_epochs: dict[str, int] = field(default_factory=dict)
    seconds: dict[str, float] = field(default_factory=dict)

    @property
    def means(self) -> dict[str, float]:
        return {v: r.mean_delta for v, r in self.reports.items()}


def trend_checks(means: dict[str, float]) -> dict[str, bool]:
    """(a) spatial variants above 0 dB and above PF, (b) FT-JNF above T-JNF, (c) FT-JNF above FT-NSF."""
    spatial = [means[v] for v in SPATIAL if v in means]
    return {
        "a": bool(all(m > 0 for m in spatial) and all(means["PF"] < m for m in spatial)),
        "b": bool(means["FT-JNF"] > means["T-JNF"]),
        "c": bool(means["FT-JNF"] > means["FT-NSF"]),
    }


def majority(results: list[dict[str, bool]]) -> dict[str, bool]:
    keys = results[0].keys()
    return {k: sum(r[k] for r in results) * 2 > len(results) for k in keys}


def desk_data(seed: int, protocol: DeskProtocol):
    counts = {"train": protocol.n_train, "val": protocol.n_val, "test": protocol.n_test}
    corpus = SyntheticCorpus(seed=seed, size=SOURCES_PER_SAMPLE * sum(counts.values()))
    return simulate_dataset(corpus, counts, seed)


def train_variant(variant: str, data, protocol: DeskProtocol, seed: int, input_scale: float):
    hidden = protocol.pf_hidden if variant == "PF" else protocol.hidden
    cfg = ModelConfig(variant=variant, hidden=hidden, input_scale=input_scale, seed=seed, dtype=protocol.dtype)
    model = build_model(cfg, substream(seed, f"desk/init/{variant}"))
    tcfg = TrainConfig(batch_size=protocol.batch_size, crop_seconds=protocol.crop_seconds,
                       max_epochs=protocol.max_epochs, patience=protocol.patience,
                       seed=int(substream(seed, f"desk/train/{variant}").integers(2**31 - 1)))
    val = [center_crop(s, protocol.val_crop_seconds) for s in data["val"]]
    state = train(model, data["train"], tcfg, val)
    return model, state


def run_desk(seed: int, protocol: DeskProtocol | None = None, data=None) -> DeskResult:
    protocol = protocol or DeskProtocol()
    t0 = time.perf_counter()
    if data is None:
        data = desk_data(seed, protocol)
    log.info("seed %d: data ready in %.0f s", seed, time.perf_counter() - t0)
    scale = fit_input_scale(data["train"])
    result = DeskResult(seed, {})
    for variant in protocol.variants:
        t = time.perf_counter()
        model, state = train_variant(variant, data, protocol, seed, scale)
        report = evaluate([PipelineSpec([model], tag=variant)], data["test"], "test",
                          seed=int(substream(seed, "desk/eval").integers(2**31 - 1)))[0]
        result.reports[variant] = report
        result.best_epochs[variant] = state.best_epoch
        result.seconds[variant] = time.perf_counter() - t
        log.info("seed %d %s: ΔSI-SDR %+.2f dB (best epoch %d, %.0f s)", seed, variant, report.mean_delta,
                 state.best_epoch, result.seconds[variant])
    return result


__all__ = ["DeskProtocol", "DeskResult", "SPATIAL", "desk_data", "majority", "run_desk", "train_variant",
           "trend_checks"]
