"""Training: noise-mask derivation, time/magnitude l1 loss, cropping and the optimizer loop."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import signal as sig
from .acoustics import RenderedSample
from .neural import autodiff as ad
from .neural.autodiff import Tensor
from .neural.checkpoint import save_checkpoint
from .neural.model import Model

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 6
    crop_seconds: float = 3.0
    max_epochs: int = 250
    patience: int = 20
    alpha: float = 10.0
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip: float | None = None
    seed: int = 0
    speech_only_loss: bool = False
    max_steps: int | None = None

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        self.betas = tuple(self.betas)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


# ---------------------------------------------------------------------------
# masks and loss


def derive_noise_mask(mask_s: np.ndarray) -> np.ndarray:
    """Noise mask from a speech mask: Re(M_V) = 1 - Re(M_S), Im(M_V) = -Im(M_S)."""
    mask_s = np.asarray(mask_s, dtype=np.complex128)
    return (1.0 - mask_s.real) - 1j * mask_s.imag


def stft_tensor(wave: Tensor, params: sig.StftParams) -> tuple[Tensor, Tensor]:
    """Differentiable STFT of (..., N) real waveforms -> (Re, Im) each (..., F, T)."""
    length = wave.shape[-1]
    dtype = wave.dtype
    spec = ad.linear_map(
        [wave],
        lambda x: _pack(sig.stft(x, params), dtype),
        lambda g: (sig.stft_adjoint(g[..., 0] + 1j * g[..., 1], params, length).astype(dtype),),
    )
    return spec[..., 0], spec[..., 1]


def istft_tensor(re: Tensor, im: Tensor, params: sig.StftParams, length: int) -> Tensor:
    """Differentiable inverse STFT of (Re, Im) (..., F, T) -> (..., N)."""
    dtype = re.dtype

    def adjoint(g):
        c = sig.istft_adjoint(g, params)
        return c.real.astype(dtype), c.imag.astype(dtype)

    return ad.linear_map([re, im], lambda r, i: sig.istft(r + 1j * i, params, length).astype(dtype), adjoint)


def _pack(spec: np.ndarray, dtype) -> np.ndarray:
    return np.stack([spec.real, spec.imag], axis=-1).astype(dtype)


def complex_mask_product(m_re: Tensor, m_im: Tensor, ref: np.ndarray) -> tuple[Tensor, Tensor]:
    """(m_re + j m_im) * ref for a constant complex reference."""
    dtype = m_re.dtype
    yr = Tensor(ref.real.astype(dtype))
    yi = Tensor(ref.imag.astype(dtype))
    return ad.sub(ad.mul(m_re, yr), ad.mul(m_im, yi)), ad.add(ad.mul(m_re, yi), ad.mul(m_im, yr))


def uncompress_tensor(compressed: Tensor) -> tuple[Tensor, Tensor]:
    """(N, F, T, 2) compressed mask -> uncompressed (Re, Im); inverse of tanh(M/2)."""
    re = ad.mul(ad.atanh_clipped(compressed[..., 0], sig.MASK_CLIP_EPS), 2.0)
    im = ad.mul(ad.atanh_clipped(compressed[..., 1], sig.MASK_CLIP_EPS), 2.0)
    return re, im


def combined_loss(s: np.ndarray, s_hat: Tensor, v: np.ndarray | None = None, v_hat: Tensor | None = None,
                  alpha: float = 10.0, params: sig.StftParams = sig.DEFAULT_STFT) -> Tensor:
    """Sum over u in {s, v} of alpha * ||u - u_hat||_1 + || |U| - |U_hat| ||_1.

    Magnitudes are taken from the STFT of the time-domain signals. Passing
    ``v=None`` keeps only the speech terms.
    """
    terms = [(s, s_hat)]
    if v is not None:
        if v_hat is None:
            raise ValueError("v_hat is required when v is given")
        terms.append((v, v_hat))
    total = None
    for ref, est in terms:
        ref = np.asarray(ref)
        if ref.shape != est.shape:
            raise ValueError(f"loss: reference shape {ref.shape} != estimate shape {est.shape}")
        ref_t = Tensor(ref.astype(est.dtype))
        time_term = ad.mul(ad.abs1_loss(ad.sub(est, ref_t)), alpha)
        ref_mag = np.abs(sig.stft(ref, params)).astype(est.dtype)
        est_mag = ad.complex_magnitude(*stft_tensor(est, params))
        mag_term = ad.abs1_loss(ad.sub(est_mag, Tensor(ref_mag)))
        term = ad.add(time_term, mag_term)
        total = term if total is None else ad.add(total, term)
    return total


def batch_loss(model: Model, samples: Sequence[RenderedSample], alpha: float = 10.0,
               speech_only: bool = False, rng: np.random.Generator | None = None,
               params: sig.StftParams = sig.DEFAULT_STFT) -> Tensor:
    """Mean per-sample loss of ``model`` on equally long samples."""
    noisy = np.stack([smp.noisy for smp in samples])
    length = noisy.shape[-1]
    spec = sig.stft(noisy, params)  # (N, C, F, T)
    ref = spec[:, 0]
    net_in = ref if model.config.single_channel else spec
    compressed = model.forward(net_in, rng)
    m_re, m_im = uncompress_tensor(compressed)
    s_re, s_im = complex_mask_product(m_re, m_im, ref)
    s_hat = istft_tensor(s_re, s_im, params, length)
    target = np.stack([smp.target for smp in samples])
    if speech_only:
        total = combined_loss(target, s_hat, alpha=alpha, params=params)
    else:
        # noise mask: 1 - Re(M_S), -Im(M_S)
        v_re, v_im = complex_mask_product(ad.sub(1.0, m_re), ad.mul(m_im, -1.0), ref)
        v_hat = istft_tensor(v_re, v_im, params, length)
        noise = np.stack([smp.noise[0] for smp in samples])
        total = combined_loss(target, s_hat, noise, v_hat, alpha=alpha, params=params)
    loss = ad.mul(total, 1.0 / len(samples))
    if not np.isfinite(loss.value):
        out = compressed.value
        finite = out[np.isfinite(out)]
        rng_txt = f"[{finite.min():.3g}, {finite.max():.3g}]" if finite.size else "all non-finite"
        raise TrainingDiverged(f"non-finite loss {loss.value!r} ({out.size - finite.size} non-finite network "
                               f"outputs, finite range {rng_txt})")
    return loss


# ---------------------------------------------------------------------------
# data handling


def _take(x: np.ndarray | None, idx: np.ndarray):
    return None if x is None else x[..., idx]


def crop_random(sample: RenderedSample, seconds: float, rng: np.random.Generator) -> RenderedSample:
    """Aligned random crop of noisy/target/noise; short utterances are tiled first."""
    need = int(round(seconds * sample.sample_rate))
    n = sample.n_samples
    if n < need:
        idx = np.arange(need) % n
    else:
        offset = int(rng.integers(0, n - need + 1))
        idx = np.arange(offset, offset + need)
    return _cropped(sample, idx)


def center_crop(sample: RenderedSample, seconds: float) -> RenderedSample:
    need = int(round(seconds * sample.sample_rate))
    n = sample.n_samples
    if n < need:
        idx = np.arange(need) % n
    else:
        start = (n - need) // 2
        idx = np.arange(start, start + need)
    return _cropped(sample, idx)


def _cropped(sample: RenderedSample, idx: np.ndarray) -> RenderedSample:
    return RenderedSample(
        noisy=sample.noisy[..., idx],
        target=sample.target[idx],
        noise=_take(sample.noise, idx),
        snr_db=sample.snr_db,
        scene=sample.scene,
        sample_rate=sample.sample_rate,
        sample_id=sample.sample_id,
    )


def fit_input_scale(samples: Sequence[RenderedSample], params: sig.StftParams = sig.DEFAULT_STFT) -> float:
    """Reciprocal RMS of the reference-channel STFT coefficients over ``samples``."""
    power = [np.mean(np.abs(sig.stft(s.noisy[0], params)) ** 2) for s in samples]
    return float(1.0 / np.sqrt(np.mean(power) / 2))


# ---------------------------------------------------------------------------
# optimizer and loop


class Adam:
    def __init__(self, params: dict[str, Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.value -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.value.dtype)


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    grads = [p.grad for p in params.values() if p.grad is not None]
    norm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads)))
    if norm > max_norm:
        for g in grads:
            g *= max_norm / norm
    return norm


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    best_validation_loss: float = np.inf
    best_epoch: int = -1
    best_params: dict[str, np.ndarray] | None = field(default=None, repr=False)
    history: list[dict] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    optimizer: Adam | None = field(default=None, repr=False)


def _snapshot(model: Model) -> dict[str, np.ndarray]:
    return {k: p.value.copy() for k, p in model.params.items()}


def train(model: Model, train_samples: Sequence[RenderedSample], cfg: TrainConfig,
          val_samples: Sequence[RenderedSample] | None = None, run_dir: str | Path | None = None,
          params: sig.StftParams = sig.DEFAULT_STFT) -> TrainState:
    """Optimize ``model`` on random crops; keeps the parameters with the best validation loss.

    Stops at ``max_epochs``, after ``patience`` epochs without validation
    improvement, or after ``max_steps`` optimizer steps. With ``run_dir`` a
    ``train_log.csv`` and ``best.ckpt`` are written there.
    """
    if not train_samples:
        raise ValueError("no training samples")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params, cfg.learning_rate, cfg.betas, cfg.eps)
    state = TrainState(optimizer=opt)
    run_dir = Path(run_dir) if run_dir is not None else None
    log_rows = []
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
    val_crops = [center_crop(s, cfg.crop_seconds) for s in val_samples] if val_samples else None
    start = time.perf_counter()
    since_best = 0
    done = False
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_samples))
        losses = []
        for b in range(0, len(order), cfg.batch_size):
            batch = [crop_random(train_samples[j], cfg.crop_seconds, rng) for j in order[b:b + cfg.batch_size]]
            try:
                loss = batch_loss(model, batch, cfg.alpha, cfg.speech_only_loss, rng, params)
            except TrainingDiverged as exc:
                last = run_dir / "best.ckpt" if run_dir is not None and state.best_params is not None else None
                raise TrainingDiverged(f"epoch {epoch + 1} step {state.step + 1}: {exc}; "
                                       f"last good checkpoint: {last or 'none'}") from None
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip is not None:
                clip_grad_norm(model.params, cfg.grad_clip)
            opt.step()
            state.step += 1
            losses.append(float(loss.value))
            state.step_losses.append(float(loss.value))
            if cfg.max_steps is not None and state.step >= cfg.max_steps:
                done = True
                break
        state.epoch = epoch + 1
        train_loss = float(np.mean(losses))
        val_loss = evaluate_loss(model, val_crops, cfg, params) if val_crops else train_loss
        row = {"epoch": epoch + 1, "train_loss": train_loss, "val_loss": val_loss,
               "wall_seconds": time.perf_counter() - start}
        state.history.append(row)
        log_rows.append(row)
        log.info("epoch %d train %.4f val %.4f", epoch + 1, train_loss, val_loss)
        if val_loss < state.best_validation_loss:
            state.best_validation_loss = val_loss
            state.best_epoch = epoch + 1
            state.best_params = _snapshot(model)
            since_best = 0
            if run_dir is not None:
                save_checkpoint(model, run_dir / "best.ckpt",
                                extra={"epoch": epoch + 1, "val_loss": val_loss, "train": cfg.to_dict()})
        else:
            since_best += 1
        if run_dir is not None:
            _write_log(run_dir / "train_log.csv", log_rows)
        if done or since_best >= cfg.patience:
            break
    if state.best_params is not None:
        for k, v in state.best_params.items():
            model.params[k].value = v.copy()
    return state


def evaluate_loss(model: Model, samples: Sequence[RenderedSample], cfg: TrainConfig,
                  params: sig.StftParams = sig.DEFAULT_STFT) -> float:
    """Mean loss over fixed crops; NSF permutations come from a fixed seed."""
    rng = np.random.default_rng(cfg.seed + 1)
    total, count = 0.0, 0
    with ad.no_grad():
        for b in range(0, len(samples), cfg.batch_size):
            batch = samples[b:b + cfg.batch_size]
            total += float(batch_loss(model, batch, cfg.alpha, cfg.speech_only_loss, rng, params).value) * len(batch)
            count += len(batch)
    return total / count


def _write_log(path: Path, rows: list[dict]):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "wall_seconds"])
        writer.writeheader()
        writer.writerows(rows)


def copy_model(model: Model) -> Model:
    return Model(model.config, {k: ad.parameter(p.value, k) for k, p in model.params.items()})


__all__ = [
    "Adam", "TrainConfig", "TrainState", "TrainingDiverged", "batch_loss", "center_crop", "clip_grad_norm",
    "combined_loss", "complex_mask_product", "copy_model", "crop_random", "derive_noise_mask",
    "evaluate_loss", "fit_input_scale", "istft_tensor", "stft_tensor", "train", "uncompress_tensor",
]
