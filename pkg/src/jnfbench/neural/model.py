"""Mask-estimating filter variants built from one two-layer bi-LSTM network.

Variants differ only in how the (channel, frequency, time) input is cut into
sequences:

* narrow-band (T-*): one sequence over time per frequency bin,
* wide-band (F-*): one sequence over frequency per time frame,
* FT-*: wide-band first layer, narrow-band second layer,
* *-NSF: sequences are randomly permuted before the LSTMs and restored after,
  so only order-free statistics along the sequence survive; a normalized
  frequency-index feature is appended,
* PF: single-channel post-filter, one sequence over time with real and
  imaginary parts of all bins stacked as features.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .lstm import LstmParams, bilstm, init_lstm

NARROW = "narrow-band"
WIDE = "wide-band"

VARIANTS = ("T-JNF", "F-JNF", "FT-JNF", "T-NSF", "F-NSF", "FT-NSF", "PF")

# first-layer arrangement, second-layer arrangement, shuffle scheme
_SCHEDULE = {
    "T-JNF": (NARROW, NARROW, None),
    "F-JNF": (WIDE, WIDE, None),
    "FT-JNF": (WIDE, NARROW, None),
    "T-NSF": (NARROW, NARROW, "outer"),
    "F-NSF": (WIDE, WIDE, "outer"),
    "FT-NSF": (WIDE, NARROW, "per-layer"),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "FT-JNF"
    hidden: tuple[int, int] | None = None
    channels: int = 3
    n_bins: int = 257
    append_freq_index: bool | None = None
    input_scale: float = 1.0
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.hidden is None:
            object.__setattr__(self, "hidden", (256, 256) if self.variant == "PF" else (256, 128))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.append_freq_index is None:
            object.__setattr__(self, "append_freq_index", self.variant.endswith("NSF"))
        if self.variant == "PF":
            object.__setattr__(self, "channels", 1)

    @property
    def single_channel(self) -> bool:
        return self.variant == "PF"

    @property
    def input_features(self) -> int:
        if self.single_channel:
            return 2 * self.n_bins
        return 2 * self.channels + int(self.append_freq_index)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        return cls(**d)


# ---------------------------------------------------------------------------
# data arrangement


@dataclass
class ArrangedBatch:
    """Sequences (B, L, D) plus what is needed to map them back to (N, F, T)."""

    data: Tensor
    mode: str
    n_samples: int
    n_bins: int
    n_frames: int
    perm: np.ndarray | None = field(default=None, repr=False)


def _as_batch(spec: np.ndarray, channels: int) -> np.ndarray:
    spec = np.asarray(spec)
    if spec.ndim == 3:
        spec = spec[None]
    if spec.ndim != 4 or spec.shape[1] != channels:
        raise ConfigError(f"expected a ({channels}, F, T) spectrogram (optionally batched), got {spec.shape}")
    return spec


def spectral_features(spec: np.ndarray, append_freq_index: bool, scale: float = 1.0,
                      dtype=np.float64) -> np.ndarray:
    """(N, C, F, T) complex -> (N, F, T, D) real: [Re ch0..C-1, Im ch0..C-1, (k/(F-1))]."""
    n, c, f, t = spec.shape
    parts = [np.moveaxis(spec.real, 1, -1) * scale, np.moveaxis(spec.imag, 1, -1) * scale]
    if append_freq_index:
        k = np.arange(f, dtype=np.float64) / (f - 1)
        parts.append(np.broadcast_to(k[None, :, None, None], (n, f, t, 1)))
    return np.concatenate(parts, axis=-1).astype(dtype, copy=False)


def _to_sequences(x: Tensor, mode: str) -> Tensor:
    n, f, t, d = x.shape
    if mode == NARROW:
        return ad.reshape(x, (n * f, t, d))
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (n * t, f, d))


def arrange(spec: np.ndarray, mode: str, append_freq_index: bool = False, scale: float = 1.0,
            dtype=np.float64) -> ArrangedBatch:
    """Cut a (C, F, T) or (N, C, F, T) spectrogram into narrow- or wide-band sequences."""
    spec = np.asarray(spec)
    if spec.ndim == 3:
        spec = spec[None]
    feats = Tensor(spectral_features(spec, append_freq_index, scale, dtype))
    n, _, f, t = spec.shape
    return ArrangedBatch(_to_sequences(feats, mode), mode, n, f, t)


def disarrange(batch: ArrangedBatch) -> Tensor:
    """Inverse of the arrangement: sequences back to (N, F, T, D)."""
    x = batch.data
    d = x.shape[-1]
    n, f, t = batch.n_samples, batch.n_bins, batch.n_frames
    if batch.mode == NARROW:
        return ad.reshape(x, (n, f, t, d))
    return ad.transpose(ad.reshape(x, (n, t, f, d)), (0, 2, 1, 3))


def features_to_spectrogram(features: np.ndarray, channels: int) -> np.ndarray:
    """(N, F, T, D) features back to the complex (N, C, F, T) spectrogram (unit scale)."""
    re = np.moveaxis(features[..., :channels], -1, 1)
    im = np.moveaxis(features[..., channels:2 * channels], -1, 1)
    return re + 1j * im


def rearrange(batch: ArrangedBatch, src: str, dst: str) -> ArrangedBatch:
    """Switch between wide-band and narrow-band sequences (exact permutation)."""
    if batch.mode != src:
        raise ValueError(f"batch is {batch.mode}, expected {src}")
    if src == dst:
        return batch
    grid = disarrange(batch)
    return replace(batch, data=_to_sequences(grid, dst), mode=dst, perm=None)


def shuffle_sequence(batch: ArrangedBatch, rng: np.random.Generator | None, identity: bool = False) -> ArrangedBatch:
    """Permute each sequence independently along its sequence axis."""
    b, length = batch.data.shape[:2]
    if identity:
        perm = np.broadcast_to(np.arange(length), (b, length)).copy()
    else:
        perm = np.argsort(rng.random((b, length)), axis=1)
    data = ad.take_along_axis(batch.data, perm[:, :, None], axis=1)
    return replace(batch, data=data, perm=perm)


def unshuffle(batch: ArrangedBatch) -> ArrangedBatch:
    if batch.perm is None:
        raise ValueError("unshuffle requires a batch produced by shuffle_sequence")
    inverse = np.argsort(batch.perm, axis=1)
    data = ad.take_along_axis(batch.data, inverse[:, :, None], axis=1)
    return replace(batch, data=data, perm=None)


# ---------------------------------------------------------------------------
# model


class Model:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def n_parameters(self) -> int:
        return int(sum(p.value.size for p in self.params.values()))

    def _layer(self, i: int) -> tuple[LstmParams, LstmParams]:
        p = self.params
        return (LstmParams(p[f"lstm{i}.fwd.W"], p[f"lstm{i}.fwd.R"], p[f"lstm{i}.fwd.b"]),
                LstmParams(p[f"lstm{i}.bwd.W"], p[f"lstm{i}.bwd.R"], p[f"lstm{i}.bwd.b"]))

    def _bilstm(self, i: int, seq: Tensor) -> Tensor:
        return bilstm(*self._layer(i), seq)

    def _head(self, x: Tensor) -> Tensor:
        return ad.tanh(ad.add(ad.matmul(x, self.params["ff.W"]), self.params["ff.b"]))

    def forward(self, spec: np.ndarray, rng: np.random.Generator | None = None, shuffle: bool = True) -> Tensor:
        """Compressed mask estimate, shape (N, F, T, 2) holding (Re, Im) in [-1, 1].

        ``spec`` is (C, F, T) / (N, C, F, T) for spatial variants and (F, T) /
        (N, F, T) for PF. NSF variants draw a fresh permutation from ``rng``
        (a seeded one when ``rng`` is None); ``shuffle=False`` uses the identity
        permutation.
        """
        cfg = self.config
        if cfg.single_channel:
            return self._forward_pf(spec)
        spec = _as_batch(spec, cfg.channels)
        if spec.shape[2] != cfg.n_bins:
            raise ConfigError(f"model expects {cfg.n_bins} frequency bins, got {spec.shape[2]}")
        first, second, scheme = _SCHEDULE[cfg.variant]
        if scheme is not None and rng is None:
            rng = np.random.default_rng(cfg.seed)
        identity = not shuffle

        batch = arrange(spec, first, cfg.append_freq_index, cfg.input_scale, self.dtype)
        if scheme is not None:
            batch = shuffle_sequence(batch, rng, identity)
        batch = replace(batch, data=self._bilstm(1, batch.data))
        if scheme == "per-layer":
            batch = unshuffle(batch)
        batch = rearrange(batch, first, second)
        if scheme == "per-layer":
            batch = shuffle_sequence(batch, rng, identity)
        batch = replace(batch, data=self._bilstm(2, batch.data))
        if scheme is not None:
            batch = unshuffle(batch)
        return self._head(disarrange(batch))

    def _forward_pf(self, spec: np.ndarray) -> Tensor:
        cfg = self.config
        spec = np.asarray(spec)
        if spec.ndim == 4 and spec.shape[1] == 1:
            spec = spec[:, 0]
        if spec.ndim == 2:
            spec = spec[None]
        if spec.ndim != 3 or spec.shape[1] != cfg.n_bins:
            raise ConfigError(f"PF expects a single-channel (F, T) spectrogram with F={cfg.n_bins}, got {spec.shape}")
        n, f, t = spec.shape
        feats = np.concatenate([spec.real, spec.imag], axis=1) * cfg.input_scale  # (N, 2F, T)
        seq = Tensor(np.swapaxes(feats, 1, 2).astype(self.dtype))  # (N, T, 2F)
        h = self._bilstm(2, self._bilstm(1, seq))
        out = self._head(h)  # (N, T, 2F)
        out = ad.reshape(out, (n, t, 2, f))
        return ad.transpose(out, (0, 3, 1, 2))


def build_model(config: ModelConfig, rng: np.random.Generator | None = None) -> Model:
    """Initialize parameters: LSTM and FF weights uniform in +-1/sqrt(fan_in)."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    dtype = np.dtype(config.dtype)
    h1, h2 = config.hidden
    params: dict[str, Tensor] = {}
    sizes = [(config.input_features, h1), (2 * h1, h2)]
    for i, (d, h) in enumerate(sizes, start=1):
        for direction in ("fwd", "bwd"):
            layer = init_lstm(d, h, rng, dtype)
            for name, t in layer.tensors().items():
                t.name = f"lstm{i}.{direction}.{name}"
                params[t.name] = t
    n_out = 2 * config.n_bins if config.single_channel else 2
    bound = 1.0 / np.sqrt(2 * h2)
    params["ff.W"] = ad.parameter(rng.uniform(-bound, bound, (2 * h2, n_out)).astype(dtype), "ff.W")
    params["ff.b"] = ad.parameter(np.zeros(n_out, dtype=dtype), "ff.b")
    return Model(config, params)


def predict_mask(model: Model, spec: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """Compressed complex mask(s) without recording a graph: (N, F, T) or (F, T)."""
    single = np.asarray(spec).ndim == (2 if model.config.single_channel else 3)
    with ad.no_grad():
        out = model.forward(spec, rng).value
    mask = out[..., 0] + 1j * out[..., 1]
    return mask[0] if single else mask
