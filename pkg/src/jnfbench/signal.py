"""STFT analysis/synthesis, complex mask application and the cIRM codec.

Spectrograms are plain complex numpy arrays shaped ``(..., F, T)``: a
multichannel spectrogram is ``(C, F, T)``, a single-channel one ``(F, T)``.
Waveforms are ``(..., N)`` float arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.io import wavfile

MASK_CLIP_EPS = 1e-7


@dataclass(frozen=True)
class StftParams:
    window_length: int = 512
    hop: int = 256
    sample_rate: int = 16000

    def __post_init__(self):
        if self.window_length % self.hop:
            raise ValueError("window_length must be a multiple of hop")

    @property
    def fft_size(self) -> int:
        return self.window_length

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def overlap(self) -> int:
        return self.window_length // self.hop

    @cached_property
    def window(self) -> np.ndarray:
        """Periodic square-root Hann window."""
        n = np.arange(self.window_length)
        return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * n / self.window_length))

    @cached_property
    def ola_gain(self) -> float:
        # sum of overlapped squared windows; exactly 1.0 for sqrt-Hann at 50 %
        w2 = self.window**2
        return float(w2.reshape(self.overlap, self.hop).sum(axis=0).mean())

    def n_frames(self, n_samples: int) -> int:
        return -(-n_samples // self.hop) + self.overlap - 1


DEFAULT_STFT = StftParams()


def _frame(x: np.ndarray, params: StftParams) -> np.ndarray:
    n = x.shape[-1]
    n_frames = params.n_frames(n)
    left = params.window_length - params.hop
    total = (n_frames - 1) * params.hop + params.window_length
    pad = [(0, 0)] * (x.ndim - 1) + [(left, total - n - left)]
    xp = np.pad(x, pad)
    idx = np.arange(n_frames)[:, None] * params.hop + np.arange(params.window_length)
    return xp[..., idx]


def stft(wave: np.ndarray, params: StftParams = DEFAULT_STFT, sample_rate: int | None = None) -> np.ndarray:
    """Multichannel STFT; returns ``(..., F, T)`` complex coefficients.

    The signal is zero-padded at both ends so that every input sample is
    covered by ``window_length / hop`` frames.
    """
    wave = np.asarray(wave, dtype=np.float64)
    if sample_rate is not None and sample_rate != params.sample_rate:
        raise ValueError(f"sample rate {sample_rate} does not match STFT params ({params.sample_rate})")
    if wave.shape[-1] < params.window_length:
        raise ValueError("input too short")
    frames = _frame(wave, params) * params.window
    spec = np.fft.rfft(frames, n=params.fft_size, axis=-1)
    return np.swapaxes(spec, -1, -2)


def _overlap_add(frames: np.ndarray, params: StftParams, length: int) -> np.ndarray:
    # frames: (..., T, W)
    n_frames = frames.shape[-2]
    r, hop = params.overlap, params.hop
    segs = np.zeros(frames.shape[:-2] + (n_frames + r - 1, hop))
    for j in range(r):
        segs[..., j:j + n_frames, :] += frames[..., j * hop:(j + 1) * hop]
    out = segs.reshape(frames.shape[:-2] + (-1,))
    left = params.window_length - hop
    return out[..., left:left + length]


def istft(spec: np.ndarray, params: StftParams = DEFAULT_STFT, length: int | None = None) -> np.ndarray:
    """Inverse of :func:`stft` (weighted overlap-add with the synthesis window)."""
    spec = np.asarray(spec)
    if spec.shape[-2] != params.n_bins:
        raise ValueError(f"spectrogram has {spec.shape[-2]} bins, params expect {params.n_bins}")
    n_frames = spec.shape[-1]
    if length is None:
        length = (n_frames - params.overlap + 1) * params.hop
    if params.n_frames(length) != n_frames:
        raise ValueError(f"{n_frames} frames cannot produce a signal of {length} samples")
    frames = np.fft.irfft(np.swapaxes(spec, -1, -2), n=params.fft_size, axis=-1)
    frames = frames * (params.window / params.ola_gain)
    return _overlap_add(frames, params, length)


def stft_adjoint(grad_spec: np.ndarray, params: StftParams, length: int) -> np.ndarray:
    """Adjoint of :func:`stft` treating ``(Re, Im)`` as independent reals.

    ``grad_spec`` is complex ``Re + 1j*Im`` of the upstream gradients.
    """
    n = params.fft_size
    g = np.swapaxes(grad_spec, -1, -2)
    frames = n * np.fft.irfft(g / _hermitian_weights(params), n=n, axis=-1)
    frames = frames * params.window
    # overlap-add of the frame gradients, then drop the padding
    return _overlap_add(frames, params, length)


def istft_adjoint(grad_wave: np.ndarray, params: StftParams) -> np.ndarray:
    """Adjoint of :func:`istft`; returns complex ``dRe + 1j*dIm``."""
    frames = _frame(grad_wave, params) * (params.window / params.ola_gain)
    g = np.fft.rfft(frames, n=params.fft_size, axis=-1)
    g = g * (_hermitian_weights(params) / params.fft_size)
    return np.swapaxes(g, -1, -2)


def _hermitian_weights(params: StftParams) -> np.ndarray:
    c = np.full(params.n_bins, 2.0)
    c[0] = 1.0
    if params.fft_size % 2 == 0:
        c[-1] = 1.0
    return c


def apply_mask(mask: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Elementwise complex gain: ``mask * ref`` for (F, T) arrays."""
    mask = np.asarray(mask)
    ref = np.asarray(ref)
    if mask.shape != ref.shape:
        raise ValueError(f"mask shape {mask.shape} does not match spectrogram {ref.shape}")
    return mask * ref


def compress_mask(mask: np.ndarray) -> np.ndarray:
    """cIRM compression K(1 - e^{-CM})/(1 + e^{-CM}) with K = C = 1, per component.

    With K = C = 1 this equals ``tanh(M / 2)`` on the real and imaginary parts.
    """
    mask = np.asarray(mask, dtype=np.complex128)
    return np.tanh(mask.real / 2) + 1j * np.tanh(mask.imag / 2)


def uncompress_mask(compressed: np.ndarray, eps: float = MASK_CLIP_EPS) -> np.ndarray:
    c = np.asarray(compressed, dtype=np.complex128)
    lim = 1.0 - eps
    re = np.clip(c.real, -lim, lim)
    im = np.clip(c.imag, -lim, lim)
    return 2 * np.arctanh(re) + 2j * np.arctanh(im)


# ---------------------------------------------------------------------------
# I/O


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a WAV file as float64 ``(C, N)`` (mono files give ``(1, N)``)."""
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        data = data / 32768.0
    elif data.dtype == np.int32:
        data = data / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128) / 128.0
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[None, :]
    else:
        data = data.T
    return np.ascontiguousarray(data), int(rate)


def write_wav(path: str | Path, wave: np.ndarray, sample_rate: int, pcm16: bool = False) -> None:
    wave = np.asarray(wave, dtype=np.float64)
    data = wave.T if wave.ndim == 2 else wave
    if pcm16:
        data = np.round(np.clip(data, -1.0, 32767 / 32768) * 32768).astype(np.int16)
    else:
        data = data.astype(np.float32)
    wavfile.write(str(path), sample_rate, data)


def export_magnitude_csv(path: str | Path, spec: np.ndarray) -> None:
    """Write ``|spec|`` of an (F, T) spectrogram, frequency rows and time columns."""
    spec = np.asarray(spec)
    if spec.ndim != 2:
        raise ValueError("expected a single-channel (F, T) spectrogram")
    np.savetxt(path, np.abs(spec), delimiter=",", fmt="%.8e")
