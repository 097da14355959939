"""Oracle MVDR beamformer with recursively averaged covariances and GEV-based ATF estimates.

All functions are vectorized over frequency and time. Covariance tracks have
shape (F, T, C, C), weight tracks (F, T, C).
"""
from __future__ import annotations

import numpy as np

LOADING = 1e-6
REF_CHANNEL = 0
_TINY = 1e-30


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


def recursive_covariance(spec: np.ndarray, lam: float = 0.95) -> np.ndarray:
    """Phi(k, i) = lam Phi(k, i-1) + (1 - lam) y yᴴ, started at y yᴴ + eps I.

    ``spec`` is (C, F, T). eps is ``LOADING`` times the time-averaged
    per-channel power of each frequency (an absolute floor keeps an all-zero
    input positive definite).
    """
    spec = np.asarray(spec)
    if spec.ndim != 3:
        raise ValueError(f"recursive_covariance: expected (C, F, T), got {spec.shape}")
    if not 0.0 <= lam < 1.0:
        raise ValueError("lam must lie in [0, 1)")
    C, F, T = spec.shape
    y = np.transpose(spec, (1, 2, 0)).astype(np.complex128)  # (F, T, C)
    scale = np.mean(np.abs(y) ** 2, axis=(1, 2))
    eps = LOADING * np.where(scale > 0, scale, 1e-4)
    outer = y[..., :, None] * y[..., None, :].conj()  # (F, T, C, C)
    phi = np.empty_like(outer)
    phi[:, 0] = outer[:, 0] + eps[:, None, None] * np.eye(C)
    for i in range(1, T):
        phi[:, i] = lam * phi[:, i - 1] + (1 - lam) * outer[:, i]
    return phi


def _load(phi: np.ndarray) -> np.ndarray:
    diag = np.real(np.einsum("...ii->...i", phi))
    load = LOADING * np.mean(diag, axis=-1)
    load = np.maximum(load, _TINY)
    return phi + load[..., None, None] * np.eye(phi.shape[-1])


def _where_bad(mask: np.ndarray) -> str:
    idx = np.argwhere(mask)
    if idx.size == 0:
        return ""
    loc = tuple(int(v) for v in idx[0])
    if len(loc) == 2:
        return f" at (k={loc[0]}, i={loc[1]})"
    return f" at index {loc}"


def _cholesky(phi: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(phi)
    except np.linalg.LinAlgError:
        # locate the offending matrix for the message
        eig_min = np.linalg.eigvalsh(phi)[..., 0]
        bad = ~(eig_min > 0)
        raise SingularCovarianceError("noise covariance not positive definite after loading"
                                      + _where_bad(bad)) from None
    if not np.all(np.isfinite(L)):
        raise SingularCovarianceError("noise covariance not finite" + _where_bad(~np.isfinite(L).all(axis=(-1, -2))))
    return L


def estimate_atf(phi_ss: np.ndarray, phi_vv: np.ndarray) -> np.ndarray:
    """ATF from the principal generalized eigenvector, d = Phi_ss v, normalized so d[0] = 1.

    Bins where d[0] vanishes (no speech energy) fall back to the reference
    unit vector.
    """
    phi_ss = np.asarray(phi_ss, dtype=np.complex128)
    phi_vv = np.asarray(phi_vv, dtype=np.complex128)
    if phi_ss.shape != phi_vv.shape or phi_ss.shape[-1] != phi_ss.shape[-2]:
        raise ValueError(f"estimate_atf: shape mismatch {phi_ss.shape} vs {phi_vv.shape}")
    C = phi_ss.shape[-1]
    L = _cholesky(_load(phi_vv))
    Linv = np.linalg.inv(L)
    Linv_h = np.conj(np.swapaxes(Linv, -1, -2))
    white = Linv @ phi_ss @ Linv_h
    white = 0.5 * (white + np.conj(np.swapaxes(white, -1, -2)))
    _, vecs = np.linalg.eigh(white)
    v = Linv_h @ vecs[..., :, -1:]
    d = (phi_ss @ v)[..., 0]
    ref = d[..., REF_CHANNEL]
    scale = np.max(np.abs(d), axis=-1)
    ok = np.abs(ref) > 1e-12 * np.maximum(scale, _TINY)
    unit = np.zeros(C, dtype=np.complex128)
    unit[REF_CHANNEL] = 1.0
    safe_ref = np.where(ok, ref, 1.0)
    return np.where(ok[..., None], d / safe_ref[..., None], unit)


def mvdr_weights(d: np.ndarray, phi_vv: np.ndarray) -> np.ndarray:
    """w = Phi⁻¹ d / (dᴴ Phi⁻¹ d) with diagonal loading of Phi."""
    d = np.asarray(d, dtype=np.complex128)
    phi_vv = np.asarray(phi_vv, dtype=np.complex128)
    if phi_vv.shape[:-1] != d.shape or phi_vv.shape[-1] != d.shape[-1]:
        raise ValueError(f"mvdr_weights: shape mismatch d {d.shape} vs Phi {phi_vv.shape}")
    loaded = _load(phi_vv)
    try:
        x = np.linalg.solve(loaded, d[..., None])[..., 0]
    except np.linalg.LinAlgError:
        det = np.abs(np.linalg.det(loaded))
        raise SingularCovarianceError("singular noise covariance" + _where_bad(~(det > 0))) from None
    denom = np.sum(d.conj() * x, axis=-1)
    bad = ~np.isfinite(x).all(axis=-1) | ~(np.abs(denom) > _TINY)
    if np.any(bad):
        raise SingularCovarianceError("MVDR system numerically singular" + _where_bad(bad))
    return x / denom[..., None]


def beamform(weights: np.ndarray, spec: np.ndarray) -> np.ndarray:
    """Output(k, i) = w(k, i)ᴴ Y(k, i); ``weights`` (F, T, C), ``spec`` (C, F, T)."""
    weights = np.asarray(weights)
    spec = np.asarray(spec)
    if weights.ndim == 1:
        weights = np.broadcast_to(weights, spec.shape[1:] + weights.shape)
    if weights.shape != spec.shape[1:] + spec.shape[:1]:
        raise ValueError(f"beamform: weights {weights.shape} do not match spectrogram {spec.shape}")
    return np.einsum("ftc,cft->ft", weights.conj(), spec)


def oracle_mvdr_enhance(noisy: np.ndarray, speech: np.ndarray, noise: np.ndarray,
                        lam: float = 0.95) -> np.ndarray:
    """Time-varying MVDR with covariances from the oracle speech and noise stems."""
    noisy, speech, noise = (np.asarray(a) for a in (noisy, speech, noise))
    if not (noisy.shape == speech.shape == noise.shape):
        raise ValueError(f"oracle_mvdr_enhance: shapes differ {noisy.shape}, {speech.shape}, {noise.shape}")
    phi_ss = recursive_covariance(speech, lam)
    phi_vv = recursive_covariance(noise, lam)
    d = estimate_atf(phi_ss, phi_vv)
    w = mvdr_weights(d, phi_vv)
    return beamform(w, noisy)


__all__ = [
    "SingularCovarianceError", "beamform", "estimate_atf", "mvdr_weights", "oracle_mvdr_enhance",
    "recursive_covariance",
]
