"""
STFT analysis, resynthesis and complex masks
============================================

The filters in this package work on a 512-point sqrt-Hann STFT with hop 256
at 16 kHz. This script checks perfect reconstruction on a chirp, applies an
oracle complex mask and shows the compressed mask codec.
"""
import numpy as np

from jnfbench import signal as sig

fs = 16000
t = np.arange(2 * fs) / fs
chirp = np.sin(2 * np.pi * (200 * t + 900 * t**2))
noise = 0.5 * np.random.default_rng(0).standard_normal(len(t))

Y = sig.stft(chirp + noise)
print("spectrogram shape (bins, frames):", Y.shape)

# overlap-add gives the signal back
err = np.linalg.norm(sig.istft(Y, length=len(t)) - (chirp + noise)) / np.linalg.norm(chirp + noise)
print(f"round-trip relative error: {err:.2e}")

# the oracle complex ratio mask S / Y recovers the chirp exactly...
S = sig.stft(chirp)
M = S / np.where(np.abs(Y) > 0, Y, 1)
print("max |M|:", round(float(np.abs(M).max()), 2))

# ...but a network emits values in (-1, 1), so masks travel through the tanh codec.
# Its usable range per component is 2 atanh(1 - eps), about +-16.8
print("largest representable component:", round(float(sig.uncompress_mask(1.0).real), 2))
M_hat = sig.uncompress_mask(sig.compress_mask(M))
est = sig.istft(sig.apply_mask(M_hat, Y), length=len(t))
snr = lambda ref, x: 10 * np.log10(np.sum(ref**2) / np.sum((ref - x) ** 2))
print(f"input SNR {snr(chirp, chirp + noise):.1f} dB, oracle mask after the codec {snr(chirp, est):.1f} dB")

# a mask beyond the range is clipped, which costs a little accuracy
big = sig.uncompress_mask(sig.compress_mask(40 * M))
print(f"40x mask after the codec: max |M| {np.abs(big).max():.1f}")
