"""Speech sources: a directory of mono WAV utterances, or synthetic speech-like stand-ins.

The synthetic generator strings together syllable-like segments. Voiced
segments are harmonic series on a gliding f0 shaped by three formant
resonators; unvoiced ones are band-passed noise. Segments get smooth
envelopes and are separated by short pauses, so the signals are sparse in
time-frequency and non-stationary like speech.
"""
from __future__ import annotations

import zlib
from pathlib import Path

import numpy as np
from scipy.signal import butter, lfilter, sosfilt

from .signal import read_wav

SAMPLE_RATE = 16000


def substream(root_seed: int, name: str, *index: int) -> np.random.Generator:
    """Independent generator for a named stage (and optional indices) under one root seed."""
    key = (zlib.crc32(name.encode()),) + tuple(int(i) for i in index)
    return np.random.default_rng(np.random.SeedSequence(int(root_seed), spawn_key=key))


def _resonator(x: np.ndarray, freq: float, bw: float, fs: int) -> np.ndarray:
    r = np.exp(-np.pi * bw / fs)
    theta = 2 * np.pi * freq / fs
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return lfilter([1 - r], a, x)


def _segment(rng: np.random.Generator, n: int, fs: int) -> np.ndarray:
    t = np.arange(n) / fs
    if rng.random() < 0.75:
        f0 = rng.uniform(90, 240) * (1 + rng.uniform(-0.15, 0.15) * t / max(t[-1], 1e-3))
        phase = 2 * np.pi * np.cumsum(f0) / fs
        n_harm = int(4000 / f0.max())
        x = sum(np.sin(h * phase) / h for h in range(1, n_harm + 1))
        x += 0.05 * rng.standard_normal(n)
        formants = (rng.uniform(300, 900), rng.uniform(900, 2400), rng.uniform(2300, 3400))
        y = sum(_resonator(x, f, 60 + 0.08 * f, fs) for f in formants)
    else:
        lo = rng.uniform(1500, 3000)
        sos = butter(4, [lo, min(lo + rng.uniform(1500, 4000), 7600)], btype="band", fs=fs, output="sos")
        y = sosfilt(sos, rng.standard_normal(n))
    env = np.sin(np.pi * np.arange(n) / n) ** 0.7
    return y * env * rng.uniform(0.3, 1.0)


def synthetic_utterance(rng: np.random.Generator, seconds: float, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Unit-RMS speech-like signal of ``seconds`` length."""
    n = int(round(seconds * fs))
    out = np.zeros(n)
    pos = int(rng.integers(0, int(0.15 * fs)))
    while pos < n:
        seg = int(rng.uniform(0.08, 0.3) * fs)
        seg = min(seg, n - pos)
        if seg > 64:
            out[pos:pos + seg] = _segment(rng, seg, fs)
        pos += seg + int(rng.uniform(0.02, 0.25) * fs)
    rms = np.sqrt(np.mean(out**2))
    return out / rms if rms > 0 else out


class SyntheticCorpus:
    """Deterministic pool of synthetic utterances addressed by integer id."""

    def __init__(self, seed: int = 0, size: int = 1000, seconds=(2.5, 4.0), sample_rate: int = SAMPLE_RATE):
        self.seed = seed
        self.size = size
        self.seconds = seconds
        self.sample_rate = sample_rate
        self.ids = [f"synth-{i:06d}" for i in range(size)]

    def __len__(self):
        return self.size

    def load(self, uid: str) -> np.ndarray:
        i = int(uid.split("-")[1])
        rng = substream(self.seed, "synthetic-utterance", i)
        return synthetic_utterance(rng, rng.uniform(*self.seconds), self.sample_rate)


class WavCorpus:
    """All ``*.wav`` files under ``root`` (mono, 16 kHz); ids are paths relative to ``root``."""

    def __init__(self, root: str | Path, sample_rate: int = SAMPLE_RATE):
        self.root = Path(root)
        if not self.root.is_dir():
            raise FileNotFoundError(f"corpus directory {self.root} does not exist")
        self.sample_rate = sample_rate
        self.ids = sorted(str(p.relative_to(self.root)) for p in self.root.rglob("*.wav"))

    def __len__(self):
        return len(self.ids)

    def load(self, uid: str) -> np.ndarray:
        wave, rate = read_wav(self.root / uid)
        if rate != self.sample_rate:
            raise ValueError(f"{uid}: sample rate {rate} Hz, expected {self.sample_rate} Hz")
        if wave.shape[0] != 1:
            raise ValueError(f"{uid}: expected a mono file, got {wave.shape[0]} channels")
        x = wave[0]
        rms = np.sqrt(np.mean(x**2))
        if rms == 0:
            raise ValueError(f"{uid}: silent utterance")
        return x / rms


__all__ = ["SAMPLE_RATE", "SyntheticCorpus", "WavCorpus", "substream", "synthetic_utterance"]
