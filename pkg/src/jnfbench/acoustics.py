"""Scene sampling, image-source RIR simulation and mixture rendering.

Geometry follows the six-speaker extraction setup: a 3-mic uniform circular
array (10 cm diameter) at 1.5 m height, a target on the array's look
direction at 0.3-1 m, and five interferers, one per angular segment outside
a +-20 degree wedge around the target, at least 1 m from the array.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy.signal import butter, fftconvolve, sosfilt

SPEED_OF_SOUND = 343.0
SNR_CAP_DB = 100.0

ROOM_WIDTH = (2.5, 5.0)
ROOM_LENGTH = (3.0, 9.0)
ROOM_HEIGHT = (2.2, 3.5)
T60_RANGE = (0.2, 0.5)
ARRAY_DIAMETER = 0.10
ARRAY_HEIGHT = 1.5
N_MICS = 3
N_INTERFERERS = 5
WALL_CLEARANCE = 1.0
TARGET_RANGE = (0.3, 1.0)
INTERFERER_MIN_DIST = 1.0
EXCLUSION_ANGLE = np.deg2rad(20.0)
SPEAKER_HEIGHT = (1.6, 0.08)
HEIGHT_MARGIN = 0.2
MAX_REJECTIONS = 10000

SINC_TAPS = 81
_FRAC_STEPS = 4096
REFLECTION_HIGHPASS_HZ = 50.0


class GeometryError(RuntimeError):
    pass


@dataclass(frozen=True)
class Scene:
    room: tuple[float, float, float]
    t60: float
    mic_center: tuple[float, float, float]
    mic_rotation: float
    mic_positions: tuple[tuple[float, float, float], ...]
    target_pos: tuple[float, float, float]
    interferer_pos: tuple[tuple[float, float, float], ...]
    seed: int | None = None

    @property
    def sources(self) -> np.ndarray:
        """All source positions, target first, as a (6, 3) array."""
        return np.array([self.target_pos, *self.interferer_pos], dtype=np.float64)

    @property
    def mics(self) -> np.ndarray:
        return np.array(self.mic_positions, dtype=np.float64)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(
            room=tuple(d["room"]),
            t60=float(d["t60"]),
            mic_center=tuple(d["mic_center"]),
            mic_rotation=float(d["mic_rotation"]),
            mic_positions=tuple(tuple(p) for p in d["mic_positions"]),
            target_pos=tuple(d["target_pos"]),
            interferer_pos=tuple(tuple(p) for p in d["interferer_pos"]),
            seed=d.get("seed"),
        )


def circular_array(center, rotation: float, n_mics: int = N_MICS, diameter: float = ARRAY_DIAMETER) -> np.ndarray:
    angles = rotation + 2 * np.pi * np.arange(n_mics) / n_mics
    r = diameter / 2
    cx, cy, cz = center
    return np.stack([cx + r * np.cos(angles), cy + r * np.sin(angles), np.full(n_mics, cz)], axis=1)


def interferer_segments(rotation: float, n: int = N_INTERFERERS) -> list[tuple[float, float]]:
    """Angular segments (start, end) in radians, splitting the non-excluded circle."""
    width = (2 * np.pi - 2 * EXCLUSION_ANGLE) / n
    start = rotation + EXCLUSION_ANGLE
    return [(start + j * width, start + (j + 1) * width) for j in range(n)]


def _speaker_height(rng, room_height):
    h = rng.normal(*SPEAKER_HEIGHT)
    return float(np.clip(h, HEIGHT_MARGIN, room_height - HEIGHT_MARGIN))


def sample_scene(rng_seed: int) -> Scene:
    """Draw a random scene; deterministic in ``rng_seed``."""
    rng = np.random.default_rng(rng_seed)
    rejections = 0

    def reject():
        nonlocal rejections
        rejections += 1
        if rejections > MAX_REJECTIONS:
            raise GeometryError(f"scene sampling exceeded {MAX_REJECTIONS} rejections (seed {rng_seed})")

    width = rng.uniform(*ROOM_WIDTH)
    length = rng.uniform(*ROOM_LENGTH)
    height = rng.uniform(*ROOM_HEIGHT)
    t60 = rng.uniform(*T60_RANGE)
    center = (
        rng.uniform(WALL_CLEARANCE, width - WALL_CLEARANCE),
        rng.uniform(WALL_CLEARANCE, length - WALL_CLEARANCE),
        ARRAY_HEIGHT,
    )
    phi = rng.uniform(0.0, 2 * np.pi)
    mics = circular_array(center, phi)

    while True:
        dist = rng.uniform(*TARGET_RANGE)
        tx = center[0] + dist * np.cos(phi)
        ty = center[1] + dist * np.sin(phi)
        if 0 < tx < width and 0 < ty < length:
            break
        reject()
    target = (float(tx), float(ty), _speaker_height(rng, height))

    interferers = []
    for lo, hi in interferer_segments(phi):
        while True:
            x = rng.uniform(0.0, width)
            y = rng.uniform(0.0, length)
            dx, dy = x - center[0], y - center[1]
            ang = np.mod(np.arctan2(dy, dx) - lo, 2 * np.pi)
            if np.hypot(dx, dy) >= INTERFERER_MIN_DIST and ang <= hi - lo:
                break
            reject()
        interferers.append((float(x), float(y), _speaker_height(rng, height)))

    return Scene(
        room=(float(width), float(length), float(height)),
        t60=float(t60),
        mic_center=tuple(float(v) for v in center),
        mic_rotation=float(phi),
        mic_positions=tuple(tuple(float(v) for v in m) for m in mics),
        target_pos=target,
        interferer_pos=tuple(interferers),
        seed=rng_seed,
    )


# ---------------------------------------------------------------------------
# Image-source method


def sabine_absorption(room, t60: float) -> float:
    """Uniform energy absorption coefficient from Sabine's formula."""
    w, l, h = room
    volume = w * l * h
    surface = 2 * (w * l + w * h + l * h)
    return min(1.0, 0.1611 * volume / (surface * t60))


@lru_cache(maxsize=1)
def _sinc_table() -> np.ndarray:
    # rows: fractional offset f in [-0.5, 0.5]; columns: taps -40..40
    half = SINC_TAPS // 2
    frac = np.linspace(-0.5, 0.5, _FRAC_STEPS + 1)
    t = np.arange(-half, half + 1)[None, :] - frac[:, None]
    win = 0.5 * (1 + np.cos(np.pi * t / (half + 1)))
    return np.sinc(t) * win


@dataclass
class Rir:
    taps: np.ndarray  # (n_sources, n_mics, length)
    sample_rate: int
    direct_delay: np.ndarray  # (n_sources, n_mics) integer samples
    direct_distance: np.ndarray
    absorption: float

    @property
    def direct_gain(self) -> np.ndarray:
        return 1.0 / (4 * np.pi * self.direct_distance)


def _axis_images(coord: float, size: float, n_max: int):
    n = np.arange(-n_max, n_max + 1)
    pos = np.concatenate([coord + 2 * n * size, -coord + 2 * n * size])
    order = np.concatenate([2 * np.abs(n), np.abs(n - 1) + np.abs(n)])
    return pos, order


def _images(room, source, mic, max_order: int | None, max_dist: float | None):
    """Distances and reflection orders of the image sources of one (source, mic) pair."""
    reach = []
    for size in room:
        if max_order is not None:
            reach.append(max_order // 2 + 1)
        else:
            reach.append(int(np.ceil(max_dist / (2 * size))) + 1)
    px, ox = _axis_images(source[0], room[0], reach[0])
    py, oy = _axis_images(source[1], room[1], reach[1])
    pz, oz = _axis_images(source[2], room[2], reach[2])
    d2 = ((px - mic[0]) ** 2)[:, None, None] + ((py - mic[1]) ** 2)[None, :, None] + ((pz - mic[2]) ** 2)[None, None, :]
    order = ox[:, None, None] + oy[None, :, None] + oz[None, None, :]
    keep = np.ones(d2.shape, dtype=bool)
    if max_order is not None:
        keep &= order <= max_order
    if max_dist is not None:
        keep &= d2 <= max_dist**2
    return np.sqrt(d2[keep]), order[keep].astype(np.float64)


def _image_gains(order: np.ndarray, alpha: float) -> np.ndarray:
    reflection = np.sqrt(max(0.0, 1.0 - alpha))
    if reflection == 0.0:
        return (order == 0).astype(np.float64)
    return reflection**order


def _order_histograms(images, sample_rate: int, c: float) -> np.ndarray:
    """Direct-sound energy 1/(4 pi d)^2 binned by arrival sample, one row per reflection order."""
    idx = [np.rint(dist / c * sample_rate).astype(np.int64) for dist, _ in images]
    n = max(int(i.max()) for i in idx) + 1
    n_orders = max(int(order.max()) for _, order in images) + 1
    hist = np.zeros(n_orders * n)
    for (dist, order), i in zip(images, idx):
        hist += np.bincount(order.astype(np.int64) * n + i, weights=(4 * np.pi * dist) ** -2.0,
                            minlength=n_orders * n)
    return hist.reshape(n_orders, n)


def _edc_t60(hist: np.ndarray, alpha: float, sample_rate: int) -> float:
    """Schroeder T20 of the pooled image-energy arrival histogram."""
    # energy gain of an order-o image is (1 - alpha)^o
    weights = max(0.0, 1.0 - alpha) ** np.arange(hist.shape[0], dtype=np.float64)
    return schroeder_t60(np.sqrt(weights @ hist), sample_rate)


def calibrated_absorption(images, t60: float, sample_rate: int = 16000, c: float = SPEED_OF_SOUND,
                          room=None, iterations: int = 30) -> float:
    """Uniform absorption whose image-source decay has the requested T60.

    Starts from Sabine's estimate and bisects on the Schroeder T20 of the
    image-energy histogram (specular shoebox decays are not exponential, so
    Sabine's value alone overestimates the reverberation time).
    """
    hist = _order_histograms(images, sample_rate, c)
    lo, hi = 1e-4, 1.0
    if room is not None:
        guess = sabine_absorption(room, t60)
        try:
            if _edc_t60(hist, guess, sample_rate) > t60:
                lo = guess
            else:
                hi = guess
        except ValueError:
            hi = guess
    for _ in range(iterations):
        mid = np.sqrt(lo * hi)
        try:
            measured = _edc_t60(hist, mid, sample_rate)
        except ValueError:
            hi = mid
            continue
        if measured > t60:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1.001:
            break
    return float(np.sqrt(lo * hi))


@njit(cache=True)
def _accumulate_taps(out, start, frac_idx, amps, table):
    for n in range(start.shape[0]):
        row = table[frac_idx[n]]
        base = start[n]
        a = amps[n]
        for k in range(row.shape[0]):
            out[base + k] += a * row[k]


def _render_taps(delays: np.ndarray, amps: np.ndarray, length: int) -> np.ndarray:
    """Sum of windowed-sinc fractional-delay pulses, one per image."""
    half = SINC_TAPS // 2
    out = np.zeros(length + SINC_TAPS + 1)
    centre = np.round(delays).astype(np.int64)
    frac_idx = np.round((delays - centre + 0.5) * _FRAC_STEPS).astype(np.int64)
    # index `half` of `out` is time zero; taps before it hold the direct path's pre-ringing
    _accumulate_taps(out, centre, frac_idx, np.ascontiguousarray(amps, dtype=np.float64), _sinc_table())
    return out[half:half + length]


def image_source_rir(
    room,
    sources,
    mics,
    t60: float,
    sample_rate: int = 16000,
    max_order: int | None = None,
    absorption: float | str = "calibrated",
    c: float = SPEED_OF_SOUND,
) -> Rir:
    """Shoebox image-source RIRs for every (source, mic) pair.

    ``max_order=None`` selects the order automatically: every image whose path
    is no longer than ``c * t60`` is included. ``absorption`` is a number, or
    ``"sabine"`` / ``"calibrated"`` (Sabine refined to hit ``t60``).
    """
    room = tuple(float(v) for v in room)
    sources = np.atleast_2d(np.asarray(sources, dtype=np.float64))
    mics = np.atleast_2d(np.asarray(mics, dtype=np.float64))
    for p in np.concatenate([sources, mics]):
        if np.any(p <= 0) or np.any(p >= np.array(room)):
            raise GeometryError(f"position {tuple(p)} is outside the room {room}")
    max_dist = None if max_order is not None else c * t60

    images = {(i, j): _images(room, src, mic, max_order, max_dist)
              for i, src in enumerate(sources) for j, mic in enumerate(mics)}
    if absorption == "sabine":
        alpha = sabine_absorption(room, t60)
    elif absorption == "calibrated":
        ref = [images[i, 0] for i in range(len(sources))]
        alpha = calibrated_absorption(ref, t60, sample_rate, c, room=room)
    else:
        alpha = float(absorption)

    longest = max(float(dist.max()) for dist, _ in images.values()) / c * sample_rate
    length = int(np.ceil(max(t60 * sample_rate, longest))) + SINC_TAPS // 2 + 1
    taps = np.zeros((len(sources), len(mics), length))
    highpass = butter(2, REFLECTION_HIGHPASS_HZ, "high", fs=sample_rate, output="sos")
    for (i, j), (dist, order) in images.items():
        amp = _image_gains(order, alpha) / (4 * np.pi * dist)
        delay = dist / c * sample_rate
        direct = order == 0
        reflected = ~direct & (amp != 0)
        taps[i, j] = _render_taps(delay[direct], amp[direct], length)
        if reflected.any():
            # the all-positive reflection train builds up a spurious DC component
            taps[i, j] += sosfilt(highpass, _render_taps(delay[reflected], amp[reflected], length))
    direct_dist = np.linalg.norm(sources[:, None, :] - mics[None, :, :], axis=-1)
    return Rir(
        taps=taps,
        sample_rate=sample_rate,
        direct_delay=np.rint(direct_dist / c * sample_rate).astype(np.int64),
        direct_distance=direct_dist,
        absorption=alpha,
    )


def simulate_rir(scene: Scene, max_order: int | None = None, sample_rate: int = 16000,
                 absorption: float | str = "calibrated") -> Rir:
    return image_source_rir(scene.room, scene.sources, scene.mics, scene.t60, sample_rate,
                            max_order=max_order, absorption=absorption)


def schroeder_t60(rir: np.ndarray, sample_rate: int, db_range=(-5.0, -25.0)) -> float:
    """Reverberation time from a line fit to the Schroeder energy decay curve."""
    energy = np.asarray(rir, dtype=np.float64) ** 2
    edc = np.cumsum(energy[::-1])[::-1]
    edc_db = 10 * np.log10(edc / edc[0] + 1e-300)
    hi, lo = db_range
    start = int(np.argmax(edc_db <= hi))
    stop = int(np.argmax(edc_db <= lo))
    if stop <= start + 1:
        raise ValueError("decay curve does not span the fit range")
    t = np.arange(start, stop) / sample_rate
    slope, _ = np.polyfit(t, edc_db[start:stop], 1)
    return float(-60.0 / slope)


# ---------------------------------------------------------------------------
# Rendering


def measure_snr(speech_ref: np.ndarray, noise_ref: np.ndarray) -> float:
    speech_ref = np.asarray(speech_ref, dtype=np.float64)
    noise_ref = np.asarray(noise_ref, dtype=np.float64)
    if speech_ref.shape != noise_ref.shape:
        raise ValueError("speech and noise references must have equal lengths")
    ps = float(np.sum(speech_ref**2))
    pn = float(np.sum(noise_ref**2))
    if pn == 0.0:
        return SNR_CAP_DB
    if ps == 0.0:
        return -SNR_CAP_DB
    return float(np.clip(10 * np.log10(ps / pn), -SNR_CAP_DB, SNR_CAP_DB))


@dataclass
class RenderedSample:
    noisy: np.ndarray  # (C, N)
    target: np.ndarray  # (N,) dry target, direct-path aligned to mic 0
    noise: np.ndarray  # (C, N)
    snr_db: float
    scene: Scene | None = None
    sample_rate: int = 16000
    sample_id: str = ""

    @property
    def reverberant_target(self) -> np.ndarray:
        return self.noisy - self.noise

    @property
    def n_samples(self) -> int:
        return self.noisy.shape[-1]


def align_target(dry: np.ndarray, delay: int, gain: float = 1.0) -> np.ndarray:
    out = np.zeros_like(dry)
    if delay < len(dry):
        out[delay:] = dry[: len(dry) - delay]
    return gain * out


def render_scene(scene: Scene, target_dry: np.ndarray, interferer_dry, rir: Rir | None = None,
                 sample_rate: int = 16000) -> RenderedSample:
    """Mix a scene: reverberant target plus reverberant interferers at every mic.

    The training target is the dry target delayed by the direct-path delay to
    mic 0 and attenuated by the direct-path spreading loss ``1 / (4 pi d)``.
    """
    target_dry = np.asarray(target_dry, dtype=np.float64)
    interferer_dry = [np.asarray(s, dtype=np.float64) for s in interferer_dry]
    n = len(target_dry)
    if len(interferer_dry) != len(scene.interferer_pos):
        raise ValueError(f"expected {len(scene.interferer_pos)} interferer signals, got {len(interferer_dry)}")
    if any(len(s) != n for s in interferer_dry):
        raise ValueError("length mismatch: all source signals must have the target's length")
    if rir is None:
        rir = simulate_rir(scene, sample_rate=sample_rate)
    dry = np.stack([target_dry, *interferer_dry])  # (S, N)
    wet = fftconvolve(dry[:, None, :], rir.taps, axes=-1)[..., :n]  # (S, C, N)
    reverb_target = wet[0]
    noise = wet[1:].sum(axis=0)
    noisy = reverb_target + noise
    aligned = align_target(target_dry, int(rir.direct_delay[0, 0]), float(rir.direct_gain[0, 0]))
    return RenderedSample(
        noisy=noisy,
        target=aligned,
        noise=noise,
        snr_db=measure_snr(reverb_target[0], noise[0]),
        scene=scene,
        sample_rate=sample_rate,
    )
