"""Synthetic signal corpora.

Three families, all deterministic under (seed, index):
  * a chirp toy set with integer time-bandwidth products drawn uniformly,
  * a communication-modulation background (surrogate for an over-the-air
    recording corpus),
  * coded radar baseline pulses (surrogate for a radar instantiation
    corpus), including the classic binary and polyphase compression codes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .frames import IqWaveform, NoiseSpec, complex_awgn
from .iqfile import DatasetManifest, ManifestEntry
from .rng import Rng, STREAM_DELAY, STREAM_NOISE, STREAM_SYMBOLS

CORPUS_VERSION = "corpus-v1-surrogate"


class InvalidPulseWidth(ValueError):
    pass


def snr_db_to_noise_var(snr_db: float, signal_power: float = 1.0) -> float:
    """Noise variance for a target frame-average SNR."""
    return signal_power / (10.0 ** (snr_db / 10.0))


# ---------------------------------------------------------------------------
# chirp toy dataset


@dataclass(frozen=True)
class ChirpSpec:
    sweep_bandwidth: int
    frame_length: int
    amplitude: float = 1.0
    duration: float = 1.0

    def __post_init__(self):
        if self.sweep_bandwidth < 1:
            raise ValueError("sweep bandwidth must be >= 1")
        if self.frame_length < 1:
            raise ValueError("frame length must be >= 1")


def chirp_samples(bandwidth: float, frame_length: int) -> np.ndarray:
    """Unit-amplitude up-chirp exp(j*pi*B*(k/N)^2) over normalized duration 1."""
    t = np.arange(frame_length) / frame_length
    return np.exp(1j * np.pi * bandwidth * t * t)


def gen_chirp(bandwidth: int, frame_length: int, noise: NoiseSpec) -> IqWaveform:
    if bandwidth < 1:
        raise ValueError("sweep bandwidth must be >= 1")
    s = chirp_samples(float(bandwidth), frame_length)
    n = complex_awgn(frame_length, noise.variance, Rng(noise.seed, STREAM_NOISE))
    return IqWaveform(s + n, label=f"chirp{bandwidth}", snr_db=None)


def estimate_time_bandwidth(samples: np.ndarray) -> float:
    """Time-bandwidth estimate from the phase slope of the delay product.

    For exp(j*pi*B*(k/N)^2) the lag-1 product has angle pi*B*(2k+1)/N^2,
    linear in k with slope 2*pi*B/N^2. A weighted linear fit of that angle
    recovers B without phase unwrapping.
    """
    s = np.asarray(samples, dtype=np.complex128)
    n = s.size
    d = s[1:] * np.conj(s[:-1])
    ang = np.angle(d)
    w = np.abs(d)
    k = np.arange(n - 1, dtype=np.float64)
    wsum = w.sum()
    if wsum == 0:
        return 0.0
    kb = (w * k).sum() / wsum
    ab = (w * ang).sum() / wsum
    var = (w * (k - kb) ** 2).sum()
    if var == 0:
        return 0.0
    slope = (w * (k - kb) * (ang - ab)).sum() / var
    return slope * n * n / (2.0 * np.pi)


def gen_chirp_dataset(
    count: int,
    seed: int,
    b_range: tuple[int, int] = (5, 19),
    snr_db: float = 30.0,
    frame_length: int = 1024,
) -> tuple[np.ndarray, DatasetManifest]:
    """Chirp frames with B ~ uniform integers over b_range inclusive."""
    if count < 1:
        raise ValueError("count must be >= 1")
    gen = Rng(seed, STREAM_SYMBOLS).generator()
    bvals = gen.integers(b_range[0], b_range[1] + 1, size=count)
    var = snr_db_to_noise_var(snr_db)
    frames = np.empty((count, frame_length), dtype=np.complex128)
    entries = []
    for i, b in enumerate(bvals):
        frame_rng = Rng(seed, STREAM_NOISE).fork(i)
        s = chirp_samples(float(b), frame_length)
        frames[i] = s + complex_awgn(frame_length, var, frame_rng)
        entries.append(ManifestEntry(i, f"chirp{b}", snr_db, frame_rng.stream))
    return frames, DatasetManifest(entries, frame_length, CORPUS_VERSION)


# ---------------------------------------------------------------------------
# communication-modulation background

BACKGROUND_CLASSES = (
    "BPSK", "QPSK", "PSK8", "QAM16", "QAM64", "GMSK", "FM", "AM_DSB", "OOK",
)


@dataclass(frozen=True)
class BackgroundClass:
    name: str
    symbol_rate: int = 128          # symbols per frame (digital classes)
    pulse_shaping: str = "rect"     # "rect" or "rrc"
    rolloff: float = 0.35

    def __post_init__(self):
        if self.name not in BACKGROUND_CLASSES:
            raise ValueError(f"unknown background class {self.name!r}")
        if self.symbol_rate < 1:
            raise ValueError("symbol_rate must be >= 1")
        if not 0.0 <= self.rolloff <= 1.0:
            raise ValueError("rolloff must lie in [0, 1]")


def _psk_constellation(order: int, offset: float = 0.0) -> np.ndarray:
    return np.exp(1j * (2.0 * np.pi * np.arange(order) / order + offset))


def _qam_constellation(order: int) -> np.ndarray:
    m = int(round(math.sqrt(order)))
    levels = np.arange(m) * 2.0 - (m - 1)
    pts = (levels[:, None] + 1j * levels[None, :]).ravel()
    return pts / math.sqrt(np.mean(np.abs(pts) ** 2))


_CONSTELLATIONS = {
    "BPSK": np.array([1.0 + 0j, -1.0 + 0j]),
    "QPSK": _psk_constellation(4, np.pi / 4),
    "PSK8": _psk_constellation(8),
    "QAM16": _qam_constellation(16),
    "QAM64": _qam_constellation(64),
    "OOK": np.array([0.0 + 0j, math.sqrt(2.0) + 0j]),
}


def rrc_taps(sps: int, rolloff: float, span: int = 8) -> np.ndarray:
    """Root-raised-cosine impulse response over `span` symbols."""
    n = span * sps
    t = (np.arange(-n // 2, n // 2 + 1)) / sps
    taps = np.zeros_like(t)
    beta = rolloff
    for i, ti in enumerate(t):
        if abs(ti) < 1e-12:
            taps[i] = 1.0 - beta + 4.0 * beta / np.pi
        elif beta > 0 and abs(abs(4.0 * beta * ti) - 1.0) < 1e-9:
            taps[i] = (beta / math.sqrt(2.0)) * (
                (1 + 2 / np.pi) * math.sin(np.pi / (4 * beta))
                + (1 - 2 / np.pi) * math.cos(np.pi / (4 * beta))
            )
        else:
            num = math.sin(np.pi * ti * (1 - beta)) + 4 * beta * ti * math.cos(
                np.pi * ti * (1 + beta)
            )
            den = np.pi * ti * (1 - (4 * beta * ti) ** 2)
            taps[i] = num / den
    return taps / math.sqrt(np.sum(taps**2))


def _shape_symbols(symbols: np.ndarray, sps: int, shaping: str, rolloff: float,
                   frame_length: int) -> np.ndarray:
    if shaping == "rect":
        s = np.repeat(symbols, sps)
    elif shaping == "rrc":
        up = np.zeros(symbols.size * sps, dtype=np.complex128)
        up[::sps] = symbols
        taps = rrc_taps(sps, rolloff)
        s = np.convolve(up, taps, mode="same")
    else:
        raise ValueError(f"unknown pulse shaping {shaping!r}")
    return s[:frame_length]


def _lowpass_noise(gen: np.random.Generator, n: int, cutoff_frac: float) -> np.ndarray:
    """Deterministic band-limited real message signal, unit peak deviation."""
    raw = gen.normal(size=n)
    win = max(3, int(round(1.0 / cutoff_frac)))
    kernel = np.hanning(win)
    kernel /= kernel.sum()
    msg = np.convolve(raw, kernel, mode="same")
    peak = np.max(np.abs(msg))
    return msg / peak if peak > 0 else msg


def _gmsk_baseband(bits: np.ndarray, sps: int, frame_length: int,
                   bt: float = 0.3) -> np.ndarray:
    """Gaussian-filtered MSK: integrate the filtered frequency pulse."""
    nrz = np.repeat(bits.astype(np.float64), sps)
    span = 3 * sps
    t = (np.arange(-span, span + 1)) / sps
    # Gaussian frequency pulse for bandwidth-time product bt
    sigma = math.sqrt(math.log(2.0)) / (2.0 * np.pi * bt)
    g = np.exp(-(t**2) / (2.0 * sigma**2))
    g /= g.sum()
    freq = np.convolve(nrz, g, mode="same")
    phase = np.pi / 2.0 * np.cumsum(freq) / sps
    return np.exp(1j * phase)[:frame_length]


def gen_background(
    cls: BackgroundClass,
    snr_db: float,
    frame_length: int,
    seed: int,
) -> IqWaveform:
    """One background frame: unit signal power before noise, then AWGN at snr_db."""
    sym_rng = Rng(seed, STREAM_SYMBOLS).generator()
    sps = max(1, frame_length // cls.symbol_rate)
    name = cls.name

    if name in _CONSTELLATIONS:
        const = _CONSTELLATIONS[name]
        idx = sym_rng.integers(0, const.size, size=cls.symbol_rate + 16)
        s = _shape_symbols(const[idx], sps, cls.pulse_shaping, cls.rolloff,
                           frame_length)
    elif name == "GMSK":
        bits = sym_rng.integers(0, 2, size=cls.symbol_rate + 16) * 2 - 1
        s = _gmsk_baseband(bits, sps, frame_length)
    elif name == "FM":
        msg = _lowpass_noise(sym_rng, frame_length, cutoff_frac=0.02)
        deviation = 0.05  # cycles/sample peak frequency deviation
        s = np.exp(1j * 2.0 * np.pi * deviation * np.cumsum(msg))
    elif name == "AM_DSB":
        msg = _lowpass_noise(sym_rng, frame_length, cutoff_frac=0.02)
        s = msg.astype(np.complex128)
    else:  # pragma: no cover - guarded by BackgroundClass
        raise ValueError(name)

    if s.size < frame_length:
        s = np.pad(s, (0, frame_length - s.size))
    power = np.mean(np.abs(s) ** 2)
    if power > 1e-30:
        s = s / math.sqrt(power)
    noise = complex_awgn(frame_length, snr_db_to_noise_var(snr_db),
                         Rng(seed, STREAM_NOISE))
    return IqWaveform(s + noise, label=name, snr_db=snr_db)


DEFAULT_SNR_GRID_DB = tuple(range(-20, 31, 2))


def gen_background_dataset(
    classes: Sequence[BackgroundClass],
    frames_per_cell: int,
    frame_length: int,
    seed: int,
    snr_grid_db: Sequence[float] = DEFAULT_SNR_GRID_DB,
) -> tuple[np.ndarray, DatasetManifest]:
    """Frames for every (class, snr) cell; per-frame seeds derived from `seed`."""
    total = len(classes) * len(snr_grid_db) * frames_per_cell
    frames = np.empty((total, frame_length), dtype=np.complex128)
    entries = []
    i = 0
    for cls in classes:
        for snr in snr_grid_db:
            for _ in range(frames_per_cell):
                frame_seed = (seed << 20) ^ (i + 1)
                w = gen_background(cls, snr, frame_length, frame_seed)
                frames[i] = w.samples
                entries.append(ManifestEntry(i, cls.name, snr, frame_seed))
                i += 1
    return frames, DatasetManifest(entries, frame_length, CORPUS_VERSION)


# ---------------------------------------------------------------------------
# coded radar baselines

BARKER = {
    7: np.array([1, 1, 1, -1, -1, 1, -1], dtype=float),
    11: np.array([1, 1, 1, -1, -1, -1, 1, -1, -1, 1, -1], dtype=float),
    13: np.array([1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1], dtype=float),
}

# Minimum-peak-sidelobe length 7: the unique PSL-1 equivalence class is the
# Barker sequence; the time-reversed representative keeps the class distinct.
MPS7 = BARKER[7][::-1].copy()

# Generalized (polyphase) Barker of length 7 on the 60-degree alphabet;
# all autocorrelation sidelobes have magnitude <= 1.
POLYPHASE_BARKER7_PHASES = np.array([0, 0, 1, 0, 4, 5, 2], dtype=float) * (np.pi / 3.0)

# Maximal-length sequence (degree 6, taps x^6 + x + 1), 63 chips.
def _msequence63() -> np.ndarray:
    state = [1, 0, 0, 0, 0, 0]
    out = []
    for _ in range(63):
        out.append(state[-1])
        fb = state[-1] ^ state[0]
        state = [fb] + state[:-1]
    return np.array(out, dtype=float) * 2.0 - 1.0


MSEQ63 = _msequence63()

BASELINE_CLASSES = (
    "Barker7", "Barker11", "Barker13", "CombinedBarker16", "MPS7",
    "PolyphaseBarker7", "P3", "P4", "T1", "MSK63", "LFM",
)

# Pulse-width ranges as fractions of the frame (scaled from the reference
# corpus timing of 420 samples/us against a 1024-sample frame).
_US_TO_FRAME = 420.0 / 1024.0
_PULSE_RANGE_US = {
    "Barker7": (0.875, 7.0),
    "Barker11": (1.375, 11.0),
    "Barker13": (1.625, 13.0),
    "CombinedBarker16": (1.0, 8.0),
    "MPS7": (1.05, 4.2),
    "PolyphaseBarker7": (0.875, 7.0),
    "P3": (3.2, 25.6),
    "P4": (5.0, 20.0),
    "T1": (2.0, 16.0),
    "MSK63": (2.0, 18.9),
}
_LPD_TAGGED = frozenset({"PolyphaseBarker7", "P3", "P4", "T1"})


@dataclass(frozen=True)
class BaselineRadarClass:
    name: str
    code_length: int = 0
    lpd_tagged: bool = False

    @staticmethod
    def named(name: str) -> "BaselineRadarClass":
        if name not in BASELINE_CLASSES:
            raise ValueError(f"unknown baseline class {name!r}")
        lengths = {
            "Barker7": 7, "Barker11": 11, "Barker13": 13,
            "CombinedBarker16": 16, "MPS7": 7, "PolyphaseBarker7": 7,
            "P3": 64, "P4": 64, "T1": 0, "MSK63": 63, "LFM": 0,
        }
        return BaselineRadarClass(name, lengths[name], name in _LPD_TAGGED)

    def pulse_width_range(self, frame_length: int) -> tuple[int, int]:
        """Sample range for random pulse-width draws at this frame length."""
        if self.name == "LFM":
            return (max(self.min_pulse_width(), frame_length // 4), frame_length)
        lo_us, hi_us = _PULSE_RANGE_US[self.name]
        lo = max(self.min_pulse_width(),
                 int(round(lo_us * _US_TO_FRAME * frame_length)))
        hi = max(lo, int(round(hi_us * _US_TO_FRAME * frame_length)))
        return lo, hi

    def min_pulse_width(self) -> int:
        return max(1, self.code_length)


def p3_phases(n_chips: int) -> np.ndarray:
    k = np.arange(n_chips)
    return np.pi * k * k / n_chips


def p4_phases(n_chips: int) -> np.ndarray:
    k = np.arange(n_chips)
    return np.pi * (k * k / n_chips - k)


def t1_phases(n_samples: int, segments: int = 4, states: int = 2) -> np.ndarray:
    """Stepped phase-slope code: segment j advances phase at slope ~ j,
    quantized to `states` phase levels."""
    t = np.arange(n_samples) / n_samples
    j = np.minimum((t * segments).astype(int), segments - 1)
    seg_t = t - j / segments
    steps = np.floor((segments * seg_t) * (j * states))
    return np.mod(2.0 * np.pi / states * steps, 2.0 * np.pi)


def _code_to_pulse(code: np.ndarray, pulse_width: int) -> np.ndarray:
    """Stretch an n-chip code over pulse_width samples (floor chip mapping)."""
    n_chips = code.size
    idx = (np.arange(pulse_width) * n_chips) // pulse_width
    return code[idx]


def _msk_pulse(chips: np.ndarray, pulse_width: int) -> np.ndarray:
    """Minimum-shift-keyed chips: +/- quarter-cycle phase ramp per chip."""
    c = _code_to_pulse(chips, pulse_width)
    samples_per_chip = pulse_width / chips.size
    phase = np.pi / 2.0 * np.cumsum(c) / samples_per_chip
    return np.exp(1j * phase)


def baseline_pulse(
    cls: BaselineRadarClass,
    pulse_width: int,
    rng: Optional[Rng] = None,
) -> np.ndarray:
    """Full coded pulse of pulse_width unit-modulus samples (pre-placement)."""
    if pulse_width < cls.min_pulse_width():
        raise InvalidPulseWidth(
            f"{cls.name} requires pulse width >= {cls.min_pulse_width()}, "
            f"got {pulse_width}"
        )
    name = cls.name
    if name in ("Barker7", "Barker11", "Barker13"):
        code = BARKER[cls.code_length].astype(np.complex128)
    elif name == "CombinedBarker16":
        b4 = np.array([1, 1, -1, 1], dtype=float)
        code = np.kron(b4, b4).astype(np.complex128)
    elif name == "MPS7":
        code = MPS7.astype(np.complex128)
    elif name == "PolyphaseBarker7":
        code = np.exp(1j * POLYPHASE_BARKER7_PHASES)
    elif name == "P3":
        code = np.exp(1j * p3_phases(cls.code_length))
    elif name == "P4":
        code = np.exp(1j * p4_phases(cls.code_length))
    elif name == "T1":
        return np.exp(1j * t1_phases(pulse_width))
    elif name == "MSK63":
        return _msk_pulse(MSEQ63, pulse_width)
    elif name == "LFM":
        gen = (rng or Rng(0)).generator()
        bw = gen.uniform(0.2, 0.4)
        i = np.arange(pulse_width)
        phase = 2.0 * np.pi * bw * (i * i / (2.0 * pulse_width) - i / 2.0)
        return np.exp(1j * phase)
    else:  # pragma: no cover
        raise ValueError(name)
    return _code_to_pulse(code, pulse_width)


def gen_baseline(
    cls: BaselineRadarClass,
    pulse_width: int,
    delay: int,
    frame_length: int,
    seed: int,
) -> IqWaveform:
    """Coded pulse in an otherwise-zero frame.

    Pulses longer than the frame are energy-normalized first and a random
    frame-length segment is kept, so truncation reduces received energy.
    """
    rng = Rng(seed, STREAM_SYMBOLS)
    pulse = baseline_pulse(cls, pulse_width, rng)
    frame = np.zeros(frame_length, dtype=np.complex128)
    if pulse_width > frame_length:
        pulse = pulse / math.sqrt(np.sum(np.abs(pulse) ** 2))
        gen = Rng(seed, STREAM_DELAY).generator()
        start = int(gen.integers(0, pulse_width - frame_length + 1))
        frame[:] = pulse[start:start + frame_length]
    else:
        if delay < 0 or delay + pulse_width > frame_length:
            raise InvalidPulseWidth(
                f"delay {delay} + pulse width {pulse_width} exceeds frame "
                f"{frame_length}"
            )
        frame[delay:delay + pulse_width] = pulse
    return IqWaveform(frame, label=cls.name, snr_db=None)


def gen_baseline_dataset(
    classes: Sequence[BaselineRadarClass],
    frames_per_class: int,
    frame_length: int,
    seed: int,
) -> tuple[np.ndarray, DatasetManifest]:
    """Random pulse widths within each class range, random in-frame delays."""
    total = len(classes) * frames_per_class
    frames = np.empty((total, frame_length), dtype=np.complex128)
    entries = []
    i = 0
    for cls in classes:
        lo, hi = cls.pulse_width_range(frame_length)
        for _ in range(frames_per_class):
            frame_seed = (seed << 20) ^ (i + 1)
            gen = Rng(frame_seed, STREAM_DELAY).generator()
            pw = int(gen.integers(lo, hi + 1))
            delay = int(gen.integers(0, max(1, frame_length - pw + 1))) \
                if pw <= frame_length else 0
            w = gen_baseline(cls, pw, delay, frame_length, frame_seed)
            frames[i] = w.samples
            entries.append(ManifestEntry(i, cls.name, 0.0, frame_seed))
            i += 1
    return frames, DatasetManifest(entries, frame_length, CORPUS_VERSION)
