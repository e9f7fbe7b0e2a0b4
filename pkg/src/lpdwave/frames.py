"""Complex baseband frames and the scene-mixing signal model.

A received frame is modeled as alpha*s + n + b: an attenuated radar
emission s, additive white Gaussian noise n, and an ambient background b.
All operations here are pure functions over immutable inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .rng import Rng, STREAM_NOISE


class SignalError(ValueError):
    """Base class for frame-level contract violations."""


class NonPositiveParameter(SignalError):
    pass


class ZeroEnergy(SignalError):
    pass


class ZeroVariance(SignalError):
    pass


class LengthMismatch(SignalError):
    pass


@dataclass(frozen=True)
class IqWaveform:
    """One frame of complex baseband samples.

    samples are dimensionless baseband amplitudes; sample_rate is symbolic
    (1.0 means normalized time). label/snr_db are optional class metadata
    carried through dataset manifests.
    """

    samples: np.ndarray
    sample_rate: float = 1.0
    label: Optional[str] = None
    snr_db: Optional[float] = None

    def __post_init__(self):
        arr = np.asarray(self.samples)
        if not np.iscomplexobj(arr):
            arr = arr.astype(np.complex128)
        object.__setattr__(self, "samples", arr)
        if arr.ndim != 1 or arr.size == 0:
            raise SignalError("waveform must be a nonempty 1-D sample vector")
        if not np.all(np.isfinite(arr.view(np.float64).reshape(-1))):
            raise SignalError("waveform samples must be finite")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2))

    @property
    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))

    def with_samples(self, samples: np.ndarray) -> "IqWaveform":
        return replace(self, samples=samples)


@dataclass(frozen=True)
class AttenuationScene:
    """Geometry and gains defining the one-way energy attenuation."""

    tx_gain: float
    rx_gain: float
    wavelength: float
    path_loss: float
    range_m: float

    def validate(self) -> None:
        for name in ("tx_gain", "rx_gain", "wavelength", "path_loss", "range_m"):
            if getattr(self, name) <= 0:
                raise NonPositiveParameter(f"{name} must be > 0")


@dataclass(frozen=True)
class NoiseSpec:
    """Complex AWGN with total per-sample variance `variance`."""

    variance: float
    seed: int = 0

    def __post_init__(self):
        if self.variance < 0:
            raise NonPositiveParameter("noise variance must be >= 0")


def compute_attenuation(scene: AttenuationScene) -> float:
    """Free-space energy attenuation alpha = sqrt(Gt*Gi*lam^2*L/((4pi)^2*R^2))."""
    scene.validate()
    num = scene.tx_gain * scene.rx_gain * scene.wavelength**2 * scene.path_loss
    den = (4.0 * math.pi) ** 2 * scene.range_m**2
    return math.sqrt(num / den)


def complex_awgn(n: int, variance: float, rng: Rng) -> np.ndarray:
    """n complex Gaussian samples with total variance `variance` (var/2 per part)."""
    if variance == 0.0:
        return np.zeros(n, dtype=np.complex128)
    gen = rng.generator()
    scale = math.sqrt(variance / 2.0)
    re = gen.normal(0.0, scale, size=n)
    im = gen.normal(0.0, scale, size=n)
    return re + 1j * im


def add_awgn(w: IqWaveform, spec: NoiseSpec) -> IqWaveform:
    """Add complex white Gaussian noise; deterministic for a given spec.seed."""
    noise = complex_awgn(len(w), spec.variance, Rng(spec.seed, STREAM_NOISE))
    return w.with_samples(w.samples + noise)


def normalize(w: IqWaveform, mode: str, target: float = 1.0) -> IqWaveform:
    """Scale a frame to a target total energy or a target mean power.

    mode is "energy" (sum |s|^2 = target) or "power" (mean |s|^2 = target).
    """
    e = w.energy
    if e == 0.0:
        raise ZeroEnergy("cannot normalize a zero-energy waveform")
    mode = mode.lower()
    if mode == "energy":
        factor = math.sqrt(target / e)
    elif mode == "power":
        factor = math.sqrt(target / (e / len(w)))
    else:
        raise ValueError(f"unknown normalization mode {mode!r}")
    return w.with_samples(w.samples * factor)


def mix_scene(
    radar: IqWaveform,
    background: IqWaveform,
    alpha: float,
    noise: NoiseSpec,
    time_shift: int = 0,
) -> IqWaveform:
    """Received frame alpha*s + roll(b, shift) + n.

    The background is circularly shifted inside the frame; shifts of k and
    -k compose to the identity.
    """
    if len(radar) != len(background):
        raise LengthMismatch(
            f"radar frame length {len(radar)} != background length {len(background)}"
        )
    shifted = np.roll(background.samples, time_shift)
    n = complex_awgn(len(radar), noise.variance, Rng(noise.seed, STREAM_NOISE))
    return IqWaveform(
        alpha * radar.samples + shifted + n,
        sample_rate=radar.sample_rate,
        label=radar.label,
        snr_db=radar.snr_db,
    )


def standardize(batch: Sequence[IqWaveform]) -> list[IqWaveform]:
    """Per-frame zero-mean/unit-std over the concatenated real and imag parts."""
    if len(batch) == 0:
        raise SignalError("standardize requires a nonempty batch")
    out = []
    for w in batch:
        parts = np.concatenate([w.samples.real, w.samples.imag])
        mu = parts.mean()
        sd = parts.std()
        if sd == 0.0:
            raise ZeroVariance("constant frame cannot be standardized")
        out.append(w.with_samples((w.samples - (mu + 1j * mu)) / sd))
    return out


def standardize_array(x: np.ndarray) -> np.ndarray:
    """Array form of standardize for [batch, 2, n] real training tensors."""
    mu = x.mean(axis=(1, 2), keepdims=True)
    sd = x.std(axis=(1, 2), keepdims=True)
    if np.any(sd == 0.0):
        raise ZeroVariance("constant frame cannot be standardized")
    return (x - mu) / sd


def to_channels(samples: np.ndarray, dtype=np.float64) -> np.ndarray:
    """Complex vector -> [2, n] real/imag channel stack."""
    return np.stack([samples.real, samples.imag]).astype(dtype)


def from_channels(x: np.ndarray) -> np.ndarray:
    """[2, n] channel stack -> complex vector."""
    return x[0].astype(np.float64) + 1j * x[1].astype(np.float64)


def measured_snr_db(signal: np.ndarray, noisy: np.ndarray) -> float:
    """SNR estimate from the frame-average powers of signal and residual."""
    p_sig = np.mean(np.abs(signal) ** 2)
    p_noise = np.mean(np.abs(noisy - signal) ** 2)
    return 10.0 * math.log10(p_sig / p_noise)
