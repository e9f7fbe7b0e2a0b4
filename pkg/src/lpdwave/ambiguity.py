"""Delay-Doppler ambiguity surfaces, sensing metrics, and the shaping loss.

The surface is the magnitude of the matched-filter response of a frame
against delay- and Doppler-shifted copies of itself, evaluated on a grid
of integer sample delays and evenly spaced digital Doppler frequencies.
The zero-delay row is computed by direct inner products (it equals the
frame energy at zero Doppler); remaining lags come from FFT correlations.

The training-time loss compares squared magnitudes against an ideal
single-peak target: a mainlobe hinge (no penalty for exceeding the target
peak) plus a weighted off-peak sum with extra weight on the zero-Doppler
row.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Union

import numpy as np

from .frames import IqWaveform, ZeroEnergy
from .nn import engine
from .nn.engine import Tensor

CROSSING_CONVENTION = "half-amplitude, linear interpolation"


class EmptySidelobeRegion(ValueError):
    pass


@dataclass(frozen=True)
class DopplerGrid:
    """Doppler slices as fractions of the sample rate, symmetric about 0."""

    num_slices: int = 257
    max_fraction: float = 0.10
    delay_extent: Optional[int] = None   # None: full padded extent

    def __post_init__(self):
        if self.num_slices < 3 or self.num_slices % 2 == 0:
            raise ValueError("num_slices must be odd and >= 3 so F=0 is on-grid")
        if self.max_fraction <= 0:
            raise ValueError("max_fraction must be > 0")

    @property
    def half(self) -> int:
        return (self.num_slices - 1) // 2

    def doppler_fractions(self) -> np.ndarray:
        """Digital Doppler frequencies (cycles/sample), ascending, 0 centered."""
        k = np.arange(-self.half, self.half + 1)
        return self.max_fraction * k / self.half

    @property
    def zero_index(self) -> int:
        return self.half


@dataclass(frozen=True)
class ThumbtackTarget:
    """Ideal response: peak chi at the origin, zero elsewhere."""

    chi: float

    def __post_init__(self):
        if self.chi <= 0:
            raise ValueError("target peak must be > 0")


@dataclass(frozen=True)
class ZeroDopplerWeight:
    """Off-peak weight matrix: all ones except gamma on the zero-Doppler row."""

    gamma: float = 1.0

    def __post_init__(self):
        if self.gamma < 1.0:
            raise ValueError("zero-Doppler weight must be >= 1")


@dataclass(frozen=True)
class AmbiguitySurface:
    magnitudes: np.ndarray          # [delay_bins, doppler_bins]
    delays: np.ndarray              # integer sample delays, ascending
    dopplers: np.ndarray            # cycles/sample, ascending
    grid: DopplerGrid
    peak_value: float               # value at (0, 0) == frame energy
    frame_length: int
    pad_to: int

    @property
    def zero_delay_index(self) -> int:
        return int(np.searchsorted(self.delays, 0))

    @property
    def zero_doppler_index(self) -> int:
        return self.grid.zero_index

    def zero_doppler_slice(self) -> np.ndarray:
        return self.magnitudes[:, self.zero_doppler_index]


class MainlobeResult(NamedTuple):
    width: float
    tau1: float
    tau2: float
    crossed: bool       # False: no half-amplitude crossing, width is full extent
    tau_main: float


@dataclass(frozen=True)
class AmbiguityMetrics:
    mainlobe_width: float
    peak_sidelobe: float
    integrated_doppler: float
    tau_main: float
    crossing: str = CROSSING_CONVENTION


def _as_samples(w: Union[IqWaveform, np.ndarray]) -> np.ndarray:
    if isinstance(w, IqWaveform):
        return np.asarray(w.samples, dtype=np.complex128)
    return np.asarray(w, dtype=np.complex128)


def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length()


def ambiguity_surface(
    w: Union[IqWaveform, np.ndarray],
    grid: DopplerGrid = DopplerGrid(),
    pad_to: Optional[int] = None,
) -> AmbiguitySurface:
    """Magnitude surface |A(tau, F)| by frequency-shifted correlation.

    Zero padding to pad_to sets the evaluated delay extent (the response is
    identically zero beyond the frame's own support); it exists so frames
    of different lengths can be compared on one grid.
    """
    s = _as_samples(w)
    n = s.size
    energy = float(np.sum(np.abs(s) ** 2))
    if energy == 0.0:
        raise ZeroEnergy("ambiguity surface of a zero frame")
    p = max(pad_to or n, n)
    d_max = grid.delay_extent if grid.delay_extent is not None else p - 1
    delays = np.arange(-d_max, d_max + 1)
    fractions = grid.doppler_fractions()

    idx = np.arange(n)
    phasors = np.exp(2j * np.pi * fractions[:, None] * idx[None, :])
    u = phasors * s[None, :]

    nfft = _next_pow2(2 * n)
    fs = np.fft.fft(s, nfft)
    fu = np.fft.fft(u, nfft, axis=1)
    corr = np.fft.ifft(fu * np.conj(fs)[None, :], axis=1)

    mags = np.zeros((delays.size, grid.num_slices))
    support = min(d_max, n - 1)
    center = d_max
    pos = np.abs(corr[:, : support + 1])          # lags 0..support
    neg = np.abs(corr[:, nfft - support: nfft])   # lags -support..-1
    mags[center: center + support + 1, :] = pos.T
    mags[center - support: center, :] = neg.T
    # zero-delay row via direct inner products: exact energy at F = 0
    mags[center, :] = np.abs(u @ np.conj(s))
    return AmbiguitySurface(
        magnitudes=mags,
        delays=delays,
        dopplers=fractions,
        grid=grid,
        peak_value=energy,
        frame_length=n,
        pad_to=p,
    )


def ambiguity_surface_spectral(
    w: Union[IqWaveform, np.ndarray],
    grid: DopplerGrid = DopplerGrid(),
    pad_to: Optional[int] = None,
) -> AmbiguitySurface:
    """Cross-spectrum formulation: conj(S(F)) * S(F - F_D) inverse-transformed.

    Requires every Doppler slice to land on an integer bin of the padded
    DFT so the shifted spectrum is an exact circular roll; used as an
    equivalence oracle for the correlation path.
    """
    s = _as_samples(w)
    n = s.size
    energy = float(np.sum(np.abs(s) ** 2))
    if energy == 0.0:
        raise ZeroEnergy("ambiguity surface of a zero frame")
    p = max(pad_to or n, n)
    m = _next_pow2(2 * p)
    fractions = grid.doppler_fractions()
    shifts = fractions * m
    if not np.allclose(shifts, np.round(shifts), atol=1e-9):
        raise ValueError(
            "spectral path requires Doppler slices on integer bins of the "
            f"padded DFT (length {m})"
        )
    shifts_i = np.round(shifts).astype(int)
    d_max = grid.delay_extent if grid.delay_extent is not None else p - 1
    delays = np.arange(-d_max, d_max + 1)

    spec = np.fft.fft(s, m)
    mags = np.zeros((delays.size, grid.num_slices))
    support = min(d_max, n - 1)
    center = d_max
    for col, j in enumerate(shifts_i):
        cross = np.roll(spec, j) * np.conj(spec)
        corr = np.fft.ifft(cross)
        mags[center: center + support + 1, col] = np.abs(corr[: support + 1])
        mags[center - support: center, col] = np.abs(corr[m - support: m])
    return AmbiguitySurface(
        magnitudes=mags,
        delays=delays,
        dopplers=fractions,
        grid=grid,
        peak_value=energy,
        frame_length=n,
        pad_to=p,
    )


# ---------------------------------------------------------------------------
# sensing metrics


def _first_local_min(a: np.ndarray) -> int:
    """Index of the first local minimum of a 1-D slice scanning from 0.

    Plateaus break toward the smaller index; a monotone slice returns the
    last index.
    """
    n = a.size
    for t in range(1, n - 1):
        if a[t] < a[t - 1] and a[t] <= a[t + 1]:
            return t
    return n - 1


def _half_crossing(a: np.ndarray, half: float, limit: int) -> Optional[float]:
    """Linear-interpolated index where `a` first falls below `half`."""
    for t in range(1, limit + 1):
        if a[t] < half:
            prev, cur = a[t - 1], a[t]
            return (t - 1) + (prev - half) / (prev - cur)
    return None


def mainlobe_width(surface: AmbiguitySurface) -> MainlobeResult:
    """Half-amplitude width of the zero-Doppler mainlobe.

    The mainlobe edge tau_main is the first local minimum scanning outward
    from zero delay; the crossings at half the peak amplitude are located
    by linear interpolation on each side.
    """
    a = surface.zero_doppler_slice()
    c = surface.zero_delay_index
    peak = a[c]
    if peak <= 0:
        raise ZeroEnergy("surface peak must be positive")
    half = 0.5 * peak

    pos = a[c:]
    neg = a[c::-1]
    t_main_pos = _first_local_min(pos)
    t_main_neg = _first_local_min(neg)
    tau2 = _half_crossing(pos, half, t_main_pos)
    tau1 = _half_crossing(neg, half, t_main_neg)
    if tau2 is None and tau1 is None:
        extent = float(surface.delays[-1] - surface.delays[0])
        return MainlobeResult(extent, float(surface.delays[0]),
                              float(surface.delays[-1]), False,
                              float(t_main_pos))
    if tau2 is None:
        tau2 = -tau1
    if tau1 is None:
        tau1 = -tau2
    return MainlobeResult(tau2 + tau1, -tau1, tau2, True, float(t_main_pos))


def peak_sidelobe(surface: AmbiguitySurface, tau_main: float,
                  strict: bool = False) -> float:
    """Largest zero-Doppler sidelobe relative to the mainlobe peak.

    Evaluated one-sided over [tau_main, max delay]; magnitude symmetry
    makes the sides equal. An empty region raises with strict=True and
    otherwise reports 0 (a monotone response has no sidelobes).
    """
    a = surface.zero_doppler_slice()
    c = surface.zero_delay_index
    peak = a[c]
    start = int(math.ceil(tau_main))
    last = a.size - 1 - c
    if start > last:
        if strict:
            raise EmptySidelobeRegion(
                f"mainlobe edge {tau_main} reaches the delay extent {last}")
        return 0.0
    return float(np.max(a[c + start:]) / peak)


def integrated_doppler(surface: AmbiguitySurface) -> float:
    """Sum of |A/A(0,0)|^2 over every delay and every nonzero Doppler."""
    k0 = surface.zero_doppler_index
    norm = surface.magnitudes / surface.peak_value
    sq = norm * norm
    total = sq.sum() - sq[:, k0].sum()
    return float(total)


def compute_metrics(surface: AmbiguitySurface) -> AmbiguityMetrics:
    ml = mainlobe_width(surface)
    psl = peak_sidelobe(surface, ml.tau_main)
    ida = integrated_doppler(surface)
    return AmbiguityMetrics(ml.width, psl, ida, ml.tau_main)


def metrics_for_frame(
    samples: np.ndarray,
    grid: DopplerGrid = DopplerGrid(),
    pad_factor: int = 4,
) -> AmbiguityMetrics:
    """Metrics pipeline: zero-pad, build the surface, extract all three."""
    n = np.asarray(samples).size
    return compute_metrics(ambiguity_surface(samples, grid, pad_to=pad_factor * n))


# ---------------------------------------------------------------------------
# differentiable loss


def _loss_phasors(n: int, grid: DopplerGrid, cdtype) -> np.ndarray:
    idx = np.arange(n)
    fr = grid.doppler_fractions()
    return np.exp(2j * np.pi * fr[:, None] * idx[None, :]).astype(cdtype)


def squared_ambiguity(x: Tensor, grid: DopplerGrid) -> Tensor:
    """|A(tau, F)|^2 on delays 0..N-1 for a [batch, 2, N] frame tensor.

    Differentiable with respect to the frames (first order); the backward
    rule runs the adjoint correlations with FFTs.
    """
    b, two, n = x.shape
    if two != 2:
        raise engine.ShapeMismatch("expected [batch, 2, n] frames")
    real_dtype = x.dtype
    cdtype = np.complex64 if real_dtype == np.float32 else np.complex128
    phasors = _loss_phasors(n, grid, cdtype)
    nfft = _next_pow2(2 * n)

    s = (x.data[:, 0, :] + 1j * x.data[:, 1, :]).astype(cdtype)
    u = s[:, None, :] * phasors[None, :, :]
    fs = np.fft.fft(s, nfft, axis=-1)
    fu = np.fft.fft(u, nfft, axis=-1)
    c = np.fft.ifft(fu * np.conj(fs)[:, None, :], axis=-1)[..., :n]
    c = c.astype(cdtype)
    m2 = (c.real**2 + c.imag**2).astype(real_dtype)

    def vjp(g: Tensor):
        gv = g.data.astype(real_dtype)
        h = (gv * c).astype(cdtype)            # G * c
        hb = (gv * np.conj(c)).astype(cdtype)  # G * conj(c)
        # term2[j] = sum_k conj(p_k[j]) * (h_k conv s)[j]
        fh = np.fft.fft(h, nfft, axis=-1)
        conv = np.fft.ifft(fh * fs[:, None, :], axis=-1)[..., :n]
        term2 = (np.conj(phasors)[None, :, :] * conv).sum(axis=1)
        # term1[j] = sum_{k,tau} hb[k,tau] * u[k, j+tau]
        fhb = np.fft.fft(np.conj(hb), nfft, axis=-1)
        corr = np.fft.ifft(fu * np.conj(fhb), axis=-1)[..., :n]
        term1 = corr.sum(axis=1)
        dbar = term1 + term2
        gx = np.stack([2.0 * dbar.real, 2.0 * dbar.imag], axis=1)
        return (Tensor(gx.astype(real_dtype)),)

    return engine.custom_op(m2, (x,), vjp, "squared_ambiguity",
                            second_order_ok=False)


def frame_energy(x: Tensor) -> Tensor:
    """Per-frame energy sum(|s|^2) for [batch, 2, N] tensors."""
    return (x * x).sum(axis=(1, 2))


def ambiguity_loss(
    frames: Tensor,
    target: ThumbtackTarget,
    weight: ZeroDopplerWeight,
    grid: DopplerGrid = DopplerGrid(),
) -> tuple[Tensor, Tensor, Tensor]:
    """(L_main, L_side, L_ambig) for a batch of generated frames.

    L_main hinges on the peak only from below (a larger mainlobe than the
    target is free); L_side drives every off-peak cell toward zero with the
    zero-Doppler row up-weighted by gamma.
    """
    b = frames.shape[0]
    dtype = frames.dtype
    inv_m = np.asarray(1.0 / b, dtype=dtype)

    energy = frame_energy(frames)
    chi = np.asarray(target.chi, dtype=dtype)
    deficit = engine.relu(Tensor(chi) - energy)
    l_main = (deficit * deficit).sum() * Tensor(inv_m)

    m2 = squared_ambiguity(frames, grid)
    k0 = grid.zero_index
    w_sq = np.ones((1, grid.num_slices, 1), dtype=dtype)
    w_sq[0, k0, 0] = weight.gamma**2
    weighted = (m2 * Tensor(w_sq)).sum()
    peak_sq = m2[:, k0, 0].sum() * Tensor(np.asarray(weight.gamma**2, dtype=dtype))
    l_side = (weighted - peak_sq) * Tensor(inv_m)
    return l_main, l_side, l_main + l_side


# ---------------------------------------------------------------------------
# surface export

_AMB_MAGIC = b"AMB1"
_AMB_HEADER = struct.Struct("<4sIIId")  # magic, version, n_doppler, n_delay, max_fraction


def write_surface(path: Path | str, surface: AmbiguitySurface) -> None:
    """Binary export: 24-byte header then float32 row-major [doppler, delay]."""
    grid = surface.magnitudes.T.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_AMB_HEADER.pack(_AMB_MAGIC, 1, grid.shape[0], grid.shape[1],
                                  surface.grid.max_fraction))
        fh.write(np.ascontiguousarray(grid).tobytes())


def read_surface(path: Path | str) -> tuple[np.ndarray, float]:
    """Read an exported surface back as ([doppler, delay] float32, max_fraction)."""
    with open(path, "rb") as fh:
        magic, version, n_dop, n_del, max_fraction = _AMB_HEADER.unpack(
            fh.read(_AMB_HEADER.size))
        if magic != _AMB_MAGIC or version != 1:
            raise ValueError("bad surface header")
        data = np.frombuffer(fh.read(), dtype="<f4").reshape(n_dop, n_del)
    return data, max_fraction
