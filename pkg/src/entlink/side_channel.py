"""Mutual information leaked by publicly shared detection times.

When the two detectors behind a measurement basis have different optical path
lengths, their timing histograms are copies of one profile shifted by a
centroid offset.  Publishing detection times then tells an eavesdropper
something about which detector fired, i.e. about the outcome.  The leak is
quantified as the mutual information between the outcome label X and the
binned detection time T:

    H(T)   = -sum_k  dbar_k log2 dbar_k,     dbar = sum_x p0(x) d_x
    H(X)   = -sum_x  p0(x) log2 p0(x)
    H(X,T) = -sum_xk p0(x) d_xk log2 [p0(x) d_xk]
    I(X;T) = H(X) + H(T) - H(X,T)

All histograms live on a fixed 1 ps grid, so bin masses are exact partial
sums and the bin-width scan is free of interpolation error.  Entropies are
discrete entropies of the masses induced by the active binning scheme, which
is precisely the quantity the bin-width scan varies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.stats import exponnorm

__all__ = [
    "BinningScheme",
    "DetectorHistogram",
    "MiPoint",
    "OutcomePrior",
    "bin_masses",
    "entropy_T",
    "entropy_X",
    "exp_tail_profile",
    "gaussian_profile",
    "joint_entropy",
    "make_shifted_histograms",
    "mi_extrema_by_width",
    "mi_vs_binwidth",
    "mutual_information",
    "read_histogram_csv",
    "write_histogram_csv",
    "write_mi_csv",
]

GRID_RESOLUTION_PS = 1  # histograms are sampled on a fixed 1 ps grid

_MASS_TOL = 1e-9
# Profile factories zero out cells below this fraction of the peak, leaving
# exact zero headroom that shifted copies can roll into.
_TAIL_CUTOFF = 1e-16


@dataclass
class DetectorHistogram:
    """Per-cell probability mass of a detector's photon counting profile."""

    start_ps: int
    mass: np.ndarray

    def __post_init__(self) -> None:
        self.mass = np.asarray(self.mass, dtype=np.float64)
        if self.mass.ndim != 1 or self.mass.size == 0:
            raise ValueError("histogram mass must be a non-empty 1-D array")
        if np.any(self.mass < 0.0):
            raise ValueError("histogram mass must be non-negative")
        total = float(self.mass.sum())
        if abs(total - 1.0) > _MASS_TOL:
            raise ValueError(f"histogram mass must sum to 1, got {total}")

    @property
    def n_cells(self) -> int:
        return int(self.mass.size)

    @property
    def times_ps(self) -> np.ndarray:
        return self.start_ps + np.arange(self.n_cells, dtype=np.int64)

    @property
    def centroid_ps(self) -> float:
        return float(np.dot(self.times_ps, self.mass))


@dataclass(frozen=True)
class OutcomePrior:
    """A-priori probabilities of the outcome labels."""

    probabilities: tuple[float, ...]

    def __post_init__(self) -> None:
        p = np.asarray(self.probabilities, dtype=float)
        if np.any(p < 0.0) or abs(float(p.sum()) - 1.0) > _MASS_TOL:
            raise ValueError("prior must be non-negative and sum to 1")

    def __len__(self) -> int:
        return len(self.probabilities)


@dataclass(frozen=True)
class BinningScheme:
    """Uniform bins [offset + k*width, offset + (k+1)*width) on the time axis."""

    bin_width_ps: int
    start_offset_ps: int = 0

    def __post_init__(self) -> None:
        if self.bin_width_ps <= 0:
            raise ValueError("bin width must be positive")


def gaussian_profile(
    sigma_ps: float,
    *,
    shift_capacity_ps: int = 0,
    start_ps: int = 0,
) -> DetectorHistogram:
    """Gaussian counting profile on the 1 ps grid with shift headroom.

    The peak sits 10 sigma into the grid and the grid extends another
    ``10 sigma + shift_capacity_ps`` beyond it, so shifted copies up to the
    stated capacity stay on the grid.
    """
    if sigma_ps <= 0.0:
        raise ValueError("sigma must be positive")
    if shift_capacity_ps < 0:
        raise ValueError("shift capacity must be >= 0")
    center = 10.0 * sigma_ps
    span = int(math.ceil(20.0 * sigma_ps)) + shift_capacity_ps
    t = np.arange(span, dtype=float)
    w = np.exp(-0.5 * ((t - center) / sigma_ps) ** 2)
    return _finalize_profile(w, start_ps)


def exp_tail_profile(
    sigma_ps: float,
    tail_ps: float,
    *,
    shift_capacity_ps: int = 0,
    start_ps: int = 0,
) -> DetectorHistogram:
    """Gaussian-with-exponential-tail profile (diffusion tail of real counters)."""
    if sigma_ps <= 0.0 or tail_ps <= 0.0:
        raise ValueError("sigma and tail constant must be positive")
    center = 10.0 * sigma_ps
    span = int(math.ceil(20.0 * sigma_ps + 8.0 * tail_ps)) + shift_capacity_ps
    t = np.arange(span, dtype=float)
    w = exponnorm.pdf(t, tail_ps / sigma_ps, loc=center, scale=sigma_ps)
    return _finalize_profile(w, start_ps)


def _finalize_profile(weights: np.ndarray, start_ps: int) -> DetectorHistogram:
    weights = np.where(weights < weights.max() * _TAIL_CUTOFF, 0.0, weights)
    return DetectorHistogram(start_ps=start_ps, mass=weights / weights.sum())


def make_shifted_histograms(
    profile: DetectorHistogram, shift_ps: int
) -> tuple[DetectorHistogram, DetectorHistogram]:
    """Two copies of one profile whose centroids differ by exactly ``shift_ps``.

    The shifted copy is rolled within the profile's grid; if any probability
    mass would fall off the end, the shift exceeds the grid headroom and a
    ``ValueError`` is raised (build the profile with enough capacity).
    """
    if shift_ps < 0:
        raise ValueError("shift must be >= 0")
    if shift_ps >= profile.n_cells:
        raise ValueError(f"shift of {shift_ps} ps exceeds the {profile.n_cells}-cell grid")
    if shift_ps and np.any(profile.mass[-shift_ps:] != 0.0):
        raise ValueError(
            f"shift of {shift_ps} ps would roll probability mass off the grid"
        )
    shifted = np.zeros_like(profile.mass)
    shifted[shift_ps:] = profile.mass[: profile.n_cells - shift_ps]
    return profile, DetectorHistogram(start_ps=profile.start_ps, mass=shifted)


def bin_masses(histogram: DetectorHistogram, scheme: BinningScheme) -> tuple[int, np.ndarray]:
    """Aggregate cell masses into scheme bins; returns (first bin index, masses)."""
    k = (histogram.times_ps - scheme.start_offset_ps) // scheme.bin_width_ps
    kmin = int(k[0])
    out = np.bincount((k - kmin).astype(np.int64), weights=histogram.mass)
    return kmin, out


def _entropy(masses: np.ndarray) -> float:
    m = masses[masses > 0.0]
    return float(-(m * np.log2(m)).sum())


def entropy_X(prior: OutcomePrior) -> float:
    """Shannon entropy of the outcome prior, in bits."""
    return _entropy(np.asarray(prior.probabilities, dtype=float))


def entropy_T(
    prior: OutcomePrior,
    histograms: Sequence[DetectorHistogram],
    scheme: BinningScheme,
) -> float:
    """Entropy of the binned detection-time mixture, in bits."""
    _check_lengths(prior, histograms)
    binned = [bin_masses(h, scheme) for h in histograms]
    kmin = min(k for k, _ in binned)
    kmax = max(k + m.size for k, m in binned)
    mix = np.zeros(kmax - kmin)
    for p, (k, m) in zip(prior.probabilities, binned):
        mix[k - kmin : k - kmin + m.size] += p * m
    return _entropy(mix)


def joint_entropy(
    prior: OutcomePrior,
    histograms: Sequence[DetectorHistogram],
    scheme: BinningScheme,
) -> float:
    """Entropy of the joint (outcome, binned time) distribution, in bits."""
    _check_lengths(prior, histograms)
    total = 0.0
    for p, h in zip(prior.probabilities, histograms):
        if p == 0.0:
            continue
        _, m = bin_masses(h, scheme)
        total += _entropy(p * m)
    return total


def mutual_information(
    prior: OutcomePrior,
    histograms: Sequence[DetectorHistogram],
    scheme: BinningScheme,
) -> float:
    """I(X;T) = H(X) + H(T) - H(X,T), clamped at zero against roundoff."""
    mi = (
        entropy_X(prior)
        + entropy_T(prior, histograms, scheme)
        - joint_entropy(prior, histograms, scheme)
    )
    if mi < -1e-9:
        raise AssertionError(f"mutual information came out negative: {mi}")
    return max(mi, 0.0)


def _check_lengths(prior: OutcomePrior, histograms: Sequence[DetectorHistogram]) -> None:
    if len(prior) != len(histograms):
        raise ValueError(
            f"prior has {len(prior)} outcomes but {len(histograms)} histograms given"
        )


class MiPoint(NamedTuple):
    bin_width_ps: int
    start_offset_ps: int
    mi_bits: float


def mi_vs_binwidth(
    prior: OutcomePrior,
    histograms: Sequence[DetectorHistogram],
    bin_widths_ps: Iterable[int],
    start_offsets_ps: Iterable[int] = (0,),
) -> list[MiPoint]:
    """Scan mutual information over bin widths and binning start offsets."""
    widths = list(bin_widths_ps)
    offsets = list(start_offsets_ps)
    if not widths or not offsets:
        raise ValueError("bin width and offset grids must be non-empty")
    return [
        MiPoint(w, o, mutual_information(prior, histograms, BinningScheme(w, o)))
        for w in widths
        for o in offsets
    ]


def mi_extrema_by_width(points: Sequence[MiPoint]) -> dict[int, tuple[float, float]]:
    """Per bin width, the (min, max) mutual information over the offsets."""
    extrema: dict[int, tuple[float, float]] = {}
    for pt in points:
        lo, hi = extrema.get(pt.bin_width_ps, (math.inf, -math.inf))
        extrema[pt.bin_width_ps] = (min(lo, pt.mi_bits), max(hi, pt.mi_bits))
    return extrema


def write_mi_csv(points: Sequence[MiPoint], path) -> None:
    """Write scan points in the ``bin_width_ps,start_offset_ps,mi_bits`` format."""
    lines = ["bin_width_ps,start_offset_ps,mi_bits"]
    for pt in points:
        lines.append(f"{pt.bin_width_ps},{pt.start_offset_ps},{pt.mi_bits:.12g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_mi_csv(path) -> list[MiPoint]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "bin_width_ps,start_offset_ps,mi_bits":
        raise ValueError(f"{path}: expected header 'bin_width_ps,start_offset_ps,mi_bits'")
    points = []
    for line in lines[1:]:
        if not line.strip():
            continue
        w, o, mi = line.split(",")
        points.append(MiPoint(int(w), int(o), float(mi)))
    return points


def write_histogram_csv(histogram: DetectorHistogram, path) -> None:
    """Write per-cell density in the ``t_ps,density`` format (1 ps cells)."""
    lines = ["t_ps,density"]
    for t, m in zip(histogram.times_ps, histogram.mass):
        lines.append(f"{t},{m:.12g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_histogram_csv(path) -> DetectorHistogram:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "t_ps,density":
        raise ValueError(f"{path}: expected header 't_ps,density'")
    times, mass = [], []
    for line in lines[1:]:
        if not line.strip():
            continue
        t, m = line.split(",")
        times.append(int(t))
        mass.append(float(m))
    if not times:
        raise ValueError(f"{path}: empty histogram")
    start = times[0]
    if times != list(range(start, start + len(times))):
        raise ValueError(f"{path}: cells must be contiguous 1 ps steps")
    arr = np.asarray(mass, dtype=float)
    return DetectorHistogram(start_ps=start, mass=arr / arr.sum())
