"""Free-space Gaussian-beam link: divergence, photon capture, pair coincidence.

A down-conversion source on the distributing platform sends one photon of each
pair toward each receiving telescope.  Transverse photon positions follow the
normalised beam intensity profile, so single-photon capture is the Gaussian
measure of a (possibly offset) circular aperture, and joint capture of a pair
is the measure of an intersection of two disks: momentum conservation places
the partner photon at the point-reflected position ``-p``, while a confocal
relay in one arm flips the beam so the partner lands at ``+p`` instead.

All lengths are metres and angles radians.  Capture probabilities are computed
by deterministic adaptive quadrature (absolute accuracy ~1e-10).  Seeded
Monte-Carlo samplers are provided as independent cross-checks; they are used
by the test suite, never by the quadrature path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.integrate import quad
from scipy.special import i0e, ndtr

__all__ = [
    "ApertureSpec",
    "BeamGeometry",
    "CorrelationMode",
    "DEFAULT_POINTING_SIGMA_RAD",
    "beam_width",
    "capture_probability",
    "coincidence_probability",
    "divergence_angle",
    "intensity",
    "jittered_coincidence_probability",
    "monte_carlo_capture",
    "monte_carlo_coincidence",
    "sample_pointing_offsets",
]

# Typical attitude-control pointing uncertainty of a small satellite bus.
DEFAULT_POINTING_SIGMA_RAD = 50e-6

_QUAD_OPTS = dict(epsabs=1e-12, epsrel=1e-10, limit=300)
# The photon position is Gaussian with per-axis sigma = w/2; mass beyond
# 14 sigma is < 1e-42 and may be clipped from integration ranges.
_SUPPORT_SIGMAS = 14.0


class CorrelationMode(Enum):
    """Transverse correlation between the two photons of a pair.

    ``ANTI_CORRELATED``: momentum conservation, partner at ``-p``.
    ``INVERTED``: one beam flipped through a confocal relay, partner at ``+p``.
    """

    ANTI_CORRELATED = "anticorrelated"
    INVERTED = "inverted"


def divergence_angle(wavelength: float, waist: float) -> float:
    """Far-field divergence half-angle of a Gaussian beam, lambda/(pi*w0)."""
    if wavelength <= 0.0:
        raise ValueError(f"wavelength must be positive, got {wavelength}")
    if waist <= 0.0:
        raise ValueError(f"beam waist must be positive, got {waist}")
    return wavelength / (math.pi * waist)


@dataclass(frozen=True)
class BeamGeometry:
    """Gaussian beam propagated a distance ``distance`` from its waist."""

    wavelength: float
    waist: float
    distance: float

    def __post_init__(self) -> None:
        divergence_angle(self.wavelength, self.waist)  # validates both
        if self.distance < 0.0:
            raise ValueError(f"distance must be >= 0, got {self.distance}")

    @property
    def divergence(self) -> float:
        return divergence_angle(self.wavelength, self.waist)

    @property
    def width(self) -> float:
        return beam_width(self)


@dataclass(frozen=True)
class ApertureSpec:
    """Circular receiver aperture, possibly displaced from the beam axis."""

    radius: float
    offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.radius <= 0.0:
            raise ValueError(f"aperture radius must be positive, got {self.radius}")

    @property
    def offset_norm(self) -> float:
        return math.hypot(self.offset[0], self.offset[1])


def beam_width(geometry: BeamGeometry) -> float:
    """Beam radius w(z) = w0 * sqrt(1 + (z / (w0/theta))^2)."""
    ratio = geometry.distance * geometry.divergence / geometry.waist
    return geometry.waist * math.sqrt(1.0 + ratio * ratio)


def intensity(r, geometry: BeamGeometry):
    """Normalised transverse intensity profile at radius ``r`` (1/m^2).

    Normalised so the integral over the transverse plane is one, i.e.
    ``2/(pi*w(z)^2) * exp(-2 r^2 / w(z)^2)``.  Power conservation fixes the
    on-axis factor to (w0/w)^2 relative to the waist.  Accepts scalars or
    arrays.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0.0):
        raise ValueError("radius must be non-negative")
    w = beam_width(geometry)
    out = (2.0 / (math.pi * w * w)) * np.exp(-2.0 * r * r / (w * w))
    return float(out) if out.ndim == 0 else out


def capture_probability(geometry: BeamGeometry, aperture: ApertureSpec) -> float:
    """Probability that a beam photon lands inside the offset aperture.

    Polar quadrature about the aperture centre; the angular integral is done
    analytically (modified Bessel I0), leaving a smooth 1-D radial integrand.
    """
    w = beam_width(geometry)
    sigma = 0.5 * w
    d = aperture.offset_norm
    a = aperture.radius

    if a >= d + _SUPPORT_SIGMAS * sigma:
        # Aperture swallows the entire beam support.
        return 1.0
    if d - a >= _SUPPORT_SIGMAS * sigma:
        return 0.0

    inv_w2 = 1.0 / (w * w)

    def radial(rho: float) -> float:
        # i0e keeps exp(-2(rho^2+d^2)/w^2) * I0(4 rho d / w^2) finite.
        z = 4.0 * rho * d * inv_w2
        return 4.0 * inv_w2 * rho * math.exp(-2.0 * (rho - d) ** 2 * inv_w2) * i0e(z)

    hi = min(a, d + _SUPPORT_SIGMAS * sigma)
    pts = [d] if 0.0 < d < hi else None
    val, _ = quad(radial, 0.0, hi, points=pts, **_QUAD_OPTS)
    return min(max(val, 0.0), 1.0)


def coincidence_probability(
    geometry: BeamGeometry,
    aperture_1: ApertureSpec,
    aperture_2: ApertureSpec,
    mode: CorrelationMode,
) -> float:
    """Probability that both photons of a pair are captured.

    Photon 1 lands at a beam-distributed point ``p``; its partner lands at
    ``-p`` (anti-correlated) or ``+p`` (inverted).  Either way the joint event
    is ``p`` inside an intersection of two disks, whose Gaussian measure is
    integrated column-wise (erf in y, adaptive quadrature in x).
    """
    sigma = 0.5 * beam_width(geometry)
    c1x, c1y = aperture_1.offset
    c2x, c2y = aperture_2.offset
    if mode is CorrelationMode.ANTI_CORRELATED:
        # partner at -p inside aperture 2  <=>  p inside the reflected disk
        c2x, c2y = -c2x, -c2y
    return _disk_intersection_mass(
        sigma, (c1x, c1y), aperture_1.radius, (c2x, c2y), aperture_2.radius
    )


def _disk_intersection_mass(sigma, c1, a1, c2, a2) -> float:
    """Mass of an isotropic N(0, sigma^2 I) over the intersection of two disks."""
    lim = _SUPPORT_SIGMAS * sigma
    xlo = max(c1[0] - a1, c2[0] - a2, -lim)
    xhi = min(c1[0] + a1, c2[0] + a2, lim)
    if xlo >= xhi:
        return 0.0

    inv_s = 1.0 / sigma
    norm = inv_s / math.sqrt(2.0 * math.pi)

    def column(x: float) -> float:
        h1sq = a1 * a1 - (x - c1[0]) ** 2
        h2sq = a2 * a2 - (x - c2[0]) ** 2
        if h1sq <= 0.0 or h2sq <= 0.0:
            return 0.0
        h1 = math.sqrt(h1sq)
        h2 = math.sqrt(h2sq)
        ylo = max(c1[1] - h1, c2[1] - h2)
        yhi = min(c1[1] + h1, c2[1] + h2)
        if ylo >= yhi:
            return 0.0
        ymass = ndtr(yhi * inv_s) - ndtr(ylo * inv_s)
        return norm * math.exp(-0.5 * (x * inv_s) ** 2) * ymass

    pts = sorted({p for p in (c1[0], c2[0], 0.0) if xlo < p < xhi})
    val, _ = quad(column, xlo, xhi, points=pts or None, **_QUAD_OPTS)
    return min(max(val, 0.0), 1.0)


def monte_carlo_capture(
    geometry: BeamGeometry,
    aperture: ApertureSpec,
    n_samples: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Monte-Carlo estimate of ``capture_probability``: (estimate, std error)."""
    sigma = 0.5 * beam_width(geometry)
    p = rng.normal(0.0, sigma, size=(n_samples, 2))
    cx, cy = aperture.offset
    inside = (p[:, 0] - cx) ** 2 + (p[:, 1] - cy) ** 2 <= aperture.radius**2
    return _rate_and_error(inside.sum(), n_samples)


def monte_carlo_coincidence(
    geometry: BeamGeometry,
    aperture_1: ApertureSpec,
    aperture_2: ApertureSpec,
    mode: CorrelationMode,
    n_samples: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Monte-Carlo estimate of ``coincidence_probability``: (estimate, std error)."""
    sigma = 0.5 * beam_width(geometry)
    p = rng.normal(0.0, sigma, size=(n_samples, 2))
    partner = p if mode is CorrelationMode.INVERTED else -p
    c1x, c1y = aperture_1.offset
    c2x, c2y = aperture_2.offset
    in1 = (p[:, 0] - c1x) ** 2 + (p[:, 1] - c1y) ** 2 <= aperture_1.radius**2
    in2 = (partner[:, 0] - c2x) ** 2 + (partner[:, 1] - c2y) ** 2 <= aperture_2.radius**2
    return _rate_and_error(int(np.sum(in1 & in2)), n_samples)


def _rate_and_error(hits: int, n: int) -> tuple[float, float]:
    p = hits / n
    return p, math.sqrt(max(p * (1.0 - p), 1.0 / n) / n)


def sample_pointing_offsets(
    rng: np.random.Generator,
    n_samples: int,
    distance: float,
    angle_sigma: float = DEFAULT_POINTING_SIGMA_RAD,
) -> np.ndarray:
    """Transverse offsets z*theta_err for isotropic Gaussian pointing jitter."""
    if angle_sigma < 0.0:
        raise ValueError("pointing sigma must be >= 0")
    return rng.normal(0.0, distance * angle_sigma, size=(n_samples, 2))


def jittered_coincidence_probability(
    geometry: BeamGeometry,
    radius_1: float,
    radius_2: float,
    mode: CorrelationMode,
    *,
    angle_sigma: float = DEFAULT_POINTING_SIGMA_RAD,
    n_samples: int = 128,
    rng: np.random.Generator | None = None,
) -> float:
    """Coincidence probability averaged over random pointing of the source.

    Both receiving apertures share each sampled offset: the dominant jitter is
    the distributing platform's attitude, which displaces both beams together.
    Draws are seeded through ``rng``, so results are deterministic per seed.
    """
    if angle_sigma == 0.0:
        return coincidence_probability(
            geometry, ApertureSpec(radius_1), ApertureSpec(radius_2), mode
        )
    if rng is None:
        rng = np.random.default_rng(0)
    offsets = sample_pointing_offsets(rng, n_samples, geometry.distance, angle_sigma)
    total = 0.0
    for dx, dy in offsets:
        total += coincidence_probability(
            geometry,
            ApertureSpec(radius_1, (dx, dy)),
            ApertureSpec(radius_2, (dx, dy)),
            mode,
        )
    return total / n_samples
