"""Down-conversion pair source model and synthetic timestamp generation.

The source emits photon pairs as a Poisson process.  Its spectral bandwidth
sets the coherence time ``tau_c = 1/(2 pi dnu)``; detector jitter ``tau_j``
and the timestamp coincidence window ``tau_b`` combine into an effective
timing width ``tau_w = sqrt(2 tau_j^2 + (tau_b/2)^2)``.  The measured pair
correlation profile is the source correlation function convolved with the
detector response:

    g2(tau) = exp(tau_w/tau_c) * [f+(tau) + f-(tau)],
    f+-(tau) = exp(+-tau/tau_c) * [1 -+ erf((tau +- tau_w^2/tau_c)/(sqrt(2) tau_w))]

``generate_pair_events`` turns the model into a pair of detector timestamp
streams (loss, background, jitter, relative delay, time-bin quantisation) for
exercising the correlation and key-distillation pipeline downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import erfc, erfcx

__all__ = [
    "ChannelModel",
    "SourceModel",
    "StreamParseError",
    "TimestampStream",
    "coherence_time",
    "combined_width",
    "g2",
    "generate_pair_events",
    "read_timestamp_csv",
    "write_timestamp_csv",
]

_SQRT2 = math.sqrt(2.0)

# Tags for pair/background taggers: (basis, outcome) uint8 arrays.
PairTagger = Callable[[np.random.Generator, int], tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]
BackgroundTagger = Callable[[np.random.Generator, int], tuple[np.ndarray, np.ndarray]]


def coherence_time(bandwidth: float) -> float:
    """Source coherence time 1/(2 pi dnu) for spectral bandwidth ``dnu`` (Hz)."""
    if bandwidth <= 0.0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    return 1.0 / (2.0 * math.pi * bandwidth)


def combined_width(detector_jitter: float, coincidence_bin: float) -> float:
    """Effective timing width sqrt(2 tau_j^2 + (tau_b/2)^2), all in seconds."""
    if detector_jitter < 0.0 or coincidence_bin < 0.0:
        raise ValueError("timing widths must be non-negative")
    return math.sqrt(2.0 * detector_jitter**2 + (0.5 * coincidence_bin) ** 2)


@dataclass(frozen=True)
class SourceModel:
    """Pair source parameters; times in seconds, rates in 1/s."""

    pair_rate: float
    bandwidth: float
    detector_jitter: float = 0.0
    coincidence_bin: float = 0.0

    def __post_init__(self) -> None:
        if self.pair_rate <= 0.0:
            raise ValueError(f"pair rate must be positive, got {self.pair_rate}")
        coherence_time(self.bandwidth)  # validates bandwidth
        combined_width(self.detector_jitter, self.coincidence_bin)

    @property
    def coherence_time(self) -> float:
        return coherence_time(self.bandwidth)

    @property
    def combined_width(self) -> float:
        return combined_width(self.detector_jitter, self.coincidence_bin)


def g2(tau, model: SourceModel, *, scale: float = 1.0):
    """Detector-convolved pair correlation profile at delay ``tau`` (seconds).

    Evaluates the convolved double-exponential exactly as stated above; the
    overall magnitude is left as an explicit ``scale`` knob (default 1) since
    only the shape and its bandwidth dependence are specified.  Accepts a
    scalar or array ``tau``.  With ``tau_w == 0`` the unconvolved limit
    ``2*exp(-|tau|/tau_c)`` is returned, which is the continuous limit of the
    formula as tau_w -> 0.
    """
    tc = model.coherence_time
    tw = model.combined_width
    tau = np.asarray(tau, dtype=float)

    if tw == 0.0:
        out = scale * 2.0 * np.exp(-np.abs(tau) / tc)
        return float(out) if out.ndim == 0 else out

    u = (tau + tw * tw / tc) / (_SQRT2 * tw)
    v = (tau - tw * tw / tc) / (_SQRT2 * tw)

    # f+ = e^{tau/tc} erfc(u), f- = e^{-tau/tc} erfc(-v).  Where the plain
    # product would overflow (large positive arguments), fold the Gaussian
    # factor into erfcx: e^{x} erfc(u) = e^{x - u^2} erfcx(u).
    fp = np.empty_like(u)
    mask = u >= 0.0
    fp[mask] = np.exp(tau[mask] / tc - u[mask] ** 2) * erfcx(u[mask])
    fp[~mask] = np.exp(tau[~mask] / tc) * erfc(u[~mask])

    fm = np.empty_like(v)
    mask = v <= 0.0
    fm[mask] = np.exp(-tau[mask] / tc - v[mask] ** 2) * erfcx(-v[mask])
    fm[~mask] = np.exp(-tau[~mask] / tc) * erfc(-v[~mask])

    out = scale * math.exp(tw / tc) * (fp + fm)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ChannelModel:
    """Per-detector channel: loss, uniform background, fixed delay, seed."""

    efficiency: float
    background_rate: float = 0.0
    true_delay_ps: int = 0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"efficiency must be in [0, 1], got {self.efficiency}")
        if self.background_rate < 0.0:
            raise ValueError("background rate must be >= 0")


@dataclass
class TimestampStream:
    """Ordered detection events of one node: time (integer ps), basis, outcome."""

    node_id: str
    times_ps: np.ndarray
    basis: np.ndarray
    outcome: np.ndarray
    duration_s: float
    time_bin_ps: int = 1

    def __post_init__(self) -> None:
        self.times_ps = np.asarray(self.times_ps, dtype=np.int64)
        self.basis = np.asarray(self.basis, dtype=np.int16)
        self.outcome = np.asarray(self.outcome, dtype=np.uint8)
        if not (self.times_ps.size == self.basis.size == self.outcome.size):
            raise ValueError("times, basis and outcome must have equal lengths")
        if self.time_bin_ps <= 0:
            raise ValueError("time bin must be positive")
        if self.duration_s < 0.0:
            raise ValueError("duration must be >= 0")
        if self.times_ps.size:
            if np.any(np.diff(self.times_ps) <= 0):
                raise ValueError("event times must be strictly increasing")
            if self.times_ps[0] < 0 or self.times_ps[-1] > self.duration_ps:
                raise ValueError("event times must lie within [0, duration]")

    @property
    def duration_ps(self) -> int:
        return int(round(self.duration_s * 1e12))

    @property
    def n_events(self) -> int:
        return int(self.times_ps.size)


def generate_pair_events(
    model: SourceModel,
    channel_a: ChannelModel,
    channel_b: ChannelModel,
    duration_s: float,
    *,
    time_bin_ps: int = 1,
    node_ids: tuple[str, str] = ("alice", "bob"),
    pair_tagger: PairTagger | None = None,
    background_tagger: BackgroundTagger | None = None,
) -> tuple[TimestampStream, TimestampStream]:
    """Simulate correlated detection streams for both receiving nodes.

    Pair emissions are a Poisson process at the model rate; each photon
    independently survives its channel with probability ``efficiency``, picks
    up Gaussian timing noise of width ``detector_jitter`` and the channel's
    fixed delay, and is merged with uniform Poisson background counts.  Times
    are quantised to ``time_bin_ps`` keeping at most one (the earliest) event
    per bin.  Fully deterministic given the channel seeds.

    Args:
        model: source parameters (pair rate, jitter).
        channel_a, channel_b: per-node loss/background/delay/seed.
        duration_s: observation window in seconds.
        time_bin_ps: quantisation bin for the recorded timestamps.
        node_ids: stream identifiers.
        pair_tagger: optional callable drawing per-pair (basis_a, outcome_a,
            basis_b, outcome_b) tag arrays; defaults to all-zero tags.
        background_tagger: optional callable drawing (basis, outcome) for
            background counts; defaults to all-zero tags.

    Returns:
        The two timestamp streams, index-aligned to nothing: pairing is
        recovered downstream from timing alone.
    """
    if duration_s <= 0.0:
        raise ValueError("duration must be positive")
    if time_bin_ps <= 0:
        raise ValueError("time bin must be positive")

    rng_pairs = np.random.default_rng([17, channel_a.rng_seed, channel_b.rng_seed])
    n_pairs = int(rng_pairs.poisson(model.pair_rate * duration_s))
    emit_s = np.sort(rng_pairs.uniform(0.0, duration_s, n_pairs))

    if pair_tagger is not None:
        basis_a, out_a, basis_b, out_b = pair_tagger(rng_pairs, n_pairs)
    else:
        basis_a = basis_b = np.zeros(n_pairs, dtype=np.int16)
        out_a = out_b = np.zeros(n_pairs, dtype=np.uint8)

    duration_ps = int(round(duration_s * 1e12))
    streams = []
    for channel, node_id, basis, outcome in (
        (channel_a, node_ids[0], basis_a, out_a),
        (channel_b, node_ids[1], basis_b, out_b),
    ):
        rng = np.random.default_rng([29, channel.rng_seed])
        keep = rng.random(n_pairs) < channel.efficiency
        t = emit_s[keep]
        if model.detector_jitter > 0.0:
            t = t + rng.normal(0.0, model.detector_jitter, t.size)
        t_ps = t * 1e12 + channel.true_delay_ps
        tags_b = basis[keep]
        tags_o = outcome[keep]

        n_bg = int(rng.poisson(channel.background_rate * duration_s))
        if n_bg:
            bg_ps = rng.uniform(0.0, duration_ps, n_bg)
            if background_tagger is not None:
                bg_basis, bg_out = background_tagger(rng, n_bg)
            else:
                bg_basis = np.zeros(n_bg, dtype=np.int16)
                bg_out = np.zeros(n_bg, dtype=np.uint8)
            t_ps = np.concatenate([t_ps, bg_ps])
            tags_b = np.concatenate([tags_b, bg_basis])
            tags_o = np.concatenate([tags_o, bg_out])

        inside = (t_ps >= 0.0) & (t_ps < duration_ps)
        t_ps = t_ps[inside]
        tags_b = tags_b[inside]
        tags_o = tags_o[inside]

        order = np.argsort(t_ps, kind="stable")
        bins = np.floor(t_ps[order] / time_bin_ps).astype(np.int64)
        # one photon per time bin: keep the earliest arrival
        _, first = np.unique(bins, return_index=True)
        streams.append(
            TimestampStream(
                node_id=node_id,
                times_ps=bins[first] * time_bin_ps,
                basis=tags_b[order][first],
                outcome=tags_o[order][first],
                duration_s=duration_s,
                time_bin_ps=time_bin_ps,
            )
        )
    return streams[0], streams[1]


class StreamParseError(ValueError):
    """Malformed timestamp CSV; carries the offending line number."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


_CSV_HEADER = "time_ps,basis,outcome"


def write_timestamp_csv(stream: TimestampStream, path) -> None:
    """Write a stream in the shared ``time_ps,basis,outcome`` format."""
    lines = [_CSV_HEADER]
    for t, b, o in zip(stream.times_ps, stream.basis, stream.outcome):
        lines.append(f"{t},{b},{o}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_timestamp_csv(
    path,
    *,
    node_id: str | None = None,
    duration_s: float | None = None,
    time_bin_ps: int = 1,
) -> TimestampStream:
    """Parse a ``time_ps,basis,outcome`` CSV into a stream.

    When ``duration_s`` is omitted it is inferred as one time bin past the
    last event.  Parse failures raise :class:`StreamParseError` with the
    1-based line number.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != _CSV_HEADER:
        raise StreamParseError(path, 1, f"expected header {_CSV_HEADER!r}")

    times, basis, outcome = [], [], []
    prev = -1
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise StreamParseError(path, line_no, f"expected 3 fields, got {len(parts)}")
        try:
            t = int(parts[0])
            b = int(parts[1])
            o = int(parts[2])
        except ValueError as exc:
            raise StreamParseError(path, line_no, f"non-integer field: {exc}") from None
        if t < 0:
            raise StreamParseError(path, line_no, "negative timestamp")
        if t <= prev:
            raise StreamParseError(path, line_no, "timestamps must be strictly increasing")
        if o not in (0, 1):
            raise StreamParseError(path, line_no, f"outcome must be 0 or 1, got {o}")
        prev = t
        times.append(t)
        basis.append(b)
        outcome.append(o)

    if duration_s is None:
        duration_s = (times[-1] + time_bin_ps) / 1e12 if times else 0.0
    return TimestampStream(
        node_id=node_id or path.stem,
        times_ps=np.asarray(times, dtype=np.int64),
        basis=np.asarray(basis, dtype=np.int16),
        outcome=np.asarray(outcome, dtype=np.uint8),
        duration_s=duration_s,
        time_bin_ps=time_bin_ps,
    )
