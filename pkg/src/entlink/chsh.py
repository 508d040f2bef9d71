"""Polarization-correlation simulation and CHSH test statistics.

Both nodes analyse their photon of a co-polarized pair with one of three
settings (angles in degrees, each with its orthogonal complement at +90):

    node A: 22.5, 67.5 and the key setting 0
    node B: 0,    45   and the key setting 0

The two test settings on each side feed the CHSH combination
``S = E(A0,B0) + E(A0,B1) + E(A1,B1) - E(A1,B0)``; the parallel key settings
give perfectly correlated outcomes and carry the raw key.  Each correlation
coefficient is estimated from the four detector-pair coincidence counts as
``E = (N_pp + N_mm - N_pm - N_mp) / N_total`` where the first sign is node
A's detector (+/-) and the second node B's.

The default pair state is the written co-polarized superposition, for which
``E(a, b) = cos 2(a - b)``; the true singlet is available as an alternative.
Depolarisation is a ``visibility`` mix with white noise and uncorrelated
background coincidences add a uniform ``accidental_fraction`` floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BasisSettings",
    "PairStateModel",
    "SettingCounts",
    "background_tagger",
    "chsh_s_value",
    "correlation_coefficient",
    "joint_probabilities",
    "pair_tagger",
    "qber_from_parallel",
    "simulate_run",
]

KEY_SETTING = 2  # index of the shared key basis in each node's setting list

# Basis tags used for sifting: only the key setting shares a tag across the
# two nodes, so tag equality keeps exactly the parallel-basis coincidences.
ALICE_TAGS = (1, 2, 0)
BOB_TAGS = (3, 4, 0)


@dataclass(frozen=True)
class BasisSettings:
    """Analyzer angles (degrees) for each node, key setting last."""

    alice: tuple[float, float, float] = (22.5, 67.5, 0.0)
    bob: tuple[float, float, float] = (0.0, 45.0, 0.0)

    def alice_tag(self, setting: int) -> int:
        return ALICE_TAGS[setting]

    def bob_tag(self, setting: int) -> int:
        return BOB_TAGS[setting]


@dataclass(frozen=True)
class PairStateModel:
    """Pair state plus the two noise knobs that wash its correlations out."""

    visibility: float = 1.0
    accidental_fraction: float = 0.0
    state: str = "correlated"  # or "singlet"

    def __post_init__(self) -> None:
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError(f"visibility must be in [0, 1], got {self.visibility}")
        if not 0.0 <= self.accidental_fraction < 1.0:
            raise ValueError(
                f"accidental fraction must be in [0, 1), got {self.accidental_fraction}"
            )
        if self.state not in ("correlated", "singlet"):
            raise ValueError(f"unknown pair state {self.state!r}")


def joint_probabilities(angle_a: float, angle_b: float, model: PairStateModel) -> np.ndarray:
    """Outcome probabilities (pp, pm, mp, mm) for analyzer angles in degrees."""
    delta = math.radians(angle_a - angle_b)
    c2 = 0.5 * math.cos(delta) ** 2
    s2 = 0.5 * math.sin(delta) ** 2
    if model.state == "correlated":
        ideal = np.array([c2, s2, s2, c2])
    else:  # singlet: anti-correlated in every basis
        ideal = np.array([s2, c2, c2, s2])
    v = model.visibility
    probs = v * ideal + (1.0 - v) * 0.25
    a = model.accidental_fraction
    probs = (1.0 - a) * probs + a * 0.25
    return probs


@dataclass
class SettingCounts:
    """Coincidence counts of the four detector pairings for one setting pair."""

    n_pp: int = 0
    n_pm: int = 0
    n_mp: int = 0
    n_mm: int = 0

    @property
    def total(self) -> int:
        return self.n_pp + self.n_pm + self.n_mp + self.n_mm

    def as_array(self) -> np.ndarray:
        return np.array([self.n_pp, self.n_pm, self.n_mp, self.n_mm], dtype=np.int64)


def simulate_run(
    settings: BasisSettings,
    model: PairStateModel,
    n_pairs: int,
    seed: int = 0,
) -> dict[tuple[int, int], SettingCounts]:
    """Sample ``n_pairs`` with uniformly random settings on both sides.

    Returns counts per (alice_setting, bob_setting) pair; deterministic for a
    given seed.
    """
    if n_pairs <= 0:
        raise ValueError("n_pairs must be positive")
    rng = np.random.default_rng(seed)
    ia = rng.integers(0, 3, size=n_pairs)
    ib = rng.integers(0, 3, size=n_pairs)
    counts: dict[tuple[int, int], SettingCounts] = {}
    for i in range(3):
        for j in range(3):
            k = int(np.sum((ia == i) & (ib == j)))
            probs = joint_probabilities(settings.alice[i], settings.bob[j], model)
            draw = rng.multinomial(k, probs)
            counts[(i, j)] = SettingCounts(*(int(x) for x in draw))
    return counts


def correlation_coefficient(counts: SettingCounts) -> float:
    """E = (N_pp + N_mm - N_pm - N_mp) / N_total for one setting pair."""
    total = counts.total
    if total == 0:
        raise ValueError("insufficient data: no coincidences for this setting pair")
    return (counts.n_pp + counts.n_mm - counts.n_pm - counts.n_mp) / total


def chsh_s_value(e00: float, e01: float, e11: float, e10: float) -> float:
    """S = E(A0,B0) + E(A0,B1) + E(A1,B1) - E(A1,B0)."""
    return e00 + e01 + e11 - e10


def correlation_error(counts: SettingCounts) -> float:
    """Multinomial standard error of the correlation coefficient."""
    total = counts.total
    if total == 0:
        raise ValueError("insufficient data: no coincidences for this setting pair")
    e = correlation_coefficient(counts)
    return math.sqrt(max(1.0 - e * e, 1.0 / total) / total)


def qber_from_parallel(counts: SettingCounts) -> float:
    """Mismatch fraction among parallel (key-basis) coincidences."""
    total = counts.total
    if total == 0:
        raise ValueError("insufficient data: no parallel-basis coincidences")
    return (counts.n_pm + counts.n_mp) / total


def pair_tagger(settings: BasisSettings, model: PairStateModel):
    """Per-pair (basis, outcome) sampler for the timestamp generator.

    Each pair gets independent uniform settings on both sides; outcomes follow
    the joint probabilities of the chosen angles.  Outcome bit 0 is the '+'
    detector.  Basis tags follow the sifting convention above.
    """
    alice_tags = np.asarray(ALICE_TAGS, dtype=np.int16)
    bob_tags = np.asarray(BOB_TAGS, dtype=np.int16)
    prob_table = [
        [joint_probabilities(settings.alice[i], settings.bob[j], model) for j in range(3)]
        for i in range(3)
    ]

    def tagger(rng: np.random.Generator, n: int):
        ia = rng.integers(0, 3, size=n)
        ib = rng.integers(0, 3, size=n)
        out_a = np.zeros(n, dtype=np.uint8)
        out_b = np.zeros(n, dtype=np.uint8)
        for i in range(3):
            for j in range(3):
                mask = (ia == i) & (ib == j)
                k = int(mask.sum())
                if k == 0:
                    continue
                cat = rng.choice(4, size=k, p=prob_table[i][j])
                out_a[mask] = (cat >> 1).astype(np.uint8)
                out_b[mask] = (cat & 1).astype(np.uint8)
        return alice_tags[ia], out_a, bob_tags[ib], out_b

    return tagger


def background_tagger(settings: BasisSettings, node: str = "alice"):
    """Uniform (basis, outcome) sampler for background counts of one node."""
    tags = np.asarray(ALICE_TAGS if node == "alice" else BOB_TAGS, dtype=np.int16)

    def tagger(rng: np.random.Generator, n: int):
        basis = tags[rng.integers(0, 3, size=n)]
        outcome = rng.integers(0, 2, size=n).astype(np.uint8)
        return basis, outcome

    return tagger
