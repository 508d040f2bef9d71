"""Two-party key distillation: sifting, QBER sampling, cascade, hashing.

Every bit the protocol would send over the public classical channel is
charged to a :class:`LeakageLedger`: one bit per disclosed block or sub-block
parity during reconciliation, one bit per sampled key position during error
estimation, plus any basis-reconciliation traffic the caller records.  The
final hashing step shortens the key by exactly the ledger total plus an
explicit security margin, so the output length is an auditable arithmetic
consequence of the session transcript.

Reconciliation is the classic interactive parity protocol: block parities are
compared pass by pass, a mismatch is chased by binary search, and every
correction re-exposes odd blocks in earlier passes (whose parities are
already public) until none remain.  Block size starts at ``ceil(0.73/qber)``
and doubles each pass, with a fresh seeded shuffle per pass.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

__all__ = [
    "KeyMaterial",
    "KeyStage",
    "LeakageLedger",
    "RawKeyRecords",
    "ReconciliationFailure",
    "binary_entropy",
    "cascade_correct",
    "estimate_qber",
    "privacy_amplify",
    "read_key_file",
    "sift",
    "write_key_file",
]


class ReconciliationFailure(Exception):
    """Residual key mismatch after the final reconciliation pass."""


class KeyStage(Enum):
    RAW = "raw"
    SIFTED = "sifted"
    CORRECTED = "corrected"
    FINAL = "final"


@dataclass
class RawKeyRecords:
    """Per-coincidence measurement record of one node: basis tag + outcome bit."""

    basis: np.ndarray
    outcome: np.ndarray

    def __post_init__(self) -> None:
        self.basis = np.asarray(self.basis, dtype=np.int16)
        self.outcome = np.asarray(self.outcome, dtype=np.uint8)
        if self.basis.size != self.outcome.size:
            raise ValueError("basis and outcome must have equal lengths")

    def __len__(self) -> int:
        return int(self.basis.size)


@dataclass
class KeyMaterial:
    """Key bits at one distillation stage."""

    stage: KeyStage
    bits: np.ndarray
    qber_estimate: float | None = None

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.size and self.bits.max() > 1:
            raise ValueError("key bits must be 0 or 1")

    @property
    def length(self) -> int:
        return int(self.bits.size)


@dataclass
class LeakageLedger:
    """Counters of bits disclosed on the public channel; monotone by design."""

    parity_bits_disclosed: int = 0
    qber_sample_bits_disclosed: int = 0
    total_classical_bits_exchanged: int = 0

    def record_parity(self, n: int) -> None:
        self._check(n)
        self.parity_bits_disclosed += n
        self.total_classical_bits_exchanged += n

    def record_qber_samples(self, n: int) -> None:
        self._check(n)
        self.qber_sample_bits_disclosed += n
        self.total_classical_bits_exchanged += n

    def record_classical(self, n: int) -> None:
        """Public traffic that reveals no key bits (basis tags, counts, ...)."""
        self._check(n)
        self.total_classical_bits_exchanged += n

    @staticmethod
    def _check(n: int) -> None:
        if n < 0:
            raise ValueError("ledger increments must be non-negative")

    @property
    def disclosed_key_bits(self) -> int:
        return self.parity_bits_disclosed + self.qber_sample_bits_disclosed


def binary_entropy(p: float) -> float:
    """Binary entropy h(p) in bits; h(0) = h(1) = 0."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability out of range: {p}")
    if p in (0.0, 1.0):
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def sift(records_a: RawKeyRecords, records_b: RawKeyRecords) -> tuple[KeyMaterial, KeyMaterial]:
    """Keep the index-aligned positions where both nodes used the same basis tag.

    Tag conventions decide what 'same basis' means: in the three-setting
    polarization scheme only the shared key setting carries the common tag, so
    exactly the parallel-basis coincidences survive.
    """
    if len(records_a) != len(records_b):
        raise ValueError(
            f"record lists must be index-aligned: {len(records_a)} vs {len(records_b)}"
        )
    keep = records_a.basis == records_b.basis
    return (
        KeyMaterial(KeyStage.SIFTED, records_a.outcome[keep]),
        KeyMaterial(KeyStage.SIFTED, records_b.outcome[keep]),
    )


def estimate_qber(
    key_a: KeyMaterial,
    key_b: KeyMaterial,
    sample_fraction: float,
    *,
    ledger: LeakageLedger,
    seed: int = 0,
) -> tuple[float, KeyMaterial, KeyMaterial]:
    """Disclose a random key sample, estimate the error rate, drop the sample.

    Returns the mismatch fraction and both keys with the sampled positions
    removed; the disclosed sample size is charged to the ledger.
    """
    if not 0.0 < sample_fraction < 1.0:
        raise ValueError("sample fraction must be in (0, 1)")
    n = key_a.length
    if n != key_b.length:
        raise ValueError("keys must have equal lengths")
    m = int(round(sample_fraction * n))
    if m < 1 or m >= n:
        raise ValueError(f"sample of {m} bits invalid for key of {n} bits")

    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=m, replace=False)
    qber = float(np.mean(key_a.bits[idx] != key_b.bits[idx]))
    keep = np.ones(n, dtype=bool)
    keep[idx] = False
    ledger.record_qber_samples(m)
    return (
        qber,
        KeyMaterial(KeyStage.SIFTED, key_a.bits[keep], qber_estimate=qber),
        KeyMaterial(KeyStage.SIFTED, key_b.bits[keep], qber_estimate=qber),
    )


def _block_parities(bits: np.ndarray, perm: np.ndarray, size: int) -> np.ndarray:
    x = bits[perm].astype(np.int64)
    pad = (-x.size) % size
    if pad:
        x = np.concatenate([x, np.zeros(pad, dtype=np.int64)])
    return x.reshape(-1, size).sum(axis=1) & 1


def _parity(bits: np.ndarray, positions: np.ndarray) -> int:
    return int(bits[positions].sum()) & 1


_CONFIRMATION_ROUNDS = 16


def cascade_correct(
    key_a: KeyMaterial,
    key_b: KeyMaterial,
    qber: float,
    *,
    ledger: LeakageLedger,
    seed: int = 0,
    passes: int = 4,
) -> KeyMaterial:
    """Reconcile ``key_b`` against ``key_a`` by interactive parity exchange.

    ``key_a`` is the reference and is never modified.  After the scheduled
    passes, any run that made corrections is confirmed by random-subset
    parity rounds (a BICONF-style stage): an error pair that happened to
    share a block in every pass partition is invisible to block parities,
    but each random subset splits it with probability 1/2, so the residual
    failure probability decays geometrically at a cost of one bit per round.
    Raises :class:`ReconciliationFailure` if the keys still differ, which is
    expected only for error rates well above the design point.  Deterministic
    for a given shuffle seed.
    """
    a = key_a.bits
    b = key_b.bits.copy()
    n = a.size
    if n != b.size:
        raise ValueError("keys must have equal lengths")
    if n == 0:
        return KeyMaterial(KeyStage.CORRECTED, b, qber_estimate=qber)

    if qber > 0.0:
        first_block = math.ceil(0.73 / qber)
    else:
        first_block = n  # clamps to the upper bound below
    first_block = min(max(first_block, 8), max(n // 2, 1))

    rng = np.random.default_rng(seed)
    perms: list[np.ndarray] = []
    invs: list[np.ndarray] = []
    sizes: list[int] = []
    parity_bits = 0
    corrections = 0

    def block_of(r: int, pos: int) -> np.ndarray:
        blk = int(invs[r][pos]) // sizes[r]
        lo = blk * sizes[r]
        return perms[r][lo : min(n, lo + sizes[r])]

    def resolve(queue: deque) -> None:
        """Drain odd-parity position sets: binary-search, fix, re-queue.

        Each halving during a search discloses one sub-parity; re-checking a
        whole block uses its already-public pass-level parity, so it is free.
        """
        nonlocal parity_bits, corrections
        while queue:
            seg = queue.popleft()
            if _parity(a, seg) == _parity(b, seg):
                continue
            lo, hi = 0, seg.size
            while hi - lo > 1:
                mid = (lo + hi) // 2
                parity_bits += 1
                if _parity(a, seg[lo:mid]) != _parity(b, seg[lo:mid]):
                    hi = mid
                else:
                    lo = mid
            pos = int(seg[lo])
            b[pos] ^= 1
            corrections += 1
            for r in range(len(perms)):
                queue.append(block_of(r, pos))

    for p in range(passes):
        perm = np.arange(n) if p == 0 else rng.permutation(n)
        size = min(n, first_block << p)
        inv = np.empty(n, dtype=np.int64)
        inv[perm] = np.arange(n)
        perms.append(perm)
        invs.append(inv)
        sizes.append(size)

        mism = np.flatnonzero(_block_parities(a, perm, size) != _block_parities(b, perm, size))
        parity_bits += -(-n // size)  # one disclosed parity per block
        if mism.size == 0:
            break  # converged: a full pass with every block parity matching
        resolve(deque(perm[int(blk) * size : min(n, (int(blk) + 1) * size)] for blk in mism))

    if corrections:
        clean = 0
        while clean < _CONFIRMATION_ROUNDS:
            subset = np.flatnonzero(rng.random(n) < 0.5)
            parity_bits += 1
            if subset.size and _parity(a, subset) != _parity(b, subset):
                resolve(deque([subset]))
                clean = 0
            else:
                clean += 1

    ledger.record_parity(parity_bits)
    if not np.array_equal(a, b):
        residual = int(np.sum(a != b))
        raise ReconciliationFailure(
            f"{residual} mismatched bits remain after {passes} passes "
            f"(qber estimate {qber:.4f} too high for this parameterization)"
        )
    return KeyMaterial(KeyStage.CORRECTED, b, qber_estimate=qber)


def privacy_amplify(
    key: KeyMaterial,
    ledger: LeakageLedger,
    security_margin: int = 100,
    *,
    seed: int = 0,
) -> KeyMaterial:
    """Compress the key with a seeded Toeplitz hash over GF(2).

    The output length is ``len(key) - parity_bits - sample_bits - margin``.
    The hash seed is public by design; both parties apply the same matrix to
    identical corrected keys and obtain identical final keys.
    """
    if security_margin < 0:
        raise ValueError("security margin must be >= 0")
    n = key.length
    m = n - ledger.disclosed_key_bits - security_margin
    if m <= 0:
        raise ValueError(
            f"key exhausted: {n} bits cannot absorb {ledger.disclosed_key_bits} "
            f"disclosed bits plus margin {security_margin}"
        )
    rng = np.random.default_rng(seed)
    diagonals = rng.integers(0, 2, size=n + m - 1)
    # Toeplitz-vector product via convolution: T[i, j] = diagonals[n-1+i-j],
    # so row i of T*key is coefficient n-1+i of conv(diagonals, key).
    conv = fftconvolve(diagonals.astype(np.float64), key.bits.astype(np.float64))
    out = (np.rint(conv[n - 1 : n - 1 + m]).astype(np.int64) & 1).astype(np.uint8)
    return KeyMaterial(KeyStage.FINAL, out, qber_estimate=key.qber_estimate)


def write_key_file(key: KeyMaterial, path) -> None:
    """Write ``stage,length,qber`` header plus the lowercase hex bitstring."""
    qber = float("nan") if key.qber_estimate is None else key.qber_estimate
    header = f"{key.stage.value},{key.length},{qber:.6f}"
    digest = np.packbits(key.bits).tobytes().hex() if key.length else ""
    Path(path).write_text(header + "\n" + digest + "\n")


def read_key_file(path) -> KeyMaterial:
    """Parse a key file written by :func:`write_key_file`."""
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2:
        raise ValueError(f"{path}: expected header and hex line")
    stage_name, length_s, qber_s = lines[0].split(",")
    length = int(length_s)
    qber = float(qber_s)
    raw = bytes.fromhex(lines[1].strip())
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[:length]
    return KeyMaterial(
        KeyStage(stage_name),
        bits,
        qber_estimate=None if math.isnan(qber) else qber,
    )
