"""Fixed-point secure aggregation over a prime field (the baseline).

Reals are encoded as ``round(x * base**d) mod p`` in balanced representation:
residues up to ``(p-1)/2`` are nonnegative, the rest negative. Values whose
encoding or whose aggregate exceeds that half-range wrap around and decode to
the wrong number. Overflow is counted, never raised, so experiments can
measure its downstream effect.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np
from numpy.typing import ArrayLike

from .errors import ConfigurationError, DomainError, ShapeError
from .masking import MaskSeed, Pair

MERSENNE_31 = 2**31 - 1
MERSENNE_15 = 2**15 - 1

_EXACT_FLOAT_INT = 2**53


class FixedPointOverflow(UserWarning):
    """A real value does not fit the field's signed fixed-point range."""


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, valid for all n < 3.3e24."""
    if n < 2:
        return False
    small = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)
    for q in small:
        if n % q == 0:
            return n == q
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in small:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class FieldParams:
    """Modulus ``p`` and fixed-point precision ``d`` (scale ``base**d``).

    Aggregation only adds residues, so any odd modulus gives a perfect
    one-time pad; primality is reported by :attr:`is_field` but not required.
    The 15-bit preset ``2**15 - 1 = 7 * 31 * 151`` is in fact composite.
    """

    p: int
    d: int
    base: int = 10

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 3 or self.p % 2 == 0:
            raise ConfigurationError(f"p must be an odd integer >= 3, got {self.p!r}")
        if self.p >= 2**62:
            raise ConfigurationError("p must be below 2**62 so sums fit in int64")
        if int(self.d) != self.d or self.d < 0:
            raise ConfigurationError(f"d must be a nonnegative integer, got {self.d!r}")
        if self.base not in (2, 10):
            raise ConfigurationError(f"base must be 2 or 10, got {self.base!r}")

    @property
    def is_field(self) -> bool:
        return is_prime(int(self.p))

    @property
    def scale(self) -> int:
        return self.base**self.d

    @property
    def half(self) -> int:
        """Largest residue read as nonnegative."""
        return (self.p - 1) // 2

    @property
    def max_real(self) -> float:
        """Largest magnitude that encodes without wraparound."""
        return self.half / self.scale


FIELD_31_7 = FieldParams(MERSENNE_31, 7)
FIELD_15_4 = FieldParams(MERSENNE_15, 4)


class FieldVector:
    """Immutable vector of residues in ``[0, p)``."""

    __slots__ = ("_values", "p")

    def __init__(self, values: ArrayLike, p: int):
        arr = np.array(values, dtype=np.int64, copy=True).reshape(-1)
        if np.any((arr < 0) | (arr >= p)):
            raise DomainError(f"field entries must lie in [0, {p})")
        arr.setflags(write=False)
        self._values = arr
        self.p = int(p)

    @property
    def values(self) -> np.ndarray:
        return self._values

    def __len__(self) -> int:
        return self._values.size

    def __add__(self, other: "FieldVector") -> "FieldVector":
        _check_compatible(self, other)
        return FieldVector((self._values + other._values) % self.p, self.p)

    def __sub__(self, other: "FieldVector") -> "FieldVector":
        _check_compatible(self, other)
        return FieldVector((self._values - other._values) % self.p, self.p)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FieldVector):
            return NotImplemented
        return self.p == other.p and bool(np.array_equal(self._values, other._values))

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"FieldVector(p={self.p}, values={self._values!r})"


def _check_compatible(a: FieldVector, b: FieldVector) -> None:
    if a.p != b.p:
        raise DomainError(f"field mismatch: {a.p} vs {b.p}")
    if len(a) != len(b):
        raise ShapeError(f"length mismatch: {len(a)} vs {len(b)}")


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(x: ArrayLike, fp: FieldParams) -> np.ndarray:
    """Signed fixed-point integers ``round(x * scale)``, as a Python-int object array
    when they do not fit exactly in float64, else int64."""
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise DomainError("fixed-point encoding requires finite input")
    q = _round_half_away(arr * fp.scale)
    if np.all(np.abs(q) < _EXACT_FLOAT_INT):
        return q.astype(np.int64)
    return np.array([int(v) for v in q], dtype=object)


def encode_vector(x: ArrayLike, fp: FieldParams) -> tuple[FieldVector, np.ndarray]:
    """Encode reals into the field.

    Returns:
        The residues, and a boolean mask of coordinates that overflowed the
        signed range (``|q| >= (p-1)/2``).
    """
    q = quantize(x, fp)
    overflow = np.array([abs(int(v)) >= fp.half for v in q], dtype=bool) if q.dtype == object else (
        np.abs(q) >= fp.half
    )
    residues = np.array([int(v) % fp.p for v in q], dtype=np.int64) if q.dtype == object else q % fp.p
    return FieldVector(residues, fp.p), overflow


def decode_vector(e: FieldVector | ArrayLike, fp: FieldParams) -> np.ndarray:
    """Balanced-representation decode of residues to reals."""
    vals = e.values if isinstance(e, FieldVector) else np.asarray(e, dtype=np.int64).reshape(-1)
    if np.any((vals < 0) | (vals >= fp.p)):
        raise DomainError(f"residues must lie in [0, {fp.p})")
    signed = np.where(vals <= fp.half, vals, vals - fp.p)
    return signed.astype(np.float64) / fp.scale


def fp_encode(x: float, fp: FieldParams) -> int:
    """Encode one real. Overflow is flagged with a :class:`FixedPointOverflow` warning."""
    if not math.isfinite(x):
        raise DomainError("fixed-point encoding requires finite input")
    vec, overflow = encode_vector([x], fp)
    if overflow[0]:
        warnings.warn(
            f"{x!r} exceeds the fixed-point range +/-{fp.max_real} of p={fp.p}, d={fp.d}",
            FixedPointOverflow,
            stacklevel=2,
        )
    return int(vec.values[0])


def fp_decode(e: int, fp: FieldParams) -> float:
    if not 0 <= e < fp.p:
        raise DomainError(f"residue {e} outside [0, {fp.p})")
    return float(decode_vector([e], fp)[0])


# --- pairwise masking in the field -------------------------------------------


def generate_field_masks(K: int, m: int, p: int, seed: MaskSeed) -> Dict[Pair, np.ndarray]:
    """Uniform residues in ``[0, p)`` for every pair ``1 <= k < j <= K``."""
    if K < 2:
        raise ConfigurationError(f"K >= 2 required, got {K}")
    return {
        (k, j): seed.generator(k, j).integers(0, p, size=m, dtype=np.int64)
        for k in range(1, K + 1)
        for j in range(k + 1, K + 1)
    }


def net_field_mask(k: int, K: int, masks: Dict[Pair, np.ndarray], p: int) -> np.ndarray:
    """``sum_{j>k} r[k,j] - sum_{j<k} r[j,k] mod p``, ascending peer order."""
    if not 1 <= k <= K:
        raise DomainError(f"client index {k} outside 1..{K}")
    acc = np.zeros_like(next(iter(masks.values())))
    for j in range(k + 1, K + 1):
        acc = (acc + masks[(k, j)]) % p
    for j in range(1, k):
        acc = (acc - masks[(j, k)]) % p
    return acc


@dataclass(frozen=True)
class FieldAggregate:
    """Result of a masked field aggregation plus simulator-side overflow accounting."""

    decoded_sum: np.ndarray
    encoding_overflows: int
    sum_overflows: int

    @property
    def overflow_count(self) -> int:
        """Coordinates whose decoded sum is wrong because of wraparound."""
        return self.sum_overflows


def ff_aggregate_detailed(
    thetas: Sequence[ArrayLike], fp: FieldParams, seed: MaskSeed | int
) -> FieldAggregate:
    """Encode, mask, sum mod p and decode; also count overflow events.

    ``sum_overflows`` counts coordinates where the exact integer sum of the
    encodings lies outside the signed range, i.e. where the decoded aggregate
    differs from the plaintext one.
    """
    if len(thetas) < 2:
        raise ConfigurationError("at least two clients are required")
    vecs = [np.asarray(t, dtype=np.float64).reshape(-1) for t in thetas]
    m = vecs[0].size
    if any(v.size != m for v in vecs):
        raise ShapeError("all client vectors must have the same length")
    if not isinstance(seed, MaskSeed):
        seed = MaskSeed.from_int(seed)
    K = len(vecs)
    masks = generate_field_masks(K, m, fp.p, seed)

    total = np.zeros(m, dtype=np.int64)
    signed = []
    enc_over = 0
    for k, v in enumerate(vecs, start=1):
        enc, over = encode_vector(v, fp)
        enc_over += int(np.count_nonzero(over))
        signed.append(quantize(v, fp))
        submission = (enc.values + net_field_mask(k, K, masks, fp.p)) % fp.p
        total = (total + submission) % fp.p
    sum_over = count_sum_overflows(signed, fp)
    return FieldAggregate(decode_vector(total, fp), enc_over, sum_over)


def count_sum_overflows(quantized: Sequence[np.ndarray], fp: FieldParams) -> int:
    """Coordinates where the exact sum of signed encodings leaves ``[-(p-1)/2, (p-1)/2]``."""
    if all(q.dtype != object for q in quantized) and len(quantized) < 1024:
        exact = np.sum(np.stack(quantized), axis=0)
        return int(np.count_nonzero(np.abs(exact) > fp.half))
    exact = [sum(int(q[i]) for q in quantized) for i in range(quantized[0].size)]
    return sum(1 for s in exact if abs(s) > fp.half)


def ff_masked_aggregate(thetas: Sequence[ArrayLike], fp: FieldParams, seed: MaskSeed | int) -> np.ndarray:
    """Decoded field-masked sum of the client vectors (the caller divides by K)."""
    return ff_aggregate_detailed(thetas, fp, seed).decoded_sum
