"""Arithmetic on the torus T = R/Z.

Elements are stored as float64 values in ``[0, 1)``. Addition wraps around;
multiplication between elements is deliberately not provided. An optional
32-bit emulation rounds every result through float32, mirroring training
stacks that keep model parameters in single precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np
from numpy.typing import ArrayLike

from .errors import ConfigurationError, DomainError, ShapeError

PRECISIONS = (32, 64)

ScalarOrArray = Union[float, np.ndarray]


def _check_precision(precision: int) -> int:
    if precision not in PRECISIONS:
        raise ConfigurationError(f"precision must be one of {PRECISIONS}, got {precision!r}")
    return precision


def _round_to_precision(values: np.ndarray, precision: int) -> np.ndarray:
    if precision == 64:
        return values
    out = values.astype(np.float32).astype(np.float64)
    # float32 rounding can carry 1 - 2**-30 up to exactly 1.0
    out[out >= 1.0] = 0.0
    return out


def wrap(x: ArrayLike) -> ScalarOrArray:
    """Reduce ``x`` modulo 1 into ``[0, 1)``.

    Uses ``x - floor(x)``, so exact negative integers map to 0.0. Tiny negative
    inputs whose image would round up to 1.0 are sent to 0.0, the nearest
    point on the circle.

    Raises:
        DomainError: if any input is NaN or infinite.
    """
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError("wrap() requires finite input")
    out = arr - np.floor(arr)
    out = np.where(out >= 1.0, 0.0, out)
    if out.ndim == 0:
        return float(out)
    return out


def unwrap_signed(t: ArrayLike) -> ScalarOrArray:
    """Map a torus value in ``[0, 1)`` to its signed representative in ``[-0.5, 0.5)``."""
    arr = np.asarray(t, dtype=np.float64)
    if not np.all((arr >= 0.0) & (arr < 1.0)):
        raise DomainError("unwrap_signed() requires values in [0, 1)")
    out = np.where(arr < 0.5, arr, arr - 1.0)
    if out.ndim == 0:
        return float(out)
    return out


class TorusVector:
    """Immutable length-m vector of torus elements.

    Every entry is in ``[0, 1)``. Supports ``+`` and ``-`` with another
    TorusVector of the same length. ``precision=32`` marks a vector whose
    arithmetic is rounded through float32 after each operation; mixing a
    32-bit vector with a 64-bit one yields a 32-bit result.
    """

    __slots__ = ("_values", "_precision")

    def __init__(self, values: ArrayLike, precision: int = 64):
        arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
        if arr.size == 0:
            raise ShapeError("TorusVector must have positive length")
        if not np.all((arr >= 0.0) & (arr < 1.0)):
            raise DomainError("TorusVector entries must lie in [0, 1)")
        self._precision = _check_precision(precision)
        arr = _round_to_precision(arr, self._precision)
        arr.setflags(write=False)
        self._values = arr

    @classmethod
    def _from_trusted(cls, arr: np.ndarray, precision: int) -> "TorusVector":
        obj = cls.__new__(cls)
        arr = _round_to_precision(arr, precision)
        arr.setflags(write=False)
        obj._values = arr
        obj._precision = precision
        return obj

    @classmethod
    def zeros(cls, m: int, precision: int = 64) -> "TorusVector":
        return cls._from_trusted(np.zeros(m), _check_precision(precision))

    @property
    def values(self) -> np.ndarray:
        """Read-only view of the entries."""
        return self._values

    @property
    def precision(self) -> int:
        return self._precision

    def __len__(self) -> int:
        return self._values.size

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._values
        return self._values.astype(dtype)

    def __add__(self, other: "TorusVector") -> "TorusVector":
        return torus_add(self, other)

    def __sub__(self, other: "TorusVector") -> "TorusVector":
        return torus_sub(self, other)

    def __neg__(self) -> "TorusVector":
        return TorusVector._from_trusted(wrap(-self._values), self._precision)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TorusVector):
            return NotImplemented
        return len(self) == len(other) and bool(np.array_equal(self._values, other._values))

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"TorusVector(m={len(self)}, precision={self._precision}, values={self._values!r})"


def _binary(a: TorusVector, b: TorusVector, sign: float) -> TorusVector:
    if len(a) != len(b):
        raise ShapeError(f"length mismatch: {len(a)} vs {len(b)}")
    precision = min(a.precision, b.precision)
    return TorusVector._from_trusted(wrap(a.values + sign * b.values), precision)


def torus_add(a: TorusVector, b: TorusVector) -> TorusVector:
    """Entrywise ``wrap(a + b)``."""
    return _binary(a, b, 1.0)


def torus_sub(a: TorusVector, b: TorusVector) -> TorusVector:
    """Entrywise ``wrap(a - b)``."""
    return _binary(a, b, -1.0)


def torus_sum(vectors: Iterable[TorusVector]) -> TorusVector:
    """Sum vectors on the torus in the order given (ascending index for callers)."""
    it = iter(vectors)
    try:
        total = next(it)
    except StopIteration:
        raise ShapeError("torus_sum() of an empty sequence") from None
    for v in it:
        total = torus_add(total, v)
    return total


@dataclass(frozen=True)
class ScalingConfig:
    """Scaling factor ``L`` with the client count ``K`` and parameter bound ``R``.

    With ``strict=True`` the constructor enforces ``L >= 2*K*R``, the
    condition under which signed recovery of the aggregate is unambiguous.
    """

    L: float
    K: int
    R: float = 1.0
    strict: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.L) and self.L > 0):
            raise ConfigurationError(f"L > 0 required, got {self.L!r}")
        if int(self.K) != self.K or self.K < 2:
            raise ConfigurationError(f"K >= 2 required, got {self.K!r}")
        if not (math.isfinite(self.R) and self.R > 0):
            raise ConfigurationError(f"R > 0 required, got {self.R!r}")
        if self.strict and self.L < 2 * self.K * self.R:
            raise ConfigurationError(
                f"strict mode requires L >= 2*K*R = {2 * self.K * self.R!r}, got L = {self.L!r}"
            )

    @property
    def sign_safe(self) -> bool:
        return self.L >= 2 * self.K * self.R


def choose_scaling_factor(K: int, R: float, mode: str = "strict") -> float:
    """Pick ``L`` from the client count and parameter bound.

    ``"minimal"`` gives ``K * max(R, 1)``, which is ``K`` for small parameters;
    ``"strict"`` gives ``2 * K * R`` so that any sum of ``K`` vectors bounded
    by ``R`` lands strictly inside the signed window after scaling (up to the
    boundary point itself).
    """
    if K < 2:
        raise ConfigurationError(f"K >= 2 required, got {K!r}")
    if not R > 0:
        raise ConfigurationError(f"R > 0 required, got {R!r}")
    if mode == "minimal":
        return float(K * max(R, 1.0))
    if mode == "strict":
        return float(2 * K * R)
    raise ConfigurationError(f"unknown scaling mode {mode!r}; expected 'minimal' or 'strict'")


def _scale_value(scale: Union[ScalingConfig, float]) -> float:
    L = scale.L if isinstance(scale, ScalingConfig) else float(scale)
    if not (math.isfinite(L) and L > 0):
        raise ConfigurationError(f"L > 0 required, got {L!r}")
    return L


def scale_to_torus(theta: ArrayLike, L: Union[ScalingConfig, float], precision: int = 64) -> TorusVector:
    """Map real parameters to the torus: ``theta / L mod 1``, pointwise."""
    L = _scale_value(L)
    arr = np.asarray(theta, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise DomainError("parameters must be finite")
    return TorusVector._from_trusted(wrap(arr / L), _check_precision(precision))


def recover_real(z: TorusVector, scale: Union[ScalingConfig, float]) -> np.ndarray:
    """Invert the scaling of an aggregate: ``L * unwrap_signed(z)``.

    Correct only when every true scaled coordinate lies in ``[-0.5, 0.5)``;
    outside that window the result is silently wrapped.
    """
    L = _scale_value(scale)
    return L * unwrap_signed(np.asarray(z, dtype=np.float64))


def torus_distance(a: ArrayLike, b: ArrayLike = 0.0) -> ScalarOrArray:
    """Circular distance between torus points, in ``[0, 0.5]``."""
    d = wrap(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))
    return np.minimum(d, 1.0 - d)


def signed_window_violations(theta_sum: ArrayLike, L: float) -> int:
    """Count coordinates whose scaled sum falls outside ``[-0.5, 0.5)``."""
    s = np.asarray(theta_sum, dtype=np.float64) / L
    return int(np.count_nonzero((s < -0.5) | (s >= 0.5)))

