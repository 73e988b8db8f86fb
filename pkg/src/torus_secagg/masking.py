"""Pairwise one-time-pad masks on the torus.

Client ``k`` draws a uniform mask ``z[k, j]`` for every peer ``j > k`` and
shares it with ``j``. When encrypting, ``k`` adds the masks it drew and
subtracts the ones it received, so the masks cancel in the server's sum.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Dict, Iterator, Tuple

import numpy as np
from numpy.typing import ArrayLike

from .errors import ConfigurationError, DomainError, ShapeError
from .torus import TorusVector, _check_precision, scale_to_torus, torus_add, wrap

Pair = Tuple[int, int]

ROOT_SEED_BITS = 256


@dataclass(frozen=True)
class MaskSeed:
    """256-bit root seed plus a context path (e.g. run, round).

    ``generator(k, j)`` returns an independent PCG64 stream for the pair,
    identical on every call with the same ``(root, context, k, j)``.
    """

    root: int
    context: Tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= self.root < 2**ROOT_SEED_BITS:
            raise ConfigurationError("root seed must be a 256-bit nonnegative integer")

    @classmethod
    def from_int(cls, seed: int, *context: int) -> "MaskSeed":
        """Stretch a small integer seed to 256 bits with SHA-256."""
        digest = hashlib.sha256(f"torus-secagg-mask:{int(seed)}".encode()).digest()
        return cls(int.from_bytes(digest, "big"), tuple(int(c) for c in context))

    def child(self, *context: int) -> "MaskSeed":
        return MaskSeed(self.root, self.context + tuple(int(c) for c in context))

    def generator(self, k: int, j: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.root, spawn_key=self.context + (int(k), int(j)))
        return np.random.Generator(np.random.PCG64(ss))


def uniform_torus(rng: np.random.Generator, m: int) -> np.ndarray:
    """``m`` uniform draws on [0, 1) with 53-bit resolution.

    numpy's ``Generator.random`` takes the top 53 bits of each 64-bit output
    and multiplies by 2**-53.
    """
    return rng.random(m, dtype=np.float64)


@dataclass(frozen=True)
class PairwiseMasks:
    """One mask vector per unordered client pair ``(k, j)``, ``1 <= k < j <= K``."""

    K: int
    m: int
    masks: Dict[Pair, TorusVector] = field(repr=False)

    def __post_init__(self):
        expected = self.K * (self.K - 1) // 2
        if len(self.masks) != expected:
            raise ShapeError(f"expected {expected} pair masks for K={self.K}, got {len(self.masks)}")
        for (k, j), v in self.masks.items():
            if not 1 <= k < j <= self.K:
                raise DomainError(f"invalid pair {(k, j)} for K={self.K}")
            if len(v) != self.m:
                raise ShapeError(f"mask {(k, j)} has length {len(v)}, expected {self.m}")

    def __getitem__(self, pair: Pair) -> TorusVector:
        return self.masks[pair]

    def pairs(self) -> Iterator[Pair]:
        return iter(sorted(self.masks))

    def generated_by(self, k: int) -> list[TorusVector]:
        """Masks client ``k`` drew itself (peers ``j > k``), ascending ``j``."""
        return [self.masks[(k, j)] for j in range(k + 1, self.K + 1)]

    def received_by(self, k: int) -> list[TorusVector]:
        """Masks client ``k`` received from lower-indexed peers, ascending ``j``."""
        return [self.masks[(j, k)] for j in range(1, k)]

    @property
    def precision(self) -> int:
        return min(v.precision for v in self.masks.values())


def generate_pairwise_masks(K: int, m: int, seed: MaskSeed, precision: int = 64) -> PairwiseMasks:
    """Draw fresh i.i.d. uniform masks for all ``K(K-1)/2`` client pairs."""
    if K < 2:
        raise ConfigurationError(f"K >= 2 required, got {K}")
    if m < 1:
        raise ConfigurationError(f"m >= 1 required, got {m}")
    _check_precision(precision)
    masks = {}
    for k in range(1, K + 1):
        for j in range(k + 1, K + 1):
            masks[(k, j)] = TorusVector._from_trusted(uniform_torus(seed.generator(k, j), m), precision)
    return PairwiseMasks(K=K, m=m, masks=masks)


def net_mask(k: int, pm: PairwiseMasks) -> TorusVector:
    """``wrap(sum_{j>k} z[k,j] - sum_{j<k} z[j,k])`` for client ``k``.

    Sums are accumulated unwrapped in ascending peer order and wrapped once.
    """
    if not 1 <= k <= pm.K:
        raise DomainError(f"client index {k} outside 1..{pm.K}")
    acc = np.zeros(pm.m)
    for z in pm.generated_by(k):
        acc = acc + z.values
    for z in pm.received_by(k):
        acc = acc - z.values
    return TorusVector._from_trusted(wrap(acc), pm.precision)


def encrypt_update(theta_k: ArrayLike, k: int, pm: PairwiseMasks, L: float) -> TorusVector:
    """Client ``k``'s masked submission ``theta_k / L + net_mask(k) mod 1``."""
    theta_k = np.asarray(theta_k, dtype=np.float64).reshape(-1)
    if theta_k.size != pm.m:
        raise ShapeError(f"parameter length {theta_k.size} does not match mask length {pm.m}")
    return torus_add(scale_to_torus(theta_k, L, precision=pm.precision), net_mask(k, pm))
