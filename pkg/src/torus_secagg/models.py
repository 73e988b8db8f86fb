"""Flat parameter vectors and the small numpy models trained by the clients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from numpy.typing import ArrayLike

from .errors import ShapeError

Shape = Tuple[int, ...]


@dataclass(frozen=True)
class ModelParams:
    """Flat length-m parameter vector plus the layer shapes it packs.

    Layers are concatenated in C order, weights before biases.
    """

    flat: np.ndarray
    shapes: Tuple[Shape, ...]

    def __post_init__(self):
        flat = np.array(self.flat, dtype=np.float64, copy=True).reshape(-1)
        expected = sum(int(np.prod(s)) for s in self.shapes)
        if flat.size != expected:
            raise ShapeError(f"flat vector has {flat.size} entries, shapes need {expected}")
        flat.setflags(write=False)
        object.__setattr__(self, "flat", flat)
        object.__setattr__(self, "shapes", tuple(tuple(int(d) for d in s) for s in self.shapes))

    @property
    def m(self) -> int:
        return self.flat.size

    def unflatten(self) -> List[np.ndarray]:
        out, offset = [], 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            out.append(self.flat[offset : offset + size].reshape(shape))
            offset += size
        return out

    def replace(self, flat: ArrayLike) -> "ModelParams":
        return ModelParams(np.asarray(flat, dtype=np.float64), self.shapes)

    def __array__(self, dtype=None, copy=None):
        return self.flat if dtype is None else self.flat.astype(dtype)

    def __len__(self) -> int:
        return self.m


def _softmax_xent(logits: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = y.size
    log_probs = shifted - np.log(exp.sum(axis=1, keepdims=True))
    loss = -float(np.mean(log_probs[np.arange(n), y]))
    dlogits = probs
    dlogits[np.arange(n), y] -= 1.0
    return loss, dlogits / n


class SoftmaxRegression:
    """Single-layer network: ``logits = X @ W + b``. Zero initialisation."""

    name = "softmax"

    def __init__(self, n_features: int, n_classes: int):
        self.n_features = n_features
        self.n_classes = n_classes

    @property
    def shapes(self) -> Tuple[Shape, ...]:
        return ((self.n_features, self.n_classes), (self.n_classes,))

    @property
    def size(self) -> int:
        return self.n_features * self.n_classes + self.n_classes

    def init_params(self, rng: np.random.Generator | None = None) -> ModelParams:
        return ModelParams(np.zeros(self.size), self.shapes)

    def _split(self, flat: np.ndarray):
        f, c = self.n_features, self.n_classes
        return flat[: f * c].reshape(f, c), flat[f * c :]

    def logits(self, flat: np.ndarray, X: np.ndarray) -> np.ndarray:
        W, b = self._split(flat)
        return X @ W + b

    def loss_and_grad(self, flat: np.ndarray, X: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
        W, b = self._split(flat)
        loss, dz = _softmax_xent(X @ W + b, y)
        return loss, np.concatenate([(X.T @ dz).reshape(-1), dz.sum(axis=0)])


class MLP:
    """One hidden ReLU layer. Glorot-uniform weights, zero biases."""

    name = "mlp"

    def __init__(self, n_features: int, hidden: int, n_classes: int):
        self.n_features = n_features
        self.hidden = hidden
        self.n_classes = n_classes

    @property
    def shapes(self) -> Tuple[Shape, ...]:
        f, h, c = self.n_features, self.hidden, self.n_classes
        return ((f, h), (h,), (h, c), (c,))

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes)

    def init_params(self, rng: np.random.Generator | None = None) -> ModelParams:
        rng = rng if rng is not None else np.random.default_rng(0)
        f, h, c = self.n_features, self.hidden, self.n_classes
        lim1 = np.sqrt(6.0 / (f + h))
        lim2 = np.sqrt(6.0 / (h + c))
        parts = [
            rng.uniform(-lim1, lim1, f * h),
            np.zeros(h),
            rng.uniform(-lim2, lim2, h * c),
            np.zeros(c),
        ]
        return ModelParams(np.concatenate(parts), self.shapes)

    def _split(self, flat: np.ndarray):
        f, h, c = self.n_features, self.hidden, self.n_classes
        i = 0
        W1 = flat[i : i + f * h].reshape(f, h); i += f * h
        b1 = flat[i : i + h]; i += h
        W2 = flat[i : i + h * c].reshape(h, c); i += h * c
        b2 = flat[i : i + c]
        return W1, b1, W2, b2

    def logits(self, flat: np.ndarray, X: np.ndarray) -> np.ndarray:
        W1, b1, W2, b2 = self._split(flat)
        return np.maximum(X @ W1 + b1, 0.0) @ W2 + b2

    def loss_and_grad(self, flat: np.ndarray, X: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
        W1, b1, W2, b2 = self._split(flat)
        pre = X @ W1 + b1
        hid = np.maximum(pre, 0.0)
        loss, dz = _softmax_xent(hid @ W2 + b2, y)
        dW2 = hid.T @ dz
        db2 = dz.sum(axis=0)
        dhid = (dz @ W2.T) * (pre > 0)
        dW1 = X.T @ dhid
        db1 = dhid.sum(axis=0)
        return loss, np.concatenate([dW1.reshape(-1), db1, dW2.reshape(-1), db2])
