"""Local SGD training and the federated averaging loop.

:func:`run_fedavg` trains a plain-aggregation twin alongside every secure
aggregator. All twins consume the same per-client training streams, derived
from ``(seed, client, round)``, so any divergence between a secure run and
the plain run comes from aggregation alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence

import numpy as np

from .data import Dataset, Partition, partition_iid
from .errors import ConfigurationError, DataError, DivergenceError, ShapeError
from .metrics import accuracy, cosine_similarity
from .models import ModelParams
from .protocol import (
    PLAIN,
    AggregationConfig,
    AggregationMode,
    ClientState,
    RoundTranscript,
    ServerState,
    run_round,
)

_TRAIN_STREAM = 2
_INIT_STREAM = 3
_PARTITION_STREAM = 4


class Model(Protocol):
    name: str

    @property
    def shapes(self): ...

    @property
    def size(self) -> int: ...

    def init_params(self, rng: Optional[np.random.Generator] = None) -> ModelParams: ...

    def logits(self, flat: np.ndarray, X: np.ndarray) -> np.ndarray: ...

    def loss_and_grad(self, flat: np.ndarray, X: np.ndarray, y: np.ndarray): ...


@dataclass(frozen=True)
class TrainConfig:
    """Client-side SGD hyperparameters.

    ``learning_rate == 0`` is allowed and leaves parameters untouched.
    """

    learning_rate: float = 0.01
    batch_size: int = 64
    local_epochs: int = 1
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ConfigurationError("learning_rate must be finite and >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size >= 1 required")
        if self.local_epochs < 1:
            raise ConfigurationError("local_epochs >= 1 required")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay >= 0 required")


def train_stream(seed: int, client: int, round_: int) -> np.random.Generator:
    """RNG owned by one client for one round."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_TRAIN_STREAM, client, round_)))


def local_train(
    model: Model,
    theta: ModelParams,
    shard: Dataset,
    cfg: TrainConfig,
    rng: np.random.Generator | int,
) -> ModelParams:
    """``cfg.local_epochs`` passes of shuffled minibatch SGD over ``shard``.

    Momentum and weight decay follow the usual deep-learning convention
    (decay added to the gradient, velocity ``v = mu*v + g``); the velocity
    starts at zero on every call.

    Raises:
        DataError: empty shard.
        DivergenceError: the loss became NaN or infinite.
    """
    if len(shard) == 0:
        raise DataError("cannot train on an empty shard")
    if theta.m != model.size:
        raise ShapeError(f"model expects {model.size} parameters, got {theta.m}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    w = np.array(theta.flat, dtype=np.float64)
    velocity = np.zeros_like(w)
    X, y, n = shard.features, shard.labels, len(shard)
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grad = model.loss_and_grad(w, X[batch], y[batch])
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite training loss {loss!r}")
            if cfg.weight_decay:
                grad = grad + cfg.weight_decay * w
            if cfg.momentum:
                velocity = cfg.momentum * velocity + grad
                grad = velocity
            w = w - cfg.learning_rate * grad
    return theta.replace(w)


def predict(model: Model, theta: ModelParams | np.ndarray, X: np.ndarray) -> np.ndarray:
    """Argmax class; ties go to the lowest index."""
    return np.argmax(model.logits(np.asarray(theta, dtype=np.float64), X), axis=1)


def evaluate(model: Model, theta: ModelParams | np.ndarray, test: Dataset) -> float:
    """Fraction of test samples whose argmax prediction equals the label."""
    if len(test) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    flat = np.asarray(theta, dtype=np.float64)
    if flat.size != model.size:
        raise ShapeError(f"model expects {model.size} parameters, got {flat.size}")
    if test.n_features != getattr(model, "n_features", test.n_features):
        raise ShapeError("test features do not match the model input size")
    return accuracy(predict(model, flat, test.features), test.labels)


@dataclass
class FedTask:
    """A model, a training set split across ``K`` clients, and a test set."""

    model: Model
    train: Dataset
    test: Dataset
    partition: Partition

    @property
    def K(self) -> int:
        return len(self.partition)

    @classmethod
    def iid(cls, model: Model, train: Dataset, test: Dataset, K: int, seed: int) -> "FedTask":
        part_seed = np.random.SeedSequence(seed, spawn_key=(_PARTITION_STREAM,))
        return cls(model, train, test, partition_iid(train, K, part_seed.generate_state(1)[0]))

    def shard(self, k: int) -> Dataset:
        return self.train.subset(self.partition.shards[k - 1])

    def initial_params(self, seed: int) -> ModelParams:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_INIT_STREAM,)))
        return self.model.init_params(rng)


@dataclass
class RoundRecord:
    round: int
    accuracy: float
    cosine_vs_plain: float
    overflow_count: int
    transcript: RoundTranscript
    theta: ModelParams


@dataclass
class Trajectory:
    """Per-round history of one aggregator."""

    config: AggregationConfig
    records: List[RoundRecord] = field(default_factory=list)

    @property
    def accuracies(self) -> List[float]:
        return [r.accuracy for r in self.records]

    @property
    def cosines(self) -> List[float]:
        return [r.cosine_vs_plain for r in self.records]

    @property
    def final(self) -> Optional[RoundRecord]:
        return self.records[-1] if self.records else None


@dataclass
class FedAvgHistory:
    initial: ModelParams
    plain: Trajectory
    secure: List[Trajectory]

    def final_theta(self, index: Optional[int] = None) -> ModelParams:
        traj = self.plain if index is None else self.secure[index]
        return traj.final.theta if traj.records else self.initial


def _cosine_vs_plain(a: np.ndarray, b: np.ndarray) -> float:
    if np.array_equal(a, b):
        return 1.0
    if not np.any(a) or not np.any(b):
        return float("nan")
    return cosine_similarity(a, b)


def run_fedavg(
    task: FedTask,
    aggregators: Sequence[AggregationConfig],
    train_cfg: TrainConfig,
    rounds: int,
    seed: int,
    keep_submissions: bool = False,
) -> FedAvgHistory:
    """Federated averaging under each aggregator plus a plain twin.

    Every round, every client of every twin starts from that twin's global
    model and trains with the stream ``(seed, client, round)``. The plain
    twin defines the reference for ``cosine_vs_plain``.
    """
    if rounds < 0:
        raise ConfigurationError("rounds >= 0 required")
    K = task.K
    configs = [PLAIN] + [a for a in aggregators]
    theta0 = task.initial_params(seed)
    shards = [task.shard(k) for k in range(1, K + 1)]
    servers = [ServerState(theta0, K, cfg) for cfg in configs]
    trajectories = [Trajectory(cfg) for cfg in configs]

    for r in range(rounds):
        for i, server in enumerate(servers):
            clients = []
            for k in range(1, K + 1):
                local = local_train(task.model, server.theta, shards[k - 1], train_cfg, train_stream(seed, k, r))
                clients.append(ClientState(k, local.flat, n_samples=len(shards[k - 1])))
            servers[i], transcript = run_round(clients, server, seed=seed, keep_submissions=keep_submissions)
            acc = evaluate(task.model, servers[i].theta, task.test)
            cos = _cosine_vs_plain(servers[i].theta.flat, servers[0].theta.flat)
            trajectories[i].records.append(
                RoundRecord(r, acc, cos, transcript.overflow_count, transcript, servers[i].theta)
            )
    return FedAvgHistory(theta0, trajectories[0], trajectories[1:])
