"""One aggregation round: mask exchange, client submissions, server aggregation.

Three modes share the same wire pattern. ``plain`` sends parameters in the
clear; ``torus`` sends ``theta_k / L + masks mod 1``; ``finite_field`` sends
fixed-point encodings plus field masks. Messages travel through an
in-process :class:`Network` that counts every symbol, and the counts are
reported per round as :class:`ComplexityCounters`.
"""

from __future__ import annotations

import csv
import enum
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from typing import Any, Deque, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError, ProtocolAbort, ShapeError
from .finite_field import (
    FIELD_31_7,
    FieldParams,
    FieldVector,
    count_sum_overflows,
    decode_vector,
    encode_vector,
    generate_field_masks,
    quantize,
)
from .masking import MaskSeed, PairwiseMasks, generate_pairwise_masks, encrypt_update
from .models import ModelParams
from .torus import (
    TorusVector,
    choose_scaling_factor,
    recover_real,
    signed_window_violations,
    torus_add,
)

# Estimated R is inflated by this factor so that a sum sitting exactly on the
# bound K*R does not land on the ambiguous point 0.5 after strict scaling.
R_ESTIMATE_MARGIN = 1.0 + 2.0**-20

_MASK_STREAM = 1
_FIELD_STREAM = 2


class AggregationMode(str, enum.Enum):
    PLAIN = "plain"
    TORUS = "torus"
    FINITE_FIELD = "finite_field"


@dataclass(frozen=True)
class AggregationConfig:
    """How the server aggregates.

    Attributes:
        mode: plain, torus or finite_field.
        scaling: torus only. A fixed ``L``, or ``"minimal"`` / ``"strict"`` to
            derive it each round from ``K`` and ``R``.
        R: bound on client parameter magnitudes; estimated each round from
            the submitted models when ``None``.
        field: finite_field only.
        mask_exchange: ``"vector"`` ships full mask vectors between peers;
            ``"seed"`` ships one seed symbol per pair.
        precision: 64, or 32 for float32 emulation of torus arithmetic.
        weighting: ``"uniform"`` averages client models; ``"samples"``
            pre-scales each model by ``K * n_k / n`` so the average is
            sample-weighted.
    """

    mode: AggregationMode = AggregationMode.PLAIN
    scaling: Union[float, str] = "strict"
    R: Optional[float] = None
    field: FieldParams = FIELD_31_7
    mask_exchange: str = "vector"
    precision: int = 64
    weighting: str = "uniform"

    def __post_init__(self):
        object.__setattr__(self, "mode", AggregationMode(self.mode))
        if isinstance(self.scaling, str):
            if self.scaling not in ("minimal", "strict"):
                raise ConfigurationError("scaling must be a positive number, 'minimal' or 'strict'")
        elif not (math.isfinite(self.scaling) and self.scaling > 0):
            raise ConfigurationError("L > 0 required")
        if self.R is not None and not self.R > 0:
            raise ConfigurationError("R > 0 required")
        if self.mask_exchange not in ("vector", "seed"):
            raise ConfigurationError("mask_exchange must be 'vector' or 'seed'")
        if self.precision not in (32, 64):
            raise ConfigurationError("precision must be 32 or 64")
        if self.weighting not in ("uniform", "samples"):
            raise ConfigurationError("weighting must be 'uniform' or 'samples'")

    @property
    def label(self) -> str:
        if self.mode is AggregationMode.TORUS:
            L = self.scaling if isinstance(self.scaling, str) else repr(float(self.scaling))
            return f"torus[L={L}]"
        if self.mode is AggregationMode.FINITE_FIELD:
            return f"finite_field[p={self.field.p},d={self.field.d}]"
        return "plain"


PLAIN = AggregationConfig(AggregationMode.PLAIN)


@dataclass
class ClientState:
    """A client's view for one round: its index ``k`` (1-based) and local model."""

    k: int
    theta: np.ndarray
    n_samples: int = 1
    shard: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ServerState:
    """Global model, round counter, expected client count and aggregation config."""

    theta: ModelParams
    n_clients: int
    config: AggregationConfig = PLAIN
    round: int = 0

    def __post_init__(self):
        if self.n_clients < 2:
            raise ConfigurationError("K >= 2 required")


@dataclass(frozen=True)
class ComplexityCounters:
    """Measured per-round cost, in real (or field) symbols and operations.

    Client fields are per client (the maximum over clients). ``client_comm``
    counts peer mask traffic in both directions plus the upload;
    ``server_comm`` counts the broadcast the server sends.
    """

    client_multiplications: int
    client_additions: int
    client_comm: int
    client_storage: int
    server_additions: int
    server_comm: int
    server_storage: int

    @property
    def client_compute(self) -> int:
        return self.client_multiplications + self.client_additions

    @property
    def server_compute(self) -> int:
        return self.server_additions


def closed_form_costs(K: int, m: int) -> Dict[str, int]:
    """Closed-form costs as tabulated for the torus protocol.

    ``client_compute_tabulated`` reproduces the table's ``m^2 + m(K-1)``; the
    operation count actually performed (one multiplication per parameter) is
    ``client_compute_text`` = ``m + m(K-1)``.
    """
    return {
        "client_compute_tabulated": m * m + m * (K - 1),
        "client_compute_text": m + m * (K - 1),
        "server_compute": m * (K - 1),
        "client_comm": m * K,
        "server_comm": m * K,
        "client_storage": m * K,
        "server_storage": m,
    }


@dataclass(frozen=True)
class Message:
    src: Any
    dst: Any
    kind: str
    payload: Any
    symbols: int


class Network:
    """In-process message queues with symbol accounting per endpoint."""

    def __init__(self):
        self._queues: Dict[Any, Deque[Message]] = defaultdict(deque)
        self.sent: Dict[Any, int] = defaultdict(int)
        self.received: Dict[Any, int] = defaultdict(int)

    def send(self, src, dst, kind: str, payload, symbols: int) -> None:
        self._queues[dst].append(Message(src, dst, kind, payload, symbols))
        self.sent[src] += symbols
        self.received[dst] += symbols

    def drain(self, dst, kind: str) -> List[Message]:
        """Remove and return all queued messages of ``kind`` for ``dst``, in arrival order."""
        queue = self._queues[dst]
        keep, out = deque(), []
        while queue:
            msg = queue.popleft()
            (out if msg.kind == kind else keep).append(msg)
        self._queues[dst] = keep
        return out

    def traffic(self, endpoint) -> int:
        return self.sent[endpoint] + self.received[endpoint]


SERVER = "server"


def _client(k: int) -> Tuple[str, int]:
    return ("client", k)


@dataclass
class RoundTranscript:
    """Everything observable about one round, plus simulator-side diagnostics.

    ``overflow_count`` is the number of coordinates whose recovered sum is
    wrong because of wraparound: signed-window violations of the scaled sum
    for torus, out-of-range integer sums for finite_field, always 0 for plain.
    It is computed against the plaintext sum, which the server never sees.
    """

    round: int
    mode: AggregationMode
    K: int
    m: int
    L: Optional[float]
    field: Optional[FieldParams]
    submissions: List[Any]
    aggregate: Any
    recovered_sum: np.ndarray
    global_theta: ModelParams
    counters: ComplexityCounters
    overflow_count: int
    encoding_overflows: int = 0

    @property
    def L_or_p(self) -> str:
        if self.mode is AggregationMode.TORUS:
            return repr(float(self.L))
        if self.mode is AggregationMode.FINITE_FIELD:
            return str(self.field.p)
        return ""

    @property
    def d(self) -> str:
        return str(self.field.d) if self.mode is AggregationMode.FINITE_FIELD else ""

    def csv_row(self, cosine_vs_plain: float = float("nan"), accuracy: float = float("nan")) -> Dict[str, str]:
        return {
            "round": str(self.round),
            "mode": self.mode.value,
            "K": str(self.K),
            "m": str(self.m),
            "L_or_p": self.L_or_p,
            "d": self.d,
            "cosine_vs_plain": format_float(cosine_vs_plain),
            "accuracy": format_float(accuracy),
            "overflow_count": str(self.overflow_count),
            "client_ops": str(self.counters.client_compute),
            "server_ops": str(self.counters.server_compute),
            "comm_symbols": str(self.counters.client_comm),
        }


TRANSCRIPT_COLUMNS = (
    "round",
    "mode",
    "K",
    "m",
    "L_or_p",
    "d",
    "cosine_vs_plain",
    "accuracy",
    "overflow_count",
    "client_ops",
    "server_ops",
    "comm_symbols",
)


def format_float(x: float) -> str:
    """Shortest string that round-trips to the same float."""
    return repr(float(x))


def write_transcript_csv(path, rows: Iterable[Dict[str, str]], extra_columns: Sequence[str] = ()) -> None:
    columns = tuple(extra_columns) + TRANSCRIPT_COLUMNS
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def weighted_average(updates: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Entrywise ``sum_k w_k * theta_k``; weights must be nonnegative and sum to 1."""
    w = np.asarray(weights, dtype=np.float64)
    if len(updates) != w.size or w.size == 0:
        raise ConfigurationError("one weight per update required")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ConfigurationError(f"weights must be nonnegative and sum to 1, got sum {w.sum()!r}")
    vecs = [np.asarray(u, dtype=np.float64).reshape(-1) for u in updates]
    if any(v.size != vecs[0].size for v in vecs):
        raise ShapeError("all updates must have the same length")
    out = np.zeros_like(vecs[0])
    for wk, v in zip(w, vecs):
        out = out + wk * v
    return out


def _check_clients(clients: Sequence[ClientState], server: ServerState) -> List[ClientState]:
    K = server.n_clients
    by_id = {c.k: c for c in clients}
    if len(by_id) != len(clients):
        raise ProtocolAbort("duplicate client index")
    missing = sorted(set(range(1, K + 1)) - set(by_id))
    if missing:
        raise ProtocolAbort(f"clients {missing} did not participate; all {K} are required to unmask the aggregate")
    extra = sorted(set(by_id) - set(range(1, K + 1)))
    if extra:
        raise ProtocolAbort(f"unexpected client indices {extra}")
    ordered = [by_id[k] for k in range(1, K + 1)]
    for c in ordered:
        if np.asarray(c.theta).size != server.theta.m:
            raise ShapeError(f"client {c.k} sent {np.asarray(c.theta).size} parameters, expected {server.theta.m}")
    return ordered


def _local_vectors(clients: List[ClientState], config: AggregationConfig) -> List[np.ndarray]:
    vecs = [np.asarray(c.theta, dtype=np.float64).reshape(-1) for c in clients]
    if config.weighting == "samples":
        n = sum(c.n_samples for c in clients)
        K = len(clients)
        vecs = [(K * c.n_samples / n) * v for c, v in zip(clients, vecs)]
    return vecs


def round_scaling_factor(config: AggregationConfig, vecs: Sequence[np.ndarray]) -> float:
    """``L`` for this round: fixed, or derived from ``K`` and (supplied or estimated) ``R``."""
    if not isinstance(config.scaling, str):
        return float(config.scaling)
    if config.R is not None:
        R = config.R
    else:
        R = max(float(np.max(np.abs(v))) for v in vecs) * R_ESTIMATE_MARGIN
        if R == 0.0:
            R = 1.0
    return choose_scaling_factor(len(vecs), R, config.scaling)


class _Server:
    """Streaming aggregator; only ever stores the running sum (m symbols)."""

    def __init__(self, mode: AggregationMode, m: int):
        self.mode = mode
        self.m = m
        self.acc = None
        self.absorbed = 0
        self.additions = 0

    def absorb(self, submission) -> None:
        if self.mode is AggregationMode.TORUS:
            assert isinstance(submission, TorusVector), "server must only see masked torus vectors"
            self.acc = submission if self.acc is None else torus_add(self.acc, submission)
        elif self.mode is AggregationMode.FINITE_FIELD:
            assert isinstance(submission, FieldVector), "server must only see masked field vectors"
            self.acc = submission if self.acc is None else self.acc + submission
        else:
            vec = np.asarray(submission, dtype=np.float64)
            self.acc = vec.copy() if self.acc is None else self.acc + vec
        if self.absorbed:
            self.additions += self.m
        self.absorbed += 1

    @property
    def storage(self) -> int:
        return self.m


def _exchange_masks(net: Network, K: int, m: int, pair_material, config: AggregationConfig) -> None:
    """Client k ships the mask (or its seed) for each pair (k, j), j > k, to peer j."""
    for k in range(1, K + 1):
        for j in range(k + 1, K + 1):
            if config.mask_exchange == "vector":
                net.send(_client(k), _client(j), "mask", pair_material(k, j), m)
            else:
                net.send(_client(k), _client(j), "mask", pair_material(k, j), 1)


def run_round(
    clients: Sequence[ClientState],
    server: ServerState,
    seed: int = 0,
    keep_submissions: bool = True,
) -> Tuple[ServerState, RoundTranscript]:
    """Aggregate one round of client models under ``server.config``.

    The new global model is the recovered sum divided by ``K``. Mask material
    is fresh each round: it is derived from ``(seed, server.round)``.

    Raises:
        ProtocolAbort: if any of the ``K`` clients is missing.
    """
    config = server.config
    ordered = _check_clients(clients, server)
    K, m = server.n_clients, server.theta.m
    vecs = _local_vectors(ordered, config)
    plaintext_sum = np.zeros(m)
    for v in vecs:
        plaintext_sum = plaintext_sum + v

    net = Network()
    srv = _Server(config.mode, m)
    submissions: List[Any] = []
    client_mults = 0
    client_adds = 0
    client_storage = m
    L: Optional[float] = None
    overflow = 0
    enc_over = 0
    mask_seed = MaskSeed.from_int(seed).child(server.round)

    if config.mode is AggregationMode.PLAIN:
        for k, v in enumerate(vecs, start=1):
            net.send(_client(k), SERVER, "submission", v, m)
    elif config.mode is AggregationMode.TORUS:
        L = round_scaling_factor(config, vecs)
        overflow = signed_window_violations(plaintext_sum, L)
        pm = generate_pairwise_masks(K, m, mask_seed.child(_MASK_STREAM), precision=config.precision)
        torus_seed = mask_seed.child(_MASK_STREAM)
        _exchange_masks(net, K, m, (lambda k, j: pm[(k, j)]) if config.mask_exchange == "vector"
                        else (lambda k, j: (torus_seed, k, j)), config)
        for k, v in enumerate(vecs, start=1):
            received = net.drain(_client(k), "mask")
            assert len(received) == k - 1
            p_k = encrypt_update(v, k, pm, L)
            net.send(_client(k), SERVER, "submission", p_k, m)
        client_mults = m
        client_adds = m * (K - 1)
        client_storage = m * (K - 1) + m
    else:
        fp = config.field
        field_seed = mask_seed.child(_FIELD_STREAM)
        masks = generate_field_masks(K, m, fp.p, field_seed)
        _exchange_masks(net, K, m, (lambda k, j: masks[(k, j)]) if config.mask_exchange == "vector"
                        else (lambda k, j: (field_seed, k, j)), config)
        quantized = []
        for k, v in enumerate(vecs, start=1):
            received = net.drain(_client(k), "mask")
            assert len(received) == k - 1
            enc, over = encode_vector(v, fp)
            enc_over += int(np.count_nonzero(over))
            quantized.append(quantize(v, fp))
            acc = enc.values.copy()
            for j in range(k + 1, K + 1):
                acc = (acc + masks[(k, j)]) % fp.p
            for j in range(1, k):
                acc = (acc - masks[(j, k)]) % fp.p
            net.send(_client(k), SERVER, "submission", FieldVector(acc, fp.p), m)
        overflow = count_sum_overflows(quantized, fp)
        client_mults = m
        client_adds = m * (K - 1)
        client_storage = m * (K - 1) + m

    for msg in net.drain(SERVER, "submission"):
        if keep_submissions:
            submissions.append(msg.payload)
        srv.absorb(msg.payload)

    if config.mode is AggregationMode.TORUS:
        aggregate = srv.acc
        recovered = recover_real(aggregate, L)
    elif config.mode is AggregationMode.FINITE_FIELD:
        aggregate = srv.acc
        recovered = decode_vector(aggregate, config.field)
    else:
        aggregate = srv.acc
        recovered = aggregate.copy()

    # Client traffic so far: peer masks in and out plus the upload.
    client_comm = max(net.traffic(_client(k)) for k in range(1, K + 1))

    new_theta = server.theta.replace(recovered / K)
    for k in range(1, K + 1):
        net.send(SERVER, _client(k), "global", new_theta, m)

    counters = ComplexityCounters(
        client_multiplications=client_mults,
        client_additions=client_adds,
        client_comm=client_comm,
        client_storage=client_storage,
        server_additions=srv.additions,
        server_comm=net.sent[SERVER],
        server_storage=srv.storage,
    )
    transcript = RoundTranscript(
        round=server.round,
        mode=config.mode,
        K=K,
        m=m,
        L=L,
        field=config.field if config.mode is AggregationMode.FINITE_FIELD else None,
        submissions=submissions,
        aggregate=aggregate,
        recovered_sum=recovered,
        global_theta=new_theta,
        counters=counters,
        overflow_count=overflow,
        encoding_overflows=enc_over,
    )
    return replace(server, theta=new_theta, round=server.round + 1), transcript


def aggregate_submissions(submissions: Sequence[Any], config: AggregationConfig, L: Optional[float] = None) -> np.ndarray:
    """Server-side recovery from an arbitrary set of submissions.

    With a client missing the masks do not cancel and the result is noise;
    :func:`run_round` refuses to do this, this helper exists to demonstrate it.
    """
    if not submissions:
        raise ProtocolAbort("no submissions")
    srv = _Server(config.mode, len(submissions[0]))
    for s in submissions:
        srv.absorb(s)
    if config.mode is AggregationMode.TORUS:
        if L is None:
            raise ConfigurationError("L is required to recover a torus aggregate")
        return recover_real(srv.acc, L)
    if config.mode is AggregationMode.FINITE_FIELD:
        return decode_vector(srv.acc, config.field)
    return srv.acc


def complexity_counters(K: int, m: int, mode: AggregationMode | str = AggregationMode.TORUS,
                        mask_exchange: str = "vector") -> ComplexityCounters:
    """Measure the per-round costs by running a round on zero models of length ``m``."""
    if K < 2 or m < 1:
        raise ConfigurationError("K >= 2 and m >= 1 required")
    config = AggregationConfig(AggregationMode(mode), scaling=float(K), mask_exchange=mask_exchange)
    server = ServerState(ModelParams(np.zeros(m), ((m,),)), K, config)
    clients = [ClientState(k, np.zeros(m)) for k in range(1, K + 1)]
    _, transcript = run_round(clients, server, seed=0, keep_submissions=False)
    return transcript.counters
