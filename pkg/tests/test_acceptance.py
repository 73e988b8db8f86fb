"""Acceptance criteria, checked at desk scale.

Each test prints one ``PASS``/``FAIL`` line and then asserts. Run standalone
with ``python tests/test_acceptance.py`` or through pytest (``-s`` shows the
lines inline; they are also echoed in the terminal summary).
"""

import sys
import time
from functools import lru_cache

import numpy as np
import pytest

from torus_secagg.data import load_mnist_subset
from torus_secagg.experiment import get_preset
from torus_secagg.finite_field import FIELD_15_4, FIELD_31_7
from torus_secagg.fl import FedTask, run_fedavg
from torus_secagg.masking import MaskSeed, generate_pairwise_masks, net_mask
from torus_secagg.metrics import (
    cosine_similarity,
    ks_critical_value,
    ks_uniform_statistic,
    pearson_correlation,
)
from torus_secagg.models import ModelParams, SoftmaxRegression
from torus_secagg.protocol import (
    AggregationConfig,
    AggregationMode,
    ClientState,
    ServerState,
    aggregate_submissions,
    closed_form_costs,
    complexity_counters,
    run_round,
)
from torus_secagg.torus import torus_distance, torus_sum

ROUNDS = 10
SEEDS = (0, 1, 2)
EXACT = 1 - 1e-9
REPORT = []


def _report(label, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
    REPORT.append(line)
    print(line, flush=True)
    return ok


@lru_cache(maxsize=None)
def _mnist():
    return load_mnist_subset()


def _torus(L):
    return AggregationConfig(AggregationMode.TORUS, scaling=float(L))


def _field(fp):
    return AggregationConfig(AggregationMode.FINITE_FIELD, field=fp)


def _runs(K, aggregators):
    """FedAvg on the bundled MNIST subset, one history per seed."""
    train, test = _mnist()
    model = SoftmaxRegression(train.n_features, train.n_classes)
    train_cfg = get_preset("table2-mnist").train_config()
    out = []
    for seed in SEEDS:
        task = FedTask.iid(model, train, test, K, seed)
        out.append(run_fedavg(task, aggregators, train_cfg, ROUNDS, seed))
    return out


def test_exact_torus_recovery():
    start = time.perf_counter()
    details, ok = [], True
    for K in (5, 10, 30):
        hists = _runs(K, [_torus(K)])
        min_cos = min(min(h.secure[0].cosines) for h in hists)
        acc_gap = max(
            np.max(np.abs(np.array(h.plain.accuracies) - np.array(h.secure[0].accuracies))) for h in hists
        )
        ok &= min_cos >= EXACT and acc_gap <= 0.001 and all(len(h.plain.records) == ROUNDS for h in hists)
        details.append(f"K={K} min cos={min_cos:.15f} max |acc diff|={acc_gap:.4f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 120
    assert _report("exact torus recovery (L=K)", ok, "; ".join(details) + f"; {elapsed:.1f}s")


def test_finite_field_fidelity_large_field():
    cos = {}
    for K in (5, 30):
        cos[K] = [h.secure[0].final.cosine_vs_plain for h in _runs(K, [_field(FIELD_31_7)])]
    mean5, mean30 = np.mean(cos[5]), np.mean(cos[30])
    ok = min(cos[5]) >= 0.98 and mean30 < mean5
    detail = f"K=5 cos={mean5:.15f} (min {min(cos[5]):.15f}); K=30 cos={mean30:.15f}; K=30 < K=5: {mean30 < mean5}"
    assert _report("field 2^31-1, d=7 fidelity and K-trend", ok, detail)


def test_small_field_collapse():
    hists = _runs(10, [_field(FIELD_15_4), _torus(10)])
    ff_cos = np.mean([h.secure[0].final.cosine_vs_plain for h in hists])
    torus_min = min(min(h.secure[1].cosines) for h in hists)
    drop = np.mean([h.plain.final.accuracy - h.secure[0].final.accuracy for h in hists])
    overflows = sum(r.overflow_count for h in hists for r in h.secure[0].records)
    ok = ff_cos < 0.9 and torus_min >= EXACT and drop >= 0.2 and overflows > 0
    detail = (
        f"K=10 field cos={ff_cos:.3f}, torus min cos={torus_min:.15f}, "
        f"accuracy drop={drop:.3f}, overflowed coordinates={overflows}"
    )
    assert _report("field 2^15-1, d=4 collapse", ok, detail)


def test_L_sensitivity():
    K = 10
    Ls = (1, K, 10 * K, 100 * K)
    hists = _runs(K, [_torus(L) for L in Ls])
    cos1 = np.mean([h.secure[0].final.cosine_vs_plain for h in hists])
    drop1 = np.mean([h.plain.final.accuracy - h.secure[0].final.accuracy for h in hists])
    big = {L: min(min(h.secure[i].cosines) for h in hists) for i, L in enumerate(Ls) if i > 0}
    ok = cos1 < 0.95 and drop1 >= 0.3 and all(c >= EXACT for c in big.values())
    detail = f"L=1 cos={cos1:.3f} acc drop={drop1:.3f}; " + ", ".join(f"L={L} min cos={c:.15f}" for L, c in big.items())
    assert _report("L sensitivity at K=10", ok, detail)


def _pooled_submissions(theta, K, rounds, seed):
    m = theta.size
    cfg = _torus(K)
    state = ServerState(ModelParams(np.zeros(m), ((m,),)), K, cfg)
    subs = []
    for _ in range(rounds):
        clients = [ClientState(k, theta) for k in range(1, K + 1)]
        state, tr = run_round(clients, state, seed=seed)
        subs.extend(s.values for s in tr.submissions)
    return np.concatenate(subs)


def test_privacy_falsification():
    start = time.perf_counter()
    K, m, rounds = 5, 2000, 2
    alternating = np.where(np.arange(m) % 2 == 0, 0.499, -0.499)
    random_theta = np.random.default_rng(0).uniform(-0.5, 0.5, m)
    thetas = {
        "zeros": np.zeros(m),
        "all 0.499": np.full(m, 0.499),
        "alternating": alternating,
        "random": random_theta,
    }
    details, ok = [], True
    for i, (name, theta) in enumerate(thetas.items()):
        x = _pooled_submissions(theta, K, rounds, seed=100 + i)
        d, crit = ks_uniform_statistic(x), ks_critical_value(x.size)
        ok &= x.size >= 10_000 and d < crit
        line = f"{name}: n={x.size} D={d:.4f}<{crit:.4f}"
        if np.ptp(theta) > 0:
            rho = pearson_correlation(np.tile(theta, K * rounds), x)
            ok &= abs(rho) < 0.05
            line += f" rho={rho:+.4f}"
        details.append(line)
    elapsed = time.perf_counter() - start
    ok &= elapsed < 30
    assert _report("privacy falsification", ok, "; ".join(details) + f"; {elapsed:.1f}s")


def test_mask_cancellation_and_abort():
    worst = 0.0
    for K in range(2, 13):
        for m in (1, 17, 10_000):
            pm = generate_pairwise_masks(K, m, MaskSeed.from_int(K * 100_003 + m))
            total = torus_sum(net_mask(k, pm) for k in range(1, K + 1)).values
            worst = max(worst, float(np.max(torus_distance(total))) / (K * 2.0**-50))
    cancel_ok = worst <= 1.0

    rng = np.random.default_rng(7)
    K, m = 10, 2000
    thetas = rng.normal(0, 0.1, (K, m))
    plain = thetas.mean(axis=0)
    abort_cos = []
    for mode in ("torus", "finite_field"):
        cfg = AggregationConfig(mode, scaling=float(K))
        _, tr = run_round(
            [ClientState(k, thetas[k - 1]) for k in range(1, K + 1)],
            ServerState(ModelParams(np.zeros(m), ((m,),)), K, cfg),
            seed=3,
        )
        for drop in range(K):
            partial = aggregate_submissions(tr.submissions[:drop] + tr.submissions[drop + 1 :], cfg, tr.L) / K
            abort_cos.append(cosine_similarity(partial, plain))
    abort_ok = max(abort_cos) < 0.99
    detail = (
        f"worst residual = {worst:.3f} x K*2^-50 over K=2..12, m in {{1,17,10^4}}; "
        f"max cosine after dropping one client = {max(abort_cos):.4f}"
    )
    assert _report("mask cancellation and abort", cancel_ok and abort_ok, detail)


def test_complexity_counters():
    details, ok = [], True
    for K, m in ((5, 100), (10, 784 * 10 + 10), (30, 50)):
        c = complexity_counters(K, m, "torus")
        closed = closed_form_costs(K, m)
        match = (
            c.client_comm == closed["client_comm"] == m * K
            and c.server_comm == closed["server_comm"] == m * K
            and c.client_storage == closed["client_storage"] == m * K
            and c.server_storage == closed["server_storage"] == m
            and c.server_compute == closed["server_compute"] == m * (K - 1)
        )
        ok &= match
        details.append(
            f"(K={K}, m={m}) comm {c.client_comm}/{c.server_comm}, storage {c.client_storage}/{c.server_storage}, "
            f"server adds {c.server_compute}"
        )
    assert _report("complexity counters", ok, "; ".join(details))


def test_gradient_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    h = 1e-5
    small = SoftmaxRegression(50, 10)
    mnist = SoftmaxRegression(784, 10)
    worst_full = worst_dir = 0.0
    for _ in range(100):
        x = rng.uniform(0, 1, (1, small.n_features))
        y = rng.integers(0, 10, 1)
        w = rng.normal(0, 0.5, small.size)
        _, g = small.loss_and_grad(w, x, y)
        fd = np.empty_like(w)
        for i in range(w.size):
            e = np.zeros_like(w)
            e[i] = h
            fd[i] = (small.loss_and_grad(w + e, x, y)[0] - small.loss_and_grad(w - e, x, y)[0]) / (2 * h)
        worst_full = max(worst_full, np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd)))

        # Full-size MNIST model: directional derivative along a random unit vector.
        x = rng.uniform(0, 1, (1, 784))
        w = rng.normal(0, 0.05, mnist.size)
        v = rng.normal(size=mnist.size)
        v /= np.linalg.norm(v)
        _, g = mnist.loss_and_grad(w, x, y)
        fd_dir = (mnist.loss_and_grad(w + h * v, x, y)[0] - mnist.loss_and_grad(w - h * v, x, y)[0]) / (2 * h)
        an_dir = float(g @ v)
        worst_dir = max(worst_dir, abs(fd_dir - an_dir) / max(abs(an_dir), abs(fd_dir), 1e-12))
    elapsed = time.perf_counter() - start
    ok = worst_full < 1e-4 and worst_dir < 1e-4 and elapsed < 10
    detail = f"max rel err full gradient={worst_full:.2e}, 784x10 directional={worst_dir:.2e}; {elapsed:.1f}s"
    assert _report("gradient oracle (100 triples)", ok, detail)


@pytest.fixture(scope="module", autouse=True)
def _echo_report(request):
    yield
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")
    if reporter is not None and REPORT:
        reporter.write_sep("=", "acceptance criteria")
        for line in REPORT:
            reporter.write_line(line)


if __name__ == "__main__":
    failed = 0
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
