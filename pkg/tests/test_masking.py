import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torus_secagg.errors import ConfigurationError, DomainError, ShapeError
from torus_secagg.masking import (
    MaskSeed,
    PairwiseMasks,
    encrypt_update,
    generate_pairwise_masks,
    net_mask,
)
from torus_secagg.metrics import ks_critical_value, ks_uniform_statistic, pearson_correlation
from torus_secagg.torus import TorusVector, torus_distance, torus_sum, wrap


def _masks(values, K, m=1):
    return PairwiseMasks(K, m, {pair: TorusVector(v) for pair, v in values.items()})


HAND_MASKS = {(1, 2): [0.2], (1, 3): [0.5], (2, 3): [0.9]}


def test_mask_count_k2():
    pm = generate_pairwise_masks(2, 3, MaskSeed.from_int(0))
    assert list(pm.pairs()) == [(1, 2)]
    assert len(pm[(1, 2)]) == 3
    assert np.all((pm[(1, 2)].values >= 0) & (pm[(1, 2)].values < 1))


def test_mask_count_k5():
    pm = generate_pairwise_masks(5, 1, MaskSeed.from_int(0))
    assert len(list(pm.pairs())) == 10


def test_generate_rejects_small_K():
    with pytest.raises(ConfigurationError):
        generate_pairwise_masks(1, 3, MaskSeed.from_int(0))


def test_masks_are_deterministic_per_seed():
    a = generate_pairwise_masks(4, 20, MaskSeed.from_int(7, 3))
    b = generate_pairwise_masks(4, 20, MaskSeed.from_int(7, 3))
    c = generate_pairwise_masks(4, 20, MaskSeed.from_int(7, 4))
    assert all(a[p] == b[p] for p in a.pairs())
    assert not any(a[p] == c[p] for p in a.pairs())


def test_pair_streams_are_distinct():
    pm = generate_pairwise_masks(4, 50, MaskSeed.from_int(1))
    vals = [pm[p].values.tobytes() for p in pm.pairs()]
    assert len(set(vals)) == len(vals)


def test_masks_have_53_bit_resolution():
    v = generate_pairwise_masks(2, 10_000, MaskSeed.from_int(2))[(1, 2)].values
    scaled = v * 2.0**53
    assert np.array_equal(scaled, np.floor(scaled))
    # Many values use bits below float32 resolution.
    assert np.mean(v != v.astype(np.float32)) > 0.99


def test_mask_entries_pass_ks():
    pm = generate_pairwise_masks(2, 100_000, MaskSeed.from_int(3))
    x = pm[(1, 2)].values
    assert ks_uniform_statistic(x) < ks_critical_value(x.size)


def test_mask_seed_validation():
    with pytest.raises(ConfigurationError):
        MaskSeed(-1)
    with pytest.raises(ConfigurationError):
        MaskSeed(2**256)
    assert MaskSeed.from_int(5).child(1, 2).context == (1, 2)


@pytest.mark.parametrize("k, expected", [(1, 0.7), (2, 0.7), (3, 0.6)])
def test_net_mask_hand_examples(k, expected):
    pm = _masks(HAND_MASKS, 3)
    assert net_mask(k, pm).values[0] == pytest.approx(expected, abs=1e-15)


def test_net_mask_hand_examples_cancel():
    pm = _masks(HAND_MASKS, 3)
    total = sum(
        sum(z.values[0] for z in pm.generated_by(k)) - sum(z.values[0] for z in pm.received_by(k)) for k in (1, 2, 3)
    )
    assert total == pytest.approx(0.0, abs=1e-15)
    raw_net = [net_mask(k, pm).values[0] for k in (1, 2, 3)]
    assert sum(raw_net) == pytest.approx(2.0, abs=1e-15)


def test_net_mask_index_range():
    pm = _masks(HAND_MASKS, 3)
    for k in (0, 4):
        with pytest.raises(DomainError):
            net_mask(k, pm)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.sampled_from([1, 17]), st.integers(0, 2**63))
def test_net_masks_cancel(K, m, seed):
    pm = generate_pairwise_masks(K, m, MaskSeed.from_int(seed))
    total = torus_sum(net_mask(k, pm) for k in range(1, K + 1)).values
    assert np.all(torus_distance(total) <= K * 2.0**-50)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32))
def test_net_masks_cancel_exactly_for_dyadic_masks(K, seed):
    rng = np.random.default_rng(seed)
    masks = {(k, j): rng.integers(0, 2**20, 5) / 2.0**20 for k in range(1, K + 1) for j in range(k + 1, K + 1)}
    pm = _masks(masks, K, m=5)
    total = torus_sum(net_mask(k, pm) for k in range(1, K + 1)).values
    assert np.all(total == 0.0)


def test_encrypt_update_examples():
    pm = _masks({(1, 2): [0.9]}, 2)
    p1 = encrypt_update([0.2], 1, pm, 2.0)
    p2 = encrypt_update([0.4], 2, pm, 2.0)
    assert torus_distance(p1.values[0], 0.0) <= 1e-15
    assert p2.values[0] == pytest.approx(0.3, abs=1e-15)
    assert (p1 + p2).values[0] == pytest.approx(wrap((0.2 + 0.4) / 2), abs=1e-15)


def test_encrypt_update_shape_mismatch():
    pm = _masks({(1, 2): [0.9]}, 2)
    with pytest.raises(ShapeError):
        encrypt_update([0.2, 0.3], 1, pm, 2.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(1, 40), st.integers(0, 2**32))
def test_aggregate_equals_plaintext_scaled_sum(K, m, seed):
    rng = np.random.default_rng(seed)
    thetas = rng.normal(0, 1, (K, m))
    L = 10.0
    pm = generate_pairwise_masks(K, m, MaskSeed.from_int(seed))
    agg = torus_sum(encrypt_update(thetas[k - 1], k, pm, L) for k in range(1, K + 1)).values
    expected = wrap(thetas.sum(axis=0) / L)
    assert np.all(torus_distance(agg, expected) <= K * 2.0**-50)


@pytest.mark.parametrize("theta_value", [0.0, 0.499, -3.7])
def test_submission_marginal_is_uniform(theta_value):
    trials, K = 10_000, 3
    seed = MaskSeed.from_int(11)
    entries = np.empty(trials)
    for t in range(trials):
        pm = generate_pairwise_masks(K, 1, seed.child(t))
        entries[t] = encrypt_update([theta_value], 2, pm, 3.0).values[0]
    assert ks_uniform_statistic(entries) < ks_critical_value(trials)


def test_submission_uncorrelated_with_parameters():
    K, m, trials = 4, 100, 100
    rng = np.random.default_rng(5)
    thetas, subs = [], []
    for t in range(trials):
        theta = rng.uniform(-2, 2, m)
        pm = generate_pairwise_masks(K, m, MaskSeed.from_int(5, t))
        thetas.append(theta)
        subs.append(encrypt_update(theta, 1, pm, 4.0).values)
    assert abs(pearson_correlation(np.concatenate(thetas), np.concatenate(subs))) < 0.05


def test_float32_masks():
    pm = generate_pairwise_masks(3, 100, MaskSeed.from_int(0), precision=32)
    assert pm.precision == 32
    for p in pm.pairs():
        v = pm[p].values
        assert np.array_equal(v, v.astype(np.float32).astype(np.float64))
        assert np.all(v < 1.0)
