import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphlms.adapt import build_combination_matrix
from graphlms.clustering import (
    ZERO_NORM_GUARD,
    ClusterParams,
    ClusterState,
    oracle_support,
    select_mk,
    selection_mask,
    similarity_bit,
    similarity_bit_raw,
    update_cluster_matrix,
    update_trust,
)
from graphlms.errors import PreconditionError
from graphlms.graph import complete_graph, gen_knn_sensor, path_graph
from graphlms.signal import make_rng


def test_select_mk_examples():
    mk, idx = select_mk([1, 1, 1], 0.9)
    assert mk == 3 and list(idx) == [0, 1, 2]
    mk, idx = select_mk([1, 2, 4], 0.9)
    assert mk == 3 and list(idx) == [2, 1, 0]
    mk, idx = select_mk([1, 2, 4], 0.5)
    assert mk == 1 and list(idx) == [2]


def test_select_mk_degenerate_and_invalid():
    assert select_mk([0.0, 0.0, 0.0], 0.9)[0] == 3
    with pytest.raises(PreconditionError):
        select_mk([1.0, -1.0], 0.9)


def test_select_mk_tie_break_by_index():
    assert list(select_mk([2.0, 5.0, 2.0, 2.0], 0.99)[1]) == [1, 0, 2, 3]


@settings(max_examples=50, deadline=None)
@given(p=st.lists(st.floats(0.0, 10.0), min_size=1, max_size=8), tau=st.floats(0.5, 1.0))
def test_select_mk_minimal(p, tau):
    p = np.asarray(p)
    mk, idx = select_mk(p, tau)
    assert 1 <= mk <= len(p) and len(idx) == mk
    if p.sum() > 0:
        assert p[idx].sum() >= tau * p.sum() - 1e-9
        if mk > 1:
            top = np.sort(p)[::-1][: mk - 1].sum()
            assert top < tau * p.sum() + 1e-9


def test_selection_mask_rows():
    mask = selection_mask([[1, 2, 4], [4, 2, 1]], 0.5)
    np.testing.assert_array_equal(mask, [[False, False, True], [True, False, False]])


def test_similarity_bit_examples():
    h = np.array([1.0, 2.0, 0.5])
    idx = np.arange(3)
    assert similarity_bit(h, h, idx, 0.01) == 1
    # squared relative distance of 0.02
    psi = h + np.sqrt(0.02 * (h @ h)) * np.array([1.0, 0.0, 0.0])
    assert similarity_bit(psi, h, idx, 0.01) == 0
    assert similarity_bit(psi, h, idx, 0.03) == 1


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(-100, 100).filter(lambda v: abs(v) > 1e-3))
def test_similarity_bit_scale_invariant(seed, c):
    rng = make_rng(seed)
    h = rng.standard_normal(4)
    psi = h + 0.1 * rng.standard_normal(4)
    idx = np.array([0, 2])
    assert similarity_bit(c * psi, c * h, idx, 0.01) == similarity_bit(psi, h, idx, 0.01)


def test_similarity_bit_only_looks_at_selected_entries():
    h = np.array([1.0, 0.0])
    assert similarity_bit(np.array([1.0, 50.0]), h, np.array([0]), 0.01) == 1
    assert similarity_bit(np.array([1.0, 50.0]), h, np.array([0, 1]), 0.01) == 0


def test_similarity_bit_zero_norm_guard():
    idx = np.arange(2)
    assert similarity_bit(np.zeros(2), np.zeros(2), idx, 0.01) == 1
    assert similarity_bit(np.array([1e-3, 0.0]), np.zeros(2), idx, 0.01) == 0


def test_similarity_bit_raw():
    assert similarity_bit_raw([1.0, 1.0], [1.05, 1.0], 0.01) == 1
    assert similarity_bit_raw([1.0, 1.0], [1.2, 1.0], 0.01) == 0


def test_trust_examples():
    assert update_trust(0.7, 1, 0.0) == 1.0
    t, nu = 0.0, 0.9
    for i in range(30):
        t = update_trust(t, 1, nu)
        np.testing.assert_allclose(t, 1 - nu ** (i + 1))
    t = 0.0
    seq = []
    for i in range(200):
        t = update_trust(t, (i + 1) % 2, 0.5)
        seq.append(t)
    np.testing.assert_allclose(seq[-2:], [2 / 3, 1 / 3])


@settings(max_examples=50, deadline=None)
@given(bits=st.lists(st.integers(0, 1), min_size=1, max_size=60), nu=st.floats(0.01, 0.99),
       t0=st.floats(0.0, 1.0))
def test_trust_bounded(bits, nu, t0):
    t = t0
    for b in bits:
        t = update_trust(t, b, nu)
        assert 0.0 <= t <= 1.0


@settings(max_examples=30, deadline=None)
@given(nu=st.floats(0.01, 0.99), t0=st.floats(0.0, 1.0), b=st.integers(0, 1))
def test_trust_monotone_response(nu, t0, b):
    t = t0
    gaps = []
    for _ in range(20):
        t = update_trust(t, b, nu)
        gaps.append(abs(b - t))
    assert np.all(np.diff(gaps) <= 1e-15)
    np.testing.assert_allclose(gaps, abs(b - t0) * nu ** np.arange(1, 21), atol=1e-12)


def test_cluster_matrix_examples():
    sup = path_graph(4).neighborhoods()
    e, a = update_cluster_matrix(np.zeros((4, 4)), 0.5, sup)
    np.testing.assert_array_equal(a, np.eye(4))
    e, a = update_cluster_matrix(np.ones((4, 4)), 0.5, sup)
    np.testing.assert_array_equal(a, build_combination_matrix(sup))
    t = np.eye(2)
    t[0, 1] = 0.49
    t[1, 0] = 0.5
    e, _ = update_cluster_matrix(t, 0.5)
    np.testing.assert_array_equal(e, [[1, 0], [1, 1]])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), theta=st.floats(0.5, 0.99))
def test_cluster_matrix_supported_with_self(seed, theta):
    rng = make_rng(seed)
    sup = gen_knn_sensor(10, 3, seed).neighborhoods()
    e, a = update_cluster_matrix(rng.uniform(size=(10, 10)), theta, sup)
    assert np.all(np.diag(e) == 1)
    assert not np.any(e.astype(bool) & ~sup)
    np.testing.assert_allclose(a.sum(axis=0), 1.0, atol=1e-12)


def test_params_validation():
    with pytest.raises(PreconditionError):
        ClusterParams(nu=1.0)
    with pytest.raises(PreconditionError):
        ClusterParams(beta=0.0)
    with pytest.raises(PreconditionError):
        ClusterParams(tau=0.0)


def _reference_update(state_t, state_b, support, mask, psi, h, params):
    """Loop-per-pair reference of ClusterState.update."""
    n = support.shape[0]
    t = state_t.copy()
    b = state_b.copy()
    for k in range(n):
        idx = np.flatnonzero(mask[k])
        for l in range(n):
            if not support[l, k]:
                continue
            if l == k:
                b[l, k] = 1
            elif params.normalized:
                if h[k, idx] @ h[k, idx] >= ZERO_NORM_GUARD:
                    b[l, k] = similarity_bit(psi[l], h[k], idx, params.beta)
            else:
                b[l, k] = similarity_bit_raw(psi[l], h[k], params.beta)
            t[l, k] = update_trust(t[l, k], b[l, k], params.nu)
    e, a = update_cluster_matrix(t, params.theta, support)
    return t, b, e, a


@pytest.mark.parametrize("normalized", [True, False])
def test_cluster_state_matches_reference(normalized):
    rng = make_rng(3)
    g = gen_knn_sensor(12, 3, 3)
    sup = g.neighborhoods()
    p = rng.uniform(0.01, 1, (12, 3))
    p[:, 0] = 1.0
    params = ClusterParams(tau=0.9, beta=0.05, theta=0.5, nu=0.6, normalized=normalized)
    cs = ClusterState(sup, p, params)
    t = np.eye(12)
    b = np.eye(12)
    centers = rng.uniform(0, 1, (2, 3))
    labels = rng.integers(0, 2, 12)
    for _ in range(15):
        h = centers[labels] + 0.05 * rng.standard_normal((12, 3))
        psi = h + 0.05 * rng.standard_normal((12, 3))
        a = cs.update(psi, h)
        t, b, e, a_ref = _reference_update(t, b, sup, cs.mask, psi, h, params)
        np.testing.assert_allclose(cs.trust, t, atol=1e-14)
        np.testing.assert_array_equal(cs.e, e)
        np.testing.assert_allclose(a, a_ref, atol=1e-15)


def test_cluster_state_batched_matches_single():
    rng = make_rng(4)
    sup = gen_knn_sensor(8, 3, 4).neighborhoods()
    p = np.ones((8, 2))
    params = ClusterParams(beta=0.05, nu=0.5)
    batch = ClusterState(sup, p, params, batch_shape=(3,))
    singles = [ClusterState(sup, p, params) for _ in range(3)]
    for _ in range(5):
        h = rng.uniform(0.5, 1, (3, 8, 2))
        psi = h + 0.1 * rng.standard_normal((3, 8, 2))
        a = batch.update(psi, h)
        for r in range(3):
            np.testing.assert_array_equal(a[r], singles[r].update(psi[r], h[r]))


def test_cluster_state_starts_non_cooperative():
    cs = ClusterState(complete_graph(4).neighborhoods(), np.ones((4, 2)), ClusterParams())
    np.testing.assert_array_equal(cs.combination, np.eye(4))
    np.testing.assert_array_equal(cs.trust, np.eye(4))
    assert np.all((cs.mk >= 1) & (cs.mk <= 2))


def test_cluster_state_zero_estimates_keep_previous_bits():
    cs = ClusterState(complete_graph(3).neighborhoods(), np.ones((3, 2)), ClusterParams(nu=0.4))
    cs.update(np.zeros((3, 2)), np.zeros((3, 2)))
    np.testing.assert_array_equal(cs.e, np.eye(3))


def test_cluster_state_separates_two_groups():
    sup = complete_graph(6).neighborhoods()
    cs = ClusterState(sup, np.ones((6, 2)), ClusterParams(nu=0.5))
    h = np.array([[1.0, 0.0]] * 3 + [[0.0, 1.0]] * 3)
    for _ in range(10):
        cs.update(h, h)
    labels = np.array([0, 0, 0, 1, 1, 1])
    np.testing.assert_array_equal(cs.e.astype(bool), oracle_support(sup, labels))


def test_oracle_support():
    sup = path_graph(4).neighborhoods()
    got = oracle_support(sup, [0, 0, 1, 1])
    np.testing.assert_array_equal(got[1, 2], False)
    np.testing.assert_array_equal(got[0, 1], True)
