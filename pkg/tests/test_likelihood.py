import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import gauss_row_loglik, prop_loglik

from cascade_cpd.likelihood import (
    LOG_2PI,
    WindowView,
    measurement_loglik_node,
    measurement_table,
    null_loglik,
    post_change_mle,
    propagation_loglik,
    total_loglik,
)
from cascade_cpd.topology import (
    Graph,
    InfluenceMatrix,
    complete_graph,
    load_edge_list,
    path_graph,
    uniform_alpha,
)

INF = math.inf


@pytest.fixture
def pair():
    return load_edge_list("1,2,0.5")


def test_propagation_no_failures(pair):
    g, a = pair
    assert propagation_loglik(g, a, np.array([INF, INF]), 5) == 0.0
    assert propagation_loglik(g, a, np.array([7.0, 9.0]), 5) == 0.0


def test_propagation_hand_values(pair):
    g, a = pair
    assert propagation_loglik(g, a, np.array([1.0, 3.0]), 5) == pytest.approx(math.log(0.5) - 1.0, abs=1e-9)
    assert propagation_loglik(g, a, np.array([1.0, INF]), 5) == pytest.approx(-2.0, abs=1e-9)


def test_propagation_non_edge_is_impossible():
    g = path_graph(3)  # edges (0,1), (1,2); no (0,2)
    a = uniform_alpha(g, 0.3)
    assert propagation_loglik(g, a, np.array([1.0, INF, 2.0]), 5) == -INF


def test_propagation_ties():
    g, a = load_edge_list("1,2,0.5")
    # the second node at the same instant has no strictly earlier parent
    assert propagation_loglik(g, a, np.array([2.0, 2.0]), 5) == -INF
    g3 = complete_graph(3)
    a3 = uniform_alpha(g3, 0.5)
    # siblings may share a tick when a common parent precedes them
    val = propagation_loglik(g3, a3, np.array([1.0, 2.0, 2.0]), 5)
    assert val == pytest.approx(2 * (math.log(0.5) - 0.5), abs=1e-12)


def test_propagation_decreases_with_gap():
    g = complete_graph(4)
    a = uniform_alpha(g, 0.2)
    base = np.array([1.0, 2.0, 3.0, INF])
    vals = []
    for gap in (0.5, 1.0, 2.0, 3.0):
        tau = base.copy()
        tau[2] = tau[1] + gap
        vals.append(propagation_loglik(g, a, tau, 10))
    assert all(x > y for x, y in zip(vals, vals[1:]))


@settings(max_examples=80, deadline=None)
@given(
    st.integers(2, 5),
    st.lists(st.one_of(st.integers(0, 9).map(float), st.just(INF)), min_size=5, max_size=5),
    st.integers(0, 2**31 - 1),
)
def test_propagation_matches_oracle(n, taus, seed):
    rng = np.random.default_rng(seed)
    edges = frozenset((i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.7)
    g = Graph(n, edges)
    rates = np.zeros((n, n))
    for i, j in edges:
        rates[i, j], rates[j, i] = rng.uniform(0.05, 1.0, 2)
    a = InfluenceMatrix(rates)
    tau = np.array(taus[:n])
    expect = prop_loglik(rates.tolist(), tau.tolist(), 8)
    got = propagation_loglik(g, a, tau, 8)
    if expect == -INF:
        assert got == -INF
    else:
        assert got == pytest.approx(expect, abs=1e-9)


def test_mle_hand_values():
    m = post_change_mle(np.array([5.0, 1.0, 3.0]), 1)
    assert (m.mu_hat, m.sigma_hat, m.n_post) == (2.0, 1.0, 2)
    m = post_change_mle(np.array([0.0, 1.0]), 1)
    assert m.mu_hat == 1.0 and m.sigma_hat == 0.1
    assert post_change_mle(np.array([0.0, 1.0]), None).n_post == 0


def test_measurement_hand_values():
    assert measurement_loglik_node(np.zeros(2), None) == pytest.approx(-LOG_2PI, abs=1e-12)
    assert measurement_loglik_node(np.array([1.0, 3.0]), 0) == pytest.approx(-1 - LOG_2PI, abs=1e-12)
    assert -LOG_2PI == pytest.approx(-1.83788, abs=1e-5)


def test_measurement_matches_oracle():
    rng = np.random.default_rng(5)
    for _ in range(50):
        L = int(rng.integers(2, 12))
        row = rng.normal(0, 1.5, L)
        for k in [None, *range(L)]:
            assert measurement_loglik_node(row, k) == pytest.approx(gauss_row_loglik(row.tolist(), k, 0.1), abs=1e-9)


def test_table_matches_scalar():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(4, 15))
    x[2, 9:] += 3
    table, none = measurement_table(x, 0.2)
    for i in range(4):
        assert none[i] == pytest.approx(measurement_loglik_node(x[i], None, 0.2), abs=1e-9)
        for c in range(15):
            assert table[i, c] == pytest.approx(measurement_loglik_node(x[i], c, 0.2), abs=1e-9)


def test_mle_dominates_fixed_parameters():
    rng = np.random.default_rng(7)
    for _ in range(30):
        L = int(rng.integers(3, 20))
        row = rng.normal(rng.normal(), rng.uniform(0.2, 3), L)
        k = int(rng.integers(0, L))
        best = measurement_loglik_node(row, k)
        for mu in np.linspace(-3, 3, 13):
            for sd in (0.1, 0.3, 1.0, 2.0, 4.0):
                fixed = (
                    -0.5 * np.sum(row[:k] ** 2)
                    - np.sum((row[k:] - mu) ** 2) / (2 * sd * sd)
                    - 0.5 * L * LOG_2PI
                    - (L - k) * math.log(sd)
                )
                assert best >= fixed - 1e-9


def test_total_null_form():
    rng = np.random.default_rng(8)
    data = rng.normal(size=(3, 6))
    w = WindowView(data, origin=40)
    g = complete_graph(3)
    expect = -0.5 * np.sum(data**2) - 0.5 * data.size * LOG_2PI
    assert total_loglik(g, uniform_alpha(g, 0.3), np.full(3, INF), w) == pytest.approx(expect, abs=1e-9)
    assert null_loglik(data) == pytest.approx(expect, abs=1e-9)


def test_total_is_sum_of_parts(pair):
    g, a = pair
    data = np.array([[0.3, -0.2, 1.1, 0.9, 1.4, 0.2], [0.1, 0.0, -0.5, 1.2, 0.8, 1.9]])
    w = WindowView(data, origin=0)
    tau = np.array([1.0, 3.0])
    expect = (
        propagation_loglik(g, a, tau, 5)
        + measurement_loglik_node(data[0], 1)
        + measurement_loglik_node(data[1], 3)
    )
    assert total_loglik(g, a, tau, w) == pytest.approx(expect, abs=1e-12)
    assert propagation_loglik(g, a, tau, 5) == pytest.approx(-1.69315, abs=1e-5)


def test_total_matches_oracle():
    rng = np.random.default_rng(9)
    for _ in range(40):
        n, L = int(rng.integers(2, 5)), int(rng.integers(2, 8))
        g = complete_graph(n)
        rates = rng.uniform(0.05, 1.0, (n, n))
        np.fill_diagonal(rates, 0)
        a = InfluenceMatrix(rates)
        origin = int(rng.integers(0, 50))
        data = rng.normal(size=(n, L))
        w = WindowView(data, origin)
        tau = np.where(rng.random(n) < 0.6, origin + rng.integers(0, L, n), INF).astype(float)
        rel = [t - origin for t in tau]
        prop = prop_loglik(rates.tolist(), rel, L - 1)
        if prop == -INF:
            assert total_loglik(g, a, tau, w) == -INF
            continue
        meas = sum(
            gauss_row_loglik(data[i].tolist(), None if math.isinf(rel[i]) else int(rel[i]), 0.1) for i in range(n)
        )
        assert total_loglik(g, a, tau, w) == pytest.approx(prop + meas, abs=1e-9)


def test_origin_invariance(pair):
    g, a = pair
    data = np.random.default_rng(10).normal(size=(2, 9))
    v0 = total_loglik(g, a, np.array([2.0, 5.0]), WindowView(data, 0))
    v1 = total_loglik(g, a, np.array([102.0, 105.0]), WindowView(data, 100))
    assert v0 == pytest.approx(v1, abs=1e-12)


def test_single_change_beats_null_under_h0():
    rng = np.random.default_rng(11)
    for _ in range(20):
        data = rng.normal(size=(3, 30))
        table, none = measurement_table(data)
        assert np.max(table - none[:, None]) >= 0


def test_window_validation():
    with pytest.raises(ValueError):
        WindowView(np.zeros((2, 1)), 0)
    with pytest.raises(ValueError):
        WindowView(np.array([[0.0, np.nan]]), 0)
    w = WindowView(np.zeros((1, 4)), 10)
    assert w.end == 13 and w.column(12.0) == 2 and w.column(INF) is None
    with pytest.raises(ValueError):
        w.column(14.0)
