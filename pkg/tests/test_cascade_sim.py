import io
import math

import numpy as np
import pytest
from scipy import stats

from cascade_cpd.cascade_sim import (
    PostChangeParams,
    change_ticks,
    gen_measurements,
    hazard,
    read_cascade_csv,
    read_panel_csv,
    sample_cascade,
    write_cascade_csv,
    write_panel_csv,
)
from cascade_cpd.topology import Graph, load_edge_list, path_graph, star_graph, uniform_alpha


@pytest.fixture
def triangle():
    return load_edge_list("1,3,0.3\n2,3,0.2\n1,2,0.1")


def test_hazard_sums_failed_neighbours(triangle):
    g, a = triangle
    assert hazard(g, a, np.array([1.0, 2.0, np.inf]), 2, 3.0) == pytest.approx(0.5)


def test_hazard_zero_cases(triangle):
    g, a = triangle
    inf = np.inf
    # no failed neighbour yet
    assert hazard(g, a, np.array([5.0, inf, inf]), 2, 5.0) == 0.0
    # before the first failure
    assert hazard(g, a, np.array([1.0, 2.0, inf]), 2, 1.0) == 0.0
    # node already failed
    assert hazard(g, a, np.array([1.0, 2.0, 2.5]), 2, 3.0) == 0.0
    with pytest.raises(IndexError):
        hazard(g, a, np.array([1.0, 2.0, inf]), 3, 3.0)


def test_hazard_piecewise_constant_nondecreasing():
    g = path_graph(4)
    a = uniform_alpha(g, 0.4)
    tau = np.array([0.0, 1.5, np.inf, 3.2])
    grid = np.linspace(0.01, 6, 300)
    h = np.array([hazard(g, a, tau, 2, t) for t in grid])
    assert np.all(np.diff(h) >= 0)
    assert set(np.round(h, 12)) == {0.0, 0.4, 0.8}
    # jumps only where a neighbour fails
    assert np.all(h[grid <= 1.5] == 0.0)
    assert np.all(h[(grid > 1.5) & (grid <= 3.2)] == 0.4)


def test_isolated_seed():
    g = Graph(3, frozenset({(1, 2)}))
    a = uniform_alpha(g, 1.0)
    tau = sample_cascade(g, a, 0, 0.0, math.inf, np.random.default_rng(0))
    assert tau[0] == 0.0 and np.all(np.isinf(tau[1:]))


def test_seed_validation():
    g, a = load_edge_list("1,2,0.5")
    rng = np.random.default_rng(0)
    with pytest.raises(IndexError):
        sample_cascade(g, a, 2, 0.0, 10.0, rng)
    with pytest.raises(ValueError):
        sample_cascade(g, a, 0, 10.0, 10.0, rng)


def test_horizon_censors():
    g, a = load_edge_list("1,2,0.5")
    rng = np.random.default_rng(1)
    for _ in range(200):
        tau = sample_cascade(g, a, 0, 0.0, 0.5, rng)
        assert np.isinf(tau[1]) or tau[1] < 0.5


def test_two_node_waiting_time_mean():
    g, a = load_edge_list("1,2,0.5")
    rng = np.random.default_rng(11)
    waits = np.array([sample_cascade(g, a, 0, 0.0, math.inf, rng)[1] for _ in range(10_000)])
    assert abs(waits.mean() - 2.0) < 0.06


def test_waiting_time_ks():
    g, a = load_edge_list("1,2,0.5")
    rng = np.random.default_rng(12)
    waits = np.array([sample_cascade(g, a, 0, 0.0, math.inf, rng)[1] for _ in range(10_000)])
    assert stats.kstest(waits, "expon", args=(0, 2.0)).pvalue > 0.01


def test_star_first_leaf_uniform():
    g = star_graph(5)
    a = uniform_alpha(g, 1.0)
    rng = np.random.default_rng(13)
    counts = np.zeros(5)
    for _ in range(10_000):
        tau = sample_cascade(g, a, 0, 0.0, math.inf, rng)
        counts[int(np.argmin(tau[1:]))] += 1
    assert stats.chisquare(counts).pvalue > 0.01


def test_change_ticks_ceiling():
    assert list(change_ticks(np.array([2.4, 3.0, np.inf]))) == [3.0, 3.0, math.inf]


def test_ceiling_rule_in_panel():
    params = PostChangeParams.uniform(1, mu=100.0, sigma=1e-3)
    x = gen_measurements(np.array([2.4]), params, 4, np.random.default_rng(0))
    assert abs(x[0, 1]) < 10 and abs(x[0, 2] - 100) < 1


def test_pure_noise_panel():
    x = gen_measurements(np.full(10, np.inf), PostChangeParams.uniform(10), 10_000, np.random.default_rng(2))
    assert abs(x.mean()) < 0.01
    assert abs(x.var() - 1) < 0.02


def test_post_change_mean():
    x = gen_measurements(np.array([1.0]), PostChangeParams.uniform(1), 20_000, np.random.default_rng(3))
    assert abs(x.mean() - 1) < 0.03


def test_start_offset_shifts_grid():
    params = PostChangeParams.uniform(1, mu=50.0, sigma=1e-3)
    x = gen_measurements(np.array([101.0]), params, 3, np.random.default_rng(0), start=100)
    assert abs(x[0, 0]) < 10 and abs(x[0, 1] - 50) < 1


def test_panel_independence():
    T = 5000
    x = gen_measurements(np.full(6, np.inf), PostChangeParams.uniform(6), T, np.random.default_rng(4))
    c = np.corrcoef(x)
    off = c[~np.eye(6, dtype=bool)]
    assert np.all(np.abs(off) < 4 / math.sqrt(T))


def test_params_validation():
    with pytest.raises(ValueError):
        PostChangeParams(np.zeros(2), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        gen_measurements(np.zeros(1), PostChangeParams.uniform(1), 0, np.random.default_rng(0))


def test_csv_round_trips():
    tau = np.array([1.5, np.inf, 3.25])
    buf = io.StringIO()
    write_cascade_csv(tau, buf)
    assert buf.getvalue().splitlines()[0] == "node,tau"
    buf.seek(0)
    assert np.array_equal(read_cascade_csv(buf), tau)

    x = np.random.default_rng(0).standard_normal((3, 7))
    buf = io.StringIO()
    write_panel_csv(x, buf, start=5)
    assert buf.getvalue().splitlines()[0] == "t,x_1,x_2,x_3"
    buf.seek(0)
    ticks, back = read_panel_csv(buf)
    assert list(ticks) == list(range(5, 12))
    assert np.array_equal(back, x)
