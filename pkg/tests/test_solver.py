import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lrpnet import model, solver
from lrpnet.identities import random_connected_network
from lrpnet.model import LrpSample, ModelParams, Supernode
from lrpnet.solver import Network


def unit(edges, vertices=None):
    return Network.from_edges(edges, vertices)


@pytest.mark.parametrize("edges,a,b,expected", [
    ([(0, 1), (1, 2), (2, 3)], 0, 3, 3.0),
    ([(0, 1), (1, 2), (0, 2)], 0, 2, 2 / 3),
    ([(0, 1), (1, 2), (2, 3), (3, 0)], 0, 2, 1.0),
    ([(i, j) for i in range(4) for j in range(i + 1, 4)], 1, 3, 0.5),
    # Wheatstone bridge with unit resistors
    ([(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)], 0, 3, 1.0),
])
def test_known_resistances(edges, a, b, expected):
    assert solver.two_point_resistance(unit(edges), a, b).value == pytest.approx(expected, abs=1e-13)


def test_parallel_edges_fold():
    net = unit([(0, 1), (0, 1, 3.0), (1, 0)])
    assert net.c.tolist() == [5.0]
    assert solver.two_point_resistance(net, 0, 1).value == pytest.approx(0.2, abs=1e-15)


def test_methods_agree_and_report_stats():
    s = model.sample_window(ModelParams(1.0, seed=2), 0, 399)
    net = Network.from_sample(s)
    vals = {m: solver.two_point_resistance(net, 0, 399, m) for m in ("dense", "sparse", "cg")}
    ref = vals["dense"].value
    for m, r in vals.items():
        assert r.value == pytest.approx(ref, rel=1e-9)
        assert r.solver_stats[0] == m and r.solver_stats[2] < solver.RESIDUAL_TOL
    assert vals["cg"].solver_stats[1] > 1


def test_cg_cap_is_surfaced():
    n = 5000
    net = unit([(i, i + 1) for i in range(n - 1)])
    with pytest.raises(solver.NumericError) as err:
        solver.two_point_resistance(net, 0, n - 1, method="cg")
    assert err.value.stats["method"] == "cg" and err.value.stats["iterations"] > 0
    assert solver.two_point_resistance(net, 0, n - 1).value == pytest.approx(n - 1, rel=1e-10)


def test_disconnected_terminals():
    net = unit([(0, 1), (2, 3)])
    with pytest.raises(solver.InfiniteResistance):
        solver.two_point_resistance(net, 0, 3)
    # other components are ignored
    assert solver.two_point_resistance(net, 2, 3).value == pytest.approx(1.0)


def test_invalid_queries():
    net = unit([(0, 1)])
    with pytest.raises(solver.InvalidQuery):
        solver.two_point_resistance(net, 0, 0)
    with pytest.raises(solver.InvalidQuery):
        solver.two_point_resistance(net, 0, 9)
    with pytest.raises(solver.InvalidQuery):
        solver.set_resistance(net, [0], [0, 1])


def test_unit_flow_properties():
    rng = np.random.default_rng(3)
    net = random_connected_network(rng, 9)
    r = solver.two_point_resistance(net, 2, 7)
    div = r.divergence()
    expected = np.zeros(9)
    expected[2], expected[7] = 1.0, -1.0
    assert np.allclose(div, expected, atol=1e-12)
    assert r.energy == pytest.approx(r.value, rel=1e-12)
    assert r.potentials[7] == 0.0
    assert all(r.flow[(v, u)] == -f for (u, v), f in r.flow.items())


def test_set_resistance_contracts_terminals():
    net = unit([(0, 1), (1, 2), (2, 3), (1, 3)])
    assert solver.set_resistance(net, [0], [2, 3]).value == pytest.approx(1.5)


def test_restricted_resistance_ignores_outside_edges():
    s = LrpSample(ModelParams(1.0), (0, 5), np.array([[0, 1], [0, 5], [1, 2], [2, 3], [3, 4], [4, 5]]))
    assert solver.restricted_resistance(s, (0, 4), 0, 4).value == pytest.approx(4.0)
    assert solver.restricted_resistance(s, (0, 5), 0, 4).value == pytest.approx(1 / (1 / 4 + 1 / 2))
    with pytest.raises(solver.InvalidQuery):
        solver.restricted_resistance(s, (0, 6), 0, 4)


def test_hat_resistance_finite_intervals():
    edges = np.array([[0, 1], [0, 5], [1, 2], [1, 3], [2, 3], [3, 4], [4, 5]])
    s = LrpSample(ModelParams(1.0), (0, 5), edges)
    # (0,5) joins the two sides directly and is dropped; (1,3) stays
    r = solver.hat_resistance(s, x2=1, x3=4, x1=0, x4=5).value
    assert r == pytest.approx(1 + 1 / (1 + 1 / 2))


def test_hat_resistance_with_supernodes():
    edges = np.array([[-2, -1], [-1, 0], [0, 1], [1, 2], [-2, 2]])
    sns = [Supernode("ext-", "", np.array([-2, 0, 2]), np.array([1, 2, 5])),
           Supernode("ext+", "", np.array([-2, 1, 2]), np.array([3, 1, 1]))]
    s = LrpSample(ModelParams(1.0), (-2, 2), edges, sns)
    net, S1, S2 = solver.hat_network(s, x2=-1, x3=1, x1=None, x4=None)
    assert "ext-" in S1 and "ext+" in S2
    got = {tuple(sorted(map(str, e[:2]))): e[2] for e in net.edge_list()}
    # ext- -- 2 and ext+ -- -2 join the sides directly; -2 -- 2 crosses; all removed
    assert ("2", "ext-") not in got and ("-2", "ext+") not in got and ("-2", "2") not in got
    assert got[("0", "ext-")] == 2.0 and got[("1", "ext+")] == 1.0
    # remaining: J1 = {-2,-1,ext-}, J2 = {1,2,ext+}; 0 connects to J1 with 1+2 and to J2 with 1
    assert solver.hat_resistance(s, -1, 1, None, None).value == pytest.approx(1 / 3 + 1)


def test_result_json():
    r = solver.two_point_resistance(unit([(0, 1), (1, 2)]), 0, 2)
    d = r.to_dict()
    assert set(d) == {"value", "energy", "solver_stats", "potentials"}
    d2 = json.loads(json.dumps(r.to_dict(emit_flow=True)))
    assert d2["flow"] == [[0, 1, 1.0], [1, 2, 1.0]]


def test_electric_flow_general_demand():
    net = unit([(0, 1), (1, 2), (1, 3)])
    r = solver.electric_flow(net, {0: 2.0, 2: -1.0, 3: -1.0})
    assert r.value == pytest.approx(4.0 + 1.0 + 1.0)
    assert np.allclose(r.divergence(), [2, 0, -1, -1])


def test_brute_force_limit():
    net = unit([(i, i + 1) for i in range(11)])
    with pytest.raises(solver.TooLarge):
        solver.brute_force_resistance(net, [0], [11])


def test_contract_rejects_label_collision():
    net = unit([(0, 1), (1, 2)])
    with pytest.raises(solver.InvalidQuery):
        net.contract({2: [0, 1]})


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(3, 10), st.floats(0.1, 10))
def test_resistance_metric_properties(seed, n, t):
    rng = np.random.default_rng(seed)
    net = random_connected_network(rng, n)
    a, b, c = (int(x) for x in rng.choice(n, 3, replace=False))
    R = lambda x, y, g=net: solver.two_point_resistance(g, x, y).value
    assert R(a, b) == pytest.approx(R(b, a), rel=1e-10)
    assert R(a, c) <= R(a, b) + R(b, c) + 1e-10
    scaled = Network(net.vertices, net.eu, net.ev, net.c * t)
    assert R(a, b, scaled) == pytest.approx(R(a, b) / t, rel=1e-10)
    assert R(a, b) == pytest.approx(solver.brute_force_resistance(net, [a], [b]), rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.05, 20), min_size=1, max_size=6))
def test_series_and_parallel_laws(rs):
    series = Network.from_edges([(k, k + 1, 1 / r) for k, r in enumerate(rs)])
    assert solver.two_point_resistance(series, 0, len(rs)).value == pytest.approx(math.fsum(rs), abs=1e-10)
    par = Network(["a", "b"], [0] * len(rs), [1] * len(rs), [1 / r for r in rs])
    expect = 1 / math.fsum(1 / r for r in rs)
    assert solver.two_point_resistance(par, "a", "b").value == pytest.approx(expect, abs=1e-10)
