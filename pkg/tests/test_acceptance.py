"""Acceptance criteria, one marker per criterion; see conftest for the summary lines."""
import math
import time

import numpy as np
import pytest
from scipy import integrate, stats

from lrpnet import estimation as est
from lrpnet import identities as ids
from lrpnet import model, renorm, solver
from lrpnet.model import ModelParams

SCALES = (16, 32, 64, 128, 256, 512, 1024)
REPLICATES = 200
SEED = 20240601


def crit(n):
    return pytest.mark.criterion(n)


# 1 -------------------------------------------------------------------------------

@crit(1)
def test_c1_coupling_matches_quadrature():
    worst = 0.0
    for k in range(2, 101):
        val, _ = integrate.dblquad(lambda v, u: (v - u) ** -2, 0, 1, lambda u: k, lambda u: k + 1,
                                   epsabs=1e-15, epsrel=1e-13)
        worst = max(worst, abs(val - model.coupling_exponent(k)))
    assert worst < 1e-12


@crit(1)
@pytest.mark.parametrize("beta", [0.5, 1.0, 2.0])
def test_c1_edge_frequencies(beta):
    t0 = time.perf_counter()
    reps, hi = 100_000, 20
    samples = model.sample_window_batch(ModelParams(beta, seed=SEED), 0, hi, range(reps))
    d = np.concatenate([s.edges[:, 1] - s.edges[:, 0] for s in samples])
    counts = np.bincount(d, minlength=hi + 1)
    for k in range(1, hi + 1):
        N = (hi + 1 - k) * reps
        p = model.edge_probability(beta, k)
        sigma = math.sqrt(N * p * (1 - p))
        assert abs(counts[k] - N * p) <= 4 * sigma if sigma > 0 else counts[k] == N
    assert time.perf_counter() - t0 < 20


# 2 -------------------------------------------------------------------------------

@crit(2)
def test_c2_solver_against_brute_force():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 9))
        net = ids.random_connected_network(rng, n)
        a, b = (int(x) for x in rng.choice(n, 2, replace=False))
        worst = max(worst, abs(solver.two_point_resistance(net, a, b).value
                               - solver.brute_force_resistance(net, [a], [b])))
    assert worst < 1e-9


@crit(2)
def test_c2_series_parallel_laws():
    rng = np.random.default_rng(SEED + 1)
    for _ in range(100):
        rs = np.exp(rng.uniform(-2, 2, int(rng.integers(1, 8))))
        series = solver.Network.from_edges([(k, k + 1, 1 / r) for k, r in enumerate(rs)])
        assert abs(solver.two_point_resistance(series, 0, len(rs)).value - math.fsum(rs)) < 1e-10
        par = solver.Network(["a", "b"], [0] * len(rs), [1] * len(rs), 1 / rs)
        assert abs(solver.two_point_resistance(par, "a", "b").value - 1 / math.fsum(1 / rs)) < 1e-10


@crit(2)
def test_c2_rayleigh_monotonicity():
    rng = np.random.default_rng(SEED + 2)
    for _ in range(200):
        n = int(rng.integers(3, 12))
        net = ids.random_connected_network(rng, n)
        a, b = (int(x) for x in rng.choice(n, 2, replace=False))
        u, v = (int(x) for x in rng.choice(n, 2, replace=False))
        R = solver.two_point_resistance(net, a, b).value
        R2 = solver.two_point_resistance(net.with_conductance_added(u, v, float(rng.exponential())), a, b).value
        assert R2 <= R + 1e-12


# 3 -------------------------------------------------------------------------------

@crit(3)
def test_c3_flow_comparison():
    rng = np.random.default_rng(SEED + 3)
    count = 0
    for inst in ids.random_comparison_instances(rng, 500):
        out = ids.flow_comparison(inst)
        assert out.g_after <= out.g_before + 1e-9
        count += 1
    assert count == 500


@crit(3)
@pytest.mark.parametrize("variant", ["grounded", "interior"])
def test_c3_rank_one_update(variant):
    rng = np.random.default_rng(SEED + 4)
    for _ in range(100):
        n = int(rng.integers(3, 10))
        net = ids.random_connected_network(rng, n)
        w2, w = (int(x) for x in rng.choice(n, 2, replace=False))
        ground = w if variant == "grounded" else int(rng.choice([k for k in range(n) if k not in (w, w2)]))
        upd = ids.rank_one_update(net, w2, w, float(rng.exponential(2.0)) + 1e-3, ground=ground)
        assert upd.residual < 1e-9


# 4 -------------------------------------------------------------------------------

@crit(4)
def test_c4_random_certificates_lower_bound():
    rng = np.random.default_rng(SEED + 5)
    for _ in range(50):
        n = int(rng.integers(2, 8))
        net = ids.random_connected_network(rng, n, extra=int(rng.integers(0, 5)))
        a, b = (int(x) for x in rng.choice(n, 2, replace=False))
        R = solver.two_point_resistance(net, a, b).value
        cuts = ids.enumerate_cutsets(net, a, b)
        for _ in range(20):
            cert = ids.random_feasible_certificate(net, a, b, rng, cuts)
            assert ids.cutset_bound(cert, net) <= R + 1e-9


@crit(4)
def test_c4_series_parallel_equality():
    rng = np.random.default_rng(SEED + 6)
    for _ in range(50):
        net, s, t, R = ids.series_parallel_network(rng, int(rng.integers(1, 9)))
        assert abs(ids.cutset_bound(ids.optimal_certificate(net, s, t), net) - R) < 1e-8


# 5 -------------------------------------------------------------------------------

@crit(5)
def test_c5_analytic_marginals():
    for m in (2, 4, 8, 32):
        for beta in (0.5, 1.0, 2.0):
            for d in range(1, 11):
                assert abs(renorm.analytic_marginal(beta, d, m) - model.edge_probability(beta, d)) < 1e-12


@crit(5)
def test_c5_sampled_renorm_chi_square():
    beta, m, n, reps = 1.0, 8, 64, 10_000
    counts = np.zeros(n, dtype=np.int64)
    for start in range(0, reps, 2000):
        for s in model.sample_window_batch(ModelParams(beta, seed=SEED), 0, m * n - 1, range(start, start + 2000)):
            rg = renorm.renormalize(s, m)
            counts += np.bincount(rg.edges[:, 1] - rg.edges[:, 0], minlength=n)
    assert counts[1] == (n - 1) * reps
    chi2, dof = 0.0, 0
    for d in range(2, n):
        N = (n - d) * reps
        p = model.edge_probability(beta, d)
        if N * p < 5:
            continue
        chi2 += (counts[d] - N * p) ** 2 / (N * p * (1 - p))
        dof += 1
    assert stats.chi2.sf(chi2, dof) > 0.01


# 6 -------------------------------------------------------------------------------

@crit(6)
def test_c6_internal_energy_matches_qp():
    rng = np.random.default_rng(SEED + 7)
    for _ in range(100):
        a = np.exp(rng.uniform(-3, 3, int(rng.integers(0, 9))))
        b = float(np.exp(rng.uniform(-3, 3)))
        closed = renorm.internal_energy(a, b)
        val, theta = renorm.qp_oracle(a, b)
        assert abs(closed - val) < 1e-10
        assert np.all(theta >= 0) and theta.sum() <= 1 + 1e-12


@crit(6)
def test_c6_project_lift_exact():
    m, n = 8, 16
    for seed in range(10):
        s = model.sample_window(ModelParams(1.0, seed=SEED + seed), 0, m * n - 1)
        rg = renorm.renormalize(s, m)
        coarse = solver.Network(list(range(n)), rg.edges[:, 0], rg.edges[:, 1], np.ones(len(rg.edges)))
        g = renorm.Flow.from_result(solver.two_point_resistance(coarse, 0, n - 1))
        lifted = renorm.lift_flow(g, rg, s, 0, m * n - 1)
        back = renorm.project_flow(lifted.flow, rg, 0, m * n - 1).as_dict()
        gd = g.as_dict()
        assert set(k for k, v in back.items() if v != 0) <= set(gd)
        for key, val in gd.items():
            assert back.get(key, 0.0) == val


# 7 -------------------------------------------------------------------------------

@crit(7)
def test_c7_small_n_exhaustive_agreement():
    exact_m1, exact_m2 = est.exact_lambda_moments(1.0, 3)
    assert exact_m1 == pytest.approx(5 / 3, abs=1e-14)
    e = est.estimate_lambda(1.0, 3, 10_000, SEED)
    assert e.ci95[0] <= exact_m1 <= e.ci95[1]
    ratio, (lo, hi) = est.second_moment_ratio(1.0, 3, 10_000, SEED, est=e)
    assert exact_m2 / exact_m1 ** 2 == pytest.approx(1.12, abs=1e-12)
    assert lo <= 1.12 <= hi


# 8-10, 12-13: shared campaigns ------------------------------------------------------

def _config(beta, **kw):
    return est.ScalingConfig(beta=beta, scales=SCALES, replicates=REPLICATES, seed=SEED, **kw)


@pytest.fixture(scope="module")
def beta1_run():
    t0 = time.perf_counter()
    rep = est.scaling_report(_config(1.0))
    return rep, time.perf_counter() - t0


@pytest.fixture(scope="module")
def fit_only_runs():
    return {b: est.scaling_report(_config(b, mult_pairs=(), type_scales=())) for b in (0.5, 2.0)}


@crit(8)
def test_c8_regression_quality(beta1_run):
    rep, elapsed = beta1_run
    assert rep.r_squared > 0.98
    assert 0.02 < rep.delta_hat < 0.98
    assert elapsed < 30 * 60


@crit(8)
def test_c8_point_to_box_agrees_with_lambda(beta1_run):
    rep, _ = beta1_run
    f = rep.point_to_box_fit
    assert abs(f["difference"]) <= 2 * f["combined_stderr"], (
        f"point-to-box slope {f['delta_hat']:.4f} vs endpoint slope {rep.delta_hat:.4f}, "
        f"difference {f['difference']:.4f}, 2 combined stderr {2 * f['combined_stderr']:.4f}")


@crit(9)
def test_c9_multiplicativity_band(beta1_run):
    rep, _ = beta1_run
    ratios = [r.ratio for r in rep.multiplicativity]
    assert [(r.m, r.n) for r in rep.multiplicativity] == [(4, 8), (8, 8), (8, 16)]
    assert max(ratios) / min(ratios) < 4


@crit(10)
def test_c10_comparability_bands(beta1_run):
    rep, _ = beta1_run
    assert [r["n"] for r in rep.type_ratios] == [16, 32, 64, 128, 256]
    for key in ("point_to_box", "box_to_box_conditioned"):
        assert rep.type_band[key]["variation"] < 4


@crit(12)
def test_c12_exponent_nonincreasing_in_beta(beta1_run, fit_only_runs):
    fits = {0.5: fit_only_runs[0.5], 1.0: beta1_run[0], 2.0: fit_only_runs[2.0]}
    # the lighter runs share scales, replicates and streams with the full one
    for lo, hi in ((0.5, 1.0), (1.0, 2.0)):
        a, b = fits[lo], fits[hi]
        comb = math.hypot(a.delta_stderr, b.delta_stderr)
        assert a.delta_hat >= b.delta_hat - 2 * comb


@crit(13)
def test_c13_identical_seeds_identical_bytes(beta1_run):
    rep, _ = beta1_run
    again = est.scaling_report(_config(1.0, threads=2, chunk=10))
    assert again.to_json() == rep.to_json()


@crit(13)
def test_c13_merge_order_irrelevant():
    base = est.estimate("point_to_box", 1.0, 32, 60, SEED, chunk=10)
    rng = np.random.default_rng(0)
    for _ in range(3):
        perm = [int(k) for k in rng.permutation(6)]
        assert est.estimate("point_to_box", 1.0, 32, 60, SEED, chunk=10, order=perm).to_dict() == base.to_dict()


# 11 ------------------------------------------------------------------------------

@crit(11)
@pytest.mark.parametrize("beta", [0.5, 1.0])
@pytest.mark.parametrize("m", [32, 64])
def test_c11_cut_and_separation_bounds(beta, m):
    reps = 10_000
    st = est.cut_point_stats(beta, m, reps, SEED)
    for i in range(1, m // 2):
        p = st.cut[i]
        sigma = math.sqrt(p * (1 - p) / reps)
        assert p <= 4 * i ** -beta + 4 * sigma
    for i in range(1, m - 1, 2):
        p = st.separation[i]
        sigma = math.sqrt(p * (1 - p) / reps)
        assert p >= 0.1 * m ** -beta - 4 * sigma
