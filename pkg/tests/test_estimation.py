import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lrpnet import estimation as est
from lrpnet.estimation import Estimate, ReplicateSet


def test_exact_moments_at_three_points():
    # R = 2 without the (0, 2) edge, 2/3 with it; p = 1/4 at beta = 1
    m1, m2 = est.exact_lambda_moments(1.0, 3)
    assert m1 == pytest.approx(5 / 3, abs=1e-14)
    assert m2 == pytest.approx(28 / 9, abs=1e-14)
    assert m2 / m1 ** 2 == pytest.approx(1.12, abs=1e-14)


def test_exact_moments_guard():
    with pytest.raises(ValueError):
        est.exact_lambda_moments(1.0, 9)


def test_estimate_statistics():
    e = Estimate.from_values(8, "lambda_pp", np.array([1.0, 2.0, 3.0, 4.0]))
    assert e.mean == 2.5
    assert e.stderr == pytest.approx(math.sqrt((5 / 3) / 4))
    assert e.second_moment == pytest.approx(7.5)
    assert e.ci95[0] < 2.5 < e.ci95[1]
    assert e.quantiles["0.5"] == 2.5
    with pytest.raises(est.InvalidData):
        Estimate.from_values(8, "lambda_pp", np.array([1.0]))


def test_replicate_merge_rejects_conflicts():
    with pytest.raises(ValueError):
        ReplicateSet({1: 2.0}).merge(ReplicateSet({1: 3.0}))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.001, 1e6), min_size=2, max_size=40), st.randoms())
def test_merge_is_order_independent(vals, rnd):
    parts = [ReplicateSet({k: v}) for k, v in enumerate(vals)]
    a = ReplicateSet()
    for p in parts:
        a = a.merge(p)
    rnd.shuffle(parts)
    b = ReplicateSet()
    for p in parts:
        b = b.merge(p)
    ea = Estimate.from_values(1, "x", a.array())
    eb = Estimate.from_values(1, "x", b.array())
    assert ea.to_dict() == eb.to_dict()


def test_stream_ids_distinct():
    ids = {est.stream_id(q, n) for q in est.QUANTITIES for n in (2, 16, 1024, 2**19)}
    assert len(ids) == 4 * len(est.QUANTITIES)
    with pytest.raises(ValueError):
        est.stream_id("lambda_pp", 2**20)


def test_estimate_independent_of_chunking_threads_and_order():
    a = est.estimate("lambda_pp", 1.0, 16, 40, seed=3, chunk=7)
    b = est.estimate("lambda_pp", 1.0, 16, 40, seed=3, chunk=40)
    c = est.estimate("lambda_pp", 1.0, 16, 40, seed=3, chunk=7, threads=2, order=[5, 0, 3, 1, 4, 2])
    assert a.to_dict() == b.to_dict() == c.to_dict()
    d = est.estimate("lambda_pp", 1.0, 16, 40, seed=4)
    assert d.mean != a.mean


def test_fit_exponent_exact_power_law():
    ns = [16, 32, 64, 128, 256]
    fit = est.fit_exponent(ns, [3.0 * n ** 0.37 for n in ns])
    assert fit.delta_hat == pytest.approx(0.37, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)
    assert not fit.weighted


def test_fit_exponent_weighted_and_errors():
    ns = [16, 32, 64, 128]
    means = [2.0, 2.7, 3.5, 4.9]
    fit = est.fit_exponent(ns, means, [0.1, 0.1, 0.1, 0.1])
    assert fit.weighted and fit.stderr > 0
    with pytest.raises(est.InvalidData):
        est.fit_exponent(ns[:3], means[:3])
    with pytest.raises(est.InvalidData):
        est.fit_exponent(ns, [1.0, -1.0, 2.0, 3.0])
    two = est.fit_exponent([10, 100], [1.0, 10.0], min_scales=2)
    assert two.delta_hat == pytest.approx(1.0)


def test_fit_matches_numpy_polyfit():
    rng = np.random.default_rng(0)
    ns = np.array([16, 32, 64, 128, 256, 512])
    means = np.exp(0.4 * np.log(ns) + rng.normal(0, 0.05, ns.size))
    fit = est.fit_exponent(ns, means)
    slope, _ = np.polyfit(np.log(ns), np.log(means), 1)
    assert fit.delta_hat == pytest.approx(slope, rel=1e-12)


def test_wilson_interval():
    lo, hi = est.wilson_interval(0, 100)
    assert lo == pytest.approx(0.0, abs=1e-15) and 0.03 < hi < 0.04
    assert est.wilson_interval(100, 100)[1] == 1.0
    lo, hi = est.wilson_interval(50, 100)
    assert lo < 0.5 < hi


def test_multiplicativity_rejects_scale_one():
    with pytest.raises(est.NotApplicable):
        est.multiplicativity_report(1.0, [(1, 8)], 10, 0)


def test_multiplicativity_rows():
    rows = est.multiplicativity_report(1.0, [(2, 4), (4, 4)], 60, 1)
    assert [(r.m, r.n) for r in rows] == [(2, 4), (4, 4)]
    for r in rows:
        assert r.ratio > 0 and r.ci95[0] < r.ci95[1]


def test_point_to_box_at_radius_one_has_known_lower_bound():
    # 0 has two neighbours inside [-1, 1]; resistance to the outside is at most 1 (via either neighbour)
    e = est.estimate("point_to_box", 1.0, 1, 50, seed=0, truncation_factor=64)
    assert 0 < e.mean <= 1.0


def test_box_to_box_conditioning_increases_resistance():
    a = est.box_to_box_values(est.ModelParams(1.0, seed=2), 4, range(30), 64, conditioned=True)
    b = est.box_to_box_values(est.ModelParams(1.0, seed=2), 4, range(30), 64, conditioned=False)
    assert all(a[k] > 0 for k in a)
    assert np.mean(list(a.values())) >= np.mean(list(b.values()))


def test_hat_values_positive():
    vals = est.hat_values(est.ModelParams(1.0, seed=1), 8, range(10), 64)
    assert all(v > 0 for v in vals.values())


def test_cut_point_stats_structure_and_small_beta():
    st_ = est.cut_point_stats(0.01, 16, 500, seed=0)
    assert math.isnan(st_.cut[0]) and math.isnan(st_.cut[15])
    assert np.all(np.isnan(st_.separation[::2]))
    assert np.nanmin(st_.cut) > 0.8  # almost no long edges


def test_lower_tail_check_bounds():
    frac, (lo, hi) = est.lower_tail_check(1.0, 4, 0.01, 40, 0.3, seed=0)
    assert 0 <= lo <= frac <= hi <= 1


def test_second_moment_ratio_needs_replicates():
    with pytest.raises(est.InvalidData):
        est.second_moment_ratio(1.0, 3, 50, 0)


def test_scaling_config_validation():
    with pytest.raises(ValueError):
        est.ScalingConfig(beta=0)
    with pytest.raises(ValueError):
        est.ScalingConfig(scales=(16,))
    with pytest.raises(ValueError):
        est.ScalingConfig(truncation_factor=2)
    assert est.ScalingConfig().comparison_scales == (16, 32, 64, 128, 256)


def test_small_scaling_report_roundtrip():
    cfg = est.ScalingConfig(scales=(4, 8, 16), replicates=20, mult_pairs=((2, 4),), mult_replicates=20, seed=2)
    rep = est.scaling_report(cfg)
    d = rep.to_dict()
    assert set(d) >= {"delta_hat", "delta_stderr", "r_squared", "estimates", "multiplicativity", "type_band"}
    lines = rep.series_csv().splitlines()
    assert lines[0] == "n,mean,ci_lo,ci_hi,mean2,ci_lo2,ci_hi2"
    assert [int(l.split(",")[0]) for l in lines[1:]] == [4, 8, 16]
    assert rep.to_json() == est.scaling_report(cfg).to_json()
