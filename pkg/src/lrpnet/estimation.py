"""Monte Carlo campaigns for resistance scaling in the critical model.

Every replicate value is stored against its replicate index, and statistics
are recomputed from the values in index order with exactly rounded sums.
Merging partial batches is therefore a plain union and the reported digits
do not depend on how the replicates were split or in which order batches
finished.
"""
from __future__ import annotations

import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from lrpnet import streams
from lrpnet.model import (
    ModelParams,
    box_exterior_classes,
    edge_probability,
    sample_window_batch,
    sample_with_contracted_complement_batch,
)
from lrpnet.solver import Network, hat_resistance, restricted_resistance, set_resistance, two_point_resistance

QUANTITIES = ("lambda_pp", "point_to_box", "box_to_box_conditioned", "hat_R")
_QCODE = {q: k + 1 for k, q in enumerate(QUANTITIES)}
_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
Z95 = 1.959963984540054


class InvalidData(ValueError):
    pass


class NotApplicable(ValueError):
    pass


def stream_id(quantity: str, n: int) -> int:
    """Stream tag for a (quantity, scale) campaign; distinct scales are independent."""
    if not 0 < n < 2**20:
        raise ValueError(f"scale {n} outside the supported range")
    return _QCODE[quantity] * 2**20 + n


# per-replicate kernels ------------------------------------------------------------

def lambda_values(params: ModelParams, n: int, replicates: Sequence[int]) -> dict[int, float]:
    """``R_[0,n)(0, n-1)`` per replicate."""
    if n < 2:
        raise ValueError("lambda_pp needs n >= 2")
    out = {}
    for s in sample_window_batch(params, 0, n - 1, replicates, stream=stream_id("lambda_pp", n)):
        out[s.replicate] = restricted_resistance(s, (0, n - 1), 0, n - 1).value
    return out


def point_to_box_values(params: ModelParams, n: int, replicates: Sequence[int],
                        truncation: int) -> dict[int, float]:
    """``R(0, [-n, n]^c)`` with the complement contracted."""
    out = {}
    for s in sample_with_contracted_complement_batch(params, n, replicates, truncation,
                                                     stream=stream_id("point_to_box", n)):
        out[s.replicate] = set_resistance(Network.from_sample(s), [0], ["ext"]).value
    return out


def box_to_box_values(params: ModelParams, n: int, replicates: Sequence[int], truncation: int,
                      conditioned: bool = True) -> dict[int, float]:
    """``R([-n, n], [-2n, 2n]^c)``, optionally with no edge joining the two sets.

    Conditioning removes the pair class deterministically, so the
    unconditioned variant on the same replicate is a coupled superset.
    """
    forbidden = box_exterior_classes(n, 2 * n) if conditioned else ()
    out = {}
    batch = sample_with_contracted_complement_batch(
        params, 2 * n, replicates, truncation, forbidden=forbidden,
        stream=stream_id("box_to_box_conditioned", n))
    for s in batch:
        net = Network.from_sample(s)
        out[s.replicate] = set_resistance(net, range(-n, n + 1), ["ext"]).value
    return out


def hat_values(params: ModelParams, n: int, replicates: Sequence[int], truncation: int) -> dict[int, float]:
    """Hat resistance between ``(-inf, x]`` and ``[x + n + 1, +inf)`` with crossing edges removed."""
    if n < 2:
        raise ValueError("hat_R needs n >= 2")
    x2 = -((n + 1) // 2)
    out = {}
    batch = sample_with_contracted_complement_batch(params, n, replicates, truncation, split_sides=True,
                                                    stream=stream_id("hat_R", n))
    for s in batch:
        out[s.replicate] = hat_resistance(s, x2, x2 + n + 1, None, None).value
    return out


def _kernel(task):
    quantity, beta, seed, n, reps, tfactor, conditioned = task
    params = ModelParams(beta=beta, seed=seed)
    T = max(int(round(tfactor * n)), 1)
    if quantity == "lambda_pp":
        return lambda_values(params, n, reps)
    if quantity == "point_to_box":
        return point_to_box_values(params, n, reps, T)
    if quantity == "box_to_box_conditioned":
        return box_to_box_values(params, n, reps, max(T, 2 * n + 1), conditioned)
    if quantity == "hat_R":
        return hat_values(params, n, reps, T)
    raise ValueError(f"unknown quantity {quantity!r}")


# accumulation ---------------------------------------------------------------------

@dataclass
class ReplicateSet:
    values: dict = field(default_factory=dict)

    def merge(self, other: "ReplicateSet") -> "ReplicateSet":
        out = dict(self.values)
        for k, v in other.values.items():
            if k in out and out[k] != v:
                raise ValueError(f"replicate {k} has conflicting values {out[k]} and {v}")
            out[k] = v
        return ReplicateSet(out)

    def array(self) -> np.ndarray:
        return np.array([self.values[k] for k in sorted(self.values)], dtype=float)


@dataclass(frozen=True)
class Estimate:
    n: int
    quantity: str
    mean: float
    stderr: float
    ci95: tuple[float, float]
    replicates: int
    second_moment: float
    quantiles: dict
    samples: np.ndarray = field(repr=False, compare=False, default=None)

    @classmethod
    def from_values(cls, n: int, quantity: str, values: np.ndarray) -> "Estimate":
        x = np.asarray(values, dtype=float)
        N = x.size
        if N < 2:
            raise InvalidData("an estimate needs at least two replicates")
        mean = math.fsum(x) / N
        var = math.fsum((x - mean) ** 2) / (N - 1)
        se = math.sqrt(var / N)
        return cls(
            n=n, quantity=quantity, mean=mean, stderr=se,
            ci95=(mean - Z95 * se, mean + Z95 * se), replicates=N,
            second_moment=math.fsum(x * x) / N,
            quantiles={str(q): float(np.quantile(x, q)) for q in _QUANTILES},
            samples=x,
        )

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "samples"}
        d["ci95"] = list(self.ci95)
        return d


def _chunks(replicates: int, chunk: int) -> list[list[int]]:
    return [list(range(a, min(a + chunk, replicates))) for a in range(0, replicates, chunk)]


def run_tasks(tasks: list, threads: int = 1) -> list[dict]:
    if threads <= 1 or len(tasks) <= 1:
        return [_kernel(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_kernel, tasks))


def estimate(quantity: str, beta: float, n: int, replicates: int, seed: int,
             truncation_factor: float = 8.0, threads: int = 1, chunk: int = 25,
             conditioned: bool = True, order: Sequence[int] | None = None) -> Estimate:
    """Monte Carlo estimate of one quantity at one scale.

    ``order`` permutes the chunk merge order (for checking order independence).
    """
    if replicates < 2:
        raise InvalidData("need at least two replicates")
    tasks = [(quantity, beta, seed, n, c, truncation_factor, conditioned) for c in _chunks(replicates, chunk)]
    parts = run_tasks(tasks, threads)
    acc = ReplicateSet()
    for k in (order if order is not None else range(len(parts))):
        acc = acc.merge(ReplicateSet(parts[k]))
    return Estimate.from_values(n, quantity, acc.array())


def estimate_lambda(beta, n, replicates, seed, **kw) -> Estimate:
    return estimate("lambda_pp", beta, n, replicates, seed, **kw)


def estimate_point_to_box(beta, n, truncation, replicates, seed, **kw) -> Estimate:
    return estimate("point_to_box", beta, n, replicates, seed, truncation_factor=truncation / n, **kw)


def estimate_box_to_box_conditioned(beta, n, truncation, replicates, seed, **kw) -> Estimate:
    if truncation <= 2 * n:
        raise ValueError("truncation must exceed 2n")
    return estimate("box_to_box_conditioned", beta, n, replicates, seed, truncation_factor=truncation / n, **kw)


def estimate_hat(beta, n, truncation, replicates, seed, **kw) -> Estimate:
    return estimate("hat_R", beta, n, replicates, seed, truncation_factor=truncation / n, **kw)


# exact small-n reference -------------------------------------------------------------

def exact_lambda_moments(beta: float, n: int) -> tuple[float, float]:
    """``E[R_[0,n)(0,n-1)]`` and its second moment by enumerating every configuration."""
    if n < 2:
        raise ValueError("need n >= 2")
    pairs = [(i, j) for i in range(n) for j in range(i + 2, n)]
    if len(pairs) > 16:
        raise ValueError("too many random pairs to enumerate")
    probs = [edge_probability(beta, j - i) for i, j in pairs]
    base = [(i, i + 1) for i in range(n - 1)]
    m1, m2 = [], []
    for present in itertools.product((False, True), repeat=len(pairs)):
        w = math.prod(p if on else 1 - p for p, on in zip(probs, present))
        edges = base + [e for e, on in zip(pairs, present) if on]
        R = two_point_resistance(Network.from_edges(edges, vertices=list(range(n))), 0, n - 1).value
        m1.append(w * R)
        m2.append(w * R * R)
    return math.fsum(m1), math.fsum(m2)


# regression ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExponentFit:
    delta_hat: float
    stderr: float
    r_squared: float
    intercept: float
    weighted: bool


def fit_exponent(ns: Sequence[float], means: Sequence[float], stderrs: Sequence[float] | None = None,
                 min_scales: int = 4) -> ExponentFit:
    """Slope of ``log(mean)`` against ``log(n)``.

    With standard errors the points are weighted by ``(mean / stderr)^2``,
    the inverse delta-method variance of ``log(mean)``.  The slope error is
    scaled by the residual spread, so it also reflects lack of fit.
    """
    x = np.log(np.asarray(ns, dtype=float))
    means = np.asarray(means, dtype=float)
    if x.size < min_scales:
        raise InvalidData(f"need at least {min_scales} scales, got {x.size}")
    if np.any(~(means > 0)):
        raise InvalidData("all means must be positive")
    y = np.log(means)
    if stderrs is not None and np.all(np.asarray(stderrs, dtype=float) > 0):
        w = (means / np.asarray(stderrs, dtype=float)) ** 2
        weighted = True
    else:
        w = np.ones_like(x)
        weighted = False
    W = w / w.sum()
    xbar, ybar = float(np.sum(W * x)), float(np.sum(W * y))
    sxx = float(np.sum(w * (x - xbar) ** 2))
    slope = float(np.sum(w * (x - xbar) * (y - ybar))) / sxx
    intercept = ybar - slope * xbar
    resid = y - (intercept + slope * x)
    ss_res = float(np.sum(w * resid ** 2))
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    dof = x.size - 2
    sigma2 = ss_res / dof if dof > 0 else 0.0
    if weighted:
        sigma2 = max(sigma2, 1.0)
    stderr = math.sqrt(sigma2 / sxx)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ExponentFit(slope, stderr, r2, intercept, weighted)


# derived statistics -----------------------------------------------------------------

@dataclass(frozen=True)
class RatioRow:
    m: int
    n: int
    ratio: float
    stderr: float
    ci95: tuple[float, float]

    def to_dict(self):
        return {"m": self.m, "n": self.n, "ratio": self.ratio, "stderr": self.stderr, "ci95": list(self.ci95)}


def _bootstrap_ratio(parts: list[np.ndarray], powers: list[int], seed: int, tag: int,
                     resamples: int = 1000) -> tuple[float, float]:
    """Percentile CI for ``prod mean(part)^power`` with independent resampling per part."""
    rng = streams.bootstrap_generator(seed, tag)
    stats = np.ones(resamples)
    for x, p in zip(parts, powers):
        idx = rng.integers(0, x.size, size=(resamples, x.size))
        stats *= x[idx].mean(axis=1) ** p
    lo, hi = np.quantile(stats, [0.025, 0.975])
    return float(lo), float(hi)


def multiplicativity_report(beta: float, pairs: Sequence[tuple[int, int]], replicates: int, seed: int,
                            estimates: dict | None = None, threads: int = 1) -> list[RatioRow]:
    """``L(mn) / (L(m) L(n))`` with delta-method errors and bootstrap intervals."""
    cache = dict(estimates or {})

    def lam(k):
        if k not in cache:
            cache[k] = estimate_lambda(beta, k, replicates, seed, threads=threads)
        return cache[k]

    rows = []
    for m, n in pairs:
        if m < 2 or n < 2:
            raise NotApplicable(f"scale 1 has zero resistance; pair {(m, n)} is degenerate")
        a, b, c = lam(m), lam(n), lam(m * n)
        ratio = c.mean / (a.mean * b.mean)
        if m == n:
            rel = (c.stderr / c.mean) ** 2 + 4 * (a.stderr / a.mean) ** 2
            parts, powers = [c.samples, a.samples], [1, -2]
        else:
            rel = (c.stderr / c.mean) ** 2 + (a.stderr / a.mean) ** 2 + (b.stderr / b.mean) ** 2
            parts, powers = [c.samples, a.samples, b.samples], [1, -1, -1]
        ci = _bootstrap_ratio(parts, powers, seed, tag=m * 2**20 + n)
        rows.append(RatioRow(m, n, ratio, ratio * math.sqrt(rel), ci))
    return rows


def second_moment_ratio(beta: float, n: int, replicates: int, seed: int, est: Estimate | None = None):
    """``mean(R^2) / mean(R)^2`` for the endpoint resistance, with a bootstrap interval."""
    if replicates < 100:
        raise InvalidData("second moment ratio needs at least 100 replicates")
    est = est or estimate_lambda(beta, n, replicates, seed)
    x = est.samples
    ratio = est.second_moment / est.mean ** 2
    rng = streams.bootstrap_generator(seed, 7 * 2**20 + n)
    idx = rng.integers(0, x.size, size=(1000, x.size))
    xs = x[idx]
    boot = (xs * xs).mean(axis=1) / xs.mean(axis=1) ** 2
    lo, hi = np.quantile(boot, [0.025, 0.975])
    return ratio, (float(lo), float(hi))


def wilson_interval(k: int, N: int, z: float = Z95) -> tuple[float, float]:
    p = k / N
    d = 1 + z * z / N
    c = (p + z * z / (2 * N)) / d
    h = z * math.sqrt(p * (1 - p) / N + z * z / (4 * N * N)) / d
    return max(0.0, c - h), min(1.0, c + h)


def lower_tail_check(beta: float, n: int, eps: float, replicates: int, delta_hat: float, seed: int,
                     truncation_factor: float = 8.0, est: Estimate | None = None):
    """Empirical ``P[R(0, [-n,n]^c) >= eps * n^delta_hat]`` with a Wilson interval."""
    est = est or estimate("point_to_box", beta, n, replicates, seed, truncation_factor)
    thr = eps * n ** delta_hat
    k = int(np.sum(est.samples >= thr))
    return k / est.replicates, wilson_interval(k, est.replicates)


@dataclass(frozen=True)
class CutPointStats:
    m: int
    replicates: int
    cut: np.ndarray  # cut[i] for i in 1..m-2 stored at index i
    separation: np.ndarray  # nan at even i


def cut_point_stats(beta: float, m: int, replicates: int, seed: int, batch: int = 2000) -> CutPointStats:
    """Per-position frequencies of cut points and separation points on ``[0, m)``."""
    if m < 4:
        raise ValueError("need m >= 4")
    params = ModelParams(beta=beta, seed=seed)
    cut = np.zeros(m)
    sep = np.zeros(m)
    for start in range(0, replicates, batch):
        reps = range(start, min(start + batch, replicates))
        for s in sample_window_batch(params, 0, m - 1, reps, stream=8 * 2**20 + m):
            e = s.long_edges()
            span = np.zeros(m + 1)
            np.add.at(span, e[:, 0] + 1, 1)
            np.add.at(span, e[:, 1], -1)
            covered = np.cumsum(span)[:m] > 0
            deg = np.bincount(e.ravel(), minlength=m)
            is_cut = ~covered
            cut += is_cut
            sep += is_cut & (deg == 0)
    cut /= replicates
    sep /= replicates
    idx = np.arange(m)
    cut[(idx < 1) | (idx > m - 2)] = np.nan
    sep[(idx % 2 == 0) | (idx > m - 2)] = np.nan
    return CutPointStats(m, replicates, cut, sep)


# campaigns ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingConfig:
    beta: float = 1.0
    scales: tuple = (16, 32, 64, 128, 256, 512, 1024)
    replicates: int = 200
    seed: int = 0
    truncation_factor: float = 8.0
    mult_pairs: tuple = ((4, 8), (8, 8), (8, 16))
    mult_replicates: int = 1000
    type_scales: tuple | None = None  # default: scales up to 256
    threads: int = 1
    chunk: int = 25

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if len(self.scales) < 2 or any(int(n) < 2 for n in self.scales):
            raise ValueError("need at least two scales, each >= 2")
        if self.replicates < 2:
            raise ValueError("need at least two replicates")
        if self.truncation_factor <= 2:
            raise ValueError("truncation factor must exceed 2")

    @property
    def comparison_scales(self) -> tuple:
        if self.type_scales is not None:
            return tuple(self.type_scales)
        return tuple(n for n in self.scales if n <= 256)


@dataclass
class ScalingReport:
    beta: float
    config: dict
    estimates: list
    delta_hat: float
    delta_stderr: float
    r_squared: float
    point_to_box_fit: dict
    multiplicativity: list
    type_ratios: list
    type_band: dict

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "config": self.config,
            "estimates": [e.to_dict() for e in self.estimates],
            "delta_hat": self.delta_hat,
            "delta_stderr": self.delta_stderr,
            "r_squared": self.r_squared,
            "point_to_box_fit": self.point_to_box_fit,
            "multiplicativity": [r.to_dict() for r in self.multiplicativity],
            "type_ratios": self.type_ratios,
            "type_band": self.type_band,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def series(self, quantity: str) -> list[Estimate]:
        return sorted((e for e in self.estimates if e.quantity == quantity), key=lambda e: e.n)

    def series_csv(self) -> str:
        lam = {e.n: e for e in self.series("lambda_pp")}
        ptb = {e.n: e for e in self.series("point_to_box")}
        lines = ["n,mean,ci_lo,ci_hi,mean2,ci_lo2,ci_hi2"]
        for n in sorted(lam):
            a = lam[n]
            row = [str(n), repr(a.mean), repr(a.ci95[0]), repr(a.ci95[1])]
            if n in ptb:
                b = ptb[n]
                row += [repr(b.mean), repr(b.ci95[0]), repr(b.ci95[1])]
            else:
                row += ["", "", ""]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def _ratio_entry(num: Estimate, den: Estimate) -> dict:
    r = num.mean / den.mean
    se = r * math.hypot(num.stderr / num.mean, den.stderr / den.mean)
    return {"ratio": r, "stderr": se, "ci95": [r - Z95 * se, r + Z95 * se]}


def type_comparison(beta: float, scales: Sequence[int], replicates: int, seed: int,
                    truncation_factor: float = 8.0, threads: int = 1,
                    estimates: dict | None = None) -> tuple[list, dict]:
    """Point-to-box and conditioned box-to-box means relative to the endpoint proxy."""
    if len(scales) < 3:
        raise InvalidData("type comparison needs at least three scales")
    cache = dict(estimates or {})

    def get(q, n):
        if (q, n) not in cache:
            cache[(q, n)] = estimate(q, beta, n, replicates, seed, truncation_factor, threads)
        return cache[(q, n)]

    rows = []
    for n in scales:
        lam = get("lambda_pp", n)
        rows.append({
            "n": n,
            "point_to_box": _ratio_entry(get("point_to_box", n), lam),
            "box_to_box_conditioned": _ratio_entry(get("box_to_box_conditioned", n), lam),
        })
    band = {}
    for key in ("point_to_box", "box_to_box_conditioned"):
        vals = [r[key]["ratio"] for r in rows]
        band[key] = {"min": min(vals), "max": max(vals), "variation": max(vals) / min(vals)}
    return rows, band


def scaling_report(cfg: ScalingConfig) -> ScalingReport:
    scales = tuple(int(n) for n in cfg.scales)
    needed = [("lambda_pp", n) for n in scales] + [("point_to_box", n) for n in scales]
    needed += [("box_to_box_conditioned", n) for n in cfg.comparison_scales]
    for m, n in cfg.mult_pairs:
        for k in (m, n, m * n):
            needed.append(("mult", k))
    # one task list so a pool sees all work at once
    tasks, keys = [], []
    for q, n in dict.fromkeys(needed):
        quantity = "lambda_pp" if q == "mult" else q
        reps = cfg.mult_replicates if q == "mult" else cfg.replicates
        for c in _chunks(reps, cfg.chunk):
            tasks.append((quantity, cfg.beta, cfg.seed, n, c, cfg.truncation_factor, True))
            keys.append((q, n))
    parts = run_tasks(tasks, cfg.threads)
    acc: dict = {}
    for key, part in zip(keys, parts):
        acc[key] = acc.get(key, ReplicateSet()).merge(ReplicateSet(part))
    est = {}
    for (q, n), rs in acc.items():
        quantity = "lambda_pp" if q == "mult" else q
        est[(q, n)] = Estimate.from_values(n, quantity, rs.array())

    lam = [est[("lambda_pp", n)] for n in scales]
    ptb = [est[("point_to_box", n)] for n in scales]
    fit = fit_exponent(scales, [e.mean for e in lam], [e.stderr for e in lam], min_scales=min(4, len(scales)))
    fit2 = fit_exponent(scales, [e.mean for e in ptb], [e.stderr for e in ptb], min_scales=min(4, len(scales)))
    mult = multiplicativity_report(cfg.beta, cfg.mult_pairs, cfg.mult_replicates, cfg.seed,
                                   estimates={k: est[("mult", k)] for (q, k) in est if q == "mult"})
    comp = {}
    for n in cfg.comparison_scales:
        for q in ("lambda_pp", "point_to_box", "box_to_box_conditioned"):
            comp[(q, n)] = est[(q, n)]
    if len(cfg.comparison_scales) >= 3:
        rows, band = type_comparison(cfg.beta, cfg.comparison_scales, cfg.replicates, cfg.seed,
                                     cfg.truncation_factor, estimates=comp)
    else:
        rows, band = [], {}
    combined = math.hypot(fit.stderr, fit2.stderr)
    config = {
        "beta": cfg.beta, "scales": list(scales), "replicates": cfg.replicates, "seed": cfg.seed,
        "truncation_factor": cfg.truncation_factor, "mult_pairs": [list(p) for p in cfg.mult_pairs],
        "mult_replicates": cfg.mult_replicates, "type_scales": list(cfg.comparison_scales),
    }
    estimates = sorted((e for (q, n), e in est.items() if q != "mult"), key=lambda e: (e.quantity, e.n))
    return ScalingReport(
        beta=cfg.beta, config=config, estimates=estimates,
        delta_hat=fit.delta_hat, delta_stderr=fit.stderr, r_squared=fit.r_squared,
        point_to_box_fit={"delta_hat": fit2.delta_hat, "stderr": fit2.stderr, "r_squared": fit2.r_squared,
                          "difference": fit2.delta_hat - fit.delta_hat, "combined_stderr": combined},
        multiplicativity=mult, type_ratios=rows, type_band=band,
    )


def default_threads() -> int:
    return os.cpu_count() or 1
