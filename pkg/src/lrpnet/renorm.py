"""Block renormalisation of samples, interval classification and flow transfer between scales.

Blocks are ``I_i = [lo + i*m, lo + (i+1)*m)`` for ``i = 0..n-1``.  Edges that
leave the sampled window are invisible except through supernodes: a window
vertex with a supernode edge is treated as having a long edge to a point far
outside every block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph

from lrpnet.model import LrpSample, coupling_exponent
from lrpnet.solver import (
    InfiniteResistance,
    Network,
    electric_flow,
    hat_resistance,
    set_resistance,
)

FLOW_TOL = 1e-9


class InvalidScale(ValueError):
    pass


class InvalidFlow(ValueError):
    pass


class LiftInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class Flow:
    """Edge flow ``value[k]`` from ``u[k]`` to ``v[k]`` (negative values run backwards)."""

    u: np.ndarray
    v: np.ndarray
    value: np.ndarray

    @classmethod
    def from_result(cls, res) -> "Flow":
        V = res.vertices
        u = np.array([V[a] for a in res.edge_u], dtype=object)
        v = np.array([V[b] for b in res.edge_v], dtype=object)
        return cls(u, v, np.asarray(res.flow_array, dtype=float))

    @classmethod
    def from_dict(cls, flows: dict) -> "Flow":
        keys = list(flows)
        return cls(np.array([k[0] for k in keys], dtype=object),
                   np.array([k[1] for k in keys], dtype=object),
                   np.array([flows[k] for k in keys], dtype=float))

    def divergence(self) -> dict:
        out: dict = {}
        for a, b, f in zip(self.u, self.v, self.value):
            out[a] = out.get(a, 0.0) + f
            out[b] = out.get(b, 0.0) - f
        return out

    def as_dict(self) -> dict:
        """Antisymmetric map over ordered pairs, parallel entries summed."""
        out: dict = {}
        for a, b, f in zip(self.u, self.v, self.value):
            out[(a, b)] = out.get((a, b), 0.0) + f
            out[(b, a)] = out.get((b, a), 0.0) - f
        return out

    def energy(self) -> float:
        """``sum f^2`` over edges (unit conductances)."""
        return float(np.sum(self.value ** 2))

    def check_unit(self, source, sink, tol: float = FLOW_TOL):
        div = self.divergence()
        for x, d in div.items():
            want = 1.0 if x == source else (-1.0 if x == sink else 0.0)
            if abs(d - want) > tol:
                raise InvalidFlow(f"divergence {d:.3g} at {x!r}, expected {want}")
        for x, want in ((source, 1.0), (sink, -1.0)):
            if x not in div:
                raise InvalidFlow(f"terminal {x!r} carries no flow")


@dataclass
class RenormGraph:
    m: int
    n: int
    lo: int
    edges: np.ndarray  # (F, 2) block pairs i < j
    fine_backrefs: dict = field(repr=False)  # (i, j) -> (k, 2) fine edges (x in I_i, y in I_j)

    def block_of(self, x):
        return (np.asarray(x) - self.lo) // self.m

    def block_range(self, i: int) -> tuple[int, int]:
        """Inclusive fine range of block i."""
        return self.lo + i * self.m, self.lo + (i + 1) * self.m - 1

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def adjacency(self) -> sp.csr_matrix:
        e = self.edges
        return sp.coo_matrix((np.ones(e.shape[0]), (e[:, 0], e[:, 1])), shape=(self.n, self.n)).tocsr()


def renormalize(sample: LrpSample, m: int, lo: int | None = None) -> RenormGraph:
    if m < 1:
        raise InvalidScale(f"block length must be positive, got {m}")
    lo = sample.lo if lo is None else lo
    n = (sample.hi - lo + 1) // m
    if lo < sample.lo or n < 2:
        raise InvalidScale(f"window {sample.window} holds fewer than two blocks of length {m} from {lo}")
    e = sample.edges
    top = lo + n * m
    inside = (e[:, 0] >= lo) & (e[:, 1] < top)
    e = e[inside]
    b = (e - lo) // m
    cross = b[:, 0] != b[:, 1]
    e, b = e[cross], b[cross]
    order = np.lexsort((e[:, 1], e[:, 0], b[:, 1], b[:, 0]))
    e, b = e[order], b[order]
    backrefs = {}
    if b.size:
        change = np.flatnonzero(np.any(np.diff(b, axis=0) != 0, axis=1)) + 1
        starts = np.concatenate([[0], change])
        ends = np.concatenate([change, [b.shape[0]]])
        for s, t in zip(starts, ends):
            backrefs[(int(b[s, 0]), int(b[s, 1]))] = e[s:t]
        pairs = b[starts]
    else:
        pairs = np.zeros((0, 2), dtype=np.int64)
    return RenormGraph(m, n, lo, pairs.astype(np.int64), backrefs)


def analytic_marginal(beta: float, d: int, m: int) -> float:
    """Probability that blocks at distance ``d`` share a fine edge, from block-pair rates."""
    if d < 1 or m < 1:
        raise InvalidScale("need d >= 1 and m >= 1")
    if d == 1:
        return 1.0
    rate = math.fsum((m - abs(k - d * m)) * coupling_exponent(k)
                     for k in range((d - 1) * m + 1, (d + 1) * m))
    return -math.expm1(-beta * rate)


# internal energy ---------------------------------------------------------------

def internal_energy(a: Sequence[float], b: float) -> float:
    """Minimum of ``sum t_u^2 a_u + (1 - sum t_u)^2 b`` over ``t >= 0, sum t <= 1``.

    The unconstrained stationary point ``t_u = (1/a_u) / S`` with
    ``S = 1/b + sum 1/a_u`` already satisfies the constraints, so the minimum
    is ``1 / S``.  Infinite entries drop out.
    """
    a = np.asarray(a, dtype=float)
    if np.any(a == 0) or b == 0:
        return 0.0
    S = (0.0 if np.isinf(b) else 1.0 / b) + float(np.sum(1.0 / a))
    return math.inf if S == 0 else 1.0 / S


def internal_energy_minimiser(a: Sequence[float], b: float) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    S = 1.0 / b + float(np.sum(1.0 / a))
    return (1.0 / a) / S


def _project_capped_simplex(t: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``{t >= 0, sum t <= 1}``."""
    p = np.maximum(t, 0.0)
    if p.sum() <= 1.0:
        return p
    s = np.sort(t)[::-1]
    css = np.cumsum(s) - 1.0
    k = np.arange(1, t.size + 1)
    rho = np.flatnonzero(s - css / k > 0)[-1]
    return np.maximum(t - css[rho] / (rho + 1), 0.0)


def qp_oracle(a: Sequence[float], b: float, tol: float = 1e-14, max_iter: int = 100_000):
    """Accelerated projected gradient for the internal-energy quadratic program.

    Returns ``(value, theta)``.  Independent of the closed form; used to check it.
    """
    a = np.asarray(a, dtype=float)
    K = a.size
    if K == 0:
        return float(b), a.copy()

    def f(t):
        return float(np.sum(t * t * a) + (1.0 - t.sum()) ** 2 * b)

    def grad(t):
        return 2.0 * t * a - 2.0 * (1.0 - t.sum()) * b

    L = 2.0 * (a.max() + K * b)
    t = np.full(K, 1.0 / (K + 1))
    y, s = t.copy(), 1.0
    for _ in range(max_iter):
        t_new = _project_capped_simplex(y - grad(y) / L)
        step = np.max(np.abs(t_new - t))
        if s > 1.0 and f(t_new) > f(t):  # momentum overshoot: restart from t
            y, s = t.copy(), 1.0
            continue
        s_new = 0.5 * (1 + math.sqrt(1 + 4 * s * s))
        y = t_new + ((s - 1) / s_new) * (t_new - t)
        t, s = t_new, s_new
        if step < tol:
            break
    return f(t), t


# classification -------------------------------------------------------------------

@dataclass(frozen=True)
class ClassifyParams:
    M: int = 8
    delta: float = 0.2
    alpha1: float = 0.1
    alpha2: float = 0.05
    threshold_mode: str = "power"
    lambda_hat: float | None = None

    def __post_init__(self):
        if self.M < 0:
            raise ValueError("M must be nonnegative")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        for name in ("alpha1", "alpha2"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.threshold_mode not in ("power", "lambda-hat"):
            raise ValueError(f"unknown threshold mode {self.threshold_mode!r}")
        if self.threshold_mode == "lambda-hat" and not (self.lambda_hat and self.lambda_hat > 0):
            raise ValueError("lambda-hat mode needs a positive lambda_hat")

    def threshold(self, m: int) -> float:
        scale = m ** self.delta if self.threshold_mode == "power" else self.lambda_hat
        return self.alpha2 * scale


@dataclass(frozen=True)
class IntervalClassification:
    block: int
    K: tuple
    xi: int
    eta: int
    m_good: bool
    cond1: bool | None
    cond2: bool | None
    cond3: bool | None
    very_good: bool | None
    internal_energy: float | None
    indeterminate: bool = False

    @property
    def strongly_very_good(self) -> bool | None:
        """M-good together with all three conditions."""
        if self.indeterminate:
            return None
        return bool(self.m_good and self.cond1 and self.cond2 and self.cond3)


class _BlockContext:
    """Per-sample edge bookkeeping shared by all blocks."""

    def __init__(self, sample: LrpSample, m: int, lo: int):
        self.sample, self.m, self.lo = sample, m, lo
        e = sample.edges
        self.long = e[e[:, 1] - e[:, 0] >= 2]
        ends = [self.long[:, 0], self.long[:, 1]]
        others = [self.long[:, 1], self.long[:, 0]]
        # (endpoint, other end) for every long edge, both orientations
        self.end = np.concatenate(ends)
        self.other = np.concatenate(others)
        self.edge_id = np.concatenate([np.arange(self.long.shape[0])] * 2)
        ext_v = []
        for s in sample.supernodes:
            ext_v.append(np.repeat(s.vertices, s.counts))
        self.ext = np.sort(np.concatenate(ext_v)) if ext_v else np.zeros(0, dtype=np.int64)

    def block(self, i):
        a = self.lo + i * self.m
        return a, a + self.m - 1


def _cond1(ctx: _BlockContext, i: int, alpha1: float) -> bool:
    a, b = ctx.block(i)
    m = ctx.m
    far_lo, far_hi = a - m, b + m
    sel = (ctx.end >= a) & (ctx.end <= b) & ((ctx.other < a) | (ctx.other > b))
    pos_in = list(ctx.end[sel])
    ids_in = list(ctx.edge_id[sel])
    far = sel & ((ctx.other < far_lo) | (ctx.other > far_hi))
    pos_out = list(ctx.end[far])
    ids_out = list(ctx.edge_id[far])
    # nearest-neighbour edges entering the block
    if a - 1 >= ctx.sample.lo:
        pos_in.append(a)
        ids_in.append(-1)
    if b + 1 <= ctx.sample.hi:
        pos_in.append(b)
        ids_in.append(-2)
    ext = ctx.ext[(ctx.ext >= a) & (ctx.ext <= b)]
    base = ctx.long.shape[0]
    ext_ids = list(range(base, base + ext.size))
    pos_in += list(ext)
    ids_in += ext_ids
    pos_out += list(ext)
    ids_out += ext_ids
    reach = alpha1 * m
    for p, k in zip(pos_out, ids_out):
        for q, j in zip(pos_in, ids_in):
            if j != k and abs(p - q) < reach:
                return False
    return True


def _boundary_points(ctx: _BlockContext, i: int) -> np.ndarray:
    a, b = ctx.block(i)
    m = ctx.m
    sel = (ctx.end >= a) & (ctx.end <= b) & ((ctx.other < a - m) | (ctx.other > b + m))
    ext = ctx.ext[(ctx.ext >= a) & (ctx.ext <= b)]
    return np.unique(np.concatenate([ctx.end[sel], ext]))


def point_to_ball_resistance(sample: LrpSample, u: int, block: tuple[int, int], radius: float) -> float:
    """``R_I(u, B_r(u)^c)`` inside the block I, with the closed ball ``|v - u| <= r``."""
    a, b = block
    targets = [v for v in range(a, b + 1) if abs(v - u) > radius]
    if not targets:
        return math.inf
    net = Network.from_sample(sample, (a, b), supernodes=False)
    try:
        return set_resistance(net, [u], targets).value
    except InfiniteResistance:
        return math.inf


def classify(sample: LrpSample, m: int, params: ClassifyParams = ClassifyParams(),
             lo: int | None = None, blocks: Sequence[int] | None = None) -> list[IntervalClassification]:
    rg = renormalize(sample, m, lo)
    ctx = _BlockContext(sample, m, rg.lo)
    deg = rg.degrees()
    thr = params.threshold(m)
    out = []
    for i in (range(rg.n) if blocks is None else blocks):
        K = _boundary_points(ctx, i)
        xi = int(K.size)
        m_good = xi <= params.M
        if i == 0 or i == rg.n - 1:
            out.append(IntervalClassification(i, tuple(int(k) for k in K), xi, int(deg[i]), m_good,
                                              None, None, None, None, None, True))
            continue
        block = ctx.block(i)
        c1 = _cond1(ctx, i, params.alpha1)
        a_vals = [point_to_ball_resistance(sample, int(u), block, params.alpha1 * m) for u in K]
        x1, x2 = ctx.block(i - 1)
        x3, x4 = ctx.block(i + 1)
        b_val = hat_resistance(sample, x2, x3, x1, x4).value
        energy = internal_energy(a_vals, b_val)
        c2 = all(v >= thr for v in a_vals)
        c3 = b_val >= thr
        vg = bool(c1 and energy >= thr)
        out.append(IntervalClassification(i, tuple(int(k) for k in K), xi, int(deg[i]), m_good,
                                          c1, c2, c3, vg, energy, False))
    return out


def red_flags(classes: Sequence[IntervalClassification], n: int) -> np.ndarray:
    """Boolean 'not very good' per block; indeterminate blocks count as not red."""
    red = np.zeros(n, dtype=bool)
    for c in classes:
        red[c.block] = (not c.indeterminate) and not c.very_good
    return red


@dataclass(frozen=True)
class RedComponents:
    components: list
    sizes: np.ndarray
    survival: np.ndarray  # survival[k-1] = fraction of components with size >= k


def red_components(rg: RenormGraph, red: np.ndarray) -> RedComponents:
    red = np.asarray(red, dtype=bool)
    if red.size != rg.n:
        raise ValueError(f"flags have length {red.size}, graph has {rg.n} vertices")
    idx = np.flatnonzero(red)
    if idx.size == 0:
        return RedComponents([], np.zeros(0, dtype=int), np.zeros(0))
    A = rg.adjacency()[idx][:, idx]
    _, labels = csgraph.connected_components(A, directed=False)
    comps = [sorted(int(v) for v in idx[labels == k]) for k in range(labels.max() + 1)]
    comps.sort(key=lambda c: c[0])
    sizes = np.array([len(c) for c in comps])
    ks = np.arange(1, sizes.max() + 1)
    survival = np.array([(sizes >= k).mean() for k in ks])
    return RedComponents(comps, sizes, survival)


# flow transfer ------------------------------------------------------------------

def project_flow(f: Flow, rg: RenormGraph, source=None, sink=None) -> Flow:
    """Sum fine flows between blocks; intra-block flow disappears.

    With ``source``/``sink`` given, ``f`` is first checked to be a unit flow
    between those fine vertices.
    """
    if source is not None:
        f.check_unit(source, sink)
    u = np.asarray(f.u, dtype=np.int64)
    v = np.asarray(f.v, dtype=np.int64)
    bu, bv = rg.block_of(u), rg.block_of(v)
    ok = (bu >= 0) & (bu < rg.n) & (bv >= 0) & (bv < rg.n)
    if not np.all(ok | (f.value == 0)):
        raise InvalidFlow("flow leaves the renormalised window")
    cross = ok & (bu != bv)
    a, b, val = bu[cross], bv[cross], f.value[cross]
    flip = a > b
    a, b, val = np.where(flip, b, a), np.where(flip, a, b), np.where(flip, -val, val)
    key = a * rg.n + b
    uniq, inv = np.unique(key, return_inverse=True)
    tot = np.bincount(inv, weights=val, minlength=uniq.size)
    return Flow(uniq // rg.n, uniq % rg.n, tot)


def representative_edge(rg: RenormGraph, i: int, j: int) -> tuple[int, int]:
    """Shortest fine edge joining blocks i and j, ties broken lexicographically.

    Returned oriented as ``(x in I_i, y in I_j)``.
    """
    key = (min(i, j), max(i, j))
    cand = rg.fine_backrefs.get(key)
    if cand is None or cand.shape[0] == 0:
        raise LiftInfeasible(f"no fine edge joins blocks {i} and {j}")
    length = cand[:, 1] - cand[:, 0]
    best = cand[length == length.min()]
    x, y = (int(t) for t in best[np.lexsort((best[:, 1], best[:, 0]))][0])
    return (x, y) if i < j else (y, x)


@dataclass(frozen=True)
class LiftResult:
    flow: Flow
    representatives: dict  # (i, j) with i < j -> (x, y)
    block_inflow: dict  # block -> total mass routed through it
    block_max_resistance: dict  # block -> max over entry/exit pairs of R_{I_i}


def lift_flow(g: Flow, rg: RenormGraph, sample: LrpSample, source: int, sink: int,
              with_bound: bool = False) -> LiftResult:
    """Lift a renormalised unit flow to a fine unit flow from ``source`` to ``sink``.

    Each renormalised edge's flow runs on its representative fine edge.
    Inside every block the incoming mass is matched to the outgoing mass by
    the product coupling; routing each matched pair by its internal unit
    electric flow and summing is the same, by linearity, as one electric flow
    for the aggregated demand, which is what is computed.
    """
    sb, tb = int(rg.block_of(source)), int(rg.block_of(sink))
    g.check_unit(sb, tb)
    fine_u, fine_v, fine_f = [], [], []
    reps = {}
    demand: dict[int, dict[int, float]] = {}
    entries: dict[int, set] = {}
    exits: dict[int, set] = {}
    inflow: dict[int, float] = {}

    def add(block, vertex, amount):
        d = demand.setdefault(block, {})
        d[vertex] = d.get(vertex, 0.0) + amount

    for i, j, val in zip(g.u, g.v, g.value):
        i, j, val = int(i), int(j), float(val)
        if val == 0:
            continue
        if val < 0:
            i, j, val = j, i, -val
        x, y = representative_edge(rg, i, j)
        reps[(min(i, j), max(i, j))] = (x, y) if i < j else (y, x)
        fine_u.append(x)
        fine_v.append(y)
        fine_f.append(val)
        add(i, x, val)  # leaves block i at x
        add(j, y, -val)  # enters block j at y
        exits.setdefault(i, set()).add(x)
        entries.setdefault(j, set()).add(y)
        inflow[j] = inflow.get(j, 0.0) + val
    add(sb, source, -1.0)
    inflow[sb] = inflow.get(sb, 0.0) + 1.0
    entries.setdefault(sb, set()).add(source)
    add(tb, sink, 1.0)
    exits.setdefault(tb, set()).add(sink)

    max_r = {}
    for blk, d in sorted(demand.items()):
        a, b = rg.block_range(blk)
        # demand here is net outflow to other blocks; the internal flow must
        # carry mass from entry points to exit points
        internal = {v: -x for v, x in d.items() if abs(x) > 0}
        if not internal or all(abs(x) < 1e-15 for x in internal.values()):
            continue
        net = Network.from_sample(sample, (a, b), supernodes=False)
        res = electric_flow(net, internal)
        fl = Flow.from_result(res)
        fine_u.extend(fl.u.tolist())
        fine_v.extend(fl.v.tolist())
        fine_f.extend(fl.value.tolist())
        if with_bound:
            worst = 0.0
            for y in entries.get(blk, ()):
                for x in exits.get(blk, ()):
                    if x != y:
                        worst = max(worst, set_resistance(net, [y], [x]).value)
            max_r[blk] = worst
    f = Flow(np.array(fine_u, dtype=object), np.array(fine_v, dtype=object), np.array(fine_f, dtype=float))
    f.check_unit(source, sink, tol=1e-8)
    return LiftResult(f, reps, inflow, max_r)
