"""Exact electric-network identities: flow comparison, rank-one inverse update, cutset bounds."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Hashable, Iterator, Sequence

import numpy as np
import scipy.sparse.csgraph as csgraph
import scipy.sparse as sp

from lrpnet.solver import Network, NumericError, two_point_resistance

FLOW_TOL = 1e-9


class NotApplicable(Exception):
    """The instance does not meet the preconditions of the comparison."""


class CertificateInvalid(ValueError):
    pass


class TooLarge(ValueError):
    pass


def _flow_on(res, u, v) -> float:
    return res.flow.get((u, v), 0.0)


@dataclass(frozen=True)
class ComparisonInstance:
    net: Network
    x: Hashable
    y: Hashable
    w: Hashable
    w1: Hashable
    w2: Hashable
    delta_c: float

    def __post_init__(self):
        if len({self.w, self.w1, self.w2}) != 3:
            raise ValueError("w, w1, w2 must be distinct")
        if self.delta_c < 0:
            raise ValueError("delta_c must be nonnegative")


@dataclass(frozen=True)
class ComparisonOutcome:
    g_before: float
    g_after: float
    holds: bool


def flow_comparison(inst: ComparisonInstance) -> ComparisonOutcome:
    """Flow on ``w1 -> w`` before and after raising the conductance of ``w2 -- w``.

    Requires positive base flow on both ``w1 -> w`` and ``w2 -> w``.
    """
    before = two_point_resistance(inst.net, inst.x, inst.y)
    g1 = _flow_on(before, inst.w1, inst.w)
    g2 = _flow_on(before, inst.w2, inst.w)
    if not (g1 > 0 and g2 > 0):
        raise NotApplicable(f"base flows g(w1,w)={g1:.3g}, g(w2,w)={g2:.3g} must both be positive")
    if inst.delta_c == 0:
        return ComparisonOutcome(g1, g1, True)
    after = two_point_resistance(inst.net.with_conductance_added(inst.w2, inst.w, inst.delta_c), inst.x, inst.y)
    g1p = _flow_on(after, inst.w1, inst.w)
    return ComparisonOutcome(g1, g1p, g1p <= g1 + FLOW_TOL)


def random_connected_network(rng: np.random.Generator, n: int, extra: int | None = None,
                             cond_range=(0.2, 3.0)) -> Network:
    """Random spanning tree plus extra edges, conductances log-uniform in ``cond_range``."""
    edges = set()
    order = rng.permutation(n)
    for k in range(1, n):
        a, b = order[k], order[rng.integers(0, k)]
        edges.add((min(a, b), max(a, b)))
    if extra is None:
        extra = int(rng.integers(0, n * (n - 1) // 2 - (n - 1) + 1))
    pairs = [(a, b) for a in range(n) for b in range(a + 1, n) if (a, b) not in edges]
    rng.shuffle(pairs)
    edges.update(tuple(p) for p in pairs[:extra])
    edges = sorted(edges)
    lo, hi = np.log(cond_range[0]), np.log(cond_range[1])
    c = np.exp(rng.uniform(lo, hi, len(edges)))
    return Network(list(range(n)), [e[0] for e in edges], [e[1] for e in edges], c)


@dataclass
class InstanceStats:
    accepted: int = 0
    rejected: int = 0

    @property
    def rejection_rate(self) -> float:
        total = self.accepted + self.rejected
        return self.rejected / total if total else 0.0


def random_comparison_instances(rng: np.random.Generator, count: int, max_vertices: int = 12,
                                stats: InstanceStats | None = None) -> Iterator[ComparisonInstance]:
    """Rejection-sample applicable instances: random graph, terminals and triple."""
    stats = stats if stats is not None else InstanceStats()
    while stats.accepted < count:
        n = int(rng.integers(4, max_vertices + 1))
        net = random_connected_network(rng, n)
        x, y = (int(v) for v in rng.choice(n, 2, replace=False))
        w, w1, w2 = (int(v) for v in rng.choice(n, 3, replace=False))
        res = two_point_resistance(net, x, y)
        if _flow_on(res, w1, w) > 1e-12 and _flow_on(res, w2, w) > 1e-12:
            stats.accepted += 1
            delta = float(rng.exponential(2.0))
            yield ComparisonInstance(net, x, y, w, w1, w2, delta)
        else:
            stats.rejected += 1


@dataclass(frozen=True)
class RankOneUpdate:
    Z: np.ndarray
    Z_prime: np.ndarray
    c_hat: float
    C_prime: np.ndarray
    ground: Hashable

    @property
    def residual(self) -> float:
        """``max |Z' C' - I|``."""
        return float(np.max(np.abs(self.Z_prime @ self.C_prime - np.eye(self.C_prime.shape[0]))))


def grounded_laplacian(net: Network, ground: Hashable) -> tuple[np.ndarray, list]:
    keep = [v for v in net.vertices if v != ground]
    L = net.laplacian().toarray()
    idx = [net.index[v] for v in keep]
    return L[np.ix_(idx, idx)], keep


def rank_one_update(net: Network, w2: Hashable, w: Hashable, delta_c: float,
                    ground: Hashable | None = None) -> RankOneUpdate:
    """Sherman-Morrison update of the grounded inverse after adding ``delta_c`` to ``w2 -- w``.

    The default ground is the last vertex of the network.
    """
    if delta_c < 0:
        raise ValueError("delta_c must be nonnegative")
    ground = net.vertices[-1] if ground is None else ground
    C, keep = grounded_laplacian(net, ground)
    pos = {v: k for k, v in enumerate(keep)}
    try:
        Z = np.linalg.inv(C)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"grounded Laplacian is singular: {exc}") from exc
    if not np.all(np.isfinite(Z)) or np.linalg.cond(C) > 1e14:
        raise NumericError("grounded Laplacian is numerically singular")
    D = np.zeros(len(keep))
    if w2 != ground:
        D[pos[w2]] += 1.0
    if w != ground:
        D[pos[w]] -= 1.0
    ZD = Z @ D
    c_hat = delta_c / (1.0 + delta_c * float(D @ ZD))
    Zp = Z - c_hat * np.outer(ZD, ZD)
    Cp = C + delta_c * np.outer(D, D)
    return RankOneUpdate(Z, Zp, c_hat, Cp, ground)


# cutsets ---------------------------------------------------------------------

EdgeKey = tuple  # (u, v) as stored in the network, u listed first


def _edge_keys(net: Network) -> list[EdgeKey]:
    V = net.vertices
    return [(V[a], V[b]) for a, b in zip(net.eu, net.ev)]


def _separates(net: Network, removed: np.ndarray, u: Hashable, v: Hashable) -> bool:
    keep = ~removed
    N = net.size
    A = sp.coo_matrix((np.ones(int(keep.sum())), (net.eu[keep], net.ev[keep])), shape=(N, N))
    _, labels = csgraph.connected_components(A, directed=False)
    return labels[net.index[u]] != labels[net.index[v]]


@dataclass
class CutsetCertificate:
    u: Hashable
    v: Hashable
    cutsets: list[frozenset]  # each a set of edge keys
    assignment: dict = field(default_factory=dict)  # (edge key, cutset index) -> c_{e,pi}


def _normalise_key(net: Network, e) -> EdgeKey:
    a, b = e
    ia, ib = net.index[a], net.index[b]
    return (a, b) if ia < ib else (b, a)


def cutset_bound(cert: CutsetCertificate, net: Network, check_paths: bool = True) -> float:
    """``sum_pi 1 / sum_{e in pi} c_{e,pi}``, a lower bound on R(u, v) for feasible certificates.

    Missing assignment entries are read as ``c = +inf`` (no contribution to
    the constraint; an edge of a cutset with infinite weight makes that
    cutset contribute zero).
    """
    keys = _edge_keys(net)
    kidx = {k: j for j, k in enumerate(keys)}
    cuts = [frozenset(_normalise_key(net, e) for e in pi) for pi in cert.cutsets]
    for pi in cuts:
        for e in pi:
            if e not in kidx:
                raise CertificateInvalid(f"cutset edge {e} is not in the network")
        if check_paths:
            mask = np.zeros(len(keys), dtype=bool)
            mask[[kidx[e] for e in pi]] = True
            if not _separates(net, mask, cert.u, cert.v):
                raise CertificateInvalid(f"edge set {sorted(pi, key=repr)} does not cut {cert.u!r} from {cert.v!r}")
    load = np.zeros(len(keys))
    assign = {}
    for (e, p), c in cert.assignment.items():
        if not c > 0:
            raise CertificateInvalid(f"assignment for edge {e} in cutset {p} must be positive")
        e = _normalise_key(net, e)
        assign[(e, p)] = c
        load[kidx[e]] += 1.0 / c
    r = 1.0 / net.c
    over = load > r * (1 + 1e-12)
    if over.any():
        j = int(np.flatnonzero(over)[0])
        raise CertificateInvalid(
            f"edge {keys[j]} violates feasibility: sum 1/c = {load[j]:.6g} > r = {r[j]:.6g}"
        )
    total = 0.0
    for p, pi in enumerate(cuts):
        s = 0.0
        for e in pi:
            c = assign.get((e, p), np.inf)
            s += c
        if s < np.inf:
            total += 1.0 / s
    return total


def optimal_certificate(net: Network, u: Hashable, v: Hashable) -> CutsetCertificate:
    """Level-set certificate from the electric potential; its bound equals R(u, v).

    Each gap between consecutive potential values gives the cutset of edges
    spanning it.  With gap length ``l_k`` and ``c_{e,pi_k} = c_e |dU_e| / l_k``
    every edge meets the constraint with equality and each cutset carries
    unit current, so the bound sums the gaps.
    """
    res = two_point_resistance(net, u, v)
    U = res.potential_array
    keys = _edge_keys(net)
    levels = np.unique(np.round(U, 14))[::-1]
    Ua, Ub = U[net.eu], U[net.ev]
    top, bot = np.maximum(Ua, Ub), np.minimum(Ua, Ub)
    layers = []
    span = np.zeros(len(keys))  # summed gaps per edge, equal to |dU_e| up to rounding
    for k in range(levels.size - 1):
        hi, lo = levels[k], levels[k + 1]
        mid = 0.5 * (hi + lo)
        members = np.flatnonzero((top > mid) & (bot < mid))
        layers.append((hi - lo, members))
        span[members] += hi - lo
    cutsets, assignment = [], {}
    for p, (gap, members) in enumerate(layers):
        cutsets.append(frozenset(keys[j] for j in members))
        for j in members:
            # normalising by the summed gaps keeps sum 1/c on the feasibility boundary
            assignment[(keys[j], p)] = net.c[j] * span[j] / gap
    return CutsetCertificate(u, v, cutsets, assignment)


ENUMERATION_LIMIT = 16


def _connected(nodes: set, adj: dict) -> bool:
    if not nodes:
        return False
    start = next(iter(nodes))
    seen, stack = {start}, [start]
    while stack:
        x = stack.pop()
        for y in adj[x]:
            if y in nodes and y not in seen:
                seen.add(y)
                stack.append(y)
    return len(seen) == len(nodes)


def enumerate_cutsets(net: Network, u: Hashable, v: Hashable, method: str = "vertices") -> list[frozenset]:
    """All minimal edge cutsets between u and v.

    ``method="edges"`` tests every edge subset for separation and keeps the
    minimal ones.  ``method="vertices"`` (default, much faster) uses the
    equivalent description of a minimal cut as the boundary of a vertex set
    S containing u but not v such that S and its complement both induce
    connected subgraphs.
    """
    E = net.eu.size
    if E > ENUMERATION_LIMIT:
        raise TooLarge(f"cutset enumeration limited to {ENUMERATION_LIMIT} edges, got {E}")
    keys = _edge_keys(net)
    if method == "edges":
        cuts = set()
        for mask_int in range(1, 1 << E):
            mask = np.array([(mask_int >> j) & 1 for j in range(E)], dtype=bool)
            if _separates(net, mask, u, v):
                cuts.add(mask_int)
        minimal = []
        for m in sorted(cuts):
            if all((m & ~(1 << j)) not in cuts for j in range(E) if m >> j & 1):
                minimal.append(frozenset(keys[j] for j in range(E) if m >> j & 1))
        return sorted(minimal, key=lambda c: sorted(map(repr, c)))
    if method != "vertices":
        raise ValueError(f"unknown method {method!r}")
    N = net.size
    iu, iv = net.index[u], net.index[v]
    adj = {k: set() for k in range(N)}
    for a, b in zip(net.eu, net.ev):
        adj[int(a)].add(int(b))
        adj[int(b)].add(int(a))
    rest = [k for k in range(N) if k not in (iu, iv)]
    out = []
    for r in range(len(rest) + 1):
        for extra in itertools.combinations(rest, r):
            S = {iu, *extra}
            T = set(range(N)) - S
            if _connected(S, adj) and _connected(T, adj):
                cut = frozenset(keys[j] for j in range(E) if (net.eu[j] in S) != (net.ev[j] in S))
                out.append(cut)
    return sorted(out, key=lambda c: sorted(map(repr, c)))


def random_feasible_certificate(net: Network, u: Hashable, v: Hashable, rng: np.random.Generator,
                                cutsets: Sequence[frozenset] | None = None) -> CutsetCertificate:
    """Random subset of minimal cutsets with random weights scaled into feasibility."""
    if cutsets is None:
        cutsets = enumerate_cutsets(net, u, v)
    k = int(rng.integers(1, len(cutsets) + 1))
    chosen = [cutsets[j] for j in sorted(rng.choice(len(cutsets), k, replace=False))]
    keys = _edge_keys(net)
    kidx = {e: j for j, e in enumerate(keys)}
    raw = {}
    load = np.zeros(len(keys))
    for p, pi in enumerate(chosen):
        for e in pi:
            c = float(rng.exponential(1.0)) + 1e-3
            raw[(e, p)] = c
            load[kidx[e]] += 1.0 / c
    r = 1.0 / net.c
    scale = np.maximum(load / r, 1e-300) * rng.uniform(1.0, 1.5, len(keys))
    assignment = {(e, p): c * scale[kidx[e]] for (e, p), c in raw.items()}
    return CutsetCertificate(u, v, chosen, assignment)


def series_parallel_network(rng: np.random.Generator, ops: int) -> tuple[Network, Hashable, Hashable, float]:
    """Random series-parallel network between terminals 's' and 't' with its exact resistance.

    Built by repeatedly replacing a random edge with two edges in series or
    in parallel; the returned resistance comes from the series/parallel laws.
    """
    # tree of compositions: leaves are resistances
    counter = itertools.count()
    nodes = {"s": None, "t": None}

    def build(depth_left):
        if depth_left == 0 or rng.random() < 0.25:
            return ("leaf", float(np.exp(rng.uniform(np.log(0.2), np.log(3.0)))))
        kind = "series" if rng.random() < 0.5 else "parallel"
        split = int(rng.integers(0, depth_left))
        return (kind, build(split), build(depth_left - 1 - split))

    def resistance(t):
        if t[0] == "leaf":
            return t[1]
        a, b = resistance(t[1]), resistance(t[2])
        return a + b if t[0] == "series" else a * b / (a + b)

    edges = []

    def realise(t, a, b):
        if t[0] == "leaf":
            edges.append((a, b, 1.0 / t[1]))
        elif t[0] == "series":
            mid = next(counter)
            nodes[mid] = None
            realise(t[1], a, mid)
            realise(t[2], mid, b)
        else:
            realise(t[1], a, b)
            realise(t[2], a, b)

    tree = build(ops)
    realise(tree, "s", "t")
    net = Network.from_edges(edges, vertices=list(nodes))
    return net, "s", "t", resistance(tree)


# suites ------------------------------------------------------------------------------

SUITES = ("solver", "flow-comparison", "rank-one", "cutset")


def _suite_solver(rng, trials):
    from lrpnet.solver import brute_force_resistance

    worst, failures = 0.0, 0
    for _ in range(trials):
        n = int(rng.integers(2, 9))
        net = random_connected_network(rng, n)
        a, b = (int(x) for x in rng.choice(n, 2, replace=False))
        err = abs(two_point_resistance(net, a, b).value - brute_force_resistance(net, [a], [b]))
        worst = max(worst, err)
        failures += err > 1e-9
    return failures, worst, {}


def _suite_flow(rng, trials):
    stats = InstanceStats()
    worst, failures = -np.inf, 0
    for inst in random_comparison_instances(rng, trials, stats=stats):
        out = flow_comparison(inst)
        worst = max(worst, out.g_after - out.g_before)
        failures += not out.holds
    return failures, float(worst), {"rejection_rate": stats.rejection_rate}


def _suite_rank_one(rng, trials):
    worst, failures, nonpositive = 0.0, 0, 0
    for t in range(trials):
        n = int(rng.integers(3, 10))
        net = random_connected_network(rng, n)
        w2, w = (int(x) for x in rng.choice(n, 2, replace=False))
        ground = w if t % 2 == 0 else int(rng.choice([k for k in range(n) if k not in (w, w2)]))
        upd = rank_one_update(net, w2, w, float(rng.exponential(2.0)) + 1e-3, ground=ground)
        Zd = np.linalg.inv(upd.C_prime)
        err = max(upd.residual, float(np.max(np.abs(Zd - upd.Z_prime))))
        worst = max(worst, err)
        bad = upd.residual >= 1e-9 or not upd.c_hat > 0
        nonpositive += not upd.c_hat > 0
        failures += bad
    return failures, worst, {"nonpositive_c_hat": nonpositive}


def _suite_cutset(rng, trials):
    worst, failures, sp_worst = -np.inf, 0, 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 9))
        net = random_connected_network(rng, n, extra=int(rng.integers(0, 6)))
        a, b = (int(x) for x in rng.choice(n, 2, replace=False))
        R = two_point_resistance(net, a, b).value
        cert = random_feasible_certificate(net, a, b, rng)
        gap = cutset_bound(cert, net) - R
        worst = max(worst, gap)
        failures += gap > 1e-9
        spn, s, t, Rsp = series_parallel_network(rng, int(rng.integers(1, 8)))
        err = abs(cutset_bound(optimal_certificate(spn, s, t), spn) - Rsp)
        sp_worst = max(sp_worst, err)
        failures += err > 1e-8
    return failures, float(worst), {"series_parallel_worst_gap": float(sp_worst)}


def run_suite(name: str, trials: int, seed: int) -> dict:
    """Run one randomised identity suite; returns ``{suite, trials, failures, worst_violation, ...}``."""
    from lrpnet import streams

    funcs = {"solver": _suite_solver, "flow-comparison": _suite_flow,
             "rank-one": _suite_rank_one, "cutset": _suite_cutset}
    if name not in funcs:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    rng = streams.bootstrap_generator(seed, SUITES.index(name) + 101)
    failures, worst, extra = funcs[name](rng, trials)
    report = {"suite": name, "trials": trials, "failures": int(failures), "worst_violation": float(worst)}
    report.update(extra)
    return report
