"""Effective resistances, potentials and unit electric flows on finite networks."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from lrpnet.model import LrpSample

DENSE_LIMIT = 2000
RESIDUAL_TOL = 1e-10


class InfiniteResistance(Exception):
    """Terminals lie in different components; the resistance is +inf."""


class NumericError(ArithmeticError):
    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats or {}


class InvalidQuery(ValueError):
    pass


class TooLarge(ValueError):
    pass


class Network:
    """Finite conductance network with parallel edges folded.

    ``vertices`` may mix integers and string labels.  Edges are stored as
    index arrays ``eu < ev`` with conductance ``c``.
    """

    def __init__(self, vertices: Sequence[Hashable], eu, ev, c, fold: bool = True):
        self.vertices = list(vertices)
        self.index = {v: k for k, v in enumerate(self.vertices)}
        if len(self.index) != len(self.vertices):
            raise ValueError("duplicate vertex ids")
        eu = np.asarray(eu, dtype=np.int64)
        ev = np.asarray(ev, dtype=np.int64)
        c = np.asarray(c, dtype=np.float64)
        if c.size and not np.all(c > 0):
            raise ValueError("conductances must be positive")
        a, b = np.minimum(eu, ev), np.maximum(eu, ev)
        keep = a != b
        a, b, c = a[keep], b[keep], c[keep]
        if fold and a.size:
            N = len(self.vertices)
            key = a * N + b
            uniq, inv = np.unique(key, return_inverse=True)
            c = np.bincount(inv, weights=c, minlength=uniq.size)
            a, b = uniq // N, uniq % N
        self.eu, self.ev, self.c = a, b, c

    @property
    def size(self) -> int:
        return len(self.vertices)

    @classmethod
    def from_edges(cls, edges: Iterable, vertices: Sequence[Hashable] | None = None) -> "Network":
        """Build from ``(u, v)`` or ``(u, v, conductance)`` tuples."""
        edges = list(edges)
        if vertices is None:
            seen = {}
            for e in edges:
                seen.setdefault(e[0], None)
                seen.setdefault(e[1], None)
            vertices = list(seen)
        idx = {v: k for k, v in enumerate(vertices)}
        eu = [idx[e[0]] for e in edges]
        ev = [idx[e[1]] for e in edges]
        c = [float(e[2]) if len(e) > 2 else 1.0 for e in edges]
        return cls(vertices, eu, ev, c)

    @classmethod
    def from_sample(cls, sample: LrpSample, window: tuple[int, int] | None = None,
                    supernodes: bool = True) -> "Network":
        """Unit-conductance network of a sample, optionally restricted to a window."""
        lo, hi = window if window is not None else sample.window
        verts: list[Hashable] = list(range(lo, hi + 1))
        e = sample.edges
        inside = (e[:, 0] >= lo) & (e[:, 1] <= hi)
        eu = [e[inside, 0] - lo]
        ev = [e[inside, 1] - lo]
        cs = [np.ones(int(inside.sum()))]
        if supernodes:
            for s in sample.supernodes:
                sel = (s.vertices >= lo) & (s.vertices <= hi)
                k = len(verts)
                verts.append(s.label)
                eu.append(s.vertices[sel] - lo)
                ev.append(np.full(int(sel.sum()), k, dtype=np.int64))
                cs.append(s.counts[sel].astype(np.float64))
        return cls(verts, np.concatenate(eu), np.concatenate(ev), np.concatenate(cs))

    def edge_list(self) -> list[tuple[Hashable, Hashable, float]]:
        V = self.vertices
        return [(V[a], V[b], float(c)) for a, b, c in zip(self.eu, self.ev, self.c)]

    def adjacency(self) -> sp.csr_matrix:
        N = self.size
        return sp.coo_matrix(
            (np.concatenate([self.c, self.c]),
             (np.concatenate([self.eu, self.ev]), np.concatenate([self.ev, self.eu]))),
            shape=(N, N),
        ).tocsr()

    def laplacian(self) -> sp.csr_matrix:
        A = self.adjacency()
        deg = np.asarray(A.sum(axis=1)).ravel()
        return (sp.diags(deg) - A).tocsr()

    def components(self) -> np.ndarray:
        _, labels = csgraph.connected_components(self.adjacency(), directed=False)
        return labels

    def contract(self, groups: Mapping[Hashable, Iterable[Hashable]]) -> "Network":
        """Merge each vertex group into one vertex named by its key; internal edges vanish."""
        target = np.arange(self.size)
        new_vertices: list[Hashable] = []
        merged = {}
        for label, members in groups.items():
            for v in members:
                if v not in self.index:
                    raise InvalidQuery(f"vertex {v!r} not in network")
                if v in merged:
                    raise InvalidQuery(f"vertex {v!r} assigned to two groups")
                merged[v] = label
        order = {}
        for k, v in enumerate(self.vertices):
            lab = merged.get(v, v)
            if lab not in order:
                if lab in self.index and lab not in merged and lab != v:
                    raise InvalidQuery(f"group label {lab!r} collides with a vertex")
                order[lab] = len(new_vertices)
                new_vertices.append(lab)
            target[k] = order[lab]
        return Network(new_vertices, target[self.eu], target[self.ev], self.c)

    def with_edges_removed(self, mask: np.ndarray) -> "Network":
        net = Network.__new__(Network)
        net.vertices, net.index = self.vertices, self.index
        net.eu, net.ev, net.c = self.eu[~mask], self.ev[~mask], self.c[~mask]
        return net

    def with_conductance_added(self, u, v, delta: float) -> "Network":
        a, b = self.index[u], self.index[v]
        return Network(self.vertices, np.append(self.eu, a), np.append(self.ev, b),
                       np.append(self.c, delta))

    def induced(self, keep: Iterable[Hashable]) -> "Network":
        keep = [v for v in self.vertices if v in set(keep)]
        pos = np.full(self.size, -1)
        for k, v in enumerate(keep):
            pos[self.index[v]] = k
        sel = (pos[self.eu] >= 0) & (pos[self.ev] >= 0)
        return Network(keep, pos[self.eu[sel]], pos[self.ev[sel]], self.c[sel], fold=False)


@dataclass(frozen=True)
class ResistanceResult:
    value: float
    energy: float
    solver_stats: tuple[str, int, float]
    vertices: tuple = field(repr=False)
    potential_array: np.ndarray = field(repr=False)
    edge_u: np.ndarray = field(repr=False)
    edge_v: np.ndarray = field(repr=False)
    flow_array: np.ndarray = field(repr=False)  # flow from edge_u to edge_v

    @functools.cached_property
    def potentials(self) -> dict:
        return {v: float(x) for v, x in zip(self.vertices, self.potential_array)}

    @functools.cached_property
    def flow(self) -> dict:
        out = {}
        V = self.vertices
        for a, b, f in zip(self.edge_u, self.edge_v, self.flow_array):
            out[(V[a], V[b])] = float(f)
            out[(V[b], V[a])] = -float(f)
        return out

    def divergence(self) -> np.ndarray:
        """Net flow out of each vertex."""
        n = len(self.vertices)
        return np.bincount(self.edge_u, self.flow_array, n) - np.bincount(self.edge_v, self.flow_array, n)

    def to_dict(self, emit_flow: bool = False) -> dict:
        doc = {
            "value": self.value,
            "energy": self.energy,
            "solver_stats": {
                "method": self.solver_stats[0],
                "iterations": self.solver_stats[1],
                "residual": self.solver_stats[2],
            },
            "potentials": {str(k): v for k, v in self.potentials.items()},
        }
        if emit_flow:
            V = self.vertices
            doc["flow"] = [[_jsonable(V[a]), _jsonable(V[b]), float(f)]
                           for a, b, f in zip(self.edge_u, self.edge_v, self.flow_array)]
        return doc


def _jsonable(v):
    return int(v) if isinstance(v, (int, np.integer)) else str(v)


def _solve_grounded(L: sp.csr_matrix, rhs: np.ndarray, method: str):
    """Solve ``L x = rhs`` for a connected grounded Laplacian (SPD)."""
    N = L.shape[0]
    if method == "auto":
        method = "dense" if N <= DENSE_LIMIT else "sparse"
    iters = 1
    if method == "dense":
        try:
            factor = scipy.linalg.cho_factor(L.toarray(), lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"cholesky failed: {exc}", {"method": "dense"}) from exc
        x = scipy.linalg.cho_solve(factor, rhs, check_finite=False)
    elif method == "sparse":
        x = spla.spsolve(L.tocsc(), rhs)
    elif method == "cg":
        cap = max(int(20 * math.sqrt(N)), 1)
        dinv = 1.0 / L.diagonal()
        precond = spla.LinearOperator(L.shape, matvec=lambda r: dinv * r)
        counter = [0]

        def cb(_):
            counter[0] += 1

        cols = rhs if rhs.ndim == 2 else rhs[:, None]
        xs = []
        for j in range(cols.shape[1]):
            xj, info = spla.cg(L, cols[:, j], rtol=RESIDUAL_TOL * 0.1, atol=0.0,
                               maxiter=cap, M=precond, callback=cb)
            if info != 0:
                raise NumericError(
                    f"conjugate gradient hit the iteration cap {cap} on N={N}",
                    {"method": "cg", "iterations": counter[0]},
                )
            xs.append(xj)
        x = np.stack(xs, axis=1) if rhs.ndim == 2 else xs[0]
        iters = counter[0]
    else:
        raise ValueError(f"unknown solver method {method!r}")
    r = L @ x - rhs
    bn = np.linalg.norm(rhs)
    resid = float(np.linalg.norm(r) / bn) if bn > 0 else float(np.linalg.norm(r))
    if not resid < RESIDUAL_TOL:
        raise NumericError(f"relative residual {resid:.3e} exceeds {RESIDUAL_TOL}",
                           {"method": method, "iterations": iters, "residual": resid})
    return x, (method, iters, resid)


def electric_potentials(net: Network, demand: np.ndarray, ground: int, method: str = "auto"):
    """Potentials for a zero-sum demand vector (net outflow per vertex), ``U[ground] = 0``.

    The system is restricted to the component of ``ground``; demand elsewhere
    must vanish.  Returns ``(U, stats)`` with ``U`` NaN outside that component.
    """
    demand = np.asarray(demand, dtype=np.float64)
    labels = net.components()
    comp = labels == labels[ground]
    if np.any(np.abs(demand[~comp]) > 0):
        raise InfiniteResistance("demand is placed in a component without the ground")
    if abs(demand.sum()) > 1e-9 * max(1.0, np.abs(demand).sum()):
        raise InvalidQuery("demand does not sum to zero")
    idx = np.flatnonzero(comp)
    free = idx[idx != ground]
    U = np.full(net.size, np.nan)
    U[ground] = 0.0
    if free.size == 0:
        return U, ("trivial", 0, 0.0)
    L = net.laplacian()
    Lg = L[free][:, free]
    x, stats = _solve_grounded(Lg, demand[free], method)
    U[free] = x
    return U, stats


def _result_from_potentials(net: Network, U: np.ndarray, value: float, stats) -> ResistanceResult:
    sel = ~(np.isnan(U[net.eu]) | np.isnan(U[net.ev]))
    eu, ev, c = net.eu[sel], net.ev[sel], net.c[sel]
    f = c * (U[eu] - U[ev])
    energy = float(np.sum(f * f / c))
    return ResistanceResult(
        value=float(value), energy=energy, solver_stats=stats,
        vertices=tuple(net.vertices), potential_array=np.nan_to_num(U, nan=0.0),
        edge_u=eu, edge_v=ev, flow_array=f,
    )


def two_point_resistance(net: Network, a: Hashable, b: Hashable, method: str = "auto") -> ResistanceResult:
    """Resistance between two vertices; the terminal listed later in the network is grounded."""
    if a == b:
        raise InvalidQuery("terminals must differ")
    for t in (a, b):
        if t not in net.index:
            raise InvalidQuery(f"terminal {t!r} not in network")
    ia, ib = net.index[a], net.index[b]
    src, gnd = (ia, ib) if ib > ia else (ib, ia)
    labels = net.components()
    if labels[ia] != labels[ib]:
        raise InfiniteResistance(f"{a!r} and {b!r} are disconnected")
    demand = np.zeros(net.size)
    demand[ia], demand[ib] = 1.0, -1.0
    U, stats = electric_potentials(net, demand, gnd, method)
    value = U[ia] - U[ib]
    return _result_from_potentials(net, U, value, stats)


_S1, _S2 = "<S1>", "<S2>"


def set_resistance(net: Network, S1: Iterable[Hashable], S2: Iterable[Hashable],
                   method: str = "auto") -> ResistanceResult:
    S1, S2 = list(dict.fromkeys(S1)), list(dict.fromkeys(S2))
    if not S1 or not S2:
        raise InvalidQuery("terminal sets must be nonempty")
    if set(S1) & set(S2):
        raise InvalidQuery("terminal sets overlap")
    contracted = net.contract({_S1: S1, _S2: S2})
    return two_point_resistance(contracted, _S1, _S2, method)


def restricted_resistance(sample: LrpSample, window: tuple[int, int], i: int, j: int,
                          method: str = "auto") -> ResistanceResult:
    lo, hi = window
    if lo < sample.lo or hi > sample.hi or hi < lo:
        raise InvalidQuery(f"window {window} is not inside the sample window {sample.window}")
    for t in (i, j):
        if not lo <= t <= hi:
            raise InvalidQuery(f"terminal {t} outside window {window}")
    net = Network.from_sample(sample, window, supernodes=False)
    return two_point_resistance(net, i, j, method)


def hat_network(sample: LrpSample, x2: int, x3: int, x1: int | None, x4: int | None) -> tuple[Network, list, list]:
    """Network and terminal sets for the hat resistance between ``[x1, x2]`` and ``[x3, x4]``.

    ``None`` for x1 (x4) means the interval extends to minus (plus) infinity,
    realised by the ``ext-`` (``ext+``) supernode of a split-sides sample.
    Edges with one end in ``(-inf, x2]`` and the other in ``[x3, +inf)`` are
    removed, as are edges from outside ``[x1, x4]`` into ``(x2, x3)``.  What
    remains outside ``[x1, x4]`` can only touch one terminal set, so flows
    are effectively confined to ``[x1, x4]``.
    """
    lo = sample.lo if x1 is None else x1
    hi = sample.hi if x4 is None else x4
    if not (lo < x2 < x3 < hi) or (x1 is not None and x1 < sample.lo) or (x4 is not None and x4 > sample.hi):
        raise InvalidQuery(f"need x1 < x2 < x3 < x4 inside the window, got {(x1, x2, x3, x4)}")
    labels = {s.label for s in sample.supernodes}
    if x1 is None and "ext-" not in labels:
        raise InvalidQuery("an infinite left end needs an 'ext-' supernode")
    if x4 is None and "ext+" not in labels:
        raise InvalidQuery("an infinite right end needs an 'ext+' supernode")

    e = sample.edges
    inside = (e[:, 0] >= lo) & (e[:, 1] <= hi)
    a, b = e[inside, 0], e[inside, 1]
    cut = (a <= x2) & (b >= x3)
    a, b = a[~cut], b[~cut]
    verts: list[Hashable] = list(range(lo, hi + 1))
    eu, ev, cs = [a - lo], [b - lo], [np.ones(a.size)]
    S1, S2 = list(range(lo, x2 + 1)), list(range(x3, hi + 1))
    for side, label, used in ((-1, "ext-", x1 is None), (1, "ext+", x4 is None)):
        if not used:
            continue
        s = next(s for s in sample.supernodes if s.label == label)
        v, c = s.vertices, s.counts
        if side < 0:
            ok = (v >= lo) & (v < x3)
            S1.append(label)
        else:
            ok = (v <= hi) & (v > x2)
            S2.append(label)
        k = len(verts)
        verts.append(label)
        eu.append(v[ok] - lo)
        ev.append(np.full(int(ok.sum()), k, dtype=np.int64))
        cs.append(c[ok].astype(np.float64))
    net = Network(verts, np.concatenate(eu), np.concatenate(ev), np.concatenate(cs))
    return net, S1, S2


def hat_resistance(sample: LrpSample, x2: int, x3: int, x1: int | None, x4: int | None,
                   method: str = "auto") -> ResistanceResult:
    net, S1, S2 = hat_network(sample, x2, x3, x1, x4)
    return set_resistance(net, S1, S2, method)


def electric_flow(net: Network, demand: Mapping[Hashable, float], method: str = "auto") -> ResistanceResult:
    """Electric flow for a general zero-sum demand (net outflow per vertex).

    ``value`` holds the energy of the flow.
    """
    d = np.zeros(net.size)
    for v, x in demand.items():
        d[net.index[v]] += x
    ground = int(np.flatnonzero(d)[-1]) if np.any(d) else net.size - 1
    U, stats = electric_potentials(net, d, ground, method)
    res = _result_from_potentials(net, U, 0.0, stats)
    return ResistanceResult(res.energy, res.energy, stats, res.vertices, res.potential_array,
                            res.edge_u, res.edge_v, res.flow_array)


BRUTE_FORCE_LIMIT = 10


def brute_force_resistance(net: Network, S1: Iterable[Hashable], S2: Iterable[Hashable]) -> float:
    """Minimum of ``sum f^2 / c`` over unit flows from S1 to S2, by a dense KKT solve.

    Flow variables live on edges; sources in S1 and sinks in S2 are free
    variables whose totals are pinned to +1 and -1, and every other vertex is
    conserved.  Used only as an independent oracle on tiny instances.
    """
    if net.size > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"brute force limited to {BRUTE_FORCE_LIMIT} vertices, got {net.size}")
    S1 = [net.index[v] for v in S1]
    S2 = [net.index[v] for v in S2]
    if set(S1) & set(S2):
        raise InvalidQuery("terminal sets overlap")
    E = net.eu.size
    terms = S1 + S2
    nvar = E + len(terms)
    # variables: edge flows f_e (eu -> ev), then injections s_t at terminals
    H = np.zeros((nvar, nvar))
    H[np.arange(E), np.arange(E)] = 1.0 / net.c
    rows = []
    rhs = []
    for v in range(net.size):
        r = np.zeros(nvar)
        r[:E] += (net.eu == v).astype(float) - (net.ev == v).astype(float)
        if v in terms:
            r[E + terms.index(v)] = -1.0
        rows.append(r)
        rhs.append(0.0)
    for group, total in ((S1, 1.0), (S2, -1.0)):
        r = np.zeros(nvar)
        for v in group:
            r[E + terms.index(v)] = 1.0
        rows.append(r)
        rhs.append(total)
    A = np.array(rows)
    b = np.array(rhs)
    K = np.block([[H, A.T], [A, np.zeros((A.shape[0], A.shape[0]))]])
    sol = np.linalg.lstsq(K, np.concatenate([np.zeros(nvar), b]), rcond=None)[0]
    f = sol[:E]
    if np.linalg.norm(A @ sol[:nvar] - b) > 1e-8:
        raise InfiniteResistance("no unit flow exists between the sets")
    return float(np.sum(f * f / net.c))
