"""The critical one-dimensional long-range percolation model.

Pairs ``{i, j}`` of integers are joined independently.  Nearest neighbours are
always joined; a pair at distance ``k >= 2`` is joined with probability
``1 - exp(-beta * J(k))`` where ``J(k)`` is the integral of ``|u - v|**-2``
over the unit cells of the two endpoints, which evaluates to
``log(k**2 / (k**2 - 1))``.

Sampling is organised by distance class: for a fixed distance every pair has
the same probability, so present pairs are found by geometric gap skipping.
Each (replicate, region, distance) triple reads its own counter-based stream
(see :mod:`lrpnet.streams`), so results do not depend on batch composition.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from lrpnet import streams


class InvalidDistance(ValueError):
    pass


class EmptyWindow(ValueError):
    pass


class TruncationError(ValueError):
    pass


# region tags for the stream domain word
_INTERNAL, _RIGHT, _LEFT, _FAR = 0, 1, 2, 3
_DOMAIN_STRIDE = 16


@dataclass(frozen=True)
class ModelParams:
    beta: float
    seed: int = 0
    tail_horizon: int = 10**6

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")
        if self.tail_horizon < 2:
            raise ValueError(f"tail_horizon must be >= 2, got {self.tail_horizon}")
        streams.seed_key(self.seed)


def coupling_exponent(k: int) -> float:
    """Exact value of the double integral of ``|u-v|**-2`` for cells at distance k."""
    if k < 2:
        raise InvalidDistance(f"coupling exponent needs k >= 2, got {k}")
    return -math.log1p(-1.0 / (k * k))


def edge_probability(beta: float, k: int) -> float:
    if k <= 0:
        raise InvalidDistance(f"distance must be positive, got {k}")
    if k == 1:
        return 1.0
    return -math.expm1(beta * math.log1p(-1.0 / (k * k)))


def _coupling_array(k: np.ndarray) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64)
    return -np.log1p(-1.0 / (k * k))


def _probability_array(beta: float, k: np.ndarray) -> np.ndarray:
    k = np.asarray(k, dtype=np.int64)
    p = np.ones(k.shape, dtype=np.float64)
    far = k >= 2
    kf = k[far].astype(np.float64)
    p[far] = -np.expm1(beta * np.log1p(-1.0 / (kf * kf)))
    return p


def coupling_tail(K: int) -> float:
    """Sum of ``coupling_exponent(k)`` over all ``k >= K`` (telescopes to log(K/(K-1)))."""
    if K < 2:
        raise InvalidDistance(f"tail needs K >= 2, got {K}")
    return math.log1p(1.0 / (K - 1))


def expected_degree(beta: float, cutoff: int = 10**6) -> float:
    """Mean degree of a vertex: ``2 + 2 * sum_{k>=2} edge_probability(beta, k)``.

    Terms up to ``cutoff`` are summed directly; the remainder uses
    ``p_k = b c_k - b^2 c_k^2 / 2 + O(b^3 c_k^3)`` with the telescoped sum of
    ``c_k`` and ``sum c_k^2 ~ sum k^-4``.  The neglected part is below
    ``beta**3 / cutoff**5``.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    k = np.arange(2, cutoff, dtype=np.int64)
    head = float(np.sum(_probability_array(beta, k)))
    K = cutoff
    sq_tail = 1.0 / (3.0 * (K - 0.5) ** 3)
    tail = beta * coupling_tail(K) - 0.5 * beta * beta * sq_tail
    return 2.0 + 2.0 * (head + tail)


@dataclass(frozen=True)
class PairClass:
    """Pairs ``{i, j}`` with one endpoint in ``first`` and the other in ``second``.

    Interval bounds are inclusive; ``None`` means unbounded on that side.
    """

    first: tuple[int | None, int | None]
    second: tuple[int | None, int | None]

    @staticmethod
    def _inside(x, bounds):
        lo, hi = bounds
        x = np.asarray(x)
        ok = np.ones(x.shape, dtype=bool)
        if lo is not None:
            ok &= x >= lo
        if hi is not None:
            ok &= x <= hi
        return ok

    def contains(self, i, j) -> np.ndarray:
        a, b = self.first, self.second
        return (self._inside(i, a) & self._inside(j, b)) | (
            self._inside(j, a) & self._inside(i, b)
        )

    def covers_ray(self, u, start: int, direction: int) -> np.ndarray:
        """Whether every pair ``{u, v}`` with v on the ray from ``start`` is in the class.

        Raises if the ray is only partly covered for some u, since the
        aggregated far-edge rate cannot then be split exactly.
        """
        u = np.asarray(u)
        result = np.zeros(u.shape, dtype=bool)
        for here, there in ((self.first, self.second), (self.second, self.first)):
            lo, hi = there
            if direction > 0:
                full = hi is None and (lo is None or lo <= start)
                none = hi is not None and hi < start
            else:
                full = lo is None and (hi is None or hi >= start)
                none = lo is not None and lo > start
            mine = self._inside(u, here)
            if full:
                result |= mine
            elif not none and mine.any():
                raise TruncationError(
                    f"forbidden class {self} partially overlaps the far ray from {start}"
                )
        return result

    def to_json(self):
        return [list(self.first), list(self.second)]

    @classmethod
    def from_json(cls, obj):
        return cls(tuple(obj[0]), tuple(obj[1]))


def box_exterior_classes(inner: int, outer: int) -> tuple[PairClass, PairClass]:
    """Pairs joining ``[-inner, inner]`` to the complement of ``[-outer, outer]``."""
    return (
        PairClass((-inner, inner), (None, -outer - 1)),
        PairClass((-inner, inner), (outer + 1, None)),
    )


def _forbidden_mask(forbidden: Sequence[PairClass], i, j) -> np.ndarray:
    mask = np.zeros(np.shape(i), dtype=bool)
    for cls in forbidden:
        mask |= cls.contains(i, j)
    return mask


@dataclass
class Supernode:
    label: str
    covers: str
    vertices: np.ndarray  # window vertices with at least one edge to the supernode
    counts: np.ndarray  # parallel edge multiplicities, aligned with vertices

    def count_map(self) -> dict[int, int]:
        return {int(v): int(c) for v, c in zip(self.vertices, self.counts)}


@dataclass
class LrpSample:
    params: ModelParams
    window: tuple[int, int]
    edges: np.ndarray  # (E, 2) int64, rows (i, j) with i < j, lexicographically sorted
    supernodes: list[Supernode] = field(default_factory=list)
    forbidden: tuple[PairClass, ...] = ()
    replicate: int = 0

    @property
    def lo(self) -> int:
        return self.window[0]

    @property
    def hi(self) -> int:
        return self.window[1]

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.edges}

    def long_edges(self) -> np.ndarray:
        return self.edges[self.edges[:, 1] - self.edges[:, 0] >= 2]

    def to_json(self) -> str:
        doc = {
            "beta": self.params.beta,
            "seed": self.params.seed,
            "replicate": self.replicate,
            "window": [self.lo, self.hi],
            "edges": self.edges.tolist(),
            "supernodes": [
                {
                    "label": s.label,
                    "covers": s.covers,
                    "counts": {str(v): c for v, c in s.count_map().items()},
                }
                for s in self.supernodes
            ],
            "forbidden": [c.to_json() for c in self.forbidden],
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LrpSample":
        doc = json.loads(text)
        params = ModelParams(beta=doc["beta"], seed=doc["seed"])
        sns = []
        for s in doc.get("supernodes", []):
            items = sorted((int(k), int(v)) for k, v in s["counts"].items())
            verts = np.array([k for k, _ in items], dtype=np.int64)
            cnts = np.array([v for _, v in items], dtype=np.int64)
            sns.append(Supernode(s["label"], s.get("covers", ""), verts, cnts))
        edges = np.array(doc["edges"], dtype=np.int64).reshape(-1, 2)
        return cls(
            params=params,
            window=tuple(doc["window"]),
            edges=edges,
            supernodes=sns,
            forbidden=tuple(PairClass.from_json(c) for c in doc.get("forbidden", [])),
            replicate=doc.get("replicate", 0),
        )


def _skip_sample(seed, domain, reps, dist, first, length, prob):
    """Geometric gap skipping for a batch of (replicate, distance) groups.

    Group g covers ``length[g]`` pairs whose first endpoints are
    ``first[g], first[g] + 1, ...``; each pair is present with ``prob[g]``.
    Returns flat arrays (replicate, first endpoint, distance) of present pairs.
    """
    keep = (length > 0) & (prob > 0)
    reps, dist, first, length, prob = (a[keep] for a in (reps, dist, first, length, prob))
    out_r, out_i, out_k = [], [], []

    sure = prob >= 1.0
    if sure.any():
        n = length[sure]
        g = np.repeat(np.arange(n.size), n)
        offs = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
        out_r.append(reps[sure][g])
        out_i.append(first[sure][g] + offs)
        out_k.append(dist[sure][g])
    reps, dist, first, length, prob = (a[~sure] for a in (reps, dist, first, length, prob))

    log_q = np.log1p(-prob)
    base = np.zeros(reps.size, dtype=np.int64)  # draws consumed so far
    pos = np.zeros(reps.size, dtype=np.int64)  # 1-based position of last success
    active = np.arange(reps.size)
    while active.size:
        mean = length[active] * prob[active]
        ndraw = np.ceil(mean + 2.0 * np.sqrt(mean)).astype(np.int64) + 1
        ndraw = np.minimum(ndraw, length[active] - pos[active] + 1)
        g = np.repeat(np.arange(active.size), ndraw)
        idx = np.arange(ndraw.sum()) - np.repeat(np.cumsum(ndraw) - ndraw, ndraw)
        grp = active[g]
        u = streams.uniforms(seed, base[grp] + idx, dist[grp], reps[grp], domain)
        gap = np.floor(np.log(u) / log_q[grp]) + 1.0
        gap = np.minimum(gap, 2.0**52).astype(np.int64)
        cs = np.cumsum(gap)
        starts = np.cumsum(ndraw) - ndraw
        cs -= np.repeat(cs[starts] - gap[starts], ndraw)
        cs += pos[grp]
        hit = cs <= length[grp]
        out_r.append(reps[grp][hit])
        out_i.append(first[grp][hit] + cs[hit] - 1)
        out_k.append(dist[grp][hit])
        last = starts + ndraw - 1
        pos[active] = cs[last]
        base[active] += ndraw
        active = active[pos[active] <= length[active]]

    if not out_r:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    return np.concatenate(out_r), np.concatenate(out_i), np.concatenate(out_k)


def _domain(stream: int, region: int) -> int:
    return int(stream) * _DOMAIN_STRIDE + region


def _split_by_replicate(reps, rows, replicates):
    """Group rows by replicate id, each group sorted lexicographically."""
    order = np.lexsort((rows[:, 1], rows[:, 0], reps))
    reps, rows = reps[order], rows[order]
    bounds = np.searchsorted(reps, replicates, side="left"), np.searchsorted(
        reps, replicates, side="right"
    )
    return [rows[a:b] for a, b in zip(*bounds)]


def _window_edges(params, lo, hi, replicates, forbidden, stream):
    N = hi - lo + 1
    k = np.arange(2, N, dtype=np.int64)
    R = replicates.size
    reps = np.repeat(replicates, k.size)
    dist = np.tile(k, R)
    length = N - dist
    prob = np.tile(_probability_array(params.beta, k), R)
    r, i, d = _skip_sample(
        params.seed, _domain(stream, _INTERNAL), reps, dist,
        np.full(dist.size, lo, dtype=np.int64), length, prob,
    )
    nn_i = np.arange(lo, hi, dtype=np.int64)
    r = np.concatenate([r, np.repeat(replicates, nn_i.size)])
    i = np.concatenate([i, np.tile(nn_i, R)])
    j = i + np.concatenate([d, np.ones(nn_i.size * R, dtype=np.int64)])
    if forbidden:
        ok = ~_forbidden_mask(forbidden, i, j)
        r, i, j = r[ok], i[ok], j[ok]
    return r, np.stack([i, j], axis=1)


def sample_window_batch(
    params: ModelParams,
    lo: int,
    hi: int,
    replicates: Iterable[int],
    forbidden: Sequence[PairClass] = (),
    stream: int = 0,
) -> list[LrpSample]:
    """Independent samples of the edge set on ``[lo, hi]``, one per replicate id."""
    if hi <= lo:
        raise EmptyWindow(f"window [{lo}, {hi}] has fewer than two vertices")
    replicates = np.asarray(list(replicates), dtype=np.int64)
    forbidden = tuple(forbidden)
    r, rows = _window_edges(params, lo, hi, replicates, forbidden, stream)
    groups = _split_by_replicate(r, rows, replicates)
    return [
        LrpSample(params, (lo, hi), g, [], forbidden, int(rep))
        for rep, g in zip(replicates, groups)
    ]


def sample_window(
    params: ModelParams,
    lo: int,
    hi: int,
    forbidden: Sequence[PairClass] = (),
    replicate: int = 0,
    stream: int = 0,
) -> LrpSample:
    return sample_window_batch(params, lo, hi, [replicate], forbidden, stream)[0]


def sample_window_naive(params: ModelParams, lo: int, hi: int, rng: np.random.Generator) -> LrpSample:
    """Per-pair Bernoulli reference sampler (quadratic cost, for cross-checks)."""
    if hi <= lo:
        raise EmptyWindow(f"window [{lo}, {hi}] has fewer than two vertices")
    N = hi - lo + 1
    i, j = np.triu_indices(N, k=1)
    p = _probability_array(params.beta, j - i)
    present = rng.random(p.size) < p
    edges = np.stack([i[present], j[present]], axis=1).astype(np.int64) + lo
    return LrpSample(params, (lo, hi), edges)


def _cross_edges(params, n, T, replicates, forbidden, stream, side):
    """Edges from ``[-n, n]`` to the explicit exterior ``n < |v| <= T`` on one side."""
    kmax = T + n
    k = np.arange(1, kmax + 1, dtype=np.int64)
    if side > 0:
        u_lo = np.maximum(-n, n + 1 - k)
        u_hi = np.minimum(n, T - k)
    else:
        u_lo = np.maximum(-n, -T + k)
        u_hi = np.minimum(n, -n - 1 + k)
    length = np.maximum(u_hi - u_lo + 1, 0)
    R = replicates.size
    region = _RIGHT if side > 0 else _LEFT
    r, u, d = _skip_sample(
        params.seed, _domain(stream, region),
        np.repeat(replicates, k.size), np.tile(k, R), np.tile(u_lo, R),
        np.tile(length, R), np.tile(_probability_array(params.beta, k), R),
    )
    v = u + d if side > 0 else u - d
    if forbidden:
        ok = ~_forbidden_mask(forbidden, u, v)
        r, u = r[ok], u[ok]
    return r, u


def far_edge_rate(beta: float, u, T: int, side: int):
    """Poisson rate of edges from u to the ray beyond ``+T`` (side=+1) or ``-T`` (side=-1)."""
    u = np.asarray(u, dtype=np.float64)
    gap = T - u if side > 0 else T + u  # distance to the last explicit vertex
    return beta * np.log1p(1.0 / gap)


def _far_edges(params, n, T, replicates, forbidden, stream):
    u = np.arange(-n, n + 1, dtype=np.int64)
    rate = np.zeros(u.size)
    for side in (1, -1):
        blocked = np.zeros(u.size, dtype=bool)
        for cls in forbidden:
            blocked |= cls.covers_ray(u, side * (T + 1), side)
        rate += np.where(blocked, 0.0, far_edge_rate(params.beta, u, T, side))
    R = replicates.size
    uu = np.tile(u, R)
    lam = np.tile(rate, R)
    rr = np.repeat(replicates, u.size)
    x = streams.uniforms(params.seed, 0, uu + n, rr, _domain(stream, _FAR))
    count = np.zeros(uu.size, dtype=np.int64)
    term = np.exp(-lam)
    cdf = term.copy()
    todo = x > cdf
    while todo.any():
        count[todo] += 1
        term = term * lam / count.clip(min=1)
        cdf = cdf + term
        todo &= x > cdf
        todo &= term > 0
    hit = count > 0
    return rr[hit], uu[hit], count[hit]


def sample_with_contracted_complement_batch(
    params: ModelParams,
    n: int,
    replicates: Iterable[int],
    truncation: int | None = None,
    core: tuple[int, int] | None = None,
    forbidden: Sequence[PairClass] = (),
    split_sides: bool = False,
    stream: int = 0,
) -> list[LrpSample]:
    """Samples on ``[-n, n]`` with the complement of the box contracted.

    Vertices with ``n < |v| <= T`` are sampled explicitly (pair by pair) and
    then merged into a supernode; edges to ``|v| > T`` are aggregated per
    window vertex as Poisson counts with the exact telescoped rate.  With
    ``split_sides`` the two half-lines become separate supernodes ``ext-`` and
    ``ext+``; otherwise a single ``ext`` supernode is produced.
    """
    T = 8 * n if truncation is None else int(truncation)
    T = min(T, params.tail_horizon)
    if T <= n:
        raise TruncationError(f"truncation T={T} must exceed the box radius n={n}")
    if n < 0:
        raise EmptyWindow("box radius must be nonnegative")
    if core is not None and not (-n <= core[0] <= core[1] <= n):
        raise ValueError(f"core {core} is not inside [-{n}, {n}]")
    replicates = np.asarray(list(replicates), dtype=np.int64)
    forbidden = tuple(forbidden)

    if n >= 1:
        r_in, rows_in = _window_edges(params, -n, n, replicates, forbidden, stream)
        inner = _split_by_replicate(r_in, rows_in, replicates)
    else:
        inner = [np.zeros((0, 2), dtype=np.int64) for _ in replicates]

    pieces = {}
    for side in (1, -1):
        r, u = _cross_edges(params, n, T, replicates, forbidden, stream, side)
        pieces[side] = (r, u, np.ones(u.size, dtype=np.int64))
    rf, uf, cf = _far_edges(params, n, T, replicates, forbidden, stream)
    if split_sides:
        # far edges are assigned to a side in proportion to the side rates
        if rf.size:
            rf, uf, cf, side_of = _split_far(params, n, T, forbidden, rf, uf, cf, stream)
            for side in (1, -1):
                sel = side_of == side
                r, u, c = pieces[side]
                pieces[side] = (
                    np.concatenate([r, rf[sel]]),
                    np.concatenate([u, uf[sel]]),
                    np.concatenate([c, cf[sel]]),
                )
        labels = {1: ("ext+", f"({n}, +inf)"), -1: ("ext-", f"(-inf, {-n})")}
        groups = {1: pieces[1], -1: pieces[-1]}
    else:
        r = np.concatenate([pieces[1][0], pieces[-1][0], rf])
        u = np.concatenate([pieces[1][1], pieces[-1][1], uf])
        c = np.concatenate([pieces[1][2], pieces[-1][2], cf])
        labels = {0: ("ext", f"|v| > {n} (explicit to {T}, Poisson beyond)")}
        groups = {0: (r, u, c)}

    out = []
    for idx, rep in enumerate(replicates):
        sns = []
        for key, (r, u, c) in groups.items():
            sel = r == rep
            verts = u[sel] + n
            tot = np.bincount(verts, weights=c[sel], minlength=2 * n + 1).astype(np.int64)
            nz = np.flatnonzero(tot)
            label, covers = labels[key]
            sns.append(Supernode(label, covers, nz - n, tot[nz]))
        out.append(LrpSample(params, (-n, n), inner[idx], sns, forbidden, int(rep)))
    return out


def _split_far(params, n, T, forbidden, rf, uf, cf, stream):
    """Assign each aggregated far edge to a side, thinning by relative rate."""
    rates = {}
    for side in (1, -1):
        blocked = np.zeros(uf.size, dtype=bool)
        for cls in forbidden:
            blocked |= cls.covers_ray(uf, side * (T + 1), side)
        rates[side] = np.where(blocked, 0.0, far_edge_rate(params.beta, uf, T, side))
    frac = rates[1] / (rates[1] + rates[-1])
    reps_out, u_out, c_out, s_out = [], [], [], []
    for j in range(int(cf.max())):
        live = cf > j
        x = streams.uniforms(params.seed, j + 1, uf[live] + n, rf[live], _domain(stream, _FAR))
        side = np.where(x < frac[live], 1, -1)
        reps_out.append(rf[live])
        u_out.append(uf[live])
        c_out.append(np.ones(live.sum(), dtype=np.int64))
        s_out.append(side)
    return (np.concatenate(reps_out), np.concatenate(u_out),
            np.concatenate(c_out), np.concatenate(s_out))


def sample_with_contracted_complement(
    params: ModelParams,
    n: int,
    truncation: int | None = None,
    core: tuple[int, int] | None = None,
    forbidden: Sequence[PairClass] = (),
    replicate: int = 0,
    split_sides: bool = False,
    stream: int = 0,
) -> LrpSample:
    return sample_with_contracted_complement_batch(
        params, n, [replicate], truncation, core, forbidden, split_sides, stream
    )[0]
