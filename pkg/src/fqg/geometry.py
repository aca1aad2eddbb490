"""Hanoi-type metric graphs: construction, subdivision and the metric layer.

Points on a graph are ``(edge_id, offset)`` pairs with ``0 <= offset <= len``.
A bare vertex id is accepted wherever a point is expected.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import InvalidParameter, ResourceCap

CELL_CAP = 10**6
VERTEX_CAP = 2 * 10**6

TRIANGLE = "T"
JOINING = "J"


@dataclass(frozen=True)
class HanoiParams:
    alpha: float
    n0: int = 3

    def __post_init__(self):
        if not isinstance(self.n0, (int, np.integer)) or self.n0 < 3:
            raise InvalidParameter(f"n0 must be an integer >= 3, got {self.n0!r}")
        if not (0.0 < self.alpha < 1.0):
            raise InvalidParameter(f"alpha must lie in (0, 1), got {self.alpha!r}")

    @property
    def r(self) -> float:
        return (1.0 - self.alpha) / 2.0

    @property
    def is_fractal(self) -> bool:
        return self.alpha < (self.n0 - 2) / self.n0

    def require_fractal(self):
        if not self.is_fractal:
            raise InvalidParameter(
                f"alpha={self.alpha} is not below (n0-2)/n0={(self.n0 - 2) / self.n0}")


@dataclass(frozen=True)
class Edge:
    id: int
    u: int
    v: int
    length: float
    kind: str
    level: int
    word: tuple = ()


@dataclass
class MetricGraph:
    """Finite metric graph with embedded vertices.

    ``cell_of`` maps each vertex to the word of the level-``level`` cell it
    belongs to (Hanoi builds only); ``corners`` lists the boundary vertices.
    """

    params: HanoiParams | None
    level: int
    coords: np.ndarray
    edges: list
    corners: tuple = ()
    cell_of: list | None = None
    _adj: csr_matrix | None = field(default=None, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.coords)

    @property
    def total_length(self) -> float:
        return math.fsum(e.length for e in self.edges)

    def edges_of_kind(self, kind):
        return [e for e in self.edges if e.kind == kind]

    def adjacency(self) -> csr_matrix:
        """Symmetric sparse matrix of edge lengths (shortest parallel edge kept)."""
        if self._adj is None:
            best = {}
            for e in self.edges:
                key = (min(e.u, e.v), max(e.u, e.v))
                if e.u != e.v and (key not in best or e.length < best[key]):
                    best[key] = e.length
            if best:
                ij = np.array(list(best.keys()))
                w = np.array(list(best.values()))
                rows = np.concatenate([ij[:, 0], ij[:, 1]])
                cols = np.concatenate([ij[:, 1], ij[:, 0]])
                data = np.concatenate([w, w])
            else:
                rows = cols = np.zeros(0, dtype=int)
                data = np.zeros(0)
            n = self.n_vertices
            self._adj = csr_matrix((data, (rows, cols)), shape=(n, n))
        return self._adj

    def is_connected(self) -> bool:
        ncomp, _ = connected_components(self.adjacency(), directed=False)
        return ncomp == 1

    def point_coords(self, point) -> np.ndarray:
        if isinstance(point, (int, np.integer)):
            return self.coords[point]
        eid, off = point
        e = self.edges[eid]
        t = off / e.length
        return (1.0 - t) * self.coords[e.u] + t * self.coords[e.v]


def simplex_vertices(n0: int) -> np.ndarray:
    """Vertices of a regular unit simplex with ``n0`` corners in R^(n0-1).

    Built recursively: each new corner sits above the centroid of the
    previous ones, at unit distance from all of them.
    """
    if n0 < 3:
        raise InvalidParameter(f"n0 must be >= 3, got {n0}")
    dim = n0 - 1
    pts = np.zeros((n0, dim))
    pts[1, 0] = 1.0
    for k in range(2, n0):
        c = pts[:k].mean(axis=0)
        rho2 = np.sum((pts[0] - c) ** 2)
        pts[k] = c
        pts[k, k - 1] = math.sqrt(1.0 - rho2)
    return pts


def _words(n0: int, n: int):
    return list(itertools.product(range(n0), repeat=n))


def word_str(word) -> str:
    return "".join(str(i + 1) for i in word)


def build_level(params: HanoiParams, n: int, cell_cap: int = CELL_CAP) -> MetricGraph:
    """Level-``n`` metric graph approximation.

    Level-k joining edges have length ``alpha * r**(k-1)``; cell edges of the
    level-``n`` cells have length ``r**n``.
    """
    if n < 0:
        raise InvalidParameter(f"level must be >= 0, got {n}")
    n0, alpha, r = params.n0, params.alpha, params.r
    if n0**n > cell_cap:
        raise ResourceCap(f"{n0}^{n} cells exceeds cap {cell_cap}")
    p = simplex_vertices(n0)

    # Cell origins: F_w(x) = r^n x + offset_w with offset accumulated per symbol.
    words = _words(n0, n)
    nw = len(words)
    scale = r**n
    if n == 0:
        offsets = np.zeros((1, n0 - 1))
    else:
        w_arr = np.array(words, dtype=np.intp)
        offsets = np.zeros((nw, n0 - 1))
        # F_{w1...wn}(x) = sum_k r^(k-1) (1-r) p_{wk} + r^n x
        for k in range(n):
            offsets += (r**k) * (1.0 - r) * p[w_arr[:, k]]
    coords = (offsets[:, None, :] + scale * p[None, :, :]).reshape(nw * n0, n0 - 1)
    index = {w: i for i, w in enumerate(words)}

    def vid(cell_word, corner):
        return index[cell_word] * n0 + corner

    edges = []
    for w in words:
        for i, j in itertools.combinations(range(n0), 2):
            edges.append(Edge(len(edges), vid(w, i), vid(w, j), scale, TRIANGLE, n, w))
    for k in range(1, n + 1):
        length = alpha * r ** (k - 1)
        pad = n - k
        for w in _words(n0, k - 1):
            for i, j in itertools.combinations(range(n0), 2):
                # Segment from F_{wi}(p_j) to F_{wj}(p_i).
                a = vid(w + (i,) + (j,) * pad, j)
                b = vid(w + (j,) + (i,) * pad, i)
                edges.append(Edge(len(edges), a, b, length, JOINING, k, w))
    corners = tuple(vid((i,) * n, i) for i in range(n0))
    cell_of = [w for w in words for _ in range(n0)]
    return MetricGraph(params, n, coords, edges, corners, cell_of)


def joining_count(n0: int, k: int) -> int:
    """Number of level-k joining edges."""
    return n0 * (n0 - 1) // 2 * n0 ** (k - 1)


@dataclass(frozen=True)
class JoiningLength:
    value: float
    diverges: bool


def total_joining_length(params: HanoiParams, n) -> JoiningLength:
    """Total length of joining edges up to level ``n`` (``math.inf`` allowed)."""
    n0, alpha, r = params.n0, params.alpha, params.r
    per_level = n0 * (n0 - 1) / 2 * alpha
    if n == math.inf:
        q = n0 * r
        if q >= 1.0:
            return JoiningLength(math.inf, True)
        return JoiningLength(per_level / (1.0 - q), False)
    return JoiningLength(math.fsum(per_level * (n0 * r) ** (k - 1) for k in range(1, n + 1)), False)


def hausdorff_dimension(params: HanoiParams) -> float:
    n0, alpha = params.n0, params.alpha
    if alpha >= 1.0:
        return 1.0
    return max(1.0, math.log(n0) / (math.log(2.0) - math.log(1.0 - alpha)))


def subdivide(graph: MetricGraph, h: float, vertex_cap: int = VERTEX_CAP) -> MetricGraph:
    """Split every edge into ``ceil(len/h)`` equal pieces.

    Original vertices keep their ids; new vertices are appended edge by edge.
    Sub-edges inherit kind, level and word of their parent.
    """
    if h <= 0:
        raise InvalidParameter("granularity h must be positive")
    pieces = [max(1, math.ceil(e.length / h - 1e-12)) for e in graph.edges]
    n_new = graph.n_vertices + sum(m - 1 for m in pieces)
    if n_new > vertex_cap:
        raise ResourceCap(f"subdivision needs {n_new} vertices, cap {vertex_cap}")
    coords = [graph.coords]
    edges = []
    nxt = graph.n_vertices
    for e, m in zip(graph.edges, pieces):
        seg = e.length / m
        chain = [e.u]
        if m > 1:
            t = np.arange(1, m)[:, None] / m
            coords.append((1 - t) * graph.coords[e.u] + t * graph.coords[e.v])
            chain.extend(range(nxt, nxt + m - 1))
            nxt += m - 1
        chain.append(e.v)
        for a, b in zip(chain[:-1], chain[1:]):
            edges.append(Edge(len(edges), a, b, seg, e.kind, e.level, e.word))
    cell_of = None
    if graph.cell_of is not None:
        cell_of = list(graph.cell_of) + [None] * (nxt - graph.n_vertices)
    return MetricGraph(graph.params, graph.level, np.vstack(coords), edges,
                       graph.corners, cell_of)


def _as_point(graph: MetricGraph, point):
    if isinstance(point, (int, np.integer)):
        return None, int(point)
    eid, off = point
    e = graph.edges[eid]
    if not (-1e-12 <= off <= e.length + 1e-12):
        raise InvalidParameter(f"offset {off} outside edge {eid} of length {e.length}")
    return (int(eid), min(max(float(off), 0.0), e.length)), None


def _sources(graph: MetricGraph, point):
    """Seed vertices and initial distances for a point."""
    pt, v = _as_point(graph, point)
    if pt is None:
        return [v], [0.0]
    eid, off = pt
    e = graph.edges[eid]
    return [e.u, e.v], [off, e.length - off]


def vertex_distances(graph: MetricGraph, point) -> np.ndarray:
    """Shortest-path distances from a point to every vertex."""
    srcs, d0 = _sources(graph, point)
    adj = graph.adjacency()
    dist = dijkstra(adj, directed=False, indices=srcs)
    dist = np.atleast_2d(dist)
    return np.min(dist + np.asarray(d0)[:, None], axis=0)


def geodesic_distance(graph: MetricGraph, a, b) -> float:
    da = vertex_distances(graph, a)
    return _distance_from(graph, da, a, b)


def _distance_from(graph, da, a, b) -> float:
    srcs, d0 = _sources(graph, b)
    d = min(da[s] + x for s, x in zip(srcs, d0))
    pa, _ = _as_point(graph, a)
    pb, _ = _as_point(graph, b)
    if pa is not None and pb is not None and pa[0] == pb[0]:
        d = min(d, abs(pa[1] - pb[1]))
    if not math.isfinite(d):
        raise InvalidParameter("points lie in different connected components")
    return float(d)


def geodesic_distances(graph: MetricGraph, pairs) -> np.ndarray:
    """Distances for many pairs, reusing one Dijkstra run per distinct source."""
    cache = {}
    out = np.empty(len(pairs))
    for i, (a, b) in enumerate(pairs):
        key = a if isinstance(a, (int, np.integer)) else tuple(a)
        if key not in cache:
            cache[key] = vertex_distances(graph, a)
        out[i] = _distance_from(graph, cache[key], a, b)
    return out


def _union_length(intervals) -> float:
    iv = sorted((lo, hi) for lo, hi in intervals if hi > lo)
    total, cur_lo, cur_hi = 0.0, None, None
    for lo, hi in iv:
        if cur_hi is None or lo > cur_hi:
            if cur_hi is not None:
                total += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    if cur_hi is not None:
        total += cur_hi - cur_lo
    return total


def ball_measure(graph: MetricGraph, center, t: float, dist=None) -> float:
    """Length of the geodesic ball of radius ``t`` around ``center``.

    ``dist`` may carry precomputed vertex distances from ``center``.
    """
    if t <= 0:
        raise InvalidParameter("radius must be positive")
    d = vertex_distances(graph, center) if dist is None else dist
    lengths = np.array([e.length for e in graph.edges])
    u = np.array([e.u for e in graph.edges])
    v = np.array([e.v for e in graph.edges])
    reach = np.maximum(t - d[u], 0.0) + np.maximum(t - d[v], 0.0)
    covered = np.minimum(reach, lengths)
    pt, _ = _as_point(graph, center)
    if pt is not None:
        eid, off = pt
        e = graph.edges[eid]
        covered[eid] = _union_length([
            (max(off - t, 0.0), min(off + t, e.length)),
            (0.0, min(max(t - d[e.u], 0.0), e.length)),
            (e.length - min(max(t - d[e.v], 0.0), e.length), e.length),
        ])
    return float(math.fsum(covered))


def cell_map(params: HanoiParams, word):
    """Affine similitude F_w as (scale, offset)."""
    p = simplex_vertices(params.n0)
    r = params.r
    off = np.zeros(params.n0 - 1)
    for k, i in enumerate(word):
        off += (r**k) * (1.0 - r) * p[i]
    return r ** len(word), off
