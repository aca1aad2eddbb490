"""Heat kernels on the full metric graph with the length measure.

The Laplacian is discretized with linear elements on every edge (cells are
kept as wired graphs, Kirchhoff conditions at vertices). The mass matrix is
the trapezoid (lumped) one, so with the same nodal weights as quadrature the
discrete kernel conserves heat exactly up to truncation of the
eigen-expansion. Integrals can also be taken with the consistent mass
matrix, which is exact for the interpolated functions and serves as an
independent quadrature oracle.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .errors import InvalidParameter, ResourceCap
from .geometry import (MetricGraph, ball_measure, geodesic_distances, total_joining_length,
                       vertex_distances)

log = logging.getLogger(__name__)

K_MAX = 800
P_DEFAULT = 200
NODE_CAP = 200_000
DENSE_CAP = 4000
TRUNC_TOL = 1e-6
NEG_TOL = 1e-8


@dataclass
class HeatSetup:
    """Eigenpairs of the length-measure Laplacian on a full graph.

    ``chains[e]`` lists the FEM node ids along edge ``e`` from ``u`` to ``v``;
    eigenfunctions are linear between consecutive chain nodes.
    """

    graph: MetricGraph
    eigenvalues: np.ndarray
    vectors: np.ndarray  # nodes x K, orthonormal in the weights below
    weights: np.ndarray  # trapezoid weights per node
    chains: list
    elements: np.ndarray
    complete: bool  # True when every discrete eigenpair is kept
    meta: dict = field(default_factory=dict)

    @property
    def k_max(self) -> int:
        return len(self.eigenvalues)

    @property
    def total_mass(self) -> float:
        return math.fsum(self.weights)

    def min_time(self, tol: float = TRUNC_TOL) -> float:
        """Smallest t whose truncation bound K e^{-lambda_K t} is below tol / mu(X).

        Since p(t,x,x) >= 1/mu(X), this keeps the relative truncation error
        of on-diagonal values under ``tol``.
        """
        if self.complete:
            return 0.0
        lam = self.eigenvalues[-1]
        return math.log(self.k_max * self.total_mass / tol) / lam

    def basis_at(self, points) -> np.ndarray:
        """Eigenfunction values at points, shape (len(points), K)."""
        rows = []
        for pt in points:
            rows.append(self._interp(pt))
        return np.array(rows) if rows else np.zeros((0, self.k_max))

    def _interp(self, point) -> np.ndarray:
        if isinstance(point, (int, np.integer)):
            return self.vectors[int(point)]
        eid, off = point
        e = self.graph.edges[eid]
        if not (-1e-12 <= off <= e.length + 1e-12):
            raise InvalidParameter(f"offset {off} outside edge {eid}")
        chain = self.chains[eid]
        m = len(chain) - 1
        pos = min(max(off / e.length, 0.0), 1.0) * m
        j = min(int(pos), m - 1)
        w = pos - j
        return (1.0 - w) * self.vectors[chain[j]] + w * self.vectors[chain[j + 1]]


def _require_finite_length(graph: MetricGraph):
    hp = graph.params
    if hp is not None and total_joining_length(hp, math.inf).diverges:
        raise InvalidParameter(
            f"alpha={hp.alpha} gives a space of infinite length (need alpha > "
            f"{1 - 2 / hp.n0:.6g}); the length measure is not finite")


def full_graph_spectrum(graph: MetricGraph, p: int = P_DEFAULT, k_max: int = K_MAX,
                        node_cap: int = NODE_CAP) -> HeatSetup:
    """Lowest ``k_max`` eigenpairs of the Kirchhoff Laplacian on ``graph``.

    ``p`` is the number of elements on the longest edge; every other edge
    gets ``max(1, ceil(p * len / len_max))`` elements, so the mesh is close
    to uniform in arc length.
    """
    _require_finite_length(graph)
    if p < 1 or k_max < 1:
        raise InvalidParameter("p and k_max must be positive")
    lengths = np.array([e.length for e in graph.edges])
    h = lengths.max() / p
    m = np.maximum(1, np.ceil(lengths / h - 1e-9)).astype(int)
    n_nodes = graph.n_vertices + int((m - 1).sum())
    if n_nodes > node_cap:
        raise ResourceCap(f"{n_nodes} FEM nodes exceed cap {node_cap}")

    chains = []
    nxt = graph.n_vertices
    rows, cols, kv = [], [], []
    weights = np.zeros(n_nodes)
    for e, me in zip(graph.edges, m):
        chain = np.empty(me + 1, dtype=int)
        chain[0], chain[-1] = e.u, e.v
        chain[1:-1] = np.arange(nxt, nxt + me - 1)
        nxt += me - 1
        chains.append(chain)
        he = e.length / me
        a, b = chain[:-1], chain[1:]
        rows += [a, b, a, b]
        cols += [a, b, b, a]
        g = np.full(me, 1.0 / he)
        kv += [g, g, -g, -g]
        np.add.at(weights, a, he / 2)
        np.add.at(weights, b, he / 2)
    K = sp.csr_matrix((np.concatenate(kv), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_nodes, n_nodes))
    lam, vec, complete = _lumped_eig(K, weights, k_max)
    meta = {"p": p, "k_max": k_max, "nodes": n_nodes, "h": h,
            "level": graph.level,
            "alpha": None if graph.params is None else graph.params.alpha,
            "n0": None if graph.params is None else graph.params.n0}
    return HeatSetup(graph, lam, vec, weights, chains, m, complete, meta)


def _lumped_eig(K, w, k_max):
    """Solve K u = lam W u for diagonal W via the symmetric scaling W^-1/2 K W^-1/2."""
    n = K.shape[0]
    k = min(k_max, n)
    s = 1.0 / np.sqrt(w)
    A = sp.diags(s) @ K @ sp.diags(s)
    if n <= DENSE_CAP:
        lam, y = sla.eigh(A.toarray(), subset_by_index=[0, k - 1], driver="evr")
    else:
        lam, y = eigsh(A.tocsc(), k=k, sigma=-1e-3, which="LM")
        order = np.argsort(lam)
        lam, y = lam[order], y[:, order]
    lam = np.maximum(lam, 0.0)
    lam[0] = 0.0
    vec = y * s[:, None]
    # fix the sign of the constant mode so phi_0 > 0
    if vec[:, 0].sum() < 0:
        vec[:, 0] = -vec[:, 0]
    return lam, vec, k == n


def interval_graph(length: float) -> MetricGraph:
    """A single edge ``[0, length]`` as a metric graph."""
    from .geometry import Edge
    if length <= 0:
        raise InvalidParameter("length must be positive")
    coords = np.array([[0.0], [length]])
    return MetricGraph(None, 0, coords, [Edge(0, 0, 1, float(length), "I", 0)], (0, 1))


def _check_time(setup: HeatSetup, t: float):
    if t <= 0:
        raise InvalidParameter("t must be positive")
    tmin = setup.min_time()
    if t < tmin:
        need = _kmax_estimate(setup, t)
        raise InvalidParameter(
            f"t={t:g} is below the resolvable scale {tmin:.3g} for K_max={setup.k_max}; "
            f"about K_max={need} eigenpairs are needed")


def _kmax_estimate(setup: HeatSetup, t: float) -> int:
    # Weyl's law on a graph of total length L: lambda_k ~ (k pi / L)^2
    L = setup.total_mass
    lam_needed = math.log(setup.k_max * L / TRUNC_TOL) / t
    return int(math.ceil(L * math.sqrt(lam_needed) / math.pi)) + 1


def _clamp(p: np.ndarray) -> np.ndarray:
    neg = p < 0
    if np.any(neg):
        worst = float(p.min())
        if worst < -NEG_TOL:
            log.warning("heat kernel produced %d negative values (min %.3g); clamped to 0",
                        int(neg.sum()), worst)
        p = np.where(neg, 0.0, p)
    return p


def kernel_matrix(setup: HeatSetup, t: float, xs, ys=None, clamp: bool = True) -> np.ndarray:
    """p(t, x_i, y_j) for all pairs of points."""
    _check_time(setup, t)
    # splitting e^{-lam t} evenly between both sides keeps p(x,y) = p(y,x)
    # bitwise for single pairs; full matrices are symmetrized explicitly
    half = np.exp(-0.5 * setup.eigenvalues * t)
    bx = setup.basis_at(xs) * half
    if ys is None:
        p = bx @ bx.T
        p = 0.5 * (p + p.T)
    else:
        p = bx @ (setup.basis_at(ys) * half).T
    return _clamp(p) if clamp else p


def heat_kernel(setup: HeatSetup, t: float, x, y) -> float:
    return float(kernel_matrix(setup, t, [x], [y])[0, 0])


def _nodal_kernel(setup: HeatSetup, t: float, xs) -> np.ndarray:
    """p(t, x_i, node) for every FEM node, without clamping."""
    _check_time(setup, t)
    bx = setup.basis_at(xs)
    return (bx * np.exp(-setup.eigenvalues * t)) @ setup.vectors.T


def heat_trace(setup: HeatSetup, t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.exp(-np.outer(t, setup.eigenvalues)).sum(axis=1)


def trace_by_quadrature(setup: HeatSetup, t: float) -> float:
    """Trapezoid quadrature of p(t, x, x) over the graph."""
    _check_time(setup, t)
    diag = (setup.vectors**2 * np.exp(-setup.eigenvalues * t)).sum(axis=1)
    return float(np.dot(setup.weights, diag))


TRAPEZOID = "trapezoid"
CONSISTENT = "consistent"


def consistent_mass(setup: HeatSetup) -> sp.csr_matrix:
    """Exact L^2 Gram matrix of the piecewise-linear nodal basis.

    Integrals of products of interpolated functions are exact with this
    matrix, so it is an independent check on the trapezoid weights the
    eigenpairs are normalized with.
    """
    n = len(setup.weights)
    rows, cols, vals = [], [], []
    for e, chain in zip(setup.graph.edges, setup.chains):
        h = e.length / (len(chain) - 1)
        a, b = chain[:-1], chain[1:]
        rows += [a, b, a, b]
        cols += [a, b, b, a]
        d, o = np.full(len(a), h / 3.0), np.full(len(a), h / 6.0)
        vals += [d, d, o, o]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


def _integrate(setup: HeatSetup, f: np.ndarray, g: np.ndarray, quadrature: str) -> np.ndarray:
    """Rows of ``f`` integrated against rows of ``g`` over the graph."""
    if quadrature == TRAPEZOID:
        return (f * setup.weights) @ g.T
    if quadrature == CONSISTENT:
        return (consistent_mass(setup) @ f.T).T @ g.T
    raise InvalidParameter(f"unknown quadrature {quadrature!r}")


def conservation(setup: HeatSetup, t: float, xs, quadrature: str = TRAPEZOID) -> np.ndarray:
    """Integral of p(t, x, .) against the length measure, one value per x."""
    ones = np.ones((1, len(setup.weights)))
    return _integrate(setup, _nodal_kernel(setup, t, xs), ones, quadrature)[:, 0]


def chapman_kolmogorov(setup: HeatSetup, s: float, t: float, xs, ys,
                       quadrature: str = TRAPEZOID):
    """Return (lhs, rhs): the convolution integral and p(s+t, x, y)."""
    a = _nodal_kernel(setup, s, xs)
    b = _nodal_kernel(setup, t, ys)
    lhs = _integrate(setup, a, b, quadrature)
    rhs = kernel_matrix(setup, s + t, xs, ys, clamp=False)
    return lhs, rhs


def sample_points(graph: MetricGraph, count: int, rng: np.random.Generator):
    """Points drawn uniformly with respect to length."""
    lengths = np.array([e.length for e in graph.edges])
    eids = rng.choice(len(lengths), size=count, p=lengths / lengths.sum())
    offs = rng.random(count) * lengths[eids]
    return [(int(e), float(o)) for e, o in zip(eids, offs)]


@dataclass
class GaussianReport:
    band: tuple  # (min, max) of p(t,x,x) t^{1/2}
    ratio: float
    t_range: tuple
    offdiag_t: float
    offdiag_slope: float  # d log p / d(d^2/t), geodesic distance
    corr: float  # correlation of log p with -d^2/t, geodesic distance
    offdiag_slope_euclid: float
    corr_euclid: float
    n_pairs: int

    def as_dict(self) -> dict:
        return {"band": list(self.band), "ratio": self.ratio, "t_range": list(self.t_range),
                "offdiag_t": self.offdiag_t, "offdiag_slope": self.offdiag_slope,
                "corr": self.corr, "offdiag_slope_euclid": self.offdiag_slope_euclid,
                "corr_euclid": self.corr_euclid, "n_pairs": self.n_pairs}


def _slope_corr(x, y):
    x, y = np.asarray(x), np.asarray(y)
    slope = np.polyfit(x, y, 1)[0]
    corr = np.corrcoef(x, y)[0, 1]
    return float(slope), float(corr)


def gaussian_diagnostic(setup: HeatSetup, t_range=(1e-3, 1e-1), n_t: int = 21,
                        samples: int = 40, seed: int = 0, offdiag_t: float = 1e-2,
                        max_exponent: float = 16.0) -> GaussianReport:
    """On-diagonal band and off-diagonal Gaussian decay diagnostics.

    The on-diagonal part evaluates p(t,x,x) t^{1/2} for sampled x on a
    geometric t-grid. The off-diagonal part regresses log p(t,x,y) on
    d(x,y)^2/t at ``offdiag_t`` for sampled pairs with d^2/t below
    ``max_exponent`` (further out the kernel is at round-off level).
    """
    rng = np.random.default_rng(seed)
    g = setup.graph
    t0, t1 = t_range
    t0 = max(t0, setup.min_time())
    if t0 >= t1:
        raise InvalidParameter(f"t-range [{t_range[0]}, {t1}] is not resolvable; "
                               f"minimum t is {setup.min_time():.3g}")
    ts = np.geomspace(t0, t1, n_t)
    xs = sample_points(g, samples, rng)
    vals = []
    for t in ts:
        p = kernel_matrix(setup, t, xs)
        vals.append(np.diag(p) * math.sqrt(t))
    vals = np.concatenate(vals)
    lo, hi = float(vals.min()), float(vals.max())

    ys = sample_points(g, samples, rng)
    p = kernel_matrix(setup, offdiag_t, xs, ys)
    pairs = [(x, y) for x in xs for y in ys]
    dg = geodesic_distances(g, pairs).reshape(len(xs), len(ys))
    de = np.linalg.norm(np.array([g.point_coords(x) for x in xs])[:, None, :]
                        - np.array([g.point_coords(y) for y in ys])[None, :, :], axis=2)
    keep = (dg**2 / offdiag_t <= max_exponent) & (p > 0)
    if keep.sum() < 10:
        raise InvalidParameter("too few sample pairs within the Gaussian range")
    lp = np.log(p[keep])
    sg, cg = _slope_corr(dg[keep] ** 2 / offdiag_t, lp)
    se, ce = _slope_corr(de[keep] ** 2 / offdiag_t, lp)
    return GaussianReport((lo, hi), hi / lo, (float(t0), float(t1)), offdiag_t,
                          sg, -cg, se, -ce, int(keep.sum()))


@dataclass
class RegularityReport:
    ratios: np.ndarray
    radii: np.ndarray
    lower: float
    upper: float
    total_length: float

    @property
    def ok(self) -> bool:
        return bool(np.all(self.ratios >= self.lower) and np.all(self.ratios <= self.upper))


def measure_regularity(graph: MetricGraph, samples: int = 100, seed: int = 0,
                       t_range=(1e-3, 1e-1), eps: float = 1e-9,
                       total_length: float | None = None) -> RegularityReport:
    """Ratios H^1(B_t(x)) / t at random (x, t).

    The bound [2, 4 L + 3] uses the limit length L of the space (finite for
    the admissible alpha) unless ``total_length`` is given.
    """
    _require_finite_length(graph)
    rng = np.random.default_rng(seed)
    if total_length is None:
        if graph.params is None:
            total_length = graph.total_length
        else:
            total_length = total_joining_length(graph.params, math.inf).value
    xs = sample_points(graph, samples, rng)
    ts = np.exp(rng.uniform(math.log(t_range[0]), math.log(t_range[1]), samples))
    ratios = np.empty(samples)
    for i, (x, t) in enumerate(zip(xs, ts)):
        d = vertex_distances(graph, x)
        ratios[i] = ball_measure(graph, x, t, dist=d) / t
    return RegularityReport(ratios, ts, 2.0 - eps, 4.0 * total_length + 3.0 + eps, total_length)
