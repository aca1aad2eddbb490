"""Measure-weighted Laplacian on the collapsed-cell level-n model.

Functions are constant on each level-n cell and piecewise linear on joining
edges; the energy is the edge-wise Dirichlet integral and the mass comes from
the self-similar measure. The generalized eigenproblem ``K u = lam M u`` is
solved densely up to ``DENSE_CAP`` dofs and by shift-invert above.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh, splu

from .errors import InsufficientData, InvalidParameter, ResourceCap
from .geometry import JOINING, HanoiParams, MetricGraph, build_level
from .measure import MeasureParams, edge_mass, rs_product

DENSE_CAP = 4000
DOF_CAP = 200_000
DIRICHLET = "dirichlet"
NEUMANN = "neumann"


def _bc(bc: str) -> str:
    key = str(bc).lower()
    if key in ("d", "dirichlet"):
        return DIRICHLET
    if key in ("n", "neumann"):
        return NEUMANN
    raise InvalidParameter(f"unknown boundary condition {bc!r}")


@dataclass
class Discretization:
    """Node masses plus weighted edges, each meshed with ``p`` elements.

    ``node_mass`` holds the lumped point masses of the collapsed cells;
    ``edges`` rows are (node a, node b, length, mass). ``fixed`` lists the
    nodes removed by the Dirichlet condition.
    """

    node_mass: np.ndarray
    edges: np.ndarray
    elements: np.ndarray  # element count per edge
    bc: str = NEUMANN
    fixed: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.node_mass)

    @property
    def n_dofs(self) -> int:
        return self.n_nodes + int(np.sum(self.elements - 1)) - (
            len(self.fixed) if self.bc == DIRICHLET else 0)

    def refined(self, factor: int = 2) -> "Discretization":
        return Discretization(self.node_mass, self.edges, self.elements * factor, self.bc,
                              self.fixed, dict(self.meta))


@dataclass
class AssembledSystem:
    K: sp.csr_matrix
    M: sp.csr_matrix
    disc: Discretization
    dofs: np.ndarray  # kept global node indices

    @property
    def size(self) -> int:
        return self.K.shape[0]


UNIFORM = "uniform"
OPTICAL = "optical"
P_MIN = 2


def element_counts(edges: np.ndarray, p: int, grading: str = OPTICAL, p_min: int = P_MIN):
    """Elements per edge.

    ``uniform`` puts ``p`` elements on every edge. ``optical`` scales the
    count with the optical length sqrt(mass * length), so the edge with the
    largest optical length gets ``p`` and no edge gets fewer than ``p_min``.
    """
    if p < 1:
        raise InvalidParameter("p must be >= 1")
    if grading == UNIFORM:
        return np.full(len(edges), p, dtype=np.intp)
    if grading != OPTICAL:
        raise InvalidParameter(f"unknown grading {grading!r}")
    omega = np.sqrt(edges[:, 2] * edges[:, 3])
    counts = np.ceil(p * omega / omega.max() - 1e-9).astype(np.intp)
    return np.maximum(counts, min(p_min, p))


def discretize(graph: MetricGraph, mp: MeasureParams, p: int, bc=NEUMANN,
               grading: str = OPTICAL, p_min: int = P_MIN) -> Discretization:
    """Collapsed-cell model of a Hanoi build under the measure ``mp``."""
    if graph.cell_of is None or graph.params is None:
        raise InvalidParameter("assembly needs a Hanoi build")
    if graph.params.n0 != mp.n0:
        raise InvalidParameter("graph and measure n0 differ")
    cells = sorted(set(graph.cell_of))
    index = {w: i for i, w in enumerate(cells)}
    n = graph.level
    node_mass = np.full(len(cells), mp.s**n)
    rows = [(index[graph.cell_of[e.u]], index[graph.cell_of[e.v]], e.length, edge_mass(mp, e))
            for e in graph.edges if e.kind == JOINING]
    edges = np.array(rows, dtype=float).reshape(-1, 4)
    fixed = tuple(index[graph.cell_of[c]] for c in graph.corners)
    meta = {"alpha": graph.params.alpha, "n0": graph.params.n0, "level": n,
            "beta": mp.beta, "p": p, "grading": grading}
    counts = element_counts(edges, p, grading, p_min) if len(edges) else np.zeros(0, np.intp)
    return Discretization(node_mass, edges, counts, _bc(bc), fixed, meta)


def _element_arrays(disc: Discretization):
    """Global node pairs and per-element stiffness/mass scales."""
    nn = disc.n_nodes
    counts = disc.elements
    interior = np.concatenate([[0], np.cumsum(counts - 1)])
    first, second, kk, mm = [], [], [], []
    for p in np.unique(counts):
        sel = np.nonzero(counts == p)[0]
        ne = len(sel)
        chain = np.empty((ne, p + 1), dtype=np.intp)
        chain[:, 0] = disc.edges[sel, 0]
        chain[:, -1] = disc.edges[sel, 1]
        if p > 1:
            chain[:, 1:-1] = nn + interior[sel][:, None] + np.arange(p - 1)[None, :]
        first.append(chain[:, :-1].ravel())
        second.append(chain[:, 1:].ravel())
        kk.append(np.repeat(p / disc.edges[sel, 2], p))     # 1/h
        mm.append(np.repeat(disc.edges[sel, 3] / p, p))     # rho*h
    if not first:  # level 0: a single cell, no edges
        empty_i, empty_f = np.zeros(0, dtype=np.intp), np.zeros(0)
        return empty_i, empty_i, empty_f, empty_f, nn
    cat = np.concatenate
    return cat(first), cat(second), cat(kk), cat(mm), nn + int(interior[-1])


def assemble_discretization(disc: Discretization) -> AssembledSystem:
    total = disc.n_nodes + int(np.sum(disc.elements - 1))
    if total > DOF_CAP:
        raise ResourceCap(f"{total} dofs exceeds cap {DOF_CAP}")
    i, j, k_el, m_el, total = _element_arrays(disc)
    m_el = m_el / 6.0
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    K = sp.coo_matrix((np.concatenate([k_el, k_el, -k_el, -k_el]), (rows, cols)),
                      shape=(total, total)).tocsr()
    mvals = np.concatenate([2 * m_el, 2 * m_el, m_el, m_el])
    lumped = np.zeros(total)
    lumped[:disc.n_nodes] = disc.node_mass
    M = (sp.coo_matrix((mvals, (rows, cols)), shape=(total, total)) + sp.diags(lumped)).tocsr()
    keep = np.arange(total)
    if disc.bc == DIRICHLET:
        keep = np.setdiff1d(keep, np.asarray(disc.fixed, dtype=np.intp))
        K = K[keep][:, keep].tocsr()
        M = M[keep][:, keep].tocsr()
    return AssembledSystem(K, M, disc, keep)


def assemble(graph: MetricGraph, mp: MeasureParams, p: int, bc=NEUMANN,
             grading: str = OPTICAL) -> AssembledSystem:
    return assemble_discretization(discretize(graph, mp, p, bc, grading))


def detach_edges(disc: Discretization, max_level: int, graph: MetricGraph) -> Discretization:
    """Neumann-decoupled variant: joining edges of level <= ``max_level``
    get private endpoints, so cells and those edges no longer interact."""
    levels = np.array([e.level for e in graph.edges if e.kind == JOINING])
    edges = disc.edges.copy()
    masses = list(disc.node_mass)
    for k in np.nonzero(levels <= max_level)[0]:
        edges[k, 0] = len(masses)
        masses.append(0.0)
        edges[k, 1] = len(masses)
        masses.append(0.0)
    return Discretization(np.array(masses), edges, disc.elements.copy(), NEUMANN, (),
                          dict(disc.meta))


@dataclass
class Spectrum:
    eigenvalues: np.ndarray
    bc: str
    trusted: int  # number of leading eigenvalues that are trusted
    meta: dict = field(default_factory=dict)

    @property
    def trust_cutoff(self) -> float:
        if self.trusted == 0:
            return 0.0
        return float(self.eigenvalues[self.trusted - 1])


def solve_eig(sys: AssembledSystem, count=None, vectors=False):
    """Lowest ``count`` (default all) eigenpairs of ``K u = lam M u``.

    Dense LAPACK up to ``DENSE_CAP`` dofs, shift-invert Lanczos otherwise.
    Partial spectra are checked against the Sylvester inertia of
    ``K - sigma M`` and trimmed so that no eigenvalue below the last returned
    one is missing (a multiplet cut by ``count`` is dropped whole).
    """
    n = sys.size
    if count is None or count >= n:
        count = n
    if n <= DENSE_CAP:
        Kd, Md = sys.K.toarray(), sys.M.toarray()
        subset = None if count == n else [0, count - 1]
        try:
            out = sla.eigh(Kd, Md, subset_by_index=subset, eigvals_only=not vectors,
                           driver="gvx" if subset else "gvd")
        except np.linalg.LinAlgError as exc:
            raise RuntimeError("mass matrix is not positive definite") from exc
    else:
        if count >= n - 1:
            raise ResourceCap(f"full spectrum of {n} dofs exceeds dense cap {DENSE_CAP}")
        out = _shift_invert(sys, count, vectors)
    vals, vecs = out if vectors else (out, None)
    if count < n:
        keep = _complete_prefix(sys, vals)
        vals = vals[:keep]
        vecs = None if vecs is None else vecs[:, :keep]
    if sys.disc.bc == DIRICHLET:
        vals = np.maximum(vals, 0.0)
    return (vals, vecs) if vectors else vals


def count_below(sys: AssembledSystem, sigma: float) -> int:
    """Number of eigenvalues below ``sigma``, from the inertia of ``K - sigma M``.

    Uses a symmetric LDL^T-type factorization (SuperLU restricted to diagonal
    pivots) and counts negative pivots.
    """
    A = (sys.K - sigma * sys.M).tocsc()
    lu = splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
              options={"SymmetricMode": True})
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise RuntimeError("factorization used off-diagonal pivots; inertia unavailable")
    d = lu.U.diagonal()
    if not np.all(np.isfinite(d)) or np.any(d == 0):
        raise RuntimeError(f"singular pivot at sigma={sigma!r}")
    return int(np.count_nonzero(d < 0))


CLUSTER_RTOL = 1e-9


def _complete_prefix(sys: AssembledSystem, vals: np.ndarray) -> int:
    """Length of the leading run of ``vals`` that contains every eigenvalue below it."""
    if len(vals) == 0:
        return 0
    top = vals[-1]
    hi = top + CLUSTER_RTOL * max(abs(top), 1.0)
    if count_below(sys, hi) == len(vals):
        return len(vals)
    lo = top - CLUSTER_RTOL * max(abs(top), 1.0)
    m = int(np.searchsorted(vals, lo, side="left"))
    if count_below(sys, lo) == m:
        return m
    raise RuntimeError("partial eigensolve missed eigenvalues (inertia mismatch)")


def _shift_invert(sys: AssembledSystem, count: int, vectors: bool):
    # sigma slightly below zero keeps K - sigma M definite in the Neumann case
    scale = abs(sys.K.diagonal()).max() / abs(sys.M.diagonal()).max()
    sigma = -1e-6 * scale
    n = sys.size
    for ncv in (None, min(n - 1, 3 * count)):
        vals, vecs = eigsh(sys.K.tocsc(), k=count, M=sys.M.tocsc(), sigma=sigma, which="LM",
                           tol=1e-12, ncv=ncv)
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        lo = vals[-1] * (1 - CLUSTER_RTOL)
        if count_below(sys, lo) == np.searchsorted(vals, lo):
            break
    else:
        raise RuntimeError("shift-invert Lanczos missed eigenvalues (inertia mismatch)")
    resid = sys.K @ vecs - (sys.M @ vecs) * vals
    rel = np.linalg.norm(resid, axis=0) / np.maximum(
        np.linalg.norm(sys.K @ vecs, axis=0), 1e-300)
    if np.any(rel[vals > 1e-9 * vals.max()] > 1e-8):
        raise RuntimeError("shift-invert eigenpairs failed the residual check")
    return (vals, vecs) if vectors else vals


def counting_function(spec: Spectrum | np.ndarray, x):
    """Number of eigenvalues <= x with multiplicity (vectorized in ``x``)."""
    lam = spec.eigenvalues if isinstance(spec, Spectrum) else np.asarray(spec)
    return np.searchsorted(lam, np.asarray(x), side="right")


def counting_gap(spec_n: Spectrum, spec_d: Spectrum, x, rtol: float = 1e-9) -> np.ndarray:
    """N_N(x) - N_D(x) on a grid.

    Both counts are taken at ``x * (1 + rtol)`` so that eigenvalues shared by
    the two problems (modes vanishing on the corner cells) are not split by
    round-off when a grid point coincides with one of them.
    """
    xs = np.asarray(x, dtype=float) * (1.0 + rtol)
    return counting_function(spec_n, xs) - counting_function(spec_d, xs)


def interval_spectrum(length: float, mass: float, bc=NEUMANN, count: int = 10) -> np.ndarray:
    """First ``count`` eigenvalues on a uniformly weighted interval."""
    if length <= 0 or mass <= 0:
        raise InvalidParameter("length and mass must be positive")
    k0 = 0 if _bc(bc) == NEUMANN else 1
    k = np.arange(k0, k0 + count, dtype=float)
    return k**2 * math.pi**2 / (length * mass)


def interval_discretization(length: float, mass: float, p: int, bc=NEUMANN) -> Discretization:
    """A single weighted interval meshed with ``p`` elements."""
    return Discretization(np.zeros(2), np.array([[0, 1, length, mass]], dtype=float),
                          np.array([p]), _bc(bc), (0, 1), {"interval": True})


# -- trust filter and fits ------------------------------------------------

TRUST_REL = 0.01
FINE_FRACTION = 0.25
ZERO_FLOOR = 1e-8


def spectrum_with_trust(graph: MetricGraph, mp: MeasureParams, p: int, bc=NEUMANN,
                        count=None, rel=TRUST_REL, grading: str = OPTICAL) -> Spectrum:
    """Spectrum of the assembly at ``p``, trusted up to the first eigenvalue
    that moves by ``rel`` or more when every element is halved."""
    disc = discretize(graph, mp, p, bc, grading)
    return _trusted_spectrum(disc, count, rel)


def _trusted_spectrum(disc: Discretization, count=None, rel=TRUST_REL) -> Spectrum:
    coarse = solve_eig(assemble_discretization(disc), count)
    fine_sys = assemble_discretization(disc.refined(2))
    n_check = len(coarse)
    if fine_sys.size > DENSE_CAP:
        # Lanczos cost grows quickly with the number of wanted pairs; only the
        # lower part of the coarse spectrum can be trusted anyway
        n_check = min(n_check, max(2 * MIN_TRUSTED, math.ceil(FINE_FRACTION * len(coarse))))
    fine = solve_eig(fine_sys, n_check)
    trusted = trusted_prefix(coarse, fine, rel)
    meta = dict(disc.meta, bc=disc.bc, dofs=disc.n_dofs, trust_rel=rel)
    return Spectrum(np.asarray(coarse), disc.bc, trusted, meta)


def trusted_prefix(coarse, fine, rel=TRUST_REL) -> int:
    m = min(len(coarse), len(fine))
    c, f = np.asarray(coarse[:m]), np.asarray(fine[:m])
    # the Neumann zero mode is compared on an absolute scale
    scale = np.maximum(np.abs(f), ZERO_FLOOR * max(abs(f).max(), 1.0))
    bad = np.nonzero(np.abs(c - f) > rel * scale)[0]
    return int(bad[0]) if len(bad) else m


def assemble_meta(graph, mp, p, bc):
    return {"alpha": graph.params.alpha, "n0": graph.params.n0, "level": graph.level,
            "beta": mp.beta, "p": p, "bc": bc}


@dataclass
class DimensionFit:
    slope: float
    stderr: float
    intercept: float
    window: tuple
    n_points: int
    regime: str
    rs: float
    predicted_exponent: float
    log_slope: float | None = None
    log_corr: float | None = None


def _linfit(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(len(x) - 2, 1)
    s2 = resid @ resid / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    corr = np.corrcoef(x, y)[0, 1] if np.std(y) > 0 else 0.0
    return coef[0], coef[1], math.sqrt(cov[0, 0]), corr


MIN_TRUSTED = 200
POINTS_PER_DECADE = 40
LOW_INDEX = 20


def fit_grid(spec: Spectrum, x_max=None) -> np.ndarray:
    lam = spec.eigenvalues
    lo = lam[LOW_INDEX]
    hi = spec.trust_cutoff if x_max is None else min(x_max, spec.trust_cutoff)
    if not hi > lo > 0:
        raise InsufficientData("empty fit window")
    decades = math.log10(hi / lo)
    npts = max(int(round(decades * POINTS_PER_DECADE)) + 1, 2)
    return np.geomspace(lo, hi, npts)


def dimension_fit(spec: Spectrum, hp: HanoiParams, mp: MeasureParams, x_max=None) -> DimensionFit:
    """Least-squares slope of log N(x) against log x over the trust window."""
    if spec.trusted < MIN_TRUSTED:
        raise InsufficientData(
            f"{spec.trusted} trusted eigenvalues, need at least {MIN_TRUSTED}")
    x = fit_grid(spec, x_max)
    return _fit_counts(x, counting_function(spec, x), hp, mp)


def _fit_counts(x, N, hp: HanoiParams, mp: MeasureParams) -> DimensionFit:
    info = rs_product(hp, mp)
    slope, intercept, stderr, _ = _linfit(np.log(x), np.log(N))
    fit = DimensionFit(slope, stderr, intercept, (float(x[0]), float(x[-1])), len(x),
                       info.regime, info.rs, info.counting_exponent)
    ls, _, _, lc = _linfit(np.log(x), N / np.sqrt(x))
    fit.log_slope, fit.log_corr = float(ls), float(lc)
    return fit


# -- counting by inertia ---------------------------------------------------
#
# Above a few thousand trusted eigenvalues it is far cheaper to evaluate the
# counting function directly: N(x) is the number of negative pivots of
# K - x M. The trust filter is then applied pointwise on the fit grid.


@dataclass
class CountingProfile:
    """N(x) on the geometric fit grid, up to the last trusted grid point."""

    x: np.ndarray
    counts: np.ndarray
    bc: str
    meta: dict = field(default_factory=dict)

    @property
    def window(self) -> tuple:
        return float(self.x[0]), float(self.x[-1])


def count_grid(sys: AssembledSystem, x, rtol: float = CLUSTER_RTOL) -> np.ndarray:
    """N(x) = #{eigenvalues <= x} at each grid point, from inertia.

    Counts are taken at ``x * (1 + rtol)`` so an eigenvalue sitting exactly on
    a grid point is counted (see :func:`counting_gap`).
    """
    return np.array([count_below(sys, float(v) * (1.0 + rtol)) for v in np.atleast_1d(x)])


def eigenvalue_by_index(sys: AssembledSystem, k: int, rtol: float = 1e-10) -> float:
    """The ``k``-th eigenvalue (0-based) by bisection on the inertia count."""
    if not 0 <= k < sys.size:
        raise InvalidParameter(f"index {k} outside 0..{sys.size - 1}")
    lo, hi = 0.0, 1.0
    while count_below(sys, hi) <= k:
        lo, hi = hi, 2.0 * hi
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if count_below(sys, mid) <= k:
            lo = mid
        else:
            hi = mid
    return hi


def cell_scale(graph: MetricGraph, hp: HanoiParams, mp: MeasureParams, p: int = 64,
               grading: str = OPTICAL) -> float:
    """Spectral scale of a single level-n cell.

    A level-n cell is a copy of the whole space with energy scaled by
    ``r^-n`` and mass by ``s^n``, so its lowest Dirichlet eigenvalue is
    ``lambda_1^D / (rs)^n``. The collapsed model carries no structure inside
    its cells, so counts above this scale no longer describe the fractal and
    fit windows are capped there. ``lambda_1^D`` is taken from the level-n
    model itself. It increases with n towards the value of the limit space,
    so the cap errs low.
    """
    rs = rs_product(hp, mp).rs
    lam = eigenvalue_by_index(assemble(graph, mp, p, DIRICHLET, grading), 0)
    return lam / rs ** graph.level


def counting_profile(graph: MetricGraph, mp: MeasureParams, p: int, bc=NEUMANN,
                     x_max=None, rel=TRUST_REL, grading: str = OPTICAL) -> CountingProfile:
    """Counting function of the assembly at ``p`` on the fit grid.

    The grid starts at lambda_20 with ``POINTS_PER_DECADE`` points per decade
    and stops before the first point x where halving every element moves
    some eigenvalue below x by ``rel`` or more, detected as
    ``N_2p(x / (1 + rel)) > N_p(x)``. Halving nests the element spaces, so
    eigenvalues can only decrease under refinement and this one-sided test
    is the whole trust condition at x.
    """
    disc = discretize(graph, mp, p, bc, grading)
    coarse = assemble_discretization(disc)
    fine = assemble_discretization(disc.refined(2))
    lo = eigenvalue_by_index(coarse, LOW_INDEX)
    step = 10.0 ** (1.0 / POINTS_PER_DECADE)
    xs, counts = [], []
    x = lo
    while x_max is None or x <= x_max * (1 + 1e-12):
        n = int(count_grid(coarse, x)[0])
        if count_below(fine, x / (1.0 + rel)) > n or n >= coarse.size:
            break
        xs.append(x)
        counts.append(n)
        x = lo * step ** len(xs)
    meta = dict(disc.meta, bc=disc.bc, dofs=disc.n_dofs, trust_rel=rel, method="inertia")
    return CountingProfile(np.array(xs), np.array(counts, dtype=int), disc.bc, meta)


def profile_fit(profile: CountingProfile, hp: HanoiParams, mp: MeasureParams) -> DimensionFit:
    """:func:`dimension_fit` for a counting profile."""
    if len(profile.x) < 2 or profile.counts[-1] < MIN_TRUSTED:
        top = int(profile.counts[-1]) if len(profile.counts) else 0
        raise InsufficientData(
            f"trusted window holds {top} eigenvalues, need at least {MIN_TRUSTED}")
    return _fit_counts(profile.x, profile.counts, hp, mp)
