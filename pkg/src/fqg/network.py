"""Resistor networks: Laplacian solves, Delta-Y reduction and corner resistances."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import cg, splu

from .errors import InvalidParameter
from .geometry import JOINING, HanoiParams, MetricGraph, build_level

DIRECT_CAP = 20_000


@dataclass
class ResistorNetwork:
    """Multigraph of resistors. Nodes are arbitrary hashable ids."""

    nodes: list
    resistors: list = field(default_factory=list)  # (a, b, rho)
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = list(self.nodes)
        for a, b, rho in self.resistors:
            if not rho > 0:
                raise InvalidParameter(f"resistance must be positive, got {rho}")

    def copy(self) -> "ResistorNetwork":
        return ResistorNetwork(list(self.nodes), list(self.resistors), dict(self.labels))

    def index(self) -> dict:
        return {v: i for i, v in enumerate(self.nodes)}

    def node(self, key):
        """Resolve a label or a node id."""
        return self.labels.get(key, key)

    def laplacian(self) -> sp.csr_matrix:
        idx = self.index()
        n = len(self.nodes)
        if not self.resistors:
            return sp.csr_matrix((n, n))
        a = np.array([idx[x] for x, _, _ in self.resistors])
        b = np.array([idx[y] for _, y, _ in self.resistors])
        c = 1.0 / np.array([rho for _, _, rho in self.resistors])
        rows = np.concatenate([a, b, a, b])
        cols = np.concatenate([a, b, b, a])
        data = np.concatenate([c, c, -c, -c])
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    def is_connected(self) -> bool:
        if len(self.nodes) <= 1:
            return True
        ncomp, _ = connected_components(abs(self.laplacian()), directed=False)
        return ncomp == 1

    # -- local reductions -------------------------------------------------

    def incident(self, v):
        return [k for k, (a, b, _) in enumerate(self.resistors) if a == v or b == v]

    def between(self, a, b):
        return [k for k, (x, y, _) in enumerate(self.resistors) if {x, y} == {a, b}]

    def merge_parallel(self, a, b) -> float:
        ks = self.between(a, b)
        if len(ks) < 2:
            return self.resistors[ks[0]][2]
        g = math.fsum(1.0 / self.resistors[k][2] for k in ks)
        for k in sorted(ks, reverse=True):
            del self.resistors[k]
        self.resistors.append((a, b, 1.0 / g))
        return 1.0 / g

    def eliminate_series(self, v) -> float:
        """Remove a degree-2 node by joining its two resistors."""
        ks = self.incident(v)
        if len(ks) != 2:
            raise InvalidParameter(f"node {v!r} has degree {len(ks)}, not 2")
        ends, total = [], 0.0
        for k in ks:
            a, b, rho = self.resistors[k]
            ends.append(b if a == v else a)
            total += rho
        for k in sorted(ks, reverse=True):
            del self.resistors[k]
        self.resistors.append((ends[0], ends[1], total))
        self.nodes.remove(v)
        return total

    def delta_to_y_at(self, a, b, c, center) -> tuple:
        """Replace the triangle on ``a, b, c`` by a star around new node ``center``."""
        rho = []
        for x, y in ((a, b), (b, c), (c, a)):
            ks = self.between(x, y)
            if len(ks) != 1:
                raise InvalidParameter(f"expected one resistor between {x!r} and {y!r}")
            rho.append(self.resistors[ks[0]][2])
        for x, y in ((a, b), (b, c), (c, a)):
            del self.resistors[self.between(x, y)[0]]
        arms = delta_to_y(*rho)
        self.nodes.append(center)
        for x, arm in zip((a, b, c), arms):
            self.resistors.append((center, x, arm))
        return arms


def delta_to_y(r_ab: float, r_bc: float, r_ca: float) -> tuple:
    """Star arms (at a, b, c) equivalent to a delta with the given sides."""
    if min(r_ab, r_bc, r_ca) <= 0:
        raise InvalidParameter("delta resistances must be positive")
    s = r_ab + r_bc + r_ca
    return r_ab * r_ca / s, r_ab * r_bc / s, r_bc * r_ca / s


def y_to_delta(arm_a: float, arm_b: float, arm_c: float) -> tuple:
    """Delta sides (ab, bc, ca) equivalent to a star with the given arms."""
    if min(arm_a, arm_b, arm_c) <= 0:
        raise InvalidParameter("star resistances must be positive")
    p = arm_a * arm_b + arm_b * arm_c + arm_c * arm_a
    return p / arm_c, p / arm_a, p / arm_b


def _grounded_solver(lap: sp.csr_matrix, ground: int):
    n = lap.shape[0]
    keep = np.r_[0:ground, ground + 1:n]
    sub = lap[keep][:, keep].tocsc()
    if n - 1 <= DIRECT_CAP:
        lu = splu(sub)
        return keep, lu.solve
    diag = sub.diagonal()

    def solve(rhs):
        x, info = cg(sub, rhs, rtol=1e-12, atol=0.0, maxiter=20 * n,
                     M=sp.diags(1.0 / diag))
        if info != 0:
            raise RuntimeError("conjugate gradient did not converge")
        return x
    return keep, solve


def effective_resistances(net: ResistorNetwork, pairs) -> np.ndarray:
    """Effective resistance for each (a, b) pair with one factorization."""
    idx = net.index()
    pairs = [(net.node(a), net.node(b)) for a, b in pairs]
    for a, b in pairs:
        if a not in idx or b not in idx:
            raise InvalidParameter(f"unknown node in pair ({a!r}, {b!r})")
    if not net.is_connected():
        raise InvalidParameter("network is disconnected")
    n = len(net.nodes)
    out = np.zeros(len(pairs))
    if n == 1:
        return out
    keep, solve = _grounded_solver(net.laplacian(), n - 1)
    pos = np.full(n, -1)
    pos[keep] = np.arange(n - 1)
    for k, (a, b) in enumerate(pairs):
        ia, ib = idx[a], idx[b]
        if ia == ib:
            continue
        rhs = np.zeros(n - 1)
        if pos[ia] >= 0:
            rhs[pos[ia]] += 1.0
        if pos[ib] >= 0:
            rhs[pos[ib]] -= 1.0
        x = solve(rhs)
        va = x[pos[ia]] if pos[ia] >= 0 else 0.0
        vb = x[pos[ib]] if pos[ib] >= 0 else 0.0
        out[k] = va - vb
    return out


def effective_resistance(net: ResistorNetwork, a, b) -> float:
    a, b = net.node(a), net.node(b)
    if a == b:
        raise InvalidParameter("effective resistance needs two distinct nodes")
    return float(effective_resistances(net, [(a, b)])[0])


def shorted_network(graph: MetricGraph) -> ResistorNetwork:
    """Contract every level-n cell to a node; joining edges become resistors."""
    if graph.cell_of is None:
        raise InvalidParameter("shorted network needs a Hanoi build")
    cells = sorted(set(graph.cell_of))
    res = [(graph.cell_of[e.u], graph.cell_of[e.v], e.length)
           for e in graph.edges if e.kind == JOINING]
    labels = {("corner", i): graph.cell_of[c] for i, c in enumerate(graph.corners)}
    return ResistorNetwork(cells, res, labels)


def full_network(graph: MetricGraph, points=()) -> ResistorNetwork:
    """One node per vertex and one resistor per edge.

    Extra ``points`` (edge, offset) are inserted as nodes labelled
    ``("point", k)`` by splitting their edges.
    """
    nodes = list(range(graph.n_vertices))
    labels = {("corner", i): c for i, c in enumerate(graph.corners)}
    on_edge = {}
    for k, pt in enumerate(points):
        if isinstance(pt, (int, np.integer)):
            labels[("point", k)] = int(pt)
            continue
        eid, off = pt
        e = graph.edges[eid]
        if off <= 0.0:
            labels[("point", k)] = e.u
        elif off >= e.length:
            labels[("point", k)] = e.v
        else:
            on_edge.setdefault(eid, []).append((off, k))
    res = []
    for e in graph.edges:
        if e.id not in on_edge:
            res.append((e.u, e.v, e.length))
            continue
        chain, prev_off, prev = sorted(on_edge[e.id]), 0.0, e.u
        for off, k in chain:
            if off == prev_off:
                labels[("point", k)] = prev
                continue
            node = ("p", e.id, off)
            nodes.append(node)
            res.append((prev, node, off - prev_off))
            labels[("point", k)] = node
            prev, prev_off = node, off
        res.append((prev, e.v, e.length - prev_off))
    return ResistorNetwork(nodes, res, labels)


def recurrence_step(wire: float, alpha: float) -> float:
    """Wire resistance of the next-level equivalent triangle."""
    r = (1.0 - alpha) / 2.0
    if not 5.0 * r / 3.0 < 1.0:
        raise InvalidParameter("contraction factor 5r/3 must be below 1")
    return 5.0 / 3.0 * r * wire + alpha


def recurrence_fixed_point(alpha: float) -> float:
    return 6.0 * alpha / (1.0 + 5.0 * alpha)


def corner_resistance_limit(alpha: float) -> float:
    if not 0.0 < alpha <= 1.0:
        raise InvalidParameter(f"alpha must lie in (0, 1], got {alpha}")
    return 4.0 * alpha / (1.0 + 5.0 * alpha)


def recurrence_corner_resistance(alpha: float, n: int, seed: float) -> float:
    """Corner resistance 2/3 * wire after ``n`` steps from wire ``seed``."""
    w = seed
    for _ in range(n):
        w = recurrence_step(w, alpha)
    return 2.0 * w / 3.0


@dataclass
class ReductionTrace:
    steps: list = field(default_factory=list)  # (kind, nodes, values)

    def add(self, kind, nodes, values):
        self.steps.append((kind, tuple(nodes), tuple(values)))


def level_one_network(alpha: float, wire: float) -> ResistorNetwork:
    """Level-1 Hanoi network whose three cells are triangles of wire ``r*wire``."""
    r = (1.0 - alpha) / 2.0
    res = []
    for i in range(3):
        for a, b in ((0, 1), (1, 2), (2, 0)):
            res.append(((i, a), (i, b), r * wire))
    for i, j in ((0, 1), (1, 2), (2, 0)):
        res.append(((i, j), (j, i), alpha))
    nodes = [(i, a) for i in range(3) for a in range(3)]
    labels = {("corner", i): (i, i) for i in range(3)}
    return ResistorNetwork(nodes, res, labels)


def reduce_level_one(alpha: float, wire: float, check=None):
    """Reduce the level-1 network to a symmetric star on the three corners.

    Returns ``(arm, trace, net)``; the equivalent triangle wire is ``3*arm``.
    ``check(before, after)`` is called after every step when given.
    """
    net = level_one_network(alpha, wire)
    trace = ReductionTrace()

    def step(kind, nodes, values, before):
        trace.add(kind, nodes, values)
        if check is not None:
            check(before, net)

    # Each cell triangle becomes a star.
    for i in range(3):
        before = net.copy()
        arms = net.delta_to_y_at((i, 0), (i, 1), (i, 2), ("c", i))
        step("delta->Y", [(i, 0), (i, 1), (i, 2)], arms, before)
    # Collapse arm + joining + arm into a single side between cell centers.
    for i, j in ((0, 1), (1, 2), (2, 0)):
        for v in ((i, j), (j, i)):
            before = net.copy()
            value = net.eliminate_series(v)
            step("series", [v], [value], before)
    # Outer triangle on the centers becomes a star around the middle.
    before = net.copy()
    arms = net.delta_to_y_at(("c", 0), ("c", 1), ("c", 2), "m")
    step("delta->Y", [("c", 0), ("c", 1), ("c", 2)], arms, before)
    for i in range(3):
        before = net.copy()
        value = net.eliminate_series(("c", i))
        step("series", [("c", i)], [value], before)
    arm_values = [rho for _, _, rho in net.resistors]
    return arm_values[0], trace, net


@dataclass
class ResistanceSequence:
    alpha: float
    n0: int
    rows: list  # (n, R_shorted, R_full, rec_lower, rec_upper, limit)

    def column(self, k):
        return np.array([row[k] for row in self.rows], dtype=float)


def corner_resistances(params: HanoiParams, n: int, pair=(0, 1)) -> tuple:
    """(shorted, full) corner resistance at level ``n`` by Laplacian solves."""
    g = build_level(params, n)
    a, b = ("corner", pair[0]), ("corner", pair[1])
    full = effective_resistance(full_network(g), a, b)
    sn = shorted_network(g)
    shorted = 0.0 if n == 0 else effective_resistance(sn, a, b)
    return shorted, full


def resistance_sequence(alpha: float, n_max: int, n0: int = 3, n_min: int = 0,
                        pair=(0, 1)) -> ResistanceSequence:
    params = HanoiParams(alpha, n0)
    rows = []
    for n in range(n_min, n_max + 1):
        shorted, full = corner_resistances(params, n, pair)
        if n0 == 3:
            lower = recurrence_corner_resistance(alpha, n, 0.0)
            upper = recurrence_corner_resistance(alpha, n, 1.0)
            limit = corner_resistance_limit(alpha)
        else:
            lower = upper = limit = None
        rows.append((n, shorted, full, lower, upper, limit))
    return ResistanceSequence(alpha, n0, rows)
