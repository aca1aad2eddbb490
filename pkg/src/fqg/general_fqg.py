"""Fractal quantum graphs given by finitely presented length systems.

A length system is a list of segments glued at junctions. Each segment has a
truncation stage (by default its id); the level-``n`` approximation keeps the
open segments of stage ``<= n`` as wires and collapses every connected piece
of the remainder to a point. Effective resistance on the collapsed network is
the pseudo-metric ``R_n``.

JSON layout::

    {"segments": [{"id": 1, "len": 0.5, "a": "j1", "b": "j2", "level": 1}, ...],
     "junctions": ["j1", "j2", ...],
     "coords": {"j1": [0.0, 0.0], ...}}

``level`` and ``coords`` are optional.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .errors import InvalidParameter, ResourceCap
from .geometry import HanoiParams, word_str

SEGMENT_CAP = 2_000_000


@dataclass(frozen=True)
class Segment:
    id: int
    length: float
    a: str
    b: str
    level: int

    def as_dict(self) -> dict:
        return {"id": self.id, "len": self.length, "a": self.a, "b": self.b, "level": self.level}


@dataclass
class LengthSystem:
    segments: list
    junctions: list
    coords: dict = field(default_factory=dict)

    def __post_init__(self):
        known = set(self.junctions)
        if len(known) != len(self.junctions):
            raise InvalidParameter("duplicate junction labels")
        ids = set()
        for s in self.segments:
            if not (s.length > 0 and math.isfinite(s.length)):
                raise InvalidParameter(f"segment {s.id} has non-positive length {s.length}")
            if s.a not in known or s.b not in known:
                raise InvalidParameter(f"segment {s.id} is glued to an unknown junction")
            if s.id in ids:
                raise InvalidParameter(f"duplicate segment id {s.id}")
            ids.add(s.id)
        self._by_id = {s.id: s for s in self.segments}
        self._jindex = {j: i for i, j in enumerate(self.junctions)}

    def segment(self, sid: int) -> Segment:
        try:
            return self._by_id[sid]
        except KeyError:
            raise InvalidParameter(f"unknown segment id {sid}") from None

    @property
    def max_level(self) -> int:
        return max((s.level for s in self.segments), default=0)

    def point_coords(self, point) -> np.ndarray:
        """Euclidean position of a junction or of a point on a straight segment."""
        if isinstance(point, str):
            if point not in self.coords:
                raise InvalidParameter(f"no coordinates for junction {point!r}")
            return np.asarray(self.coords[point], dtype=float)
        sid, off = point
        s = self.segment(sid)
        t = off / s.length
        return (1 - t) * self.point_coords(s.a) + t * self.point_coords(s.b)

    # serialization
    def to_dict(self) -> dict:
        out = {"segments": [s.as_dict() for s in self.segments],
               "junctions": list(self.junctions)}
        if self.coords:
            out["coords"] = {k: [float(c) for c in v] for k, v in self.coords.items()}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "LengthSystem":
        try:
            segs = [Segment(int(s["id"]), float(s["len"]), str(s["a"]), str(s["b"]),
                            int(s.get("level", s["id"]))) for s in data["segments"]]
            junctions = [str(j) for j in data["junctions"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidParameter(f"malformed length system: {exc}") from None
        return cls(segs, junctions, dict(data.get("coords", {})))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "LengthSystem":
        return cls.from_dict(json.loads(text))


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


@dataclass
class PseudoMetricTable:
    n: int
    pairs: list
    values: np.ndarray


def _truncated_network(sys: LengthSystem, n: int, points):
    """Nodes, resistors and node ids of ``points`` for the stage-``n`` network."""
    uf = _UnionFind(len(sys.junctions))
    kept = []
    for s in sys.segments:
        if s.level <= n:
            kept.append(s)
        else:
            uf.union(sys._jindex[s.a], sys._jindex[s.b])
    roots = sorted({uf.find(i) for i in range(len(sys.junctions))})
    comp = {r: k for k, r in enumerate(roots)}
    node = [comp[uf.find(i)] for i in range(len(sys.junctions))]
    n_nodes = len(roots)
    resistors = {s.id: (node[sys._jindex[s.a]], node[sys._jindex[s.b]], s.length) for s in kept}

    ids = []
    splits = {}
    for pt in points:
        if isinstance(pt, str):
            if pt not in sys._jindex:
                raise InvalidParameter(f"unknown junction {pt!r}")
            ids.append(node[sys._jindex[pt]])
            continue
        sid, off = pt
        s = sys.segment(sid)
        if not (-1e-12 <= off <= s.length + 1e-12):
            raise InvalidParameter(f"offset {off} outside segment {sid}")
        off = min(max(float(off), 0.0), s.length)
        if s.level > n:
            ids.append(node[sys._jindex[s.a]])  # collapsed with its whole component
        elif off == 0.0:
            ids.append(node[sys._jindex[s.a]])
        elif off == s.length:
            ids.append(node[sys._jindex[s.b]])
        else:
            cuts = splits.setdefault(sid, {})
            if off not in cuts:
                cuts[off] = n_nodes
                n_nodes += 1
            ids.append(cuts[off])
    edges = []
    for sid, (a, b, rho) in resistors.items():
        if sid not in splits:
            edges.append((a, b, rho))
            continue
        chain = [(0.0, a)] + sorted(splits[sid].items()) + [(sys.segment(sid).length, b)]
        for (x0, u), (x1, v) in zip(chain[:-1], chain[1:]):
            edges.append((u, v, x1 - x0))
    return n_nodes, edges, ids


def _resistances(n_nodes: int, edges, pairs) -> np.ndarray:
    """Two-point resistances from Laplacian solves, one per connected component."""
    out = np.zeros(len(pairs))
    if n_nodes == 1 or not pairs:
        return out
    e = [(a, b, rho) for a, b, rho in edges if a != b]
    if e:
        a, b, rho = (np.array(x) for x in zip(*e))
        g = 1.0 / rho.astype(float)
        L = sp.coo_matrix((np.concatenate([g, g, -g, -g]),
                           (np.concatenate([a, b, a, b]), np.concatenate([a, b, b, a]))),
                          shape=(n_nodes, n_nodes)).tocsc()
    else:
        L = sp.csc_matrix((n_nodes, n_nodes))
    ncomp, labels = connected_components(abs(L), directed=False)
    # ground the last node of every component
    ground = {c: int(np.flatnonzero(labels == c)[-1]) for c in range(ncomp)}
    keep = np.setdiff1d(np.arange(n_nodes), list(ground.values()))
    pos = -np.ones(n_nodes, dtype=int)
    pos[keep] = np.arange(len(keep))
    lu = splu(L[keep][:, keep].tocsc()) if len(keep) else None
    for i, (x, y) in enumerate(pairs):
        if x == y:
            continue
        if labels[x] != labels[y]:
            out[i] = math.inf
            continue
        rhs = np.zeros(len(keep))
        if pos[x] >= 0:
            rhs[pos[x]] += 1.0
        if pos[y] >= 0:
            rhs[pos[y]] -= 1.0
        v = lu.solve(rhs)
        vx = v[pos[x]] if pos[x] >= 0 else 0.0
        vy = v[pos[y]] if pos[y] >= 0 else 0.0
        out[i] = vx - vy
    return out


def rn_pseudometric(sys: LengthSystem, n: int, pairs) -> PseudoMetricTable:
    """R_n for each pair of points (junction labels or ``(segment_id, offset)``)."""
    pts = [p for pair in pairs for p in pair]
    n_nodes, edges, ids = _truncated_network(sys, n, pts)
    node_pairs = list(zip(ids[0::2], ids[1::2]))
    return PseudoMetricTable(n, list(pairs), _resistances(n_nodes, edges, node_pairs))


@dataclass
class ProbeResult:
    pair: tuple
    values: np.ndarray  # R_1 .. R_nmax
    monotone: bool
    gap: float
    all_zero: bool


def convergence_probe(sys: LengthSystem, pairs, n_max: int, tol: float = 1e-10) -> list:
    """The tower R_1..R_{n_max} per pair with monotonicity and last-gap flags."""
    if n_max < 1:
        raise InvalidParameter("n_max must be at least 1")
    tower = np.array([rn_pseudometric(sys, n, pairs).values for n in range(1, n_max + 1)])
    out = []
    for i, pair in enumerate(pairs):
        vals = tower[:, i]
        mono = bool(np.all(np.diff(vals) >= -tol))
        gap = float(vals[-1] - vals[-2]) if n_max > 1 else float(vals[-1])
        out.append(ProbeResult(tuple(pair), vals, mono, gap, bool(np.all(vals == 0.0))))
    return out


def hanoi_length_system(params: HanoiParams, depth: int,
                        segment_cap: int = SEGMENT_CAP) -> LengthSystem:
    """Length system of the Hanoi graph whose junctions are the depth-level cells.

    Joining segments of level ``k`` have stage ``k``, so truncating at
    ``n <= depth`` merges depth-cells into n-cells. The corner ``p_i`` is the
    junction ``str(i) * depth``; junction labels are cell words.
    """
    n0 = params.n0
    if depth < 0:
        raise InvalidParameter("depth must be non-negative")
    count = n0 * (n0 - 1) // 2 * (n0**depth - 1) // (n0 - 1)
    if count > segment_cap:
        raise ResourceCap(f"{count} segments exceed cap {segment_cap}")
    junctions = [word_str(w) for w in itertools.product(range(n0), repeat=depth)]
    segs = []
    sid = 1
    for k in range(1, depth + 1):
        length = params.alpha * params.r ** (k - 1)
        pad = depth - k
        for w in itertools.product(range(n0), repeat=k - 1):
            for i, j in itertools.combinations(range(n0), 2):
                a = word_str(w + (i,) + (j,) * pad)
                b = word_str(w + (j,) + (i,) * pad)
                segs.append(Segment(sid, length, a, b, k))
                sid += 1
    return LengthSystem(segs, junctions)


def hanoi_corner(params: HanoiParams, depth: int, i: int) -> str:
    return word_str((i,) * depth)


BROOM_HANDLE = "handle"
BROOM_ORIGIN = "o"


def broom_system(k_max: int) -> LengthSystem:
    """The infinite broom truncated to bristles 1..k_max.

    Handle: segment 0 from the origin to (1, 0). Bristle k: segment k from the
    origin to (1, 1/k), of length sqrt(1 + k^-2).
    """
    if k_max < 1:
        raise InvalidParameter("k_max must be at least 1")
    junctions = [BROOM_ORIGIN, BROOM_HANDLE]
    coords = {BROOM_ORIGIN: [0.0, 0.0], BROOM_HANDLE: [1.0, 0.0]}
    segs = [Segment(0, 1.0, BROOM_ORIGIN, BROOM_HANDLE, 0)]
    for k in range(1, k_max + 1):
        tip = f"t{k}"
        junctions.append(tip)
        coords[tip] = [1.0, 1.0 / k]
        segs.append(Segment(k, math.sqrt(1.0 + k**-2.0), BROOM_ORIGIN, tip, k))
    return LengthSystem(segs, junctions, coords)


@dataclass(frozen=True)
class BroomRow:
    k: int
    euclidean_gap: float
    r_gap: float


def broom_demo(k_max: int) -> list:
    """Per bristle k: Euclidean and resistance distance from its tip to the handle tip."""
    sys = broom_system(k_max)
    pairs = [(f"t{k}", BROOM_HANDLE) for k in range(1, k_max + 1)]
    r = rn_pseudometric(sys, k_max, pairs).values
    hp = sys.point_coords(BROOM_HANDLE)
    return [BroomRow(k, float(np.linalg.norm(sys.point_coords(f"t{k}") - hp)), float(r[k - 1]))
            for k in range(1, k_max + 1)]
