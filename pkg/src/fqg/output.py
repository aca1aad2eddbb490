"""Serialization of graphs, tables and run manifests.

Floats are written as shortest round-trip decimals (at most 17 significant
digits), so reruns produce byte-identical files. Every write goes through a
temporary file in the target directory followed by an atomic rename.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter
from .geometry import Edge, HanoiParams, MetricGraph, word_str


def fmt(x) -> str:
    """Format a scalar for CSV output."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps_json(obj) -> str:
    # json uses repr() for floats, which is the shortest round-trip form
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def atomic_write(path: str, text: str):
    path = os.path.abspath(path)
    d = os.path.dirname(path)
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path: str, header, rows):
    atomic_write(path, csv_text(header, rows))


def write_json(path: str, obj):
    atomic_write(path, dumps_json(obj))


def graph_to_dict(graph: MetricGraph) -> dict:
    hp = graph.params
    return {
        "params": None if hp is None else {"alpha": hp.alpha, "n0": hp.n0},
        "level": graph.level,
        "vertices": [{"id": i, "coords": c} for i, c in enumerate(graph.coords.tolist())],
        "corners": list(graph.corners),
        "edges": [{"id": e.id, "u": e.u, "v": e.v, "len": e.length, "kind": e.kind,
                   "level": e.level, "word": word_str(e.word)} for e in graph.edges],
        "counts": {"vertices": graph.n_vertices, "edges": len(graph.edges),
                   "joining": len(graph.edges_of_kind("J")),
                   "triangle": len(graph.edges_of_kind("T"))},
    }


def graph_from_dict(data: dict) -> MetricGraph:
    """Inverse of :func:`graph_to_dict` (floats round-trip exactly)."""
    try:
        hp = None if data["params"] is None else HanoiParams(data["params"]["alpha"],
                                                             data["params"]["n0"])
        verts = sorted(data["vertices"], key=lambda v: v["id"])
        if [v["id"] for v in verts] != list(range(len(verts))):
            raise InvalidParameter("vertex ids must be 0..n-1")
        coords = np.array([v["coords"] for v in verts], dtype=float)
        edges = [Edge(e["id"], e["u"], e["v"], e["len"], e["kind"], e["level"],
                      tuple(int(ch) - 1 for ch in e.get("word", "")))
                 for e in data["edges"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidParameter(f"malformed graph JSON: {exc}") from None
    return MetricGraph(hp, data["level"], coords, edges, tuple(data.get("corners", ())))


RESISTANCE_HEADER = ("n", "R_shorted", "R_full", "rec_lower", "rec_upper", "limit")
SPECTRUM_HEADER = ("index", "lambda", "trusted")
COUNTS_HEADER = ("x", "count")
HEAT_HEADER = ("t", "x_edge", "x_off", "y_edge", "y_off", "p")
BROOM_HEADER = ("k", "euclidean_gap", "r_gap")


@dataclass
class RunManifest:
    command: str
    params: dict
    version: str
    outputs: list = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {"command": self.command, "params": self.params, "version": self.version,
                "outputs": sorted(self.outputs), "wall_time": self.wall_time}


MANIFEST_KEYS = {"command": str, "params": dict, "version": str, "outputs": list,
                 "wall_time": float}


def validate_manifest(data: dict) -> list:
    """Problems with a manifest dictionary (empty when it is valid)."""
    problems = []
    for key, typ in MANIFEST_KEYS.items():
        if key not in data:
            problems.append(f"missing {key}")
        elif not isinstance(data[key], typ) and not (typ is float and isinstance(data[key], int)):
            problems.append(f"{key} has type {type(data[key]).__name__}")
    for path in data.get("outputs", []):
        if not os.path.exists(path):
            problems.append(f"output {path} does not exist")
    return problems
