import csv
import json
import os

import numpy as np
import pytest

from fqg.cli import main
from fqg.errors import InvalidParameter
from fqg.output import fmt, validate_manifest


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_build_level_two(tmp_path):
    out = tmp_path / "g.json"
    assert main(["build", "--alpha", "0.2", "--n0", "3", "--level", "2", "--out", str(out)]) == 0
    g = json.loads(out.read_text())
    assert g["counts"]["joining"] == 12
    assert len(g["vertices"]) == 27


def test_build_level_zero(tmp_path):
    out = tmp_path / "g.json"
    assert main(["build", "--alpha", "0.2", "--level", "0", "--out", str(out)]) == 0
    g = json.loads(out.read_text())
    assert g["counts"] == {"vertices": 3, "edges": 3, "joining": 0, "triangle": 3}


def test_build_invalid_alpha(tmp_path, capsys):
    assert main(["build", "--alpha", "1.5", "--out", str(tmp_path / "g.json")]) == 2
    assert not (tmp_path / "g.json").exists()


def test_build_resource_cap(tmp_path):
    assert main(["build", "--alpha", "0.2", "--level", "14", "--out", str(tmp_path / "g.json")]) == 3


def test_resistance_csv_and_manifest(tmp_path):
    out = tmp_path / "r.csv"
    args = ["resistance", "--alpha", "0.2", "--levels", "0..8", "--out", str(out)]
    assert main(args) == 0
    rows = read_csv(out)
    assert list(rows[0]) == ["n", "R_shorted", "R_full", "rec_lower", "rec_upper", "limit"]
    last = rows[-1]
    assert abs(float(last["R_shorted"]) - 0.4) < 2e-2
    assert abs(float(last["R_full"]) - 0.4) < 2e-2
    assert float(last["limit"]) == 0.4
    manifest = json.loads((tmp_path / "r.csv.manifest.json").read_text())
    assert validate_manifest(manifest) == []
    assert manifest["params"]["alpha"] == 0.2
    first = out.read_bytes()
    assert main(args) == 0
    assert out.read_bytes() == first


def test_resistance_n0_4_has_empty_limit(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["resistance", "--alpha", "0.2", "--n0", "4", "--levels", "0..3",
                 "--out", str(out)]) == 0
    rows = read_csv(out)
    assert all(r["limit"] == "" for r in rows)
    lo = [float(r["R_shorted"]) for r in rows]
    hi = [float(r["R_full"]) for r in rows]
    assert lo == sorted(lo) and hi == sorted(hi, reverse=True)


def test_spectrum_and_bad_beta(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["spectrum", "--alpha", "0.2", "--beta", "0.1", "--level", "2",
                 "--fem-nodes", "8", "--bc", "d", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0]["index"] == "0" and rows[0]["trusted"] in ("true", "false")
    lam = [float(r["lambda"]) for r in rows]
    assert lam == sorted(lam)
    assert main(["spectrum", "--alpha", "0.2", "--beta", "0.4", "--out", str(out)]) == 2


def test_dimension_insufficient(tmp_path):
    assert main(["dimension", "--alpha", "0.2", "--beta", "0.1", "--level", "2",
                 "--fem-nodes", "4", "--out", str(tmp_path / "f.json")]) == 4


def test_dimension_report(tmp_path):
    out = tmp_path / "f.json"
    assert main(["dimension", "--alpha", "0.02", "--beta", "0.02", "--level", "4",
                 "--fem-nodes", "128", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["regime"] == "iii"
    assert set(rep) >= {"params", "rs", "regime", "predicted_exponent", "fitted_slope", "stderr",
                        "window", "log_diag"}
    assert rep["fitted_slope"] > 0


def test_heat_rejects_small_alpha(tmp_path, capsys):
    assert main(["heat", "--alpha", "0.3", "--out", str(tmp_path / "h.json")]) == 2
    assert "infinite length" in capsys.readouterr().err


def test_heat_small(tmp_path):
    out, kcsv = tmp_path / "h.json", tmp_path / "k.csv"
    assert main(["heat", "--alpha", "0.5", "--level", "2", "--kmax", "300", "--fem-nodes", "60",
                 "--t", "0.01..0.1", "--samples", "10", "--out", str(out), "--csv", str(kcsv)]) == 0
    rep = json.loads(out.read_text())
    assert len(rep["band"]) == 2 and rep["ratio"] >= 1
    assert list(read_csv(kcsv)[0]) == ["t", "x_edge", "x_off", "y_edge", "y_off", "p"]


def test_broom(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["broom", "--kmax", "100", "--out", str(out)]) == 0
    last = read_csv(out)[-1]
    assert abs(float(last["r_gap"]) - 2.00005) < 1e-6


@pytest.mark.parametrize("value,text", [(0.1, "0.1"), (1 / 3, "0.3333333333333333"), (3, "3"),
                                        (None, ""), (float("inf"), "inf"), (True, "true")])
def test_number_format(value, text):
    assert fmt(value) == text
    if isinstance(value, float) and value == value and abs(value) != float("inf"):
        assert float(fmt(value)) == value


def test_manifest_validation(tmp_path):
    bad = {"command": "x", "params": {}, "version": "0", "outputs": [str(tmp_path / "none")],
           "wall_time": 0.1}
    assert validate_manifest(bad) == [f"output {tmp_path / 'none'} does not exist"]
    assert "missing command" in validate_manifest({})


def test_graph_json_round_trip(tmp_path):
    from fqg.geometry import HanoiParams, build_level
    from fqg.output import graph_from_dict, graph_to_dict

    out = tmp_path / "g.json"
    assert main(["build", "--alpha", "0.2", "--level", "3", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["vertices"][5]["id"] == 5
    g = graph_from_dict(data)
    ref = build_level(HanoiParams(0.2), 3)
    assert np.array_equal(g.coords, ref.coords)
    assert [(e.u, e.v, e.length, e.kind, e.level, e.word) for e in g.edges] == \
        [(e.u, e.v, e.length, e.kind, e.level, e.word) for e in ref.edges]


def test_spectrum_length_measure(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["spectrum", "--alpha", "0.5", "--level", "2", "--measure", "length",
                 "--fem-nodes", "16", "--count", "30", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "index,lambda,trusted"
    assert len(lines) == 31
    assert abs(float(lines[1].split(",")[1])) < 1e-9
    assert main(["spectrum", "--alpha", "0.5", "--level", "2", "--measure", "length",
                 "--bc", "d", "--out", str(out)]) == 2
    assert main(["spectrum", "--alpha", "0.5", "--level", "2", "--out", str(out)]) == 2


def test_edge_weight_measures():
    from fqg.geometry import HanoiParams, build_level
    from fqg.measure import LENGTH, MU, MeasureParams, edge_weight

    g = build_level(HanoiParams(0.2), 2)
    tri = g.edges_of_kind("T")[0]
    join = g.edges_of_kind("J")[0]
    mp = MeasureParams(0.1)
    assert edge_weight(tri, LENGTH) == tri.length
    assert edge_weight(join, MU, mp) == 0.1
    with pytest.raises(InvalidParameter):
        edge_weight(tri, MU, mp)
    with pytest.raises(InvalidParameter):
        edge_weight(join, "lebesgue", mp)


def test_dimension_inertia_solver(tmp_path):
    out, counts = tmp_path / "fit.json", tmp_path / "counts.csv"
    assert main(["dimension", "--alpha", "0.2", "--beta", "0.1", "--level", "4",
                 "--fem-nodes", "256", "--bc", "d", "--solver", "inertia",
                 "--out", str(out), "--spectrum-out", str(counts)]) == 0
    rep = json.loads(out.read_text())
    assert rep["params"]["solver"] == "inertia"
    assert rep["regime"] == "i" and 0.45 < rep["fitted_slope"] < 0.6
    rows = read_csv(counts)
    assert int(rows[-1]["count"]) == rep["trusted"]
    assert float(rows[0]["x"]) == rep["window"][0]
    # the cell-scale cap shortens the window
    capped = tmp_path / "capped.json"
    assert main(["dimension", "--alpha", "0.2", "--beta", "0.1", "--level", "4",
                 "--fem-nodes", "256", "--bc", "d", "--solver", "inertia",
                 "--x-max", "cell", "--out", str(capped)]) == 0
    assert json.loads(capped.read_text())["window"][1] < rep["window"][1]
    # too coarse a mesh leaves fewer than 200 eigenvalues in the window
    assert main(["dimension", "--alpha", "0.2", "--beta", "0.1", "--level", "2",
                 "--fem-nodes", "4", "--solver", "inertia", "--out", str(out)]) == 4
