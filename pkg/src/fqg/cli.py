"""Command-line front end.

Exit codes: 0 success, 2 invalid parameters, 3 resource cap, 4 insufficient
data. ``FQG_THREADS`` caps the BLAS/OpenMP thread pools.
"""
from __future__ import annotations

import os

_threads = os.environ.get("FQG_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .errors import InsufficientData, InvalidParameter, ResourceCap  # noqa: E402

EXIT_OK, EXIT_INVALID, EXIT_CAP, EXIT_DATA = 0, 2, 3, 4

log = logging.getLogger("fqg")


def _range(text: str, kind=float):
    """Parse ``a..b`` (or a single value) into a pair."""
    parts = text.split("..")
    try:
        if len(parts) == 1:
            v = kind(parts[0])
            return v, v
        if len(parts) == 2:
            return kind(parts[0]), kind(parts[1])
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"expected a value or a range a..b, got {text!r}")


def _int_range(text):
    return _range(text, int)


def _pair(text):
    try:
        i, j = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected i,j, got {text!r}") from None
    return i, j


class _Run:
    """Collects outputs and writes the manifest next to the primary output."""

    def __init__(self, args):
        self.args = args
        self.outputs = []
        self.start = time.perf_counter()

    def csv(self, path, header, rows):
        from .output import write_csv
        write_csv(path, header, rows)
        self.outputs.append(os.path.abspath(path))

    def json(self, path, obj):
        from .output import write_json
        write_json(path, obj)
        self.outputs.append(os.path.abspath(path))

    def finish(self):
        from .output import RunManifest, write_json
        if not self.outputs:
            return
        params = {k: v for k, v in vars(self.args).items() if k != "func"}
        m = RunManifest(self.args.command, params, __version__, list(self.outputs),
                        time.perf_counter() - self.start)
        write_json(self.outputs[0] + ".manifest.json", m.to_dict())


def cmd_build(args, run):
    from .geometry import HanoiParams, build_level
    from .output import graph_to_dict
    g = build_level(HanoiParams(args.alpha, args.n0), args.level)
    run.json(args.out, graph_to_dict(g))
    print(f"level {args.level}: {g.n_vertices} vertices, {len(g.edges)} edges")


def cmd_resistance(args, run):
    from .network import resistance_sequence
    from .output import RESISTANCE_HEADER
    lo, hi = args.levels
    if lo < 0 or hi < lo:
        raise InvalidParameter(f"bad level range {lo}..{hi}")
    seq = resistance_sequence(args.alpha, hi, args.n0, lo, args.pair)
    run.csv(args.out, RESISTANCE_HEADER, seq.rows)
    last = seq.rows[-1]
    print(f"n={last[0]} R_shorted={last[1]:.12g} R_full={last[2]:.12g}")


def _spectrum(args):
    from .geometry import HanoiParams, build_level
    from .measure import MeasureParams
    from .spectral import spectrum_with_trust
    hp = HanoiParams(args.alpha, args.n0)
    if args.beta is None:
        raise InvalidParameter("--beta is required with --measure mu")
    mp = MeasureParams(args.beta, args.n0)
    hp.require_fractal()
    g = build_level(hp, args.level)
    spec = spectrum_with_trust(g, mp, args.fem_nodes, args.bc, count=args.count)
    return hp, mp, spec


def _write_spectrum(run, path, spec):
    from .output import SPECTRUM_HEADER
    rows = ((i, lam, i < spec.trusted) for i, lam in enumerate(spec.eigenvalues))
    run.csv(path, SPECTRUM_HEADER, rows)


def _length_spectrum(args):
    """Kirchhoff spectrum of the full level graph under the length measure.

    Eigenvalues at ``p`` and ``2p`` elements on the longest edge are compared
    and the agreeing prefix is marked trusted.
    """
    from .geometry import HanoiParams, build_level
    from .heat import full_graph_spectrum
    from .spectral import Spectrum, trusted_prefix
    if args.bc != "n":
        raise InvalidParameter("--measure length supports Kirchhoff (--bc n) only")
    g = build_level(HanoiParams(args.alpha, args.n0), args.level)
    count = args.count or 800
    coarse = full_graph_spectrum(g, args.fem_nodes, count)
    fine = full_graph_spectrum(g, 2 * args.fem_nodes, count)
    lam = coarse.eigenvalues
    return Spectrum(lam, "n", trusted_prefix(lam, fine.eigenvalues),
                    {"measure": "length", **coarse.meta})


def cmd_spectrum(args, run):
    if args.measure == "length":
        spec = _length_spectrum(args)
    else:
        _, _, spec = _spectrum(args)
    _write_spectrum(run, args.out, spec)
    print(f"{len(spec.eigenvalues)} eigenvalues, {spec.trusted} trusted "
          f"(cutoff {spec.trust_cutoff:.6g})")


def cmd_dimension(args, run):
    from .spectral import dimension_fit
    if args.measure != "mu":
        raise InvalidParameter("the dimension fit is defined for --measure mu only")
    if args.solver == "inertia":
        hp, mp, fit, trusted, spec = _inertia_fit(args, run)
    else:
        hp, mp, spec = _spectrum(args)
        if args.spectrum_out:
            _write_spectrum(run, args.spectrum_out, spec)
        fit = dimension_fit(spec, hp, mp, _resolve_x_max(args, hp, mp))
        trusted = spec.trusted
    report = {
        "params": {"alpha": hp.alpha, "beta": mp.beta, "n0": hp.n0, "level": args.level,
                   "fem_nodes": args.fem_nodes, "bc": spec.bc, "solver": args.solver},
        "rs": fit.rs, "regime": fit.regime, "predicted_exponent": fit.predicted_exponent,
        "fitted_slope": fit.slope, "stderr": fit.stderr, "window": list(fit.window),
        "log_diag": {"slope": fit.log_slope, "corr": fit.log_corr},
        "trusted": trusted,
    }
    run.json(args.out, report)
    print(f"regime {fit.regime}: slope {fit.slope:.4f} +- {fit.stderr:.4f} "
          f"(predicted {fit.predicted_exponent:.4f})")


def _x_max(text):
    if text == "cell":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'cell', got {text!r}") from None


def _resolve_x_max(args, hp, mp, graph=None):
    if args.x_max != "cell":
        return args.x_max
    from .geometry import build_level
    from .spectral import cell_scale
    return cell_scale(graph if graph is not None else build_level(hp, args.level), hp, mp)


def _inertia_fit(args, run):
    from .geometry import HanoiParams, build_level
    from .measure import MeasureParams
    from .output import COUNTS_HEADER
    from .spectral import counting_profile, profile_fit
    hp = HanoiParams(args.alpha, args.n0)
    if args.beta is None:
        raise InvalidParameter("--beta is required with --measure mu")
    mp = MeasureParams(args.beta, args.n0)
    hp.require_fractal()
    graph = build_level(hp, args.level)
    prof = counting_profile(graph, mp, args.fem_nodes, args.bc,
                            x_max=_resolve_x_max(args, hp, mp, graph))
    if args.spectrum_out:
        run.csv(args.spectrum_out, COUNTS_HEADER, zip(prof.x, prof.counts))
    fit = profile_fit(prof, hp, mp)
    return hp, mp, fit, int(prof.counts[-1]), prof


def cmd_heat(args, run):
    from .geometry import HanoiParams, build_level
    from .heat import full_graph_spectrum, gaussian_diagnostic, kernel_matrix, sample_points
    from .output import HEAT_HEADER
    hp = HanoiParams(args.alpha, args.n0)
    g = build_level(hp, args.level)
    setup = full_graph_spectrum(g, args.fem_nodes, args.kmax)
    rep = gaussian_diagnostic(setup, args.t, samples=args.samples, seed=args.sample_seed)
    out = rep.as_dict()
    out.update({"alpha": hp.alpha, "n0": hp.n0, "level": args.level, "kmax": setup.k_max,
                "fem_nodes": args.fem_nodes, "min_time": setup.min_time()})
    run.json(args.out, out)
    if args.csv:
        rng = np.random.default_rng(args.sample_seed)
        pts = sample_points(g, 8, rng)
        rows = []
        for t in np.geomspace(rep.t_range[0], rep.t_range[1], 5):
            p = kernel_matrix(setup, float(t), pts)
            for i, x in enumerate(pts):
                for j, y in enumerate(pts):
                    rows.append((t, x[0], x[1], y[0], y[1], p[i, j]))
        run.csv(args.csv, HEAT_HEADER, rows)
    print(f"band [{rep.band[0]:.4g}, {rep.band[1]:.4g}] ratio {rep.ratio:.3f}; "
          f"off-diagonal slope {rep.offdiag_slope:.4f} corr {rep.corr:.3f}")


def cmd_broom(args, run):
    from .general_fqg import broom_demo
    from .output import BROOM_HEADER
    rows = broom_demo(args.kmax)
    run.csv(args.out, BROOM_HEADER, ((r.k, r.euclidean_gap, r.r_gap) for r in rows))
    last = rows[-1]
    print(f"k={last.k}: Euclidean gap {last.euclidean_gap:.6g}, R gap {last.r_gap:.8g}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fqg", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def geo(p, level=True):
        p.add_argument("--alpha", type=float, required=True)
        p.add_argument("--n0", type=int, default=3)
        if level:
            p.add_argument("--level", type=int, default=4)

    p = sub.add_parser("build", help="write a Hanoi graph as JSON")
    geo(p)
    p.add_argument("--out", default="graph.json")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("resistance", help="corner resistances, shorted and full")
    geo(p, level=False)
    p.add_argument("--levels", type=_int_range, default=(0, 6))
    p.add_argument("--pair", type=_pair, default=(0, 1))
    p.add_argument("--out", default="resistance.csv")
    p.set_defaults(func=cmd_resistance)

    for name, func, default_out in (("spectrum", cmd_spectrum, "spectrum.csv"),
                                    ("dimension", cmd_dimension, "fit.json")):
        p = sub.add_parser(name, help=f"{name} of the measure-weighted Laplacian")
        geo(p)
        p.set_defaults(level=5)
        p.add_argument("--beta", type=float, default=None,
                       help="joining-edge mass (required with --measure mu)")
        p.add_argument("--measure", choices=("mu", "length"), default="mu")
        p.add_argument("--fem-nodes", type=int, default=64,
                       help="elements on the edge with the largest optical length")
        p.add_argument("--bc", choices=("d", "n"), default="n")
        p.add_argument("--count", type=int, default=None,
                       help="number of eigenvalues (default: all when the system is small)")
        p.add_argument("--out", default=default_out)
        if name == "dimension":
            p.add_argument("--spectrum-out", default=None,
                           help="also write the spectrum (eig) or the counting profile (inertia)")
            p.add_argument("--solver", choices=("eig", "inertia"), default="eig",
                           help="eigenvalue lists, or N(x) counted from matrix inertia")
            p.add_argument("--x-max", type=_x_max, default=None,
                           help="upper end of the fit window, a number or 'cell' for the "
                                "level-n cell scale (default: trust cutoff)")
        p.set_defaults(func=func)

    p = sub.add_parser("heat", help="heat kernel diagnostics on the full graph")
    geo(p)
    p.add_argument("--kmax", type=int, default=800)
    p.add_argument("--fem-nodes", type=int, default=200, help="elements on the longest edge")
    p.add_argument("--t", type=_range, default=(1e-3, 1e-1))
    p.add_argument("--samples", type=int, default=40)
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--out", default="heat.json")
    p.add_argument("--csv", default=None, help="also write sampled kernel values")
    p.set_defaults(func=cmd_heat)

    p = sub.add_parser("broom", help="infinite broom table")
    p.add_argument("--kmax", type=int, default=100)
    p.add_argument("--out", default="broom.csv")
    p.set_defaults(func=cmd_broom)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = _Run(args)
    try:
        args.func(args, run)
    except InvalidParameter as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ResourceCap as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_CAP
    except InsufficientData as exc:
        print(f"insufficient data: {exc}", file=sys.stderr)
        return EXIT_DATA
    run.finish()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
