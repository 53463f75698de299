"""Command line entry point: ``robustgne {run,sweep,approx,validate}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .errors import ConfigError, DivergenceError, GeometryError, ProjectionError
from .dynamics import trajectory_to_csv
from .game import Ellipsoid
from .polytope import approx_metrics, dumps_polytope, inscribe_axes, inscribe_regular, refine_by_support_gap
from .scenario import BUILTIN, DEMO_NAME, builtin, run_point, run_sweep, summary_to_kv, sweep_summary, sweep_to_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGED = 3
EXIT_NUMERIC = 4
OUT_ENV = "ROBUSTGNE_OUT"

log = logging.getLogger("robustgne")


def _load(args):
    src = args.config or DEMO_NAME
    cfg = builtin(src) if src in BUILTIN else config_mod.load(src)
    return cfg.with_overrides(seed=args.seed, phase=getattr(args, "phase", None),
                              step_size=getattr(args, "step_size", None), tol=getattr(args, "tol", None))


def _out_dir(args, cfg_dir="out"):
    d = args.out or os.environ.get(OUT_ENV) or cfg_dir
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write(path: Path, text: str):
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def cmd_validate(args):
    cfg = _load(args)
    print(f"ok: {cfg.name} (N={cfg.n_players}, dim={cfg.dim}, budget={cfg.budget:g}, "
          f"approximation={cfg.approx.family}, sweep={list(cfg.sweep)})")
    return EXIT_OK


def cmd_run(args):
    cfg = _load(args)
    out = _out_dir(args, cfg.out_dir)
    res = run_point(cfg, args.vertices)
    _write(out / "trajectory.csv", trajectory_to_csv(res.eg, res.traj))
    _write(out / "kkt.txt", res.kkt.to_kv())
    _write(out / "kkt.csv", res.kkt.to_csv_row())
    _write(out / "epsilon.txt", res.eps_ellipsoid.to_kv())
    _write(out / "epsilon.csv", res.eps_ellipsoid.to_csv_row())
    _write(out / "epsilon_polytope.txt", res.eps_polytope.to_kv())
    _write(out / "bound.txt", "".join(f"{k} = {v}\n" for k, v in res.bound.items()))
    X = res.x_star
    print(f"{res.traj.status} after {res.traj.steps} steps (t={res.traj.steps * cfg.integrator.step_size:g}, "
          f"|y'|={res.traj.deriv_norms[-1]:.3e})")
    print(f"kkt max residual {res.kkt.max():.3e}; eps (ellipsoid) {res.eps_ellipsoid.empirical_eps:.6g}; "
          f"eps (polytope) {res.eps_polytope.empirical_eps:.6g}")
    print("x* =", np.array2string(X, precision=6, suppress_small=True).replace("\n", ""))
    if not res.traj.converged:
        print(f"error: dynamics did not reach tol {cfg.integrator.tol:g} by t={cfg.integrator.max_time:g}",
              file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_sweep(args):
    cfg = _load(args)
    out = _out_dir(args, cfg.out_dir)
    rows, _ = run_sweep(cfg, args.vertices_list, jobs=args.jobs)
    _write(out / "sweep.csv", sweep_to_csv(rows))
    summary = sweep_summary(rows)
    _write(out / "sweep_summary.txt", summary_to_kv(summary))
    for r in rows:
        print(f"v={r['v']:>3} status={r['status']:<9} eps={r['eps_ellipsoid']!s:<22} delta={r['delta_angular']}")
    print(summary_to_kv(summary), end="")
    if any(r["status"] == "failed" for r in rows):
        return EXIT_NUMERIC
    if any(r["status"] != "converged" for r in rows):
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_approx(args):
    if args.config:
        cfg = _load(args)
        center, semi = cfg.centers[0], cfg.semiaxes[0]
        v = args.vertices or cfg.approx.vertices
        phase = cfg.approx.phase if args.phase is None else args.phase
    else:
        center, semi = args.center, args.semiaxes
        v, phase = args.vertices or 4, args.phase or 0.0
    try:
        ell = Ellipsoid(center, semi)
    except (GeometryError, ValueError) as exc:
        raise ConfigError([("ellipsoid", str(exc))]) from None
    if args.refine is not None:
        poly = refine_by_support_gap(ell, inscribe_axes(ell), args.refine)
    else:
        poly = inscribe_regular(ell, v, phase, args.spacing)
    m = approx_metrics(ell, poly)
    out = _out_dir(args)
    _write(out / "polytope.txt", dumps_polytope(poly))
    lines = [f"label = {poly.label}", f"q = {m.facet_count}", f"hausdorff = {m.hausdorff!r}",
             f"theta_max = {m.max_angle!r}", f"reference_facets = {m.angular_facet_count}",
             f"curvature = {m.curvature!r}", f"h_times_curvature = {m.hausdorff * m.curvature!r}"]
    _write(out / "metrics.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="robustgne", description="Distributed robust GNE seeking with polytope "
                                "approximations of ellipsoidal uncertainty.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, integ=True):
        sp.add_argument("--config", help=f"YAML scenario file or built-in name (default {DEMO_NAME})")
        sp.add_argument("--out", help=f"output directory (else ${OUT_ENV}, else the config's output.dir)")
        sp.add_argument("--seed", type=int, help="seed for best-response restarts and sampling")
        sp.add_argument("--phase", type=float, help="polygon phase in radians")
        if integ:
            sp.add_argument("--step-size", type=float)
            sp.add_argument("--tol", type=float)

    sp = sub.add_parser("run", help="one run at the configured approximation")
    common(sp)
    sp.add_argument("--vertices", type=int, help="override the polygon vertex count")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run every vertex count of the sweep and aggregate")
    common(sp)
    sp.add_argument("--vertices", dest="vertices_list", type=int, nargs="+", help="override the sweep list")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("approx", help="inscribe a polytope and report its metrics")
    common(sp, integ=False)
    sp.add_argument("--center", type=float, nargs="+", default=[2.0, 2.0])
    sp.add_argument("--semiaxes", type=float, nargs="+", default=[3.0, 2.0])
    sp.add_argument("--vertices", type=int)
    sp.add_argument("--spacing", choices=("angle", "arclength"), default="angle")
    sp.add_argument("--refine", type=int, help="greedy refinement steps from the axis polytope")
    sp.set_defaults(func=cmd_approx)

    sp = sub.add_parser("validate", help="check a scenario file and exit")
    common(sp, integ=False)
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GeometryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, ProjectionError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
