"""
Built-in benchmark and the run/sweep pipelines shared by the CLI and the tests.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .config import ScenarioConfig, loads
from .dynamics import SwarmTrajectory, run_dynamics
from .errors import ConfigError, DivergenceError, ProjectionError
from .extended import ExtendedGame, build_extended_game
from .polytope import ApproxMetrics, approx_metrics, inscribe_regular
from .verify import (EpsilonReport, KktReport, best_response_eps, bound_report, kkt_residuals,
                     lipschitz_estimate, rank_association)

log = logging.getLogger(__name__)

DEMO_NAME = "demo-demand-response"

# canonical example of the config schema; ten users, box [-15, 20]^2, ring graph
DEMO_YAML = """\
name: demo-demand-response
seed: 0
game:
  players: 10
  dim: 2
  boxes: {lower: -15, upper: 20}
  cost:
    kind: demand-response
    nominal: default
  uncertainty: {center: [2, 2], semiaxes: [3, 2]}
  budget: 5.0
  graph: {kind: ring}
approximation:
  family: regular
  vertices: 4
  phase: 0.0
  spacing: angle
  reference_vertices: 128
integrator:
  step_size: 0.01
  tol: 1.0e-4
  max_time: 2000
  scheme: euler
  record_stride: 10
sweep:
  vertices: [3, 4, 6, 8, 10, 12]
verify:
  mu: 0.5
  c: 1.0
  lipschitz_samples: 1000
  restarts: 5
output:
  dir: out
"""

BUILTIN = {DEMO_NAME: DEMO_YAML}


def builtin(name: str = DEMO_NAME) -> ScenarioConfig:
    if name not in BUILTIN:
        raise ConfigError([("config", f"unknown built-in scenario {name!r}")])
    return loads(BUILTIN[name])


@dataclass
class PointResult:
    """Everything produced by one run of the pipeline at a fixed approximation."""

    vertices: int
    eg: ExtendedGame
    traj: SwarmTrajectory
    kkt: KktReport
    eps_ellipsoid: EpsilonReport
    eps_polytope: EpsilonReport
    metrics: List[ApproxMetrics]
    lipschitz: List[float]
    bound: dict = field(default_factory=dict)

    @property
    def x_star(self):
        return self.eg.x_profile(self.traj.final_vector[: self.eg.z_size])


def point_metrics(cfg: ScenarioConfig, game, polys):
    a = cfg.approx
    out = []
    for ell, p in zip(game.uncertainty, polys):
        ref = inscribe_regular(ell, a.reference_vertices)
        out.append(approx_metrics(ell, p, reference=ref))
    return out


def run_point(cfg: ScenarioConfig, vertices: Optional[int] = None, with_lipschitz=True) -> PointResult:
    """Polytopes, extended game, dynamics, KKT and both epsilon reports at one approximation.

    Numeric failures (divergence, projection) propagate to the caller.
    """
    game = cfg.build_game()
    polys = cfg.build_polytopes(game, vertices)
    eg = build_extended_game(game, polys)
    traj = run_dynamics(eg, cfg=cfg.integrator)
    state = traj.final_state(eg)
    kkt = kkt_residuals(eg, state)
    X = eg.x_profile(state.z)
    eps_e = best_response_eps(game, polys, X, "ellipsoid", seed=cfg.seed, restarts=cfg.verify.restarts)
    eps_p = best_response_eps(game, polys, X, "polytope", seed=cfg.seed, restarts=cfg.verify.restarts)
    metrics = point_metrics(cfg, game, polys)
    lips = []
    if with_lipschitz:
        lips = [lipschitz_estimate(game, i, cfg.verify.lipschitz_samples, seed=cfg.seed)
                for i in range(game.n_players)]
    res = PointResult(polys[0].n_vertices, eg, traj, kkt, eps_e, eps_p, metrics, lips)
    attach_bound(cfg, res, max(traj.diameter(), 1e-12))
    return res


def attach_bound(cfg: ScenarioConfig, res: PointResult, r: float):
    N = res.eg.n_players
    res.bound = bound_report(res.metrics, r, [cfg.verify.c] * N, cfg.verify.mu, res.lipschitz or None)
    for rep in (res.eps_ellipsoid, res.eps_polytope):
        rep.delta_angular = res.bound["delta_angular"]
        rep.delta_hausdorff = res.bound["delta_hausdorff"]
        rep.lipschitz = list(res.lipschitz)


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = [
    "v", "q", "h_max", "h_mean", "theta_max", "delta_angular", "delta_hausdorff", "hausdorff_vacuous",
    "r", "eps_ellipsoid", "eps_polytope", "eps_over_delta", "violation", "status", "iterations",
    "sim_time", "wall_time", "error",
]


def _sweep_worker(args):
    cfg, v = args
    t0 = time.perf_counter()
    try:
        res = run_point(cfg, v, with_lipschitz=False)
        return v, res, None, time.perf_counter() - t0
    except (DivergenceError, ProjectionError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return v, None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0


def run_sweep(cfg: ScenarioConfig, vertices=None, jobs: int = 1):
    """One row per vertex count, in increasing vertex order.

    Failed points are kept as rows with the error text; the remaining
    points still run. All deltas share one ``r``, the largest run diameter
    over the successful points, so they are comparable along the sweep.
    """
    vs = sorted(vertices if vertices is not None else cfg.sweep)
    if not vs:
        raise ConfigError([("sweep.vertices", "sweep list is empty")])
    tasks = [(cfg, v) for v in vs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            out = list(ex.map(_sweep_worker, tasks))
    else:
        out = [_sweep_worker(t) for t in tasks]
    out.sort(key=lambda item: item[0])
    ok = [res for _, res, _, _ in out if res is not None]
    r = max([res.traj.diameter() for res in ok], default=1.0) or 1.0
    rows, results = [], []
    for v, res, err, wall in out:
        if res is None:
            row = {c: "" for c in SWEEP_COLUMNS}
            row.update(v=v, status="failed", error=err, wall_time=wall)
            rows.append(row)
            continue
        attach_bound(cfg, res, r)
        h = [m.hausdorff for m in res.metrics]
        da = res.bound["delta_angular"]
        rows.append({
            "v": v,
            "q": res.metrics[0].facet_count,
            "h_max": max(h),
            "h_mean": float(np.mean(h)),
            "theta_max": max(m.max_angle for m in res.metrics),
            "delta_angular": da,
            "delta_hausdorff": "" if res.bound["delta_hausdorff"] is None else res.bound["delta_hausdorff"],
            "hausdorff_vacuous": int(res.bound["hausdorff_bound_vacuous"]),
            "r": r,
            "eps_ellipsoid": res.eps_ellipsoid.empirical_eps,
            "eps_polytope": res.eps_polytope.empirical_eps,
            "eps_over_delta": res.eps_ellipsoid.empirical_eps / da if da > 0 else "",
            "violation": res.eps_ellipsoid.true_worst_case_violation,
            "status": res.traj.status,
            "iterations": res.traj.steps,
            "sim_time": res.traj.steps * cfg.integrator.step_size,
            "wall_time": wall,
            "error": "",
        })
        results.append(res)
    return rows, results


def sweep_summary(rows):
    """Monotonicity and rank association of the successful sweep rows."""
    good = [r for r in rows if r["status"] == "converged"]

    def decreasing(key):
        vals = [float(r[key]) for r in good]
        return len(vals) > 1 and all(a > b for a, b in zip(vals, vals[1:]))

    eps = [float(r["eps_ellipsoid"]) for r in good]
    da = [float(r["delta_angular"]) for r in good]
    return {
        "points": len(rows),
        "converged": len(good),
        "eps_strictly_decreasing": decreasing("eps_ellipsoid"),
        "hausdorff_strictly_decreasing": decreasing("h_max"),
        "delta_strictly_decreasing": decreasing("delta_angular"),
        "eps_last_over_first": eps[-1] / eps[0] if len(eps) > 1 and eps[0] > 0 else float("nan"),
        "rank_correlation_delta_eps": rank_association(da, eps) if len(good) > 1 else float("nan"),
    }


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def sweep_to_csv(rows) -> str:
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(row.get(k, "")) for k in SWEEP_COLUMNS})
    return out.getvalue()


_INT_COLS = {"v", "q", "hausdorff_vacuous", "iterations"}
_STR_COLS = {"status", "error"}


def read_sweep_csv(text: str):
    """Inverse of :func:`sweep_to_csv`: numbers come back as int/float, blanks as ``""``."""
    rows = []
    for raw in csv.DictReader(io.StringIO(text)):
        row = {}
        for k, v in raw.items():
            if k in _STR_COLS or v == "":
                row[k] = v
            elif k in _INT_COLS:
                row[k] = int(v)
            else:
                row[k] = float(v)
        rows.append(row)
    return rows


def summary_to_kv(summary) -> str:
    lines = []
    for k, v in summary.items():
        if isinstance(v, float) and math.isfinite(v):
            v = repr(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
