"""
Distributed projected dynamics for the extended game.

Every agent ``i`` holds ``(z_i, lam_i, zeta_i)`` and evolves

    z_i'    = P_Omega_i(z_i - g_i(z) - B_i^T lam_i) - z_i
    lam_i'  = [lam_i + B_i z_i - b_i - sum_j a_ij (lam_i - lam_j) - sum_j a_ij (zeta_i - zeta_j)]^+ - lam_i
    zeta_i' = sum_j a_ij (lam_i - lam_j)

The continuous flow is integrated in synchronous rounds: all agents read the
same snapshot, then all states advance together.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import DimensionError, DivergenceError
from .extended import ExtendedGame, ExtendedState, OmegaProjector, project_omega

log = logging.getLogger(__name__)


@dataclass
class AgentState:
    z: np.ndarray
    lam: float
    zeta: float


@dataclass(frozen=True)
class IntegratorConfig:
    step_size: float = 0.01
    max_time: float = 2000.0
    tol: float = 1e-4
    scheme: str = "euler"
    record_stride: int = 10
    divergence_limit: float = 1e8

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.max_time > 0:
            raise ValueError("max_time must be positive")
        if self.scheme not in ("euler", "rk4"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if int(self.record_stride) < 1:
            raise ValueError("record_stride must be >= 1")


@dataclass
class SwarmTrajectory:
    times: List[float]
    states: List[np.ndarray]
    deriv_norms: List[float]
    status: str = "running"
    steps: int = 0
    wall_time: float = 0.0
    lyapunov: Optional[List[float]] = None
    metadata: dict = field(default_factory=dict)

    @property
    def converged(self):
        return self.status == "converged"

    @property
    def final_vector(self):
        return self.states[-1]

    def final_state(self, eg):
        return ExtendedState.from_vector(eg, self.states[-1])

    def diameter(self):
        """``max_t ||y(t) - y(T)||`` over the recorded samples."""
        Y = np.asarray(self.states)
        return float(np.linalg.norm(Y - Y[-1], axis=1).max())


# ---------------------------------------------------------------------------
# Single agent
# ---------------------------------------------------------------------------

def agent_step(eg: ExtendedGame, i: int, local: AgentState, neighbors: Sequence[tuple], observed_x):
    """Right-hand side for agent ``i`` from purely local data.

    Parameters
    ----------
    eg : ExtendedGame
    i : int
        Agent index.
    local : AgentState
        The agent's own ``(z_i, lam_i, zeta_i)``.
    neighbors : sequence of (lam_j, zeta_j, a_ij)
        One entry per graph neighbour ``j`` of ``i``.
    observed_x : array (N, n)
        Observed actions of the players entering ``J_i``; row ``i`` is
        overwritten with the agent's own ``x_i``.

    Returns
    -------
    (z_dot, lam_dot, zeta_dot)
    """
    n = eg.dim
    z_i = np.asarray(local.z, dtype=float)
    if z_i.shape != (n + eg.q[i],):
        raise DimensionError(f"z_{i} has shape {z_i.shape}, expected ({n + eg.q[i]},)")
    if len(neighbors) != len(eg.base.graph.neighbors(i)):
        raise DimensionError(f"agent {i} got {len(neighbors)} neighbour messages, graph has "
                             f"{len(eg.base.graph.neighbors(i))}")
    X = np.array(observed_x, dtype=float).reshape(eg.n_players, n)
    X[i] = z_i[:n]
    grad = eg.base.cost.grad(i, X)
    d = eg.polys[i].offsets
    w = z_i - np.concatenate([grad, d * local.lam])
    z_dot = project_omega(eg, i, w) - z_i
    lam_diff = sum(a * (local.lam - lj) for lj, _, a in neighbors)
    zeta_diff = sum(a * (local.zeta - zj) for _, zj, a in neighbors)
    inner = local.lam + d @ z_i[n:] - eg.budget_split[i] - lam_diff - zeta_diff
    lam_dot = max(inner, 0.0) - local.lam
    return z_dot, float(lam_dot), float(lam_diff)


def neighbor_messages(eg: ExtendedGame, state: ExtendedState, i: int):
    A = eg.base.graph.adjacency
    return [(state.lam[j], state.zeta[j], A[i, j]) for j in eg.base.graph.neighbors(i)]


def agent_states(eg: ExtendedGame, state: ExtendedState):
    return [AgentState(state.z[eg.block(i)].copy(), float(state.lam[i]), float(state.zeta[i]))
            for i in range(eg.n_players)]


# ---------------------------------------------------------------------------
# Whole swarm (one synchronous round, vectorised)
# ---------------------------------------------------------------------------

class SwarmField:
    """Vector field of the full swarm, ``y' = f(y)`` with ``y = (z, lam, zeta)``.

    Mathematically identical to stacking :func:`agent_step` over all agents;
    the projections are batched across players.
    """

    def __init__(self, eg: ExtendedGame, warm_start=False):
        self.eg = eg
        N, n = eg.n_players, eg.dim
        self.m = eg.z_size
        self.N = N
        self.x_idx = np.stack([np.arange(eg.block(i).start, eg.block(i).start + n) for i in range(N)])
        s_idx, owner, d = [], [], []
        for i in range(N):
            sl = eg.block(i)
            s_idx.append(np.arange(sl.start + n, sl.stop))
            owner.append(np.full(eg.q[i], i))
            d.append(eg.polys[i].offsets)
        self.s_idx = np.concatenate(s_idx)
        self.s_owner = np.concatenate(owner)
        self.d = np.concatenate(d)
        self.L = np.array(eg.base.graph.laplacian)
        self.b = np.array(eg.budget_split)
        self.normals = np.vstack([p.normals for p in eg.polys])
        self.lo = np.stack([b.lower for b in eg.base.boxes])
        self.hi = np.stack([b.upper for b in eg.base.boxes])
        self.project = OmegaProjector(eg, warm_start=warm_start)

    def split(self, y):
        m, N = self.m, self.N
        return y[:m], y[m:m + N], y[m + N:]

    def resource(self, z):
        return np.bincount(self.s_owner, weights=self.d * z[self.s_idx], minlength=self.N)

    def __call__(self, y):
        z, lam, zeta = self.split(y)
        X = z[self.x_idx]
        G = np.asarray(self.eg.base.cost.pseudo_gradient(X), dtype=float)
        w = z.copy()
        w[self.x_idx] -= G
        w[self.s_idx] -= self.d * lam[self.s_owner]
        z_dot = self.project(w) - z
        Llam = self.L @ lam
        lam_dot = np.maximum(lam + self.resource(z) - self.b - Llam - self.L @ zeta, 0.0) - lam
        return np.concatenate([z_dot, lam_dot, Llam])

    def restore(self, y):
        """Re-project ``z`` onto Omega and clamp ``lam`` if rounding or the scheme left them."""
        z, lam, _ = self.split(y)
        np.maximum(lam, 0.0, out=lam)
        X = z[self.x_idx]
        s = z[self.s_idx]
        As = np.zeros_like(X)
        np.add.at(As, self.s_owner, self.normals * s[:, None])
        viol = max(np.abs(As - X).max(), np.max(self.lo - X), np.max(X - self.hi), -s.min())
        if viol > 1e-10:
            z[:] = self.project(z)
        return y


def default_init(eg: ExtendedGame) -> ExtendedState:
    """``x_i = P_box(nominal_i)`` (box centre for costs without a nominal), ``s_i = 0``
    projected onto Omega_i, ``lam = 0``, ``zeta = 0``."""
    game = eg.base
    nominal = getattr(game.cost, "nominal", None)
    z = np.zeros(eg.z_size)
    for i in range(eg.n_players):
        box = game.boxes[i]
        x0 = box.project(nominal[i]) if nominal is not None else 0.5 * (box.lower + box.upper)
        z[eg.block(i)] = project_omega(eg, i, np.concatenate([x0, np.zeros(eg.q[i])]))
    return ExtendedState(z, np.zeros(eg.n_players), np.zeros(eg.n_players))


def run_dynamics(eg: ExtendedGame, init: Optional[ExtendedState] = None,
                 cfg: IntegratorConfig = IntegratorConfig()) -> SwarmTrajectory:
    """Integrate the swarm until ``||y'|| <= cfg.tol`` or ``cfg.max_time``.

    Explicit Euler or classical RK4 with synchronous rounds. After each
    advance the decision blocks are put back on Omega (a no-op for Euler
    with ``h <= 1`` up to rounding) and the multipliers clamped at zero.
    """
    t_start = time.perf_counter()
    meta = {"init": "given"}
    if init is None:
        init = default_init(eg)
        meta["init"] = "x=P_box(nominal), sigma=0 projected on Omega, lambda=0, zeta=0"
    if isinstance(init, (list, tuple)):
        init = _stack_agents(eg, init)
    f = SwarmField(eg)
    y = f.restore(init.to_vector().astype(float))
    h = cfg.step_size
    stride = int(cfg.record_stride)
    traj = SwarmTrajectory([], [], [], metadata=meta)
    n_steps = int(np.ceil(cfg.max_time / h))
    step = 0
    while True:
        k1 = f(y)
        dn = float(np.linalg.norm(k1))
        t = step * h
        if not np.isfinite(dn) or np.linalg.norm(y) > cfg.divergence_limit:
            raise DivergenceError(f"dynamics diverged at t={t:g}", t, y.copy())
        done = dn <= cfg.tol
        if step % stride == 0 or done or step >= n_steps:
            traj.times.append(t)
            traj.states.append(y.copy())
            traj.deriv_norms.append(dn)
        if done:
            traj.status = "converged"
            break
        if step >= n_steps:
            traj.status = "max_time"
            break
        if cfg.scheme == "euler":
            y = y + h * k1
        else:
            k2 = f(y + 0.5 * h * k1)
            k3 = f(y + 0.5 * h * k2)
            k4 = f(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        y = f.restore(y)
        step += 1
    traj.steps = step
    traj.wall_time = time.perf_counter() - t_start
    log.info("dynamics %s after %d steps (t=%g, |y'|=%.3e, %.2fs)", traj.status, step, step * h,
             traj.deriv_norms[-1], traj.wall_time)
    return traj


def _stack_agents(eg, agents: Sequence[AgentState]) -> ExtendedState:
    if len(agents) != eg.n_players:
        raise DimensionError(f"{len(agents)} agent states for {eg.n_players} players")
    z = np.concatenate([np.asarray(a.z, dtype=float) for a in agents])
    return ExtendedState(z, np.array([a.lam for a in agents], float), np.array([a.zeta for a in agents], float))


# ---------------------------------------------------------------------------
# Lyapunov function
# ---------------------------------------------------------------------------

def lyapunov_value(eg: ExtendedGame, state, reference, field_: Optional[SwarmField] = None) -> float:
    """``-<F(s), U(s) - s> - 0.5||U(s) - s||^2 + 0.5||s - s*||^2``.

    ``F(s) = (g(z) + B^T lam, -Bz + b + L lam + L zeta, -L lam)`` and
    ``U(s)`` projects ``s - F(s)`` onto Omega x R_+^N x R^N.
    """
    f = field_ or SwarmField(eg)
    s = state.to_vector() if isinstance(state, ExtendedState) else np.asarray(state, dtype=float)
    s_ref = reference.to_vector() if isinstance(reference, ExtendedState) else np.asarray(reference, dtype=float)
    z, lam, zeta = f.split(s)
    X = z[f.x_idx]
    Fz = np.zeros_like(z)
    Fz[f.x_idx] = np.asarray(eg.base.cost.pseudo_gradient(X), dtype=float)
    Fz[f.s_idx] += f.d * lam[f.s_owner]
    Llam = f.L @ lam
    Flam = -f.resource(z) + f.b + Llam + f.L @ zeta
    Fzeta = -Llam
    F = np.concatenate([Fz, Flam, Fzeta])
    U = np.concatenate([f.project(z - Fz), np.maximum(lam - Flam, 0.0), zeta - Fzeta])
    D = U - s
    return float(-F @ D - 0.5 * D @ D + 0.5 * np.sum((s - s_ref) ** 2))


def trajectory_lyapunov(eg: ExtendedGame, traj: SwarmTrajectory, reference=None):
    """Evaluate the Lyapunov function on every recorded sample (default reference: final state)."""
    ref = traj.states[-1] if reference is None else reference
    f = SwarmField(eg)
    traj.lyapunov = [lyapunov_value(eg, y, ref, f) for y in traj.states]
    return traj.lyapunov


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def trajectory_header(eg: ExtendedGame):
    N, n = eg.n_players, eg.dim
    cols = ["t", "deriv_norm"]
    cols += [f"x_{i + 1}_{k + 1}" for i in range(N) for k in range(n)]
    cols += [f"sigma_{i + 1}_{k + 1}" for i in range(N) for k in range(eg.q[i])]
    cols += [f"lambda_{i + 1}" for i in range(N)]
    cols += [f"zeta_{i + 1}" for i in range(N)]
    return cols


def _row(eg, f, t, dn, y):
    z, lam, zeta = f.split(y)
    return [t, dn, *z[f.x_idx].ravel(), *z[f.s_idx], *lam, *zeta]


def trajectory_to_csv(eg: ExtendedGame, traj: SwarmTrajectory) -> str:
    f = SwarmField(eg)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(trajectory_header(eg))
    for t, dn, y in zip(traj.times, traj.deriv_norms, traj.states):
        w.writerow([repr(float(v)) for v in _row(eg, f, t, dn, y)])
    return out.getvalue()


def read_trajectory_csv(text: str):
    """Parse a trajectory CSV into ``(header, rows)`` with rows as a float array."""
    rd = csv.reader(io.StringIO(text))
    header = next(rd)
    rows = np.array([[float(v) for v in r] for r in rd if r])
    return header, rows
