"""
Equilibrium certification.

* KKT residuals of the extended game at a candidate ``(z, lam)``.
* Multiplier lifting: for a variational equilibrium ``(z, lam)`` build the
  ``zeta`` that makes it a rest point of the distributed dynamics.
* A centralized extragradient solver, used as an independent oracle.
* Empirical epsilon of a profile by best-response oracles against either
  the polytope or the exact worst-case constraint.
* Bound reporting and Lipschitz estimates.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import spearmanr

from .dynamics import SwarmField
from .extended import ExtendedGame, ExtendedState, OmegaProjector
from .game import UncertainGame, support_or_zero
from .polytope import ApproxMetrics, Polytope, delta_bound


def _kv(d):
    lines = []
    for k, v in d.items():
        if isinstance(v, (list, tuple, np.ndarray)):
            v = " ".join(repr(float(x)) if isinstance(x, (float, np.floating)) else str(x) for x in v)
        elif isinstance(v, (float, np.floating)):
            v = repr(float(v))
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def _csv_row(d):
    flat = {}
    for k, v in d.items():
        if isinstance(v, (list, tuple, np.ndarray)):
            for j, x in enumerate(v):
                flat[f"{k}_{j + 1}"] = x
        else:
            flat[k] = v
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=list(flat), lineterminator="\n")
    w.writeheader()
    w.writerow({k: (repr(float(x)) if isinstance(x, (float, np.floating)) else x) for k, x in flat.items()})
    return out.getvalue()


# ---------------------------------------------------------------------------
# KKT residuals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KktReport:
    stationarity: float
    primal_feasibility: float
    complementarity: float
    consensus: float

    def max(self):
        return max(self.stationarity, self.primal_feasibility, self.complementarity, self.consensus)

    def to_dict(self):
        return asdict(self)

    def to_kv(self):
        return _kv(self.to_dict())

    def to_csv_row(self):
        return _csv_row(self.to_dict())


def kkt_residuals(eg: ExtendedGame, state) -> KktReport:
    """Residuals of the first-order system at ``(z, lam)``.

    stationarity       ``||z - P_Omega(z - g(z) - B^T lam)||``
    primal feasibility ``[1^T (Bz - b)]^+``
    complementarity    ``|(Bz - b)^T lam|``
    consensus          ``||L lam||``
    """
    if not isinstance(state, ExtendedState):
        state = ExtendedState.from_vector(eg, state)
    f = SwarmField(eg)
    z, lam = state.z, state.lam
    G = np.asarray(eg.base.cost.pseudo_gradient(z[f.x_idx]), dtype=float)
    w = z.copy()
    w[f.x_idx] -= G
    w[f.s_idx] -= f.d * lam[f.s_owner]
    stat = float(np.linalg.norm(z - f.project(w)))
    slack = f.resource(z) - f.b
    return KktReport(stat, float(max(slack.sum(), 0.0)), float(abs(slack @ lam)),
                     float(np.linalg.norm(f.L @ lam)))


def lift_multipliers(eg: ExtendedGame, z, lam) -> np.ndarray:
    """Consensus auxiliary ``zeta`` turning a variational equilibrium into a rest point.

    Solves ``L zeta = Bz - b + gamma`` in the range of ``L`` with ``gamma = 0``
    when the common multiplier is positive, and ``gamma`` uniform otherwise.
    """
    f = SwarmField(eg)
    z = np.asarray(z, dtype=float)
    rhs = f.resource(z) - f.b
    # removing the mean is exactly gamma in the inactive case and rounding noise in the active one
    rhs = rhs - rhs.mean()
    zeta, *_ = np.linalg.lstsq(f.L, rhs, rcond=None)
    return zeta - zeta.mean()


# ---------------------------------------------------------------------------
# Centralized oracle
# ---------------------------------------------------------------------------

@dataclass
class CentralizedSolution:
    z: np.ndarray
    mu: float
    iterations: int
    residual: float
    converged: bool

    def x_profile(self, eg):
        return eg.x_profile(self.z)


def solve_centralized(eg: ExtendedGame, tol=1e-9, max_iter=200000, step=None, z0=None) -> CentralizedSolution:
    """Extragradient on the saddle operator ``(g(z) + mu B^T 1, b - 1^T B z)`` over Omega x R_+.

    A single shared multiplier replaces the distributed consensus machinery,
    so the result is an independent check of the swarm's limit.
    """
    f = SwarmField(eg)
    proj = OmegaProjector(eg)
    Bm = eg.B_matrix()
    btot = float(np.sum(eg.budget_split))
    ones_B = Bm.sum(axis=0)
    if step is None:
        # Lipschitz bound of the pseudo-gradient by secant probing, plus the coupling norm
        rng = np.random.default_rng(0)
        lip = 0.0
        X0 = eg.x_profile(z0) if z0 is not None else np.zeros((eg.n_players, eg.dim))
        for _ in range(20):
            Y1 = X0 + rng.normal(size=X0.shape)
            Y2 = X0 + rng.normal(size=X0.shape)
            G1 = np.asarray(eg.base.cost.pseudo_gradient(Y1))
            G2 = np.asarray(eg.base.cost.pseudo_gradient(Y2))
            lip = max(lip, np.linalg.norm(G1 - G2) / np.linalg.norm(Y1 - Y2))
        step = 0.5 / (2.0 * lip + np.linalg.norm(ones_B))

    def op(z, mu):
        Tz = np.zeros_like(z)
        Tz[f.x_idx] = np.asarray(eg.base.cost.pseudo_gradient(z[f.x_idx]), dtype=float)
        Tz += mu * ones_B
        return Tz, btot - ones_B @ z

    z = proj(np.zeros(eg.z_size) if z0 is None else np.asarray(z0, dtype=float))
    mu = 0.0
    res = np.inf
    for k in range(1, max_iter + 1):
        Tz, Tm = op(z, mu)
        zh = proj(z - step * Tz)
        mh = max(mu - step * Tm, 0.0)
        res = math.hypot(np.linalg.norm(zh - z), mh - mu) / step
        if res <= tol:
            return CentralizedSolution(z, mu, k, res, True)
        Tz, Tm = op(zh, mh)
        z = proj(z - step * Tz)
        mu = max(mu - step * Tm, 0.0)
    return CentralizedSolution(z, mu, max_iter, res, False)


# ---------------------------------------------------------------------------
# Empirical epsilon
# ---------------------------------------------------------------------------

@dataclass
class BestResponse:
    x: Optional[np.ndarray]
    value: float
    budget: float
    feasible: bool
    converged: bool


def _constraint(body, beta, n):
    """SLSQP inequality constraint(s) ``h(x) <= beta`` for one player's worst-case term."""
    if isinstance(body, Polytope):
        V = body.vertices
        return [{"type": "ineq", "fun": lambda x: beta - V @ x, "jac": lambda x: -V}]
    # support form: differentiable away from 0, and 0 is a kink only when it is on the boundary
    def jac(x):
        return -body.arg_support(x) if np.any(x) else -body.arg_support(np.ones(n))
    return [{"type": "ineq", "fun": lambda x: beta - support_or_zero(body, x), "jac": jac}]


def best_response(game: UncertainGame, i: int, X, bodies, rng, restarts=5, feas_tol=1e-7) -> BestResponse:
    """Minimise ``J_i(., x_{-i})`` over ``{x_i in box : h_i(x_i) <= b - sum_{j!=i} h_j(x_j)}``.

    SLSQP from ``x_i`` itself plus ``restarts`` uniform interior points; the
    best feasible local solution is kept (the problem is convex, restarts
    guard against stalls at kinks).
    """
    X = np.array(X, dtype=float)
    box = game.boxes[i]
    beta = game.budget - sum(support_or_zero(bodies[j], X[j]) for j in range(game.n_players) if j != i)
    cons = _constraint(bodies[i], beta, game.dim)

    def obj(x):
        Y = X.copy()
        Y[i] = x
        return game.cost.cost(i, Y)

    def grad(x):
        Y = X.copy()
        Y[i] = x
        return game.cost.grad(i, Y)

    starts = [box.project(X[i])] + [box.sample(rng) for _ in range(restarts)]
    best, best_val, any_conv = None, np.inf, False
    for x0 in starts:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            r = minimize(obj, x0, jac=grad, method="SLSQP", bounds=list(zip(box.lower, box.upper)),
                         constraints=cons, options={"ftol": 1e-13, "maxiter": 1000})
        x = np.clip(r.x, box.lower, box.upper)
        viol = max(0.0, support_or_zero(bodies[i], x) - beta)
        if viol <= feas_tol and r.fun < best_val:
            best, best_val = x, float(obj(x))
        any_conv |= bool(r.success)
    return BestResponse(best, best_val, float(beta), best is not None, any_conv)


@dataclass
class EpsilonReport:
    constraint_model: str
    empirical_eps: float
    per_player_eps: list
    signed_gaps: list
    flags: list
    true_worst_case_violation: float
    delta_angular: Optional[float] = None
    delta_hausdorff: Optional[float] = None
    lipschitz: list = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        d["flags"] = [f or "ok" for f in self.flags]
        return d

    def to_kv(self):
        return _kv(self.to_dict())

    def to_csv_row(self):
        return _csv_row(self.to_dict())


def best_response_eps(game: UncertainGame, polys: Optional[Sequence[Polytope]], x_star,
                      constraint_model="ellipsoid", seed=0, restarts=5) -> EpsilonReport:
    """Unilateral-deviation gap of ``x_star`` for every player.

    ``per_player_eps[i] = |J_i(x*) - J_i(BR_i, x*_{-i})|`` where ``BR_i`` is
    the best response under the worst-case constraint of the chosen model
    (``"ellipsoid"``: the game's own uncertainty sets; ``"polytope"``:
    ``polys``). For a feasible profile this is the smallest epsilon of the
    epsilon-equilibrium definition; for a profile that violates the chosen
    constraint it measures the cost advantage the violation buys. The signed
    gaps are reported alongside.
    """
    X = game.as_profile(x_star)
    if constraint_model == "ellipsoid":
        bodies = game.uncertainty
    elif constraint_model == "polytope":
        if polys is None:
            raise ValueError("polytope model needs the polytopes")
        bodies = tuple(polys)
    else:
        raise ValueError(f"unknown constraint model {constraint_model!r}")
    rng = np.random.default_rng(seed)
    eps, signed, flags = [], [], []
    for i in range(game.n_players):
        br = best_response(game, i, X, bodies, rng, restarts)
        if not br.feasible:
            eps.append(float("nan"))
            signed.append(float("nan"))
            flags.append("empty-feasible-set")
            continue
        gap = game.cost.cost(i, X) - br.value
        eps.append(abs(gap))
        signed.append(gap)
        flags.append("" if br.converged else "not-converged")
    lhs = sum(support_or_zero(bodies[j], X[j]) for j in range(game.n_players))
    finite = [e for e in eps if np.isfinite(e)]
    return EpsilonReport(constraint_model, max(finite) if finite else float("nan"), eps, signed, flags,
                         float(max(game.worst_case_lhs(X) - game.budget, 0.0)))


# ---------------------------------------------------------------------------
# Bounds
# ---------------------------------------------------------------------------

EPS_BOUND_FORM = "eps <= 2 * lipschitz_i * a1^-1(a2(a3^-1(delta * a4(r) / mu)))"


def bound_report(metrics: Sequence[ApproxMetrics], r: float, c: Optional[Sequence[float]] = None,
                 mu: float = 0.5, lipschitz: Optional[Sequence[float]] = None) -> dict:
    """Delta in both forms plus every input; the epsilon bound itself stays symbolic.

    The comparison functions ``a1..a4`` come from a converse Lyapunov argument
    and have no closed form, so no number is produced for epsilon.
    """
    db = delta_bound(metrics, r, c)
    return {
        "delta_angular": db.angular,
        "delta_hausdorff": db.hausdorff,
        "hausdorff_bound_vacuous": db.hausdorff_vacuous,
        "r": db.r,
        "c": list(db.c),
        "mu": mu,
        "h": [m.hausdorff for m in metrics],
        "nu": [m.curvature for m in metrics],
        "nu_source": metrics[0].curvature_source if metrics else "",
        "theta": [m.max_angle for m in metrics],
        "q": [m.facet_count for m in metrics],
        "q_angular": [m.angular_facet_count for m in metrics],
        "lipschitz": list(lipschitz) if lipschitz is not None else [],
        "eps_bound": EPS_BOUND_FORM,
        "convention": "c_i and r are conventions; delta scales linearly with both",
    }


def rank_association(deltas, eps):
    """Spearman rank correlation between delta and empirical epsilon over a sweep."""
    rho = spearmanr(deltas, eps).correlation
    return float(rho)


def _profile_gradient(cost, i, X, step=1e-6):
    """Gradient of ``J_i`` in the whole profile; central differences when the model has no ``full_grad``."""
    if hasattr(cost, "full_grad"):
        return np.asarray(cost.full_grad(i, X), dtype=float)
    G = np.empty_like(X)
    for idx in np.ndindex(*X.shape):
        h = step * max(1.0, abs(X[idx]))
        Xp, Xm = X.copy(), X.copy()
        Xp[idx] += h
        Xm[idx] -= h
        G[idx] = (cost.cost(i, Xp) - cost.cost(i, Xm)) / (2 * h)
    return G


def lipschitz_estimate(game: UncertainGame, i: int, samples: int = 1000, seed=0, running=False,
                       ascent_steps: int = 3):
    """Lower estimate of the Lipschitz constant of ``J_i`` on the box product.

    Each sample contributes the secant slopes ``|J_i(x) - J_i(y)| / ||x - y||``
    of two pairs: a uniform pair, and a short pair along the gradient at a box
    vertex. The vertex starts at random and takes up to ``ascent_steps`` jumps
    to the vertex maximising the linearised squared gradient norm, where
    smooth costs are steepest. With ``running=True`` the running maximum over
    the samples is returned (nondecreasing in the sample count).
    """
    if samples < 100:
        raise ValueError("need at least 100 sample pairs")
    rng = np.random.default_rng(seed)
    cost = game.cost
    lo = np.stack([b.lower for b in game.boxes])
    hi = np.stack([b.upper for b in game.boxes])
    rho = 1e-4 * max(1.0, float(np.linalg.norm(hi - lo)))

    def slope(X, Y):
        dist = np.linalg.norm(X - Y)
        return abs(cost.cost(i, X) - cost.cost(i, Y)) / dist if dist > 0 else 0.0

    best, trace = 0.0, []
    for _ in range(samples):
        X = rng.uniform(lo, hi)
        best = max(best, slope(X, rng.uniform(lo, hi)))
        V = np.where(rng.random(lo.shape) < 0.5, lo, hi)
        G = _profile_gradient(cost, i, V)
        for _ in range(ascent_steps):
            gn = np.linalg.norm(G)
            if gn == 0:
                break
            # direction of grad ||G||^2 = 2 H G by a difference of gradients along G
            HG = _profile_gradient(cost, i, V + rho * G / gn) - _profile_gradient(cost, i, V - rho * G / gn)
            W = np.where(HG > 0, hi, np.where(HG < 0, lo, V))
            if np.array_equal(W, V):
                break
            V, G = W, _profile_gradient(cost, i, W)
        gn = np.linalg.norm(G)
        if gn > 0:
            best = max(best, slope(V, np.clip(V - rho * G / gn, lo, hi)))
        trace.append(best)
    return np.array(trace) if running else best
