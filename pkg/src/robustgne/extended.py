"""
Robust counterpart of the polytope-approximated game.

Each player's worst-case term ``max_{w in P_i} w.x_i`` is replaced by its LP
dual ``min{d_i.s : A_i^T s = x_i, s >= 0}``, which turns the robust game into
a certain game in ``z_i = (x_i, s_i)`` with a shared resource constraint
``sum_i B_i z_i <= b``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import DimensionError, GeometryError, ProjectionError
from .game import UncertainGame
from .polytope import Polytope

PROJ_TOL = 1e-12
PROJ_MAX_ITER = 100
DYKSTRA_MAX_ITER = 500
DYKSTRA_TOL = 1e-11


@dataclass(frozen=True)
class ExtendedGame:
    base: UncertainGame
    polys: tuple
    budget_split: np.ndarray

    @property
    def n_players(self):
        return self.base.n_players

    @property
    def dim(self):
        return self.base.dim

    @property
    def q(self):
        return tuple(p.n_facets for p in self.polys)

    @property
    def z_size(self):
        return self.n_players * self.dim + sum(self.q)

    @property
    def state_size(self):
        return self.z_size + 2 * self.n_players

    def block(self, i):
        """Slice of player ``i``'s ``z_i`` inside the stacked ``z``."""
        start = i * self.dim + sum(self.q[:i])
        return slice(start, start + self.dim + self.q[i])

    def B(self, i):
        """Row vector ``[0_n, d_i]``."""
        return np.concatenate([np.zeros(self.dim), self.polys[i].offsets])

    def C(self, i):
        """Matrix ``[-I_n, A_i^T]``."""
        return np.hstack([-np.eye(self.dim), self.polys[i].normals.T])

    def B_matrix(self):
        Bm = np.zeros((self.n_players, self.z_size))
        for i in range(self.n_players):
            Bm[i, self.block(i)] = self.B(i)
        return Bm

    def split_z(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.z_size,):
            raise DimensionError(f"z has shape {z.shape}, expected ({self.z_size},)")
        return [z[self.block(i)] for i in range(self.n_players)]

    def x_profile(self, z):
        return np.stack([zi[: self.dim] for zi in self.split_z(z)])

    def resource_use(self, z):
        """``B_i z_i = d_i . s_i`` for every player."""
        return np.array([self.polys[i].offsets @ zi[self.dim:] for i, zi in enumerate(self.split_z(z))])

    def omega_residual(self, i, z_i):
        """Distance-like violation of ``z_i`` against Omega_i (affine, box and orthant parts)."""
        n = self.dim
        x, s = z_i[:n], z_i[n:]
        box = self.base.boxes[i]
        aff = np.linalg.norm(self.polys[i].normals.T @ s - x)
        out = np.linalg.norm(np.maximum(box.lower - x, 0) + np.maximum(x - box.upper, 0))
        neg = np.linalg.norm(np.minimum(s, 0))
        return float(max(aff, out, neg))


@dataclass
class ExtendedState:
    """Stacked decision ``z``, multipliers ``lam`` (nonnegative) and consensus auxiliaries ``zeta``."""

    z: np.ndarray
    lam: np.ndarray
    zeta: np.ndarray

    def to_vector(self):
        return np.concatenate([self.z, self.lam, self.zeta])

    @classmethod
    def from_vector(cls, eg: ExtendedGame, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (eg.state_size,):
            raise DimensionError(f"state vector has shape {y.shape}, expected ({eg.state_size},)")
        m, N = eg.z_size, eg.n_players
        return cls(y[:m].copy(), y[m:m + N].copy(), y[m + N:].copy())

    def copy(self):
        return ExtendedState(self.z.copy(), self.lam.copy(), self.zeta.copy())


def build_extended_game(game: UncertainGame, polys: Sequence[Polytope], split="equal") -> ExtendedGame:
    """Assemble the certain extended game.

    ``split`` is ``"equal"`` (``b_i = b/N``) or an explicit sequence of
    per-player budgets that must sum to ``b``.
    """
    polys = tuple(polys)
    N = game.n_players
    if len(polys) != N:
        raise DimensionError(f"{len(polys)} polytopes for {N} players")
    for i, p in enumerate(polys):
        if p.n_facets == 0:
            raise GeometryError(f"player {i} polytope has no facets")
        if p.dim != game.dim:
            raise DimensionError(f"player {i} polytope is {p.dim}-dimensional, game is {game.dim}")
    if isinstance(split, str):
        if split != "equal":
            raise ValueError(f"unknown budget split {split!r}")
        bsplit = np.full(N, game.budget / N)
    else:
        bsplit = np.asarray(split, dtype=float)
        if bsplit.shape != (N,):
            raise DimensionError(f"budget split of shape {bsplit.shape} for {N} players")
        if not np.isclose(bsplit.sum(), game.budget, rtol=1e-12, atol=1e-12):
            raise ValueError(f"budget split sums to {bsplit.sum()}, expected {game.budget}")
    bsplit.setflags(write=False)
    return ExtendedGame(game, polys, bsplit)


def extended_pseudo_gradient(eg: ExtendedGame, state) -> np.ndarray:
    """``col(grad_{x_i} J_i, 0_{q_i})``: base pseudo-gradient on x-blocks, zeros on s-blocks."""
    z = state.z if isinstance(state, ExtendedState) else np.asarray(state, dtype=float)
    X = eg.x_profile(z)
    G = np.asarray(eg.base.cost.pseudo_gradient(X), dtype=float)
    out = np.zeros(eg.z_size)
    for i in range(eg.n_players):
        sl = eg.block(i)
        out[sl.start:sl.start + eg.dim] = G[i]
    return out


def dual_support(poly: Polytope, x):
    """Robust-counterpart value ``min{d.s : A^T s = x, s >= 0}`` by linear programming."""
    res = linprog(poly.offsets, A_eq=poly.normals.T, b_eq=np.asarray(x, dtype=float),
                  bounds=[(0, None)] * poly.n_facets, method="highs")
    if res.status != 0:
        raise GeometryError(f"dual LP failed: {res.message}")
    return float(res.fun), res.x


# ---------------------------------------------------------------------------
# Projection onto Omega_i = {(x, s): lo <= x <= hi, s >= 0, A^T s = x}
# ---------------------------------------------------------------------------

def _omega_newton(A, lo, hi, X0, S0, xi=None, tol=PROJ_TOL, max_iter=PROJ_MAX_ITER):
    """Batched projection via semismooth Newton on the dual of ``A^T s = x``.

    For a multiplier ``xi`` the Lagrangian minimiser over box x orthant is
    ``x = clip(X0 + xi)``, ``s = max(S0 - A xi, 0)``; the concave dual has
    gradient ``A^T s - x``. Shapes: ``A (m, q, n)``, ``X0 (m, n)``, ``S0 (m, q)``.
    """
    m, q, n = A.shape
    xi = np.zeros((m, n)) if xi is None else xi.copy()
    eye = np.eye(n)
    scale = 1.0 + np.abs(X0).max(axis=1) + np.abs(S0).max(axis=1)

    def primal(xi):
        ux = X0 + xi
        us = S0 - np.einsum("mqn,mn->mq", A, xi)
        return ux, us, np.clip(ux, lo, hi), np.maximum(us, 0.0)

    def dual_value(xi, x, s, r):
        return 0.5 * np.sum((x - X0) ** 2, 1) + 0.5 * np.sum((s - S0) ** 2, 1) + np.sum(xi * r, 1)

    ux, us, x, s = primal(xi)
    r = np.einsum("mqn,mq->mn", A, s) - x
    for _ in range(max_iter):
        rn = np.linalg.norm(r, axis=1)
        todo = rn > tol * scale
        if not np.any(todo):
            return x, s, xi
        fx = ((ux > lo) & (ux < hi)).astype(float)
        fs = (us > 0).astype(float)
        H = np.einsum("mqn,mq,mqk->mnk", A, fs, A) + fx[:, :, None] * eye + 1e-12 * eye
        step = np.linalg.solve(H, r[..., None])[..., 0]
        step[~todo] = 0.0
        theta0 = dual_value(xi, x, s, r)
        slope = np.sum(r * step, 1)
        t = np.ones(m)
        for _ls in range(60):
            cand = xi + t[:, None] * step
            cux, cus, cx, cs = primal(cand)
            cr = np.einsum("mqn,mq->mn", A, cs) - cx
            ok = dual_value(cand, cx, cs, cr) >= theta0 + 1e-4 * t * slope - 1e-15 * scale**2
            if np.all(ok):
                break
            t = np.where(ok, t, 0.5 * t)
        xi, ux, us, x, s, r = cand, cux, cus, cx, cs, cr
    rn = np.linalg.norm(r, axis=1)
    if np.all(rn <= 1e-9 * scale):
        return x, s, xi
    raise ProjectionError("Omega projection did not converge", float(rn.max()))


def _omega_dykstra(A, lo, hi, y, max_iter=DYKSTRA_MAX_ITER, tol=DYKSTRA_TOL):
    """Dykstra's alternating projection between ``{C z = 0}`` and box x orthant (single player)."""
    q, n = A.shape
    C = np.hstack([-np.eye(n), A.T])
    CCt = np.linalg.cholesky(C @ C.T)

    def proj_affine(z):
        w = np.linalg.solve(CCt.T, np.linalg.solve(CCt, C @ z))
        return z - C.T @ w

    def proj_cone_box(z):
        return np.concatenate([np.clip(z[:n], lo, hi), np.maximum(z[n:], 0.0)])

    z = y.copy()
    p = np.zeros_like(z)
    for _ in range(max_iter):
        a = proj_affine(z)
        z_new = proj_cone_box(a + p)
        p = a + p - z_new
        moved = np.linalg.norm(z_new - z)
        z = z_new
        if moved < tol:
            break
    else:
        raise ProjectionError("Dykstra projection hit its iteration cap", float(np.linalg.norm(C @ z)), z)
    # finish on the affine set's residual check; z lies in box x orthant exactly
    return z


def project_omega(eg: ExtendedGame, player: int, z_i, method="newton", **kw):
    """Euclidean projection of ``z_i`` onto Omega_i.

    ``method="newton"`` (default) solves the dual of the affine coupling
    exactly; ``method="dykstra"`` runs Dykstra's alternating projections.
    """
    n, poly, box = eg.dim, eg.polys[player], eg.base.boxes[player]
    z_i = np.asarray(z_i, dtype=float)
    if z_i.shape != (n + poly.n_facets,):
        raise DimensionError(f"z_{player} has shape {z_i.shape}, expected ({n + poly.n_facets},)")
    if method == "dykstra":
        return _omega_dykstra(poly.normals, box.lower, box.upper, z_i, **kw)
    if method != "newton":
        raise ValueError(f"unknown projection method {method!r}")
    x, s, _ = _omega_newton(poly.normals[None], box.lower[None], box.upper[None],
                            z_i[None, :n], z_i[None, n:], **kw)
    return np.concatenate([x[0], s[0]])


class OmegaProjector:
    """Batched projection of all players' blocks, grouped by facet count.

    Keeps the last dual multipliers as a warm start when ``warm_start`` is set.
    """

    def __init__(self, eg: ExtendedGame, warm_start=False):
        self.eg = eg
        self.warm_start = warm_start
        groups = {}
        for i, q in enumerate(eg.q):
            groups.setdefault(q, []).append(i)
        self.groups = []
        for q, members in groups.items():
            A = np.stack([eg.polys[i].normals for i in members])
            lo = np.stack([eg.base.boxes[i].lower for i in members])
            hi = np.stack([eg.base.boxes[i].upper for i in members])
            idx = np.concatenate([np.arange(eg.block(i).start, eg.block(i).stop) for i in members])
            self.groups.append((members, A, lo, hi, idx.reshape(len(members), -1), None))

    def __call__(self, z):
        out = np.empty_like(z)
        n = self.eg.dim
        for k, (members, A, lo, hi, idx, xi) in enumerate(self.groups):
            Y = z[idx]
            x, s, xi_new = _omega_newton(A, lo, hi, Y[:, :n], Y[:, n:], xi if self.warm_start else None)
            out[idx] = np.hstack([x, s])
            if self.warm_start:
                self.groups[k] = (members, A, lo, hi, idx, xi_new)
        return out
