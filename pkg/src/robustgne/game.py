"""
Uncertain game model.

Players, local boxes, cost models, ellipsoidal uncertainty sets and the
communication graph. A strategy profile is an ``(N, n)`` array whose row
``i`` is player ``i``'s action; flat ``(N*n,)`` vectors are accepted wherever
a profile is expected.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.sparse.csgraph import connected_components

from .errors import DimensionError, GeometryError, GraphError

log = logging.getLogger(__name__)


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ellipsoid:
    """Axis-aligned ellipsoid ``sum((x - center)**2 / semiaxes**2) <= 1``."""

    center: np.ndarray
    semiaxes: np.ndarray

    def __post_init__(self):
        c = _frozen(self.center)
        v = _frozen(self.semiaxes)
        if c.ndim != 1 or v.shape != c.shape:
            raise DimensionError(f"center {c.shape} and semiaxes {v.shape} must be equal-length vectors")
        if not np.all(v > 0):
            raise GeometryError(f"semiaxes must be strictly positive, got {v}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "semiaxes", v)

    @property
    def dim(self):
        return self.center.size

    def membership(self, x):
        """Return ``sum((x - c)**2 / v**2)``; the set is the sublevel set at 1."""
        x = np.asarray(x, dtype=float)
        return np.sum(((x - self.center) / self.semiaxes) ** 2, axis=-1)

    def contains(self, x, tol=1e-12):
        return self.membership(x) <= 1.0 + tol

    def _direction(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.dim:
            raise DimensionError(f"direction has length {u.shape[-1]}, ellipsoid dimension is {self.dim}")
        if np.any(np.linalg.norm(u, axis=-1) == 0.0):
            raise GeometryError("support function needs a nonzero direction")
        return u

    def support(self, u):
        """Support function ``max{u.x : x in E} = c.u + ||diag(v) u||``.

        Vectorised over leading axes of ``u``.
        """
        u = self._direction(u)
        return u @ self.center + np.linalg.norm(u * self.semiaxes, axis=-1)

    def arg_support(self, u):
        """Boundary point attaining :meth:`support`; also the gradient of the support function."""
        u = self._direction(u)
        vu = u * self.semiaxes
        scale = np.linalg.norm(vu, axis=-1, keepdims=True)
        return self.center + self.semiaxes * vu / scale

    def boundary_point(self, phi):
        """Planar boundary parameterisation ``(c1 + v1 cos phi, c2 + v2 sin phi)``."""
        if self.dim != 2:
            raise DimensionError("angle parameterisation is only defined for planar ellipses")
        phi = np.asarray(phi, dtype=float)
        return np.stack([self.center[0] + self.semiaxes[0] * np.cos(phi),
                         self.center[1] + self.semiaxes[1] * np.sin(phi)], axis=-1)

    def max_curvature(self):
        """Largest boundary curvature of a planar ellipse, ``max(a/b**2, b/a**2)``."""
        if self.dim != 2:
            raise DimensionError("curvature formula is for planar ellipses")
        a, b = self.semiaxes
        return float(max(a / b**2, b / a**2))


@dataclass(frozen=True)
class SupportBody:
    """Convex body known only through its support function.

    ``support(u)`` must return ``max{u.x : x in M}`` and ``arg_support(u)`` a
    maximiser on the boundary. Both are called with single direction vectors.
    """

    dim: int
    support_fn: Callable[[np.ndarray], float]
    arg_support_fn: Callable[[np.ndarray], np.ndarray]

    def support(self, u):
        u = np.asarray(u, dtype=float)
        if np.linalg.norm(u) == 0.0:
            raise GeometryError("support function needs a nonzero direction")
        return float(self.support_fn(u))

    def arg_support(self, u):
        u = np.asarray(u, dtype=float)
        if np.linalg.norm(u) == 0.0:
            raise GeometryError("support function needs a nonzero direction")
        return np.asarray(self.arg_support_fn(u), dtype=float)


@dataclass(frozen=True)
class BoxSet:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, hi = _frozen(self.lower), _frozen(self.upper)
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise DimensionError(f"box bounds {lo.shape} and {hi.shape} must be equal-length vectors")
        if np.any(lo > hi):
            raise GeometryError(f"box lower bound exceeds upper bound: {lo} > {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, lo, hi, dim):
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    @property
    def dim(self):
        return self.lower.size

    def contains(self, x, tol=0.0):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def project(self, x):
        return project_box(x, self)

    def sample(self, rng, size=None):
        shape = (self.dim,) if size is None else (size, self.dim)
        return rng.uniform(self.lower, self.upper, size=shape)


def project_box(x, box: BoxSet):
    """Euclidean projection onto a box (componentwise clamp)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != box.dim:
        raise DimensionError(f"vector of length {x.shape[-1]} projected onto a {box.dim}-dimensional box")
    return np.clip(x, box.lower, box.upper)


# ---------------------------------------------------------------------------
# Cost models
# ---------------------------------------------------------------------------

class DemandResponseCost:
    """Aggregative energy-consumption cost.

    ``J_i(x) = 0.5*||x_i - nominal_i||**2 - x_i . p(x)`` with price
    ``p(x) = scale * (1 - mean_j x_j)``; ``scale`` defaults to the number of
    players, so ``p = N*1 - sum_j x_j``.
    """

    kind = "demand_response"

    def __init__(self, nominal, price_scale=None):
        self.nominal = _frozen(nominal)
        if self.nominal.ndim != 2:
            raise DimensionError("nominal consumption must be an (N, n) array")
        self.n_players, self.dim = self.nominal.shape
        self.price_scale = float(self.n_players if price_scale is None else price_scale)

    def price(self, X):
        return self.price_scale * (1.0 - X.mean(axis=0))

    def cost(self, i, X):
        X = np.asarray(X, dtype=float)
        d = X[i] - self.nominal[i]
        return 0.5 * d @ d - X[i] @ self.price(X)

    def grad(self, i, X):
        # d/dx_i of -x_i.p adds (scale/N) * x_i because dp/dx_i = -(scale/N) I
        X = np.asarray(X, dtype=float)
        N = self.n_players
        return X[i] - self.nominal[i] - self.price(X) + (self.price_scale / N) * X[i]

    def full_grad(self, i, X):
        """Gradient of ``J_i`` with respect to the whole profile, shape (N, n)."""
        X = np.asarray(X, dtype=float)
        G = np.tile((self.price_scale / self.n_players) * X[i], (self.n_players, 1))
        G[i] = self.grad(i, X)
        return G

    def pseudo_gradient(self, X):
        X = np.asarray(X, dtype=float)
        N = self.n_players
        return X - self.nominal - self.price(X) + (self.price_scale / N) * X

    @classmethod
    def benchmark_nominal(cls, n_players=10, dim=2):
        """Nominal profile ``(5 - i) * 1`` for users ``i = 1..N``."""
        return np.array([(5.0 - i) * np.ones(dim) for i in range(1, n_players + 1)])


class CustomCost:
    """User-supplied cost ``cost_fn(i, X)`` with optional gradient ``grad_fn(i, X)``.

    Without ``grad_fn`` the own-gradient is computed by central differences
    (step ``fd_step`` scaled by ``max(1, |x|)``) and a warning is emitted once.
    """

    kind = "custom"

    def __init__(self, cost_fn, n_players, dim, grad_fn=None, fd_step=1e-5):
        self.cost_fn = cost_fn
        self.grad_fn = grad_fn
        self.n_players = int(n_players)
        self.dim = int(dim)
        self.fd_step = fd_step
        self._warned = False

    def cost(self, i, X):
        return float(self.cost_fn(i, np.asarray(X, dtype=float)))

    def grad(self, i, X):
        X = np.asarray(X, dtype=float)
        if self.grad_fn is not None:
            return np.asarray(self.grad_fn(i, X), dtype=float)
        if not self._warned:
            warnings.warn("custom cost has no gradient; using central finite differences", RuntimeWarning)
            self._warned = True
        return own_gradient_fd(self.cost, i, X, self.fd_step)

    def pseudo_gradient(self, X):
        X = np.asarray(X, dtype=float)
        return np.stack([self.grad(i, X) for i in range(self.n_players)])


def own_gradient_fd(cost, i, X, step=1e-5):
    """Central-difference gradient of ``cost(i, X)`` with respect to row ``i``."""
    X = np.array(X, dtype=float)
    g = np.empty(X.shape[1])
    for k in range(X.shape[1]):
        h = step * max(1.0, abs(X[i, k]))
        Xp, Xm = X.copy(), X.copy()
        Xp[i, k] += h
        Xm[i, k] -= h
        g[k] = (cost(i, Xp) - cost(i, Xm)) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# Communication graph
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CommGraph:
    """Undirected, connected, weighted communication graph."""

    adjacency: np.ndarray

    def __post_init__(self):
        A = _frozen(self.adjacency)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
            raise GraphError(f"adjacency must be a nonempty square matrix, got shape {A.shape}")
        if np.any(A < 0):
            raise GraphError("adjacency weights must be nonnegative")
        if np.any(np.diag(A) != 0):
            raise GraphError("adjacency must have a zero diagonal")
        if not np.array_equal(A, A.T):
            raise GraphError("adjacency must be symmetric (undirected graph)")
        n_comp, _ = connected_components(A > 0, directed=False)
        if n_comp != 1:
            raise GraphError(f"graph must be connected, found {n_comp} components")
        object.__setattr__(self, "adjacency", A)
        L = np.diag(A.sum(axis=1)) - A
        L.setflags(write=False)
        object.__setattr__(self, "_laplacian", L)

    @classmethod
    def from_edges(cls, n_nodes, edges, weights=None):
        A = np.zeros((n_nodes, n_nodes))
        weights = [1.0] * len(edges) if weights is None else weights
        for (i, j), w in zip(edges, weights):
            if i == j:
                raise GraphError(f"self-loop on node {i}")
            A[i, j] = A[j, i] = float(w)
        return cls(A)

    @classmethod
    def ring(cls, n_nodes):
        if n_nodes < 2:
            raise GraphError("a ring needs at least two nodes")
        if n_nodes == 2:
            return cls.from_edges(2, [(0, 1)])
        return cls.from_edges(n_nodes, [(i, (i + 1) % n_nodes) for i in range(n_nodes)])

    @property
    def n_nodes(self):
        return self.adjacency.shape[0]

    @property
    def laplacian(self):
        return self._laplacian

    def neighbors(self, i):
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]

    def algebraic_connectivity(self):
        return float(np.linalg.eigvalsh(self.laplacian)[1]) if self.n_nodes > 1 else 0.0


# ---------------------------------------------------------------------------
# The game
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UncertainGame:
    """N-player game with coupled constraint ``sum_i w_i.x_i <= b`` for every ``w_i`` in ``M_i``."""

    boxes: Sequence[BoxSet]
    cost: object
    uncertainty: Sequence[object]
    budget: float
    graph: CommGraph
    slater_witness: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "uncertainty", tuple(self.uncertainty))
        object.__setattr__(self, "budget", float(self.budget))
        N = len(self.boxes)
        if N == 0:
            raise DimensionError("game needs at least one player")
        n = self.boxes[0].dim
        if any(b.dim != n for b in self.boxes):
            raise DimensionError("all players must share the action dimension")
        if len(self.uncertainty) != N:
            raise DimensionError(f"{len(self.uncertainty)} uncertainty sets for {N} players")
        if any(m.dim != n for m in self.uncertainty):
            raise DimensionError("uncertainty set dimension differs from action dimension")
        if self.graph.n_nodes != N:
            raise DimensionError(f"graph has {self.graph.n_nodes} nodes for {N} players")
        if getattr(self.cost, "n_players", N) != N or getattr(self.cost, "dim", n) != n:
            raise DimensionError("cost model shape does not match the players/boxes")
        witness = _slater_witness(self)
        object.__setattr__(self, "slater_witness", witness)
        if witness is None:
            warnings.warn("Slater condition not verified: no interior profile strictly satisfies "
                          "the worst-case coupled constraint", RuntimeWarning)

    @property
    def n_players(self):
        return len(self.boxes)

    @property
    def dim(self):
        return self.boxes[0].dim

    @property
    def slater_ok(self):
        return self.slater_witness is not None

    def as_profile(self, x):
        x = np.asarray(x, dtype=float)
        if x.size != self.n_players * self.dim:
            raise DimensionError(f"profile of size {x.size}, expected {self.n_players}x{self.dim}")
        return x.reshape(self.n_players, self.dim)

    def project_profile(self, x):
        X = self.as_profile(x)
        return np.stack([project_box(X[i], self.boxes[i]) for i in range(self.n_players)])

    def in_boxes(self, x, tol=0.0):
        X = self.as_profile(x)
        return all(self.boxes[i].contains(X[i], tol) for i in range(self.n_players))

    def player_cost(self, i, x):
        return self.cost.cost(i, self.as_profile(x))

    def costs(self, x):
        X = self.as_profile(x)
        return np.array([self.cost.cost(i, X) for i in range(self.n_players)])

    def pseudo_gradient(self, x):
        """Stacked own-gradients ``col(grad_{x_i} J_i)``, returned flat (length ``N*n``)."""
        return np.asarray(self.cost.pseudo_gradient(self.as_profile(x)), dtype=float).ravel()

    def worst_case_terms(self, x):
        X = self.as_profile(x)
        return np.array([support_or_zero(self.uncertainty[i], X[i]) for i in range(self.n_players)])

    def worst_case_lhs(self, x):
        """``sum_i max_{w in M_i} w.x_i``; zero blocks contribute zero."""
        return float(self.worst_case_terms(x).sum())


def support_or_zero(body, x):
    x = np.asarray(x, dtype=float)
    if not np.any(x):
        return 0.0
    return float(body.support(x))


def worst_case_lhs(game: UncertainGame, x):
    return game.worst_case_lhs(x)


def pseudo_gradient(game: UncertainGame, x):
    return game.pseudo_gradient(x)


def _min_support_on_box(body, box: BoxSet):
    """Approximately minimise the support function over the box interior."""
    shrink = 1e-6 * np.maximum(1.0, box.upper - box.lower)
    lo, hi = box.lower + shrink, box.upper - shrink
    mid = 0.5 * (lo + hi)
    corners = np.array(np.meshgrid(*zip(lo, hi))).reshape(box.dim, -1).T if box.dim <= 6 else lo[None]
    cands = np.vstack([mid[None], corners])
    vals = [support_or_zero(body, c) for c in cands]
    x0 = cands[int(np.argmin(vals))]
    res = minimize(lambda x: support_or_zero(body, x), x0, method="L-BFGS-B", bounds=list(zip(lo, hi)))
    if res.fun < min(vals):
        return np.asarray(res.x), float(res.fun)
    return x0, float(min(vals))


def _slater_witness(game):
    pts, total = [], 0.0
    for box, body in zip(game.boxes, game.uncertainty):
        x, val = _min_support_on_box(body, box)
        pts.append(x)
        total += val
    if total < game.budget:
        return _frozen(np.array(pts))
    return None
