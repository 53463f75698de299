"""
Inscribed polytopes of convex uncertainty sets.

Polytopes carry both representations: the H-form ``A w <= d`` with
unit-norm facet normals and the generating vertices, which all lie on the
boundary of the source body. Planar polygons are handled exactly; for
``n >= 3`` hulls come from ``scipy.spatial.ConvexHull`` and distances are
sampled.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import nnls
from scipy.spatial import ConvexHull

from .errors import DimensionError, GeometryError
from .game import Ellipsoid

ROW_NORM_TOL = 1e-12
GAP_TOL = 1e-12


@dataclass(frozen=True)
class Polytope:
    """Bounded polytope ``{w : normals @ w <= offsets}`` with its vertex list."""

    normals: np.ndarray
    offsets: np.ndarray
    vertices: np.ndarray
    label: str = ""

    def __post_init__(self):
        A = np.array(self.normals, dtype=float)
        d = np.array(self.offsets, dtype=float)
        V = np.array(self.vertices, dtype=float)
        if A.ndim != 2 or A.shape[0] == 0:
            raise GeometryError("polytope needs at least one facet")
        if d.shape != (A.shape[0],):
            raise DimensionError(f"{A.shape[0]} normals but offsets of shape {d.shape}")
        if V.ndim != 2 or V.shape[1] != A.shape[1]:
            raise DimensionError("vertex dimension differs from normal dimension")
        if np.any(np.abs(np.linalg.norm(A, axis=1) - 1.0) > ROW_NORM_TOL):
            raise GeometryError("facet normals must have unit Euclidean norm")
        for arr in (A, d, V):
            arr.setflags(write=False)
        object.__setattr__(self, "normals", A)
        object.__setattr__(self, "offsets", d)
        object.__setattr__(self, "vertices", V)

    @property
    def dim(self):
        return self.normals.shape[1]

    @property
    def n_facets(self):
        return self.normals.shape[0]

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    def support(self, u):
        """``max_{w in P} u.w`` by vertex enumeration (vectorised over rows of ``u``)."""
        u = np.asarray(u, dtype=float)
        return np.max(u @ self.vertices.T, axis=-1)

    def arg_support(self, u):
        u = np.asarray(u, dtype=float)
        return self.vertices[int(np.argmax(self.vertices @ u))]

    def contains(self, w, tol=1e-9):
        w = np.asarray(w, dtype=float)
        return np.all(w @ self.normals.T <= self.offsets + tol, axis=-1)

    def facet_vertex_counts(self, tol=1e-9):
        """Number of vertices lying on each facet hyperplane."""
        slack = self.offsets[:, None] - self.normals @ self.vertices.T
        return np.sum(np.abs(slack) <= tol, axis=1)


# ---------------------------------------------------------------------------
# Hull construction
# ---------------------------------------------------------------------------

def _check_distinct(V, tol=1e-12):
    diff = V[:, None, :] - V[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(dist, np.inf)
    if np.min(dist) <= tol:
        raise GeometryError("coincident vertices")


def polygon_from_vertices(vertices, label=""):
    """Planar convex polygon through ``vertices``, facets in counter-clockwise order.

    Facet ``k`` joins the ``k``-th and ``(k+1)``-th vertex after sorting by angle
    around the centroid, starting from the input's first vertex.
    """
    V = np.asarray(vertices, dtype=float)
    if V.ndim != 2 or V.shape[1] != 2:
        raise DimensionError("polygon vertices must be an (m, 2) array")
    if len(V) < 3:
        raise GeometryError("a polygon needs at least three vertices")
    _check_distinct(V)
    ctr = V.mean(axis=0)
    ang = np.arctan2(V[:, 1] - ctr[1], V[:, 0] - ctr[0])
    ang = np.mod(ang - ang[0], 2 * np.pi)
    V = V[np.argsort(ang, kind="stable")]
    edges = np.roll(V, -1, axis=0) - V
    normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
    lengths = np.linalg.norm(normals, axis=1)
    normals = normals / lengths[:, None]
    offsets = np.einsum("ij,ij->i", normals, V)
    return Polytope(normals, offsets, V, label)


def polytope_from_vertices(vertices, label="", merge_tol=1e-10):
    """Convex hull of ``vertices`` in any dimension; coplanar simplices are merged."""
    V = np.asarray(vertices, dtype=float)
    if V.shape[1] == 2:
        return polygon_from_vertices(V, label)
    _check_distinct(V)
    hull = ConvexHull(V)
    eq = hull.equations
    A, d = eq[:, :-1], -eq[:, -1]
    scale = np.linalg.norm(A, axis=1)
    A, d = A / scale[:, None], d / scale
    keep = []
    for k in range(len(A)):
        if not any(np.linalg.norm(A[k] - A[j]) < merge_tol and abs(d[k] - d[j]) < merge_tol for j in keep):
            keep.append(k)
    used = np.unique(hull.simplices)
    return Polytope(A[keep], d[keep], V[np.sort(used)], label)


def _arclength_angles(ell: Ellipsoid, v, phase, grid=20001):
    a, b = ell.semiaxes
    t = phase + np.linspace(0.0, 2 * np.pi, grid)
    speed = np.sqrt((a * np.sin(t)) ** 2 + (b * np.cos(t)) ** 2)
    s = cumulative_trapezoid(speed, t, initial=0.0)
    targets = s[-1] * np.arange(v) / v
    return np.interp(targets, s, t)


def inscribe_regular(ell: Ellipsoid, v: int, phase: float = 0.0, spacing: str = "angle"):
    """Inscribed ``v``-gon of a planar ellipse.

    With ``spacing="angle"`` the vertices sit at parameter angles
    ``phase + 2*pi*k/v``; with ``spacing="arclength"`` they split the
    perimeter, starting from the boundary point at ``phase``, into equal arcs.
    """
    if ell.dim != 2:
        raise DimensionError("the regular family is planar; use inscribe_axes + refine_by_support_gap")
    if int(v) != v or v < 3:
        raise GeometryError(f"need at least 3 vertices, got {v}")
    v = int(v)
    if spacing == "angle":
        phi = phase + 2 * np.pi * np.arange(v) / v
    elif spacing == "arclength":
        phi = _arclength_angles(ell, v, phase)
    else:
        raise ValueError(f"unknown spacing {spacing!r}")
    label = f"regular-{v}-{spacing}-phase{phase:g}"
    return polygon_from_vertices(ell.boundary_point(phi), label)


def inscribe_axes(body):
    """Cross-polytope through the ``2n`` support points along the coordinate axes."""
    n = body.dim
    dirs = np.vstack([np.eye(n), -np.eye(n)])
    pts = np.array([body.arg_support(u) for u in dirs])
    return polytope_from_vertices(pts, label=f"axes-{n}d")


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------

def support_gaps(body, poly: Polytope):
    """``g_M(a_l) - g_P(a_l)`` for every facet normal ``a_l``; ``g_P(a_l) = d_l``."""
    return np.array([body.support(a) for a in poly.normals]) - poly.offsets


def refine_by_support_gap(body, poly: Polytope, steps: int):
    """Greedy vertex addition at the facet normal with the largest support gap.

    Each step adds ``body.arg_support(a_l)`` for the facet ``l`` maximising
    the gap (first index on ties). Stops early once every gap is below
    ``GAP_TOL``.
    """
    base, _, done = poly.label.partition("+refined")
    k = int(done) if done else 0
    for _ in range(int(steps)):
        gaps = support_gaps(body, poly)
        l = int(np.argmax(gaps))
        if gaps[l] < GAP_TOL:
            break
        w = body.arg_support(poly.normals[l])
        k += 1
        poly = polytope_from_vertices(np.vstack([poly.vertices, w]), f"{base}+refined{k}")
    return poly


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def _dist_to_polygon(P, poly: Polytope):
    """Exact Euclidean distance from planar points ``P`` (m, 2) to a convex polygon."""
    V = poly.vertices
    W = np.roll(V, -1, axis=0)
    E = W - V
    rel = P[:, None, :] - V[None, :, :]
    t = np.clip(np.einsum("mkj,kj->mk", rel, E) / np.einsum("kj,kj->k", E, E), 0.0, 1.0)
    closest = V[None] + t[..., None] * E[None]
    dist = np.linalg.norm(P[:, None, :] - closest, axis=-1).min(axis=1)
    inside = np.all(P @ poly.normals.T <= poly.offsets, axis=1)
    return np.where(inside, 0.0, dist)


def _dist_to_hull(p, V):
    # min ||V^T w - p|| over the simplex via NNLS with a heavily weighted sum-to-one row
    rho = 1e4 * max(1.0, np.abs(V).max())
    M = np.vstack([V.T, rho * np.ones(len(V))])
    rhs = np.append(p, rho)
    w, _ = nnls(M, rhs)
    return float(np.linalg.norm(V.T @ w - p))


def _sphere_directions(n, samples):
    if n == 3:
        k = np.arange(samples) + 0.5
        z = 1 - 2 * k / samples
        r = np.sqrt(1 - z**2)
        phi = np.pi * (1 + 5**0.5) * k
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    U = np.random.default_rng(0).standard_normal((samples, n))
    return U / np.linalg.norm(U, axis=1, keepdims=True)


def hausdorff_to_ellipsoid(ell, poly: Polytope, samples: int = 4096):
    """Hausdorff distance between a body and an inscribed polytope.

    Since the polytope lies inside the body this is the largest distance from
    a sampled boundary point of the body to the polytope. Planar ellipses are
    sampled uniformly in parameter angle with exact point-to-polygon
    distances; other bodies are sampled through ``arg_support`` over a fixed
    direction grid. Deterministic for a given ``samples``.
    """
    if samples < 8 * poly.n_facets:
        raise GeometryError(f"{samples} samples is too few for {poly.n_facets} facets (need >= {8 * poly.n_facets})")
    if poly.dim == 2:
        if isinstance(ell, Ellipsoid):
            P = ell.boundary_point(2 * np.pi * np.arange(samples) / samples)
        else:
            t = 2 * np.pi * np.arange(samples) / samples
            P = np.array([ell.arg_support(u) for u in np.stack([np.cos(t), np.sin(t)], axis=1)])
        return float(_dist_to_polygon(P, poly).max())
    U = _sphere_directions(poly.dim, samples)
    P = ell.arg_support(U) if isinstance(ell, Ellipsoid) else np.array([ell.arg_support(u) for u in U])
    outside = ~poly.contains(P, tol=0.0)
    if not np.any(outside):
        return 0.0
    return max(_dist_to_hull(p, poly.vertices) for p in P[outside])


@dataclass(frozen=True)
class AngularMatch:
    """Nearest-normal matching of the finer polytope's facets to the coarser one's."""

    angles: tuple
    theta: float
    matched: tuple
    n_fine: int
    n_coarse: int


def angular_metric(poly_a: Polytope, poly_b: Polytope) -> AngularMatch:
    """Angles between each facet normal of the polytope with more facets and its
    nearest normal on the other (ties: ``poly_b`` counts as the finer one).
    """
    if poly_a.n_facets == 0 or poly_b.n_facets == 0:
        raise GeometryError("angular metric of an empty polytope")
    if poly_a.dim != poly_b.dim:
        raise DimensionError("polytopes live in different dimensions")
    fine, coarse = (poly_a, poly_b) if poly_a.n_facets > poly_b.n_facets else (poly_b, poly_a)
    j = np.argmax(fine.normals @ coarse.normals.T, axis=1)
    # 2 asin(|a - b| / 2) stays accurate for nearly parallel unit vectors, unlike arccos
    chord = np.linalg.norm(fine.normals - coarse.normals[j], axis=1)
    tau = 2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))
    return AngularMatch(tuple(float(t) for t in tau), float(tau.max()), tuple(int(k) for k in j),
                        fine.n_facets, coarse.n_facets)


@dataclass(frozen=True)
class ApproxMetrics:
    """Approximation quality of one player's polytope.

    ``facet_count`` is the polytope's own ``q``; ``angular_facet_count`` is the
    facet count of the finer polytope in the angular comparison.
    """

    hausdorff: float
    max_angle: float
    facet_angles: tuple
    curvature: float
    facet_count: int
    angular_facet_count: int
    curvature_source: str = "max-boundary-curvature"


def approx_metrics(ell, poly: Polytope, reference: Optional[Polytope] = None, samples=None,
                   curvature: Optional[float] = None) -> ApproxMetrics:
    """Hausdorff distance, angular mismatch against ``reference`` and curvature for one polytope.

    Without a reference the polytope is compared with a 128-gon of the same
    planar ellipse.
    """
    if reference is None:
        reference = inscribe_regular(ell, 128)
    samples = samples or max(4096, 8 * poly.n_facets)
    h = hausdorff_to_ellipsoid(ell, poly, samples)
    ang = angular_metric(poly, reference)
    if curvature is None:
        nu, src = ell.max_curvature(), "max-boundary-curvature"
    else:
        nu, src = float(curvature), "configured"
    return ApproxMetrics(h, ang.theta, ang.angles, nu, poly.n_facets, ang.n_fine, src)


@dataclass(frozen=True)
class DeltaBound:
    """Perturbation bound in angular form and, when not vacuous, Hausdorff form."""

    angular: float
    hausdorff: Optional[float]
    hausdorff_vacuous: bool
    r: float
    c: tuple

    @property
    def form(self):
        return "angular+hausdorff" if self.hausdorff is not None else "angular"


def delta_bound(metrics: Sequence[ApproxMetrics], r: float, c: Optional[Sequence[float]] = None) -> DeltaBound:
    """``r * sum q_i c_i theta_i`` and ``r * sum q_i c_i / sqrt(2/(h_i nu_i) - 1)``.

    The Hausdorff form is reported as unavailable (``None``, flagged vacuous)
    as soon as one player has ``h_i * nu_i >= 2``.
    """
    metrics = list(metrics)
    c = [1.0] * len(metrics) if c is None else [float(x) for x in c]
    if len(c) != len(metrics):
        raise DimensionError(f"{len(c)} constants for {len(metrics)} players")
    if r <= 0:
        raise ValueError("r must be positive")
    for m in metrics:
        if not 0.0 <= m.max_angle < math.pi / 2:
            raise GeometryError(f"angle {m.max_angle} outside [0, pi/2)")
    ang = r * sum(m.angular_facet_count * ci * m.max_angle for m, ci in zip(metrics, c))
    total, vacuous = 0.0, False
    for m, ci in zip(metrics, c):
        hn = m.hausdorff * m.curvature
        if hn >= 2.0:
            vacuous = True
            break
        if hn > 0.0:
            total += m.facet_count * ci / math.sqrt(2.0 / hn - 1.0)
    return DeltaBound(float(ang), None if vacuous else float(r * total), vacuous, float(r), tuple(c))


# ---------------------------------------------------------------------------
# Plain-text matrix format
# ---------------------------------------------------------------------------

def dumps_polytope(poly: Polytope) -> str:
    """One facet per line (normal components then offset), then a vertex block."""
    out = io.StringIO()
    out.write(f"# polytope dim={poly.dim} facets={poly.n_facets} vertices={poly.n_vertices}")
    out.write(f" label={poly.label}\n" if poly.label else "\n")
    out.write("facets\n")
    for a, d in zip(poly.normals, poly.offsets):
        out.write(" ".join(f"{x:.17g}" for x in (*a, d)) + "\n")
    out.write("vertices\n")
    for v in poly.vertices:
        out.write(" ".join(f"{x:.17g}" for x in v) + "\n")
    return out.getvalue()


def loads_polytope(text: str) -> Polytope:
    label, block = "", None
    rows = {"facets": [], "vertices": []}
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "label=" in line:
                label = line.split("label=", 1)[1].strip()
            continue
        if line in rows:
            block = line
            continue
        if block is None:
            raise ValueError(f"data line before any block header: {raw!r}")
        rows[block].append([float(x) for x in line.split()])
    F = np.array(rows["facets"])
    return Polytope(F[:, :-1], F[:, -1], np.array(rows["vertices"]), label)
