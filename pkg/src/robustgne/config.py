"""
Scenario configuration: a YAML document validated into typed specs.

Validation is total. Every problem becomes a ``(field, message)`` pair and
all of them are raised together in one :class:`ConfigError`; nothing in
here is allowed to escape as a bare exception.

Schema (all sections optional except ``game``)::

    name: demo-demand-response
    seed: 0
    game:
      players: 10
      dim: 2
      boxes: {lower: -15, upper: 20}          # or a list of N such maps; bounds scalar or length-dim
      cost:
        kind: demand-response                 # only kind
        nominal: default                      # or N x dim array; default is (5 - i) * 1 for player i
        price_scale: 10                       # optional, defaults to N
      uncertainty: {center: [2, 2], semiaxes: [3, 2]}   # or a list of N such maps
      budget: 5.0
      graph: {kind: ring}                     # or {kind: edges, edges: [[1, 2], ...]} (1-based)
    approximation:
      family: regular                         # regular | refine
      vertices: 4                             # regular family
      phase: 0.0
      spacing: angle                          # angle | arclength
      refine_steps: 0                         # refine family: greedy steps from the axis polytope
      reference_vertices: 128
    integrator: {step_size: 0.01, tol: 1.0e-4, max_time: 2000, scheme: euler, record_stride: 10}
    sweep: {vertices: [3, 4, 6, 8, 10, 12]}
    verify: {mu: 0.5, c: 1.0, lipschitz_samples: 1000, restarts: 5}
    output: {dir: out}
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
import yaml

from .dynamics import IntegratorConfig
from .errors import ConfigError, RobustGNEError
from .game import BoxSet, CommGraph, DemandResponseCost, Ellipsoid, UncertainGame
from .polytope import inscribe_axes, inscribe_regular, refine_by_support_gap


@dataclass(frozen=True)
class ApproxSpec:
    family: str = "regular"
    vertices: int = 4
    phase: float = 0.0
    spacing: str = "angle"
    refine_steps: int = 0
    reference_vertices: int = 128


@dataclass(frozen=True)
class VerifySpec:
    mu: float = 0.5
    c: float = 1.0
    lipschitz_samples: int = 1000
    restarts: int = 5


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    n_players: int
    dim: int
    lower: np.ndarray          # (N, n)
    upper: np.ndarray          # (N, n)
    nominal: np.ndarray        # (N, n)
    price_scale: Optional[float]
    centers: np.ndarray        # (N, n)
    semiaxes: np.ndarray       # (N, n)
    budget: float
    edges: Tuple[Tuple[int, int], ...]   # 0-based
    approx: ApproxSpec = ApproxSpec()
    integrator: IntegratorConfig = IntegratorConfig()
    sweep: Tuple[int, ...] = ()
    verify: VerifySpec = VerifySpec()
    out_dir: str = "out"
    seed: int = 0

    def build_game(self) -> UncertainGame:
        N = self.n_players
        boxes = [BoxSet(self.lower[i], self.upper[i]) for i in range(N)]
        ells = [Ellipsoid(self.centers[i], self.semiaxes[i]) for i in range(N)]
        cost = DemandResponseCost(self.nominal, self.price_scale)
        return UncertainGame(boxes, cost, ells, self.budget, CommGraph.from_edges(N, self.edges))

    def build_polytopes(self, game: UncertainGame, vertices: Optional[int] = None):
        """One inscribed polytope per player following the approximation settings."""
        a = self.approx
        if a.family == "refine":
            return [refine_by_support_gap(m, inscribe_axes(m), a.refine_steps) for m in game.uncertainty]
        v = a.vertices if vertices is None else vertices
        return [inscribe_regular(m, v, a.phase, a.spacing) for m in game.uncertainty]

    def with_overrides(self, seed=None, phase=None, step_size=None, tol=None, out_dir=None):
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if phase is not None:
            cfg = replace(cfg, approx=replace(cfg.approx, phase=float(phase)))
        if step_size is not None or tol is not None:
            try:
                integ = replace(cfg.integrator,
                                step_size=cfg.integrator.step_size if step_size is None else float(step_size),
                                tol=cfg.integrator.tol if tol is None else float(tol))
            except ValueError as exc:
                raise ConfigError([("integrator", str(exc))]) from None
            cfg = replace(cfg, integrator=integ)
        if out_dir is not None:
            cfg = replace(cfg, out_dir=str(out_dir))
        return cfg


# ---------------------------------------------------------------------------
# Validation helpers
# ---------------------------------------------------------------------------

class _Collector:
    def __init__(self):
        self.diags: List[Tuple[str, str]] = []

    def err(self, path, msg):
        self.diags.append((path, msg))

    def number(self, path, value, *, integer=False, positive=False, nonneg=False, default=None):
        if value is None:
            if default is None:
                self.err(path, "required")
            return default
        if isinstance(value, bool):
            self.err(path, f"expected a number, got {value!r}")
            return default
        try:
            # YAML 1.1 reads 1e-4 as a string, accept it
            x = float(value)
        except (TypeError, ValueError):
            self.err(path, f"expected a number, got {value!r}")
            return default
        if not math.isfinite(x):
            self.err(path, "must be finite")
            return default
        if integer:
            if x != int(x):
                self.err(path, f"expected an integer, got {value!r}")
                return default
            x = int(x)
        if positive and not x > 0:
            self.err(path, "must be positive")
            return default
        if nonneg and x < 0:
            self.err(path, "must be nonnegative")
            return default
        return x

    def vector(self, path, value, length):
        """Scalar broadcast or list of ``length`` numbers."""
        if isinstance(value, (list, tuple)):
            if len(value) != length:
                self.err(path, f"expected {length} entries, got {len(value)}")
                return None
            out = [self.number(f"{path}[{k}]", v) for k, v in enumerate(value)]
            return None if any(v is None for v in out) else np.array(out, dtype=float)
        x = self.number(path, value)
        return None if x is None else np.full(length, x)

    def mapping(self, path, value, keys):
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.err(path, f"expected a mapping, got {type(value).__name__}")
            return {}
        for k in value:
            if k not in keys:
                self.err(f"{path}.{k}" if path else str(k), "unknown field")
        return value

    def choice(self, path, value, options, default):
        if value is None:
            return default
        if value not in options:
            self.err(path, f"expected one of {', '.join(options)}, got {value!r}")
            return default
        return value


def _per_player(col, path, value, N):
    """A single mapping for everyone, or a list of N mappings."""
    if isinstance(value, list):
        if len(value) != N:
            col.err(path, f"expected {N} entries (one per player), got {len(value)}")
            return None
        return [(f"{path}[{i}]", v) for i, v in enumerate(value)]
    return [(path, value)] * N


def _parse_boxes(col, value, N, n):
    items = _per_player(col, "game.boxes", value, N)
    if items is None:
        return None, None
    lo, hi = [], []
    for path, item in items:
        item = col.mapping(path, item, {"lower", "upper"})
        if not item:
            col.err(path, "needs lower and upper")
            return None, None
        a = col.vector(f"{path}.lower", item.get("lower"), n)
        b = col.vector(f"{path}.upper", item.get("upper"), n)
        if a is None or b is None:
            return None, None
        if np.any(a > b):
            col.err(path, "lower exceeds upper")
            return None, None
        lo.append(a)
        hi.append(b)
    return np.array(lo), np.array(hi)


def _parse_uncertainty(col, value, N, n):
    if value is None:
        col.err("game.uncertainty", "required")
        return None, None
    items = _per_player(col, "game.uncertainty", value, N)
    if items is None:
        return None, None
    cs, vs = [], []
    for path, item in items:
        item = col.mapping(path, item, {"center", "semiaxes"})
        c = col.vector(f"{path}.center", item.get("center"), n)
        v = col.vector(f"{path}.semiaxes", item.get("semiaxes"), n)
        if c is None or v is None:
            return None, None
        if np.any(v <= 0):
            col.err(f"{path}.semiaxes", "semiaxes must be positive")
            return None, None
        cs.append(c)
        vs.append(v)
    return np.array(cs), np.array(vs)


def _parse_graph(col, value, N):
    value = col.mapping("game.graph", value, {"kind", "edges"})
    kind = col.choice("game.graph.kind", value.get("kind"), ("ring", "edges"), "ring")
    if kind == "ring":
        if N == 1:
            return ()
        if N == 2:
            return ((0, 1),)
        return tuple((i, (i + 1) % N) for i in range(N))
    raw = value.get("edges")
    if not isinstance(raw, list) or not raw:
        col.err("game.graph.edges", "expected a nonempty list of [i, j] pairs (1-based)")
        return None
    edges = []
    for k, e in enumerate(raw):
        path = f"game.graph.edges[{k}]"
        if not isinstance(e, (list, tuple)) or len(e) != 2:
            col.err(path, "expected a pair [i, j]")
            return None
        i = col.number(f"{path}[0]", e[0], integer=True)
        j = col.number(f"{path}[1]", e[1], integer=True)
        if i is None or j is None:
            return None
        for p in (i, j):
            if not 1 <= p <= N:
                col.err(path, f"player {p} does not exist (players are 1..{N})")
                return None
        if i == j:
            col.err(path, "self-loop")
            return None
        edges.append((i - 1, j - 1))
    return tuple(edges)


def from_mapping(doc) -> ScenarioConfig:
    """Validate a parsed document. Raises :class:`ConfigError` with every diagnostic found."""
    col = _Collector()
    doc = col.mapping("", doc if doc is not None else {},
                      {"name", "seed", "game", "approximation", "integrator", "sweep", "verify", "output"})
    if "game" not in doc:
        col.err("game", "required")
    name = str(doc.get("name", "scenario"))
    seed = col.number("seed", doc.get("seed"), integer=True, nonneg=True, default=0)

    g = col.mapping("game", doc.get("game"),
                    {"players", "dim", "boxes", "cost", "uncertainty", "budget", "graph"})
    N = col.number("game.players", g.get("players"), integer=True, positive=True) if g else None
    n = col.number("game.dim", g.get("dim"), integer=True, positive=True, default=2) if g else 2
    budget = col.number("game.budget", g.get("budget")) if g else None
    lo = hi = nominal = centers = semi = edges = None
    price_scale = None
    if N is not None and n is not None:
        if g.get("boxes") is None:
            col.err("game.boxes", "required")
        else:
            lo, hi = _parse_boxes(col, g.get("boxes"), N, n)
        cost = col.mapping("game.cost", g.get("cost"), {"kind", "nominal", "price_scale"})
        col.choice("game.cost.kind", cost.get("kind"), ("demand-response",), "demand-response")
        nom = cost.get("nominal", "default")
        if nom == "default":
            nominal = DemandResponseCost.benchmark_nominal(N, n)
        elif isinstance(nom, list) and len(nom) == N:
            rows = [col.vector(f"game.cost.nominal[{i}]", r, n) for i, r in enumerate(nom)]
            nominal = None if any(r is None for r in rows) else np.array(rows)
        else:
            col.err("game.cost.nominal", f"expected 'default' or a {N} x {n} array")
        if cost.get("price_scale") is not None:
            price_scale = col.number("game.cost.price_scale", cost.get("price_scale"))
        centers, semi = _parse_uncertainty(col, g.get("uncertainty"), N, n)
        edges = _parse_graph(col, g.get("graph"), N)
        if edges is not None:
            adj = np.zeros((N, N))
            for i, j in edges:
                adj[i, j] = adj[j, i] = 1.0
            try:
                CommGraph(adj)
            except RobustGNEError as exc:
                col.err("game.graph", str(exc))
                edges = None

    a = col.mapping("approximation", doc.get("approximation"),
                    {"family", "vertices", "phase", "spacing", "refine_steps", "reference_vertices"})
    approx = ApproxSpec(
        family=col.choice("approximation.family", a.get("family"), ("regular", "refine"), "regular"),
        vertices=col.number("approximation.vertices", a.get("vertices"), integer=True, default=4),
        phase=col.number("approximation.phase", a.get("phase"), default=0.0),
        spacing=col.choice("approximation.spacing", a.get("spacing"), ("angle", "arclength"), "angle"),
        refine_steps=col.number("approximation.refine_steps", a.get("refine_steps"), integer=True,
                                nonneg=True, default=0),
        reference_vertices=col.number("approximation.reference_vertices", a.get("reference_vertices"),
                                      integer=True, default=128),
    )
    if approx.vertices < 3:
        col.err("approximation.vertices", "need at least 3 vertices")
    if approx.reference_vertices < 3:
        col.err("approximation.reference_vertices", "need at least 3 vertices")
    if n is not None and n != 2 and approx.family == "regular":
        col.err("approximation.family", "the regular family needs dim = 2; use refine")

    it = col.mapping("integrator", doc.get("integrator"),
                     {"step_size", "tol", "max_time", "scheme", "record_stride", "divergence_limit"})
    d = IntegratorConfig()
    integ_kw = dict(
        step_size=col.number("integrator.step_size", it.get("step_size"), positive=True, default=d.step_size),
        tol=col.number("integrator.tol", it.get("tol"), positive=True, default=d.tol),
        max_time=col.number("integrator.max_time", it.get("max_time"), positive=True, default=d.max_time),
        scheme=col.choice("integrator.scheme", it.get("scheme"), ("euler", "rk4"), d.scheme),
        record_stride=col.number("integrator.record_stride", it.get("record_stride"), integer=True,
                                 positive=True, default=d.record_stride),
        divergence_limit=col.number("integrator.divergence_limit", it.get("divergence_limit"), positive=True,
                                    default=d.divergence_limit),
    )

    s = col.mapping("sweep", doc.get("sweep"), {"vertices"})
    sweep = ()
    if "vertices" in s:
        vs = s["vertices"]
        if not isinstance(vs, list) or not vs:
            col.err("sweep.vertices", "expected a nonempty list of vertex counts")
        else:
            out = [col.number(f"sweep.vertices[{k}]", x, integer=True) for k, x in enumerate(vs)]
            if all(x is not None for x in out):
                if any(x < 3 for x in out):
                    col.err("sweep.vertices", "vertex counts must be >= 3")
                elif len(set(out)) != len(out):
                    col.err("sweep.vertices", "duplicate vertex counts")
                else:
                    sweep = tuple(sorted(out))

    vf = col.mapping("verify", doc.get("verify"), {"mu", "c", "lipschitz_samples", "restarts"})
    verify = VerifySpec(
        mu=col.number("verify.mu", vf.get("mu"), positive=True, default=0.5),
        c=col.number("verify.c", vf.get("c"), positive=True, default=1.0),
        lipschitz_samples=col.number("verify.lipschitz_samples", vf.get("lipschitz_samples"), integer=True,
                                     default=1000),
        restarts=col.number("verify.restarts", vf.get("restarts"), integer=True, nonneg=True, default=5),
    )
    if verify.lipschitz_samples < 100:
        col.err("verify.lipschitz_samples", "need at least 100 samples")

    o = col.mapping("output", doc.get("output"), {"dir"})
    out_dir = str(o.get("dir", "out"))

    if budget is not None and centers is not None and lo is not None and nominal is not None and edges is not None:
        if not col.diags:
            cfg = ScenarioConfig(name, N, n, lo, hi, nominal, price_scale, centers, semi, budget, edges,
                                 approx, IntegratorConfig(**integ_kw), sweep, verify, out_dir, seed)
            return cfg
    if not col.diags:
        col.err("game", "incomplete game specification")
    raise ConfigError(col.diags)


def loads(text: str) -> ScenarioConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "document"
        raise ConfigError([(where, f"YAML parse error: {exc.problem or exc}")]) from None
    except yaml.YAMLError as exc:
        raise ConfigError([("document", f"YAML parse error: {exc}")]) from None
    return from_mapping(doc)


def load(path) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([("config", f"cannot read {path}: {exc.strerror}")]) from None
    return loads(text)
