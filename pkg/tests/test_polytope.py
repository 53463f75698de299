import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustgne.errors import GeometryError
from robustgne.game import SupportBody
from robustgne.game import Ellipsoid
from robustgne.polytope import (ApproxMetrics, Polytope, angular_metric, approx_metrics, delta_bound,
                                dumps_polytope, hausdorff_to_ellipsoid, inscribe_axes, inscribe_regular,
                                loads_polytope, polygon_from_vertices, refine_by_support_gap, support_gaps)

from conftest import DEMO_ELL

UNIT_CIRCLE = Ellipsoid([0.0, 0.0], [1.0, 1.0])
SWEEP = [3, 4, 6, 8, 10, 12]


def _chord_depth(ell, poly, samples=200_000):
    """Independent Hausdorff route: each boundary arc lies beyond exactly one edge of an
    inscribed polygon, so the largest signed facet excess over a dense boundary sample is h."""
    t = np.linspace(0, 2 * np.pi, samples, endpoint=False)
    P = np.c_[ell.center[0] + ell.semiaxes[0] * np.cos(t), ell.center[1] + ell.semiaxes[1] * np.sin(t)]
    return float(np.max(P @ poly.normals.T - poly.offsets))


def test_square_vertices():
    P = inscribe_regular(DEMO_ELL, 4, phase=0.0)
    assert np.allclose(P.vertices, [[5, 2], [2, 4], [-1, 2], [2, 0]], atol=1e-12)
    assert P.support([1.0, 0.0]) == pytest.approx(5.0)
    assert P.support([1.0, 0.0]) == max(P.vertices @ [1.0, 0.0])


@pytest.mark.parametrize("v", SWEEP + [64])
@pytest.mark.parametrize("phase", [0.0, 0.3])
def test_regular_construction_postconditions(v, phase):
    P = inscribe_regular(DEMO_ELL, v, phase)
    assert P.n_facets == v and P.n_vertices == v
    assert np.allclose(np.linalg.norm(P.normals, axis=1), 1.0, atol=1e-12)
    assert np.all(P.vertices @ P.normals.T <= P.offsets + 1e-12)
    assert np.allclose(DEMO_ELL.membership(P.vertices), 1.0)
    assert np.all(P.facet_vertex_counts() == 2)


@pytest.mark.parametrize("v", SWEEP)
def test_inscribed_containment_on_directions(v):
    P = inscribe_regular(DEMO_ELL, v)
    t = np.linspace(0, 2 * np.pi, 10_000, endpoint=False)
    U = np.c_[np.cos(t), np.sin(t)]
    assert np.all(P.support(U) <= DEMO_ELL.support(U) + 1e-12)


def test_arclength_spacing_splits_perimeter():
    P = inscribe_regular(DEMO_ELL, 6, spacing="arclength")
    assert np.allclose(DEMO_ELL.membership(P.vertices), 1.0)
    assert np.allclose(P.vertices[0], [5.0, 2.0])


def test_regular_rejects_bad_vertex_count():
    with pytest.raises(GeometryError):
        inscribe_regular(DEMO_ELL, 2)


def test_coincident_vertices_rejected():
    with pytest.raises(GeometryError):
        polygon_from_vertices([[0, 0], [1, 0], [1, 0], [0, 1]])


def test_polytope_requires_unit_normals_and_facets():
    with pytest.raises(GeometryError):
        Polytope([[2.0, 0.0]], [1.0], [[0.0, 0.0]])
    with pytest.raises(GeometryError):
        Polytope(np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)))


def test_hexagon_of_unit_circle():
    P = inscribe_regular(UNIT_CIRCLE, 6)
    assert np.allclose(P.offsets, math.cos(math.pi / 6), atol=1e-12)


def test_hausdorff_circle_square():
    h = hausdorff_to_ellipsoid(UNIT_CIRCLE, inscribe_regular(UNIT_CIRCLE, 4))
    assert h == pytest.approx(1 - math.sqrt(2) / 2, abs=1e-4)


@pytest.mark.parametrize("v", SWEEP)
def test_hausdorff_matches_chord_depth_oracle(v):
    P = inscribe_regular(DEMO_ELL, v)
    assert hausdorff_to_ellipsoid(DEMO_ELL, P, 8192) == pytest.approx(_chord_depth(DEMO_ELL, P), abs=1e-6)


def test_hausdorff_limit_and_guard():
    assert hausdorff_to_ellipsoid(DEMO_ELL, inscribe_regular(DEMO_ELL, 256), 4096) < 1e-3
    with pytest.raises(GeometryError):
        hausdorff_to_ellipsoid(DEMO_ELL, inscribe_regular(DEMO_ELL, 12), 95)


def test_hausdorff_rate_is_inverse_square():
    vs = np.array([4, 8, 16, 32, 64])
    hs = [hausdorff_to_ellipsoid(DEMO_ELL, inscribe_regular(DEMO_ELL, v), 8192) for v in vs]
    slope = np.polyfit(np.log(vs), np.log(hs), 1)[0]
    assert -2.3 < slope < -1.7


def test_refine_one_step_adds_max_gap_point():
    sq = inscribe_regular(DEMO_ELL, 4)
    # exhaustive gap over the square's normals, support in closed form
    gaps = [DEMO_ELL.center @ a + np.linalg.norm(DEMO_ELL.semiaxes * a) - d for a, d in zip(sq.normals, sq.offsets)]
    assert np.allclose(gaps, support_gaps(DEMO_ELL, sq))
    l = int(np.argmax(gaps))   # first index on ties
    a = sq.normals[l]
    expected = DEMO_ELL.center + DEMO_ELL.semiaxes**2 * a / np.linalg.norm(DEMO_ELL.semiaxes * a)
    pent = refine_by_support_gap(DEMO_ELL, sq, 1)
    assert pent.n_vertices == 5
    new = [w for w in pent.vertices if not any(np.allclose(w, u) for u in sq.vertices)]
    assert len(new) == 1 and np.allclose(new[0], expected, atol=1e-12)


def test_refinement_monotone_and_tenfold():
    P = inscribe_regular(DEMO_ELL, 4)
    h0 = hausdorff_to_ellipsoid(DEMO_ELL, P, 8192)
    hs = [h0]
    for _ in range(60):
        P = refine_by_support_gap(DEMO_ELL, P, 1)
        hs.append(hausdorff_to_ellipsoid(DEMO_ELL, P, 8192))
    assert all(b <= a + 1e-12 for a, b in zip(hs, hs[1:]))
    assert hs[-1] * 10 <= h0
    assert P.label.endswith("+refined60")


def test_refinement_stops_when_exact():
    sq = Polytope(np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], float), np.ones(4),
                  np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], float))
    body = SupportBody(2, sq.support, sq.arg_support)
    assert refine_by_support_gap(body, sq, 5) is sq


def test_inscribe_axes_matches_square():
    P = inscribe_axes(DEMO_ELL)
    assert {tuple(np.round(v, 12)) for v in P.vertices} == {(5, 2), (2, 4), (-1, 2), (2, 0)}


def test_angular_identical_and_rotated():
    P = inscribe_regular(UNIT_CIRCLE, 4)
    m = angular_metric(P, P)
    assert m.theta == 0.0 and all(t == 0.0 for t in m.angles)
    R = inscribe_regular(UNIT_CIRCLE, 4, phase=math.pi / 6)
    assert angular_metric(P, R).theta == pytest.approx(math.pi / 6, abs=1e-12)


def test_angular_square_vs_octagon_exhaustive():
    sq, oc = inscribe_regular(DEMO_ELL, 4), inscribe_regular(DEMO_ELL, 8)
    pair = np.array([[math.acos(np.clip(a @ b, -1, 1)) for b in sq.normals] for a in oc.normals])
    expected = pair.min(axis=1).max()
    m = angular_metric(sq, oc)
    assert m.n_fine == 8 and m.n_coarse == 4
    assert m.theta == pytest.approx(expected, abs=1e-12)


def _metrics(theta, q, h=0.1, nu=1.0):
    return ApproxMetrics(h, theta, (theta,), nu, q, q)


def test_delta_direct_formula():
    assert delta_bound([_metrics(0.1, 4)], 1.0, [1.0]).angular == pytest.approx(0.4)
    assert delta_bound([_metrics(0.0, 4)], 3.0).angular == 0.0


def test_delta_hausdorff_form_and_vacuous_flag():
    d = delta_bound([_metrics(0.1, 4, h=0.5, nu=1.0)], 2.0)
    assert d.hausdorff == pytest.approx(2.0 * 4 / math.sqrt(2 / 0.5 - 1))
    v = delta_bound([_metrics(0.1, 4, h=2.5, nu=1.0)], 2.0)
    assert v.hausdorff is None and v.hausdorff_vacuous


def test_delta_and_theta_strictly_decrease_over_sweep():
    ms = [approx_metrics(DEMO_ELL, inscribe_regular(DEMO_ELL, v)) for v in SWEEP]
    theta = [m.max_angle for m in ms]
    delta = [delta_bound([m] * 10, 1.0).angular for m in ms]
    h = [m.hausdorff for m in ms]
    for seq in (theta, delta, h):
        assert all(a > b for a, b in zip(seq, seq[1:]))


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 40), st.floats(0, 2 * math.pi))
def test_text_format_round_trip(v, phase):
    P = inscribe_regular(DEMO_ELL, v, phase)
    Q = loads_polytope(dumps_polytope(P))
    assert np.array_equal(P.normals, Q.normals)
    assert np.array_equal(P.offsets, Q.offsets)
    assert np.array_equal(P.vertices, Q.vertices)
    assert P.label == Q.label
