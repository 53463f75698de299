import csv
import io

import numpy as np
import pytest

from robustgne.dynamics import IntegratorConfig, SwarmField, run_dynamics
from robustgne.extended import ExtendedState, build_extended_game
from robustgne.game import BoxSet, CommGraph, CustomCost, DemandResponseCost, UncertainGame
from robustgne.polytope import approx_metrics, inscribe_regular
from robustgne.verify import (EPS_BOUND_FORM, best_response_eps, bound_report, kkt_residuals, lift_multipliers,
                              lipschitz_estimate, rank_association, solve_centralized)

from conftest import DEMO_ELL, demo_game, random_small_game


@pytest.fixture(scope="module")
def small():
    rng = np.random.default_rng(3)
    g = random_small_game(rng, 3)
    polys = [inscribe_regular(m, 4) for m in g.uncertainty]
    eg = build_extended_game(g, polys)
    traj = run_dynamics(eg, cfg=IntegratorConfig(tol=1e-8, max_time=5000, record_stride=500))
    return g, polys, eg, traj


def test_kkt_small_at_tight_run(small):
    _, _, eg, traj = small
    rep = kkt_residuals(eg, traj.final_state(eg))
    assert rep.max() < 1e-6
    assert min(rep.to_dict().values()) >= 0


def test_kkt_consensus_and_complementarity_definitions(small):
    _, _, eg, traj = small
    st = traj.final_state(eg)
    st = ExtendedState(st.z, np.array([0.2, 1.0, 3.0]), st.zeta)
    L = eg.base.graph.laplacian
    assert kkt_residuals(eg, st).consensus == pytest.approx(np.linalg.norm(L @ st.lam), rel=1e-15)
    zero = ExtendedState(st.z, np.zeros(3), st.zeta)
    assert kkt_residuals(eg, zero).complementarity == 0.0


def test_lifted_rest_point(small):
    _, _, eg, _ = small
    sol = solve_centralized(eg, tol=1e-11)
    lam = np.full(3, sol.mu)
    st = ExtendedState(sol.z, lam, lift_multipliers(eg, sol.z, lam))
    assert kkt_residuals(eg, st).max() < 1e-8
    assert np.abs(SwarmField(eg)(st.to_vector())).max() < 1e-8


def test_centralized_matches_dynamics(small):
    _, _, eg, traj = small
    sol = solve_centralized(eg, tol=1e-10)
    assert sol.converged
    assert np.linalg.norm(sol.x_profile(eg) - eg.x_profile(traj.final_vector[:eg.z_size])) < 1e-6


def test_eps_polytope_model_at_own_equilibrium(small):
    g, polys, eg, traj = small
    X = eg.x_profile(traj.final_vector[:eg.z_size])
    rep = best_response_eps(g, polys, X, "polytope")
    assert rep.empirical_eps < 1e-5
    assert all(f == "" for f in rep.flags)


def test_eps_exact_when_uncertainty_is_polytopic():
    polys = [inscribe_regular(DEMO_ELL, 6)] * 3
    g = UncertainGame([BoxSet.cube(-15, 20, 2)] * 3, DemandResponseCost(DemandResponseCost.benchmark_nominal(3)),
                      polys, 5.0, CommGraph.ring(3))
    eg = build_extended_game(g, polys)
    traj = run_dynamics(eg, cfg=IntegratorConfig(tol=1e-6, max_time=5000, record_stride=500))
    X = eg.x_profile(traj.final_vector[:eg.z_size])
    rep = best_response_eps(g, polys, X, "ellipsoid")
    assert rep.empirical_eps < 1e-3
    assert rep.true_worst_case_violation < 1e-4


def test_eps_single_player_matches_grid():
    box = BoxSet.cube(-3, 3, 2)
    g = UncertainGame([box], DemandResponseCost([[2.0, -1.0]]), [DEMO_ELL], 3.0, CommGraph.from_edges(1, []))
    x_star = np.array([[-1.0, -0.5]])   # feasible: support = 2*(-1.5) + ||(-3, -1)|| < 3
    assert g.worst_case_lhs(x_star) < 3.0
    rep = best_response_eps(g, None, x_star, "ellipsoid")
    t = np.linspace(-3, 3, 400)
    G = np.stack(np.meshgrid(t, t), axis=-1).reshape(-1, 2)
    feas = G @ DEMO_ELL.center + np.linalg.norm(G * DEMO_ELL.semiaxes, axis=1) <= 3.0
    vals = np.array([g.cost.cost(0, p[None]) for p in G[feas]])
    grid_eps = g.cost.cost(0, x_star) - vals.min()
    assert rep.signed_gaps[0] >= 0
    # the grid minimum is an upper bound on the true minimum, within O(spacing^2)
    assert grid_eps <= rep.per_player_eps[0] + 1e-9
    # the minimiser sits on the curved constraint, so the grid misses it by up to one cell times the slope
    cell = (t[1] - t[0]) * np.sqrt(2)
    best = G[feas][np.argmin(vals)]
    assert rep.per_player_eps[0] - grid_eps < cell * np.linalg.norm(g.cost.grad(0, best[None]))


def test_eps_flags_empty_feasible_set():
    with pytest.warns(RuntimeWarning, match="Slater"):
        g = UncertainGame([BoxSet.cube(0.5, 1, 2)] * 2, DemandResponseCost(np.ones((2, 2))), [DEMO_ELL] * 2, 4.0,
                          CommGraph.ring(2))
    # the other player alone already exceeds the budget, and every own action adds a positive term
    rep = best_response_eps(g, None, [[1.0, 1.0], [0.5, 0.5]], "ellipsoid")
    assert rep.flags[1] == "empty-feasible-set" and np.isnan(rep.per_player_eps[1])


def test_eps_reports_serialise(small):
    g, polys, eg, traj = small
    rep = best_response_eps(g, polys, eg.x_profile(traj.final_vector[:eg.z_size]), "ellipsoid")
    kv = dict(line.split(" = ", 1) for line in rep.to_kv().splitlines())
    assert float(kv["empirical_eps"]) == rep.empirical_eps
    row = next(csv.DictReader(io.StringIO(rep.to_csv_row())))
    assert float(row["per_player_eps_2"]) == rep.per_player_eps[1]
    assert rep.empirical_eps == max(rep.per_player_eps)
    k = kkt_residuals(eg, traj.final_state(eg))
    row = next(csv.DictReader(io.StringIO(k.to_csv_row())))
    assert float(row["stationarity"]) == k.stationarity


def test_bound_report_contents():
    ms = [approx_metrics(DEMO_ELL, inscribe_regular(DEMO_ELL, 4))] * 2
    rep = bound_report(ms, 2.0, [1.0, 1.0], mu=0.3, lipschitz=[4.0, 5.0])
    assert rep["delta_angular"] == pytest.approx(2.0 * 2 * 128 * ms[0].max_angle)
    assert rep["q"] == [4, 4] and rep["q_angular"] == [128, 128]
    assert rep["mu"] == 0.3 and rep["eps_bound"] == EPS_BOUND_FORM
    assert not rep["hausdorff_bound_vacuous"]
    exact = inscribe_regular(DEMO_ELL, 128)
    assert bound_report([approx_metrics(DEMO_ELL, exact, reference=exact)], 1.0)["delta_angular"] == 0.0


def test_bound_report_vacuous_flag():
    # a very flat ellipse: curvature a / b^2 is huge so h * nu >= 2
    from robustgne.game import Ellipsoid
    flat = Ellipsoid([0, 0], [10.0, 0.5])
    rep = bound_report([approx_metrics(flat, inscribe_regular(flat, 3))], 1.0)
    assert rep["hausdorff_bound_vacuous"] and rep["delta_hausdorff"] is None


def test_rank_association():
    assert rank_association([5, 4, 3, 1], [9, 7, 2, 0.5]) == pytest.approx(1.0)
    assert rank_association([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)


def test_lipschitz_affine_cost():
    a = np.array([3.0, -4.0])
    cost = CustomCost(lambda i, X: float(a @ X[0]), 1, 2, grad_fn=lambda i, X: a)
    g = UncertainGame([BoxSet.cube(-1, 1, 2)], cost, [DEMO_ELL], 10.0, CommGraph.from_edges(1, []))
    est = lipschitz_estimate(g, 0, 1000, seed=0)
    assert est <= 5.0 + 1e-9 and est >= 0.95 * 5.0


def test_lipschitz_running_max_and_guard():
    g = demo_game()
    trace = lipschitz_estimate(g, 0, 300, seed=1, running=True)
    assert np.all(np.diff(trace) >= 0)
    with pytest.raises(ValueError):
        lipschitz_estimate(g, 0, 99)


def test_lipschitz_stable_across_seeds():
    g = demo_game()
    a, b = lipschitz_estimate(g, 0, 1000, seed=1), lipschitz_estimate(g, 0, 1000, seed=2)
    assert np.isfinite(a) and abs(a - b) <= 0.1 * max(a, b)


def test_lipschitz_below_analytic_constant():
    # ||grad J_1|| over the whole profile is convex and largest at the all-upper vertex;
    # own block x_1 - nominal_1 - p + x_1 with p = 10 - sum x, every other block x_1
    g = demo_game()
    X = np.full((10, 2), 20.0)
    own = X[0] - 4.0 - (10.0 - X.sum(axis=0)) + X[0]
    exact = np.sqrt(own @ own + 9 * X[0] @ X[0])
    est = lipschitz_estimate(g, 0, 200, seed=0)
    assert est <= exact + 1e-9
    assert est >= 0.99 * exact
