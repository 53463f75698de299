"""Distributed robust generalized Nash equilibrium seeking under ellipsoidal uncertainty."""

from .config import ScenarioConfig, load as load_config, loads as loads_config
from .dynamics import IntegratorConfig, SwarmTrajectory, run_dynamics
from .errors import (ConfigError, DimensionError, DivergenceError, GeometryError, GraphError, ProjectionError,
                     RobustGNEError)
from .extended import ExtendedGame, ExtendedState, build_extended_game, project_omega
from .game import BoxSet, CommGraph, CustomCost, DemandResponseCost, Ellipsoid, UncertainGame
from .polytope import Polytope, approx_metrics, delta_bound, inscribe_regular, refine_by_support_gap
from .verify import best_response_eps, kkt_residuals, solve_centralized

__version__ = "0.1.0"
