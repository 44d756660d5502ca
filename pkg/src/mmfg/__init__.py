"""Linear-quadratic major/minor mean field games: Riccati solvers and particle simulation."""
from .model import AssembledSystem, LqgModel, assemble_compact, check, validate
from .noise import NoiseSource
from .numerics import GriddedTrajectory, TimeGrid, expm, rk4_backward
from .riccati import RiccatiSolution, solve
from .sim import (Deviation, PathBundle, estimate_costs, simulate_conditional_mean,
                  simulate_finite_game, simulate_limit_particles, wasserstein2_1d)

__version__ = "0.1.0"

__all__ = ["AssembledSystem", "Deviation", "GriddedTrajectory", "LqgModel", "NoiseSource",
           "PathBundle", "RiccatiSolution", "TimeGrid", "assemble_compact", "check",
           "estimate_costs", "expm", "rk4_backward", "simulate_conditional_mean",
           "simulate_finite_game", "simulate_limit_particles", "solve", "validate",
           "wasserstein2_1d"]
