"""Doubly reflected BSDEs with irregular barriers on scenario trees."""

from .bsde import Driver, backward, bsde_solve, driver_library, f_expectation
from .drbsde import (
    DRBSDESolution,
    solve_direct,
    solve_fixed_point,
    solve_picard_driver_process,
    verify_solution,
)
from .dynkin import StoppingSystem, StoppingTime, game_values
from .kernels import BACKEND
from .process import AdmissiblePair, LadlagProcess, regularity
from .rbsde import ref_operator
from .tree import ScenarioTree, TimeGrid, build_tree

__version__ = "0.1.0"

__all__ = [
    "AdmissiblePair",
    "BACKEND",
    "DRBSDESolution",
    "Driver",
    "LadlagProcess",
    "ScenarioTree",
    "StoppingSystem",
    "StoppingTime",
    "TimeGrid",
    "backward",
    "bsde_solve",
    "build_tree",
    "driver_library",
    "f_expectation",
    "game_values",
    "ref_operator",
    "regularity",
    "solve_direct",
    "solve_fixed_point",
    "solve_picard_driver_process",
    "verify_solution",
]
