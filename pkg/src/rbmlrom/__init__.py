"""Certified adaptive FOM / RB-ROM / ML-ROM hierarchy for a parametrized heat equation."""

from .driver import RunConfig, load_state, run_monte_carlo, save_state
from .fom import FomSpec, assemble, solve
from .hierarchy import HierarchyConfig, new_state, query
from .param_space import ParameterDomain, default_domain

__version__ = "0.1.0"

__all__ = [
    "FomSpec", "HierarchyConfig", "ParameterDomain", "RunConfig", "assemble",
    "default_domain", "load_state", "new_state", "query", "run_monte_carlo", "save_state",
    "solve",
]
