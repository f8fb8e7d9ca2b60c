"""Numerical laboratory for nonuniformly expanding maps and semiflows:
iterated Birkhoff sums, martingale-coboundary decompositions, diffusion
and drift coefficients, iterated weak invariance principles, and fast-slow
homogenization toward SDE limits."""

__version__ = "0.1.0"

from .dynamics import MapFamily, MapSpec, Observable, apply_map, orbit, orbit_fold
from .errors import ConfigError, ConvergenceError, DomainError, GateError, HomogError
from .observables import invariant_average, make_observable
from .stats import CoefficientEstimate, IteratedStats, MomentTable, iterated_sums_stream
from .wip import PathEnsemble, TestReport

__all__ = [
    "__version__",
    "MapFamily",
    "MapSpec",
    "Observable",
    "apply_map",
    "orbit",
    "orbit_fold",
    "ConfigError",
    "ConvergenceError",
    "DomainError",
    "GateError",
    "HomogError",
    "invariant_average",
    "make_observable",
    "CoefficientEstimate",
    "IteratedStats",
    "MomentTable",
    "iterated_sums_stream",
    "PathEnsemble",
    "TestReport",
]
