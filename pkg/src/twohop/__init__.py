"""Deterministic equivalents for the mutual information of two-hop MIMO channels."""
from .errors import ConvergenceError, InternalConsistencyError, NumericalError, ParameterError
from .model import CorrelationSet, RawChannelSpec, SystemParams, build_correlation, reduce_raw_spec
from .fixed_point import IidParams, solve_system1, solve_system2
from .deterministic import GaussianModel, analyze, outage_probability, outage_rate
from .montecarlo import run_mc
from .spectrum import lsd_density

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "CorrelationSet", "GaussianModel", "IidParams", "InternalConsistencyError",
    "NumericalError", "ParameterError", "RawChannelSpec", "SystemParams", "analyze",
    "build_correlation", "lsd_density", "outage_probability", "outage_rate", "reduce_raw_spec",
    "run_mc", "solve_system1", "solve_system2",
]
