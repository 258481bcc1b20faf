"""Optimal tie-breaker designs for the two-line regression model.

A design assigns treatment with probability ``p(x)`` given a running
variable ``x``.  The library finds designs that maximise an efficiency
criterion subject to a treatment budget and a short-term gain, for
continuous laws (uniform, Gaussian, Weibull) and for empirical samples.
"""

__version__ = "0.1.0"

from .constraints import Constraints, constraints, xz_max
from .criteria import D_OPT, EFF, CriterionSpec, efficiency, parse_criterion
from .design import DesignFunction, MomentTriple, moments
from .dist import Distribution, from_sample, load_sample, make_distribution
from .errors import (
    BracketError,
    ConsistencyError,
    DataFormatError,
    DegenerateDistributionError,
    InfeasibleConstraintsError,
    SingularDesignError,
    TiebreakerError,
    ValidationError,
)
from .solve_continuous import canonical_form, optimal_design, solve_extremal, tradeoff_sweep
from .solve_discrete import lp_oracle_discrete, optimal_design_discrete, solve_extremal_discrete
from .verify import SimConfig, fit_two_line, simulate_variance

__all__ = [
    "BracketError",
    "ConsistencyError",
    "Constraints",
    "CriterionSpec",
    "D_OPT",
    "DataFormatError",
    "DegenerateDistributionError",
    "DesignFunction",
    "Distribution",
    "EFF",
    "InfeasibleConstraintsError",
    "MomentTriple",
    "SimConfig",
    "SingularDesignError",
    "TiebreakerError",
    "ValidationError",
    "canonical_form",
    "constraints",
    "efficiency",
    "fit_two_line",
    "from_sample",
    "load_sample",
    "lp_oracle_discrete",
    "make_distribution",
    "moments",
    "optimal_design",
    "optimal_design_discrete",
    "parse_criterion",
    "simulate_variance",
    "solve_extremal",
    "solve_extremal_discrete",
    "tradeoff_sweep",
    "xz_max",
]
