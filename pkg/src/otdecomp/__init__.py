"""Exact discrete optimal transport, layered plan decompositions and
Monte-Carlo convergence-rate experiments for empirical transport costs."""

from .errors import ContractViolation, OTError, ValidationError
from .exact_ot import DualPotentials, TransportPlan, normalize_duals, ot_value, solve_discrete
from .measures import (
    CostSpec,
    DiscreteMeasure,
    DistributionSpec,
    absolute_power_1d,
    custom_table,
    euclidean_power,
    make_discrete,
)

__version__ = "0.1.0"

__all__ = [
    "ContractViolation", "CostSpec", "DiscreteMeasure", "DistributionSpec", "DualPotentials", "OTError",
    "TransportPlan", "ValidationError", "absolute_power_1d", "custom_table", "euclidean_power",
    "make_discrete", "normalize_duals", "ot_value", "solve_discrete",
]
