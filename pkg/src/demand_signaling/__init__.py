"""Optimal public signaling about uncertain demand in congestion games."""

from .model import (
    AffineCost,
    Belief,
    Edge,
    Instance,
    Network,
    StateSpace,
    ValidationReport,
    coerce_instance,
    dump_instance,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    normalize,
    prune_unroutable,
    validate,
)
from .equilibrium import (
    ConvergenceError,
    Flow,
    SupportError,
    active_support,
    equilibrium_cost,
    expected_edge_cost,
    frank_wolfe,
    minimal_support,
    solve_for_support,
    solve_wardrop,
    system_optimum,
    virtual_demand,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
