"""Decentralized network formation by gradient-guided agents."""

from netforge.abm.core import (
    UNLIMITED,
    AbmConfig,
    World,
    audit_events,
    compute_scope,
    parse_depth,
    respond_to_request,
    sigmoid_step,
    softargmax_pick,
    take_action,
)
from netforge.abm.simulate import (
    HAVE_KERNEL,
    INACTIVE_QUORUM,
    MAX_ROUNDS,
    TRACE_COLUMNS,
    SimulationTrace,
    default_backend,
    run_simulation,
)

__all__ = [
    "AbmConfig", "World", "audit_events", "SimulationTrace", "UNLIMITED", "HAVE_KERNEL",
    "INACTIVE_QUORUM", "MAX_ROUNDS", "TRACE_COLUMNS", "compute_scope", "parse_depth",
    "respond_to_request", "sigmoid_step", "softargmax_pick", "take_action",
    "default_backend", "run_simulation",
]
