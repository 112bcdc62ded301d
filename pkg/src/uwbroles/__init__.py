"""Scalable UWB relative localization with dynamic ToF/TDoA role allocation.

The library side covers geometry, the two range-based estimators, the
combinatorial role allocator, and a deterministic multi-robot scenario
engine. The ledger side re-runs the allocation decision as a deterministic
smart contract on a simplified execute-order-validate permissioned ledger.
"""

from .allocation import (
    FrequencyBudget,
    RoleAssignment,
    allocate_roles,
    allocation_cost,
    compute_k,
    role_overlap,
)
from .estimators import (
    ConvergenceError,
    DegenerateGeometryError,
    EstimationError,
    InsufficientObservationsError,
    adjust_network,
    multilaterate,
    tdoa_estimate,
)
from .geometry import (
    TdoaSample,
    TofRange,
    centroid,
    distance,
    point_in_convex_hull_2d,
)
from .simulation import (
    EpochRecord,
    NoiseStreams,
    Scenario,
    SimConfig,
    measure_tdoa,
    measure_tof,
    reference_scenario,
    run_scenario,
    step_motion,
)

__version__ = "0.1.0"
