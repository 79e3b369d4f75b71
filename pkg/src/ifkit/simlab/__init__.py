"""Simulation designs, replication engine and theory checks."""
from .dgps import DGP_IDS, DGPSpec, get_dgp
from .study import (
    DRRecord,
    ScalingRecord,
    StudyConfig,
    StudyResult,
    dr_experiment,
    remainder_scaling,
    replication_seed,
    run_replication,
    run_study,
)

__all__ = [
    "DGP_IDS", "DGPSpec", "get_dgp", "DRRecord", "ScalingRecord", "StudyConfig", "StudyResult",
    "dr_experiment", "remainder_scaling", "replication_seed", "run_replication", "run_study",
]
