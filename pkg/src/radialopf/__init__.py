"""Distributed ADMM solver for OPF on unbalanced radial distribution feeders."""

from .engine import IterationStats, RunResult, SolverConfig, run
from .hermitian import HermitianMatrix, eigh, inner, psd_project
from .network import (
    Box,
    Disk,
    FeederModel,
    PhaseSet,
    TopologyTemplate,
    generate_topology,
    load_feeder,
    loads_feeder,
    phase_lift,
    phase_project,
    validate_radial,
)
from .verify import brute_force_opf, check_bfm_feasibility, check_rank1

__all__ = [
    "Box",
    "Disk",
    "FeederModel",
    "HermitianMatrix",
    "IterationStats",
    "PhaseSet",
    "RunResult",
    "SolverConfig",
    "TopologyTemplate",
    "brute_force_opf",
    "check_bfm_feasibility",
    "check_rank1",
    "eigh",
    "generate_topology",
    "inner",
    "load_feeder",
    "loads_feeder",
    "phase_lift",
    "phase_project",
    "psd_project",
    "run",
    "validate_radial",
]

__version__ = "0.1.0"
