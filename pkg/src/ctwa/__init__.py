"""Cluster truncated Wigner dynamics for spin-1/2 lattice models.

The package factors quantum spin dynamics into clusters, replaces each
cluster's operator expectations by classical phase-space coordinates,
samples initial conditions from a discrete Wigner distribution, and
integrates the resulting nonlinear mean-field equations trajectory by
trajectory.  Ensemble means converge to quantum dynamics as cluster
size grows.
"""

from ._version import __version__
from .model import (
    CouplingTerm,
    DisorderSpec,
    FieldTerm,
    InitialStateSpec,
    PRESETS,
    Preset,
    SpinModel,
    chaotic_ising,
    disordered_heisenberg,
    four_spin_ising,
    realize_disorder,
    realize_initial_state,
    xy_chain,
)
from .algebra import ClusterBasis
from .compiler import (
    ClusterHamiltonian,
    ClusterPartition,
    compile_hamiltonian,
    compile_site_operator,
    compile_string,
    contiguous_partition,
    enumerate_offsets,
)
from .sampling import InitialConditions, SampledBatch
from .engine import Engine, IntegrationOptions, two_time_pair
from .runner import (
    ComparisonError,
    ConfigError,
    DropFractionError,
    RunConfig,
    RunResult,
    TimeGrid,
    compare_runs,
    config_from_dict,
    load_config,
    run,
)

__all__ = [
    "__version__",
    "ClusterBasis",
    "ClusterHamiltonian",
    "ClusterPartition",
    "ComparisonError",
    "ConfigError",
    "CouplingTerm",
    "DisorderSpec",
    "DropFractionError",
    "Engine",
    "FieldTerm",
    "InitialConditions",
    "InitialStateSpec",
    "IntegrationOptions",
    "PRESETS",
    "Preset",
    "RunConfig",
    "RunResult",
    "SampledBatch",
    "SpinModel",
    "TimeGrid",
    "chaotic_ising",
    "compare_runs",
    "compile_hamiltonian",
    "compile_site_operator",
    "compile_string",
    "config_from_dict",
    "contiguous_partition",
    "disordered_heisenberg",
    "enumerate_offsets",
    "four_spin_ising",
    "load_config",
    "realize_disorder",
    "realize_initial_state",
    "run",
    "two_time_pair",
    "xy_chain",
]
