"""Particle gradient flows for MMD-energy minimization.

A transport/reaction splitting scheme (position updates driven by the MMD
witness gradient, weight updates through a simplex-constrained QP), baseline
MMD and Wasserstein-Fisher-Rao flows, closed-form decay oracles, and an
experiment harness with a CLI.
"""

from .kernels import GramBundle, KernelSpec, gram, kernel_eval, kernel_grad2
from .measures import (
    ParticleMeasure,
    TargetSpec,
    clamp_vanished,
    random_mixture_components,
    sample_target,
    simplex_project,
    uniform_measure,
)
from .energy import MmdEnergy, mmd_squared, witness, witness_gradient
from .solvers import (
    QpConvergenceError,
    SimplexQp,
    assemble_mmd_step_qp,
    brute_force_simplex,
    qp_pgd_step,
    solve_qp_exact,
)
from .flows import (
    DegenerateWeightsError,
    FlowConfig,
    FlowDivergenceError,
    Trace,
    euler_spherical_mmd,
    fit_decay_rate,
    interpolation_oracle,
    mmd_step,
    run_ift,
    run_mmd_flow,
    run_wfr,
    wasserstein_step,
)
from .harness import (
    ExperimentSpec,
    RunSummary,
    builtin_experiment,
    builtin_experiments,
    run_experiment,
    write_outputs,
)

__all__ = [
    "GramBundle",
    "KernelSpec",
    "gram",
    "kernel_eval",
    "kernel_grad2",
    "ParticleMeasure",
    "TargetSpec",
    "clamp_vanished",
    "random_mixture_components",
    "sample_target",
    "simplex_project",
    "uniform_measure",
    "MmdEnergy",
    "mmd_squared",
    "witness",
    "witness_gradient",
    "QpConvergenceError",
    "SimplexQp",
    "assemble_mmd_step_qp",
    "brute_force_simplex",
    "qp_pgd_step",
    "solve_qp_exact",
    "DegenerateWeightsError",
    "FlowConfig",
    "FlowDivergenceError",
    "Trace",
    "euler_spherical_mmd",
    "fit_decay_rate",
    "interpolation_oracle",
    "mmd_step",
    "run_ift",
    "run_mmd_flow",
    "run_wfr",
    "wasserstein_step",
    "ExperimentSpec",
    "RunSummary",
    "builtin_experiment",
    "builtin_experiments",
    "run_experiment",
    "write_outputs",
]

__version__ = "0.1.0"
