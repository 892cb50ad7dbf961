"""Measurement design and reconstruction of low-rank matrices under column
subspace information, with reference solvers and a Monte-Carlo benchmark."""

from .affine_map import (
    AffineMap,
    NoiseModel,
    apply,
    averaged_mutual_coherence,
    gaussian_random,
    observe,
)
from .baselines import SolverOptions, mf_solve, nnm_solve, svt
from .bench import ExperimentConfig, ResultRow, generate_low_rank
from .estimator import GlsProblem, gls_estimate, nmse, project_onto_subspace, reconstruct
from .map_design import (
    DesignResult,
    SubspaceBasis,
    lift_design,
    mse_profile,
    optimal_rank,
    optimal_subspace,
    restrict_to_subspace,
    solve_power_constrained_design,
)
from .two_step import (
    ColumnSample,
    SubspaceEstimate,
    TwoStepConfig,
    TwoStepResult,
    run as two_step_run,
)

__version__ = "0.1.0"
