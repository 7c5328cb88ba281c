"""Sparse false-data injection on DC state estimation.

Build measurement Jacobians for the bundled IEEE systems, construct
targeted/strategic/distributed attack vectors, estimate states with
centralized and clustered ADMM solvers, run the residual detection
test, and sweep everything Monte-Carlo style from one config file.
"""

import logging

from .errors import (GridSparseError, ParseError, CaseValidationError,
                     ConfigError, InfeasibleError)
from .grid_model import (BUNDLED_SYSTEMS, Bus, Branch, GridCase,
                         MeasurementScheme, MeasurementModel,
                         StructureReport, parse_matpower, grid_from_json,
                         grid_to_json, load_case, build_dc_jacobian,
                         structure_report)
from .admm import (SolverConfig, InnerSolverConfig, SolveResult,
                   soft_threshold, block_soft_threshold,
                   hard_threshold_keep_k,
                   stopping_check, lasso_admm, basis_pursuit_admm,
                   regressor_selection_admm, consensus_lasso_admm,
                   sharing_group_lasso_admm)
from .attacks import (AttackSpec, ProjectionPair, UnobservabilityResult,
                      AttackVector, build_projection, unobservability_check,
                      targeted_lasso_attack, targeted_selective_attack,
                      strategic_lasso_attack, strategic_selective_attack,
                      random_sparse_attack, distributed_sparse_attack,
                      collective_sparse_attack)
from .estimation import (MeasurementSnapshot, ClusterPartition, StateEstimate,
                         DeltaQuery, DeltaEstimate, wls_estimate,
                         distributed_state_estimate,
                         collaborative_state_estimate, delta_state_estimate)
from .detection import (DetectionResult, ConfusionCounts, MetricBundle,
                        ConstructionProbabilities, residuals, attack_error,
                        tau_threshold, detect, run_detection, confusion,
                        metrics, construction_probabilities)
from .experiment import (MODES, ExperimentConfig, MetricRow, ExperimentResult,
                         lambda_max, choose_clusters, partition_indices,
                         run_experiment, emit_csv)

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())

__all__ = [
    "__version__",
    # errors
    "GridSparseError", "ParseError", "CaseValidationError", "ConfigError",
    "InfeasibleError",
    # grid model
    "BUNDLED_SYSTEMS", "Bus", "Branch", "GridCase", "MeasurementScheme",
    "MeasurementModel", "StructureReport", "parse_matpower", "grid_from_json",
    "grid_to_json", "load_case", "build_dc_jacobian", "structure_report",
    # solvers
    "SolverConfig", "InnerSolverConfig", "SolveResult", "soft_threshold",
    "block_soft_threshold", "hard_threshold_keep_k", "stopping_check", "lasso_admm",
    "basis_pursuit_admm", "regressor_selection_admm", "consensus_lasso_admm",
    "sharing_group_lasso_admm",
    # attacks
    "AttackSpec", "ProjectionPair", "UnobservabilityResult", "AttackVector",
    "build_projection", "unobservability_check", "targeted_lasso_attack",
    "targeted_selective_attack", "strategic_lasso_attack",
    "strategic_selective_attack", "random_sparse_attack",
    "distributed_sparse_attack", "collective_sparse_attack",
    # estimation
    "MeasurementSnapshot", "ClusterPartition", "StateEstimate", "DeltaQuery",
    "DeltaEstimate", "wls_estimate", "distributed_state_estimate",
    "collaborative_state_estimate", "delta_state_estimate",
    # detection
    "DetectionResult", "ConfusionCounts", "MetricBundle",
    "ConstructionProbabilities", "residuals", "attack_error", "tau_threshold",
    "detect", "run_detection", "confusion", "metrics",
    "construction_probabilities",
    # experiments
    "MODES", "ExperimentConfig", "MetricRow", "ExperimentResult",
    "lambda_max", "choose_clusters", "partition_indices", "run_experiment",
    "emit_csv",
]
