"""Structure-weighted dynamic dictionary learning with a sequence-attention
severity head.

Dynamic window-correlation matrices are factorized over a shared orthonormal
basis with nonnegative time-varying loadings, weighted by a structural graph
Laplacian, while an LSTM-attention head maps the loading sequences to
multidimensional severity scores; the two parts are trained jointly.
"""

from .data import (
    Cohort,
    DynamicConnectome,
    RoiTimeSeries,
    SeverityVector,
    StructuralLaplacian,
    Subject,
    SynthConfig,
    SyntheticTruth,
    build_normalized_laplacian,
    connectome_from_timeseries,
    generate_synthetic_cohort,
    impute_adjacency,
    sliding_window_correlations,
    subtract_principal_component,
)
from .factorization import (
    ConstraintState,
    Hyperparameters,
    LoadingSequence,
    QPProblem,
    augmented_penalty,
    loading_objective_gradient,
    procrustes_target,
    procrustes_update,
    qp_build,
    qp_solve,
    srddl_loss,
    update_constraint_dual,
    update_constraint_primal,
    weighted_frobenius,
)
from .io import load_cohort, save_cohort
from .metrics import (
    baseline_decoupled,
    baseline_pca_lstm,
    median_absolute_error,
    mutual_information,
)
from .network import (
    AdamState,
    ForwardTrace,
    NetworkWeights,
    adam_step,
    backward,
    forward,
    masked_mse,
    softmax,
)
from .training import (
    CVResult,
    FoldAssignment,
    ModelState,
    assign_folds,
    cross_validate,
    fit,
    infer_loadings,
    load_checkpoint,
    predict,
    predict_with_trace,
    save_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "Cohort",
    "ConstraintState",
    "CVResult",
    "DynamicConnectome",
    "FoldAssignment",
    "ForwardTrace",
    "Hyperparameters",
    "LoadingSequence",
    "ModelState",
    "NetworkWeights",
    "QPProblem",
    "RoiTimeSeries",
    "SeverityVector",
    "StructuralLaplacian",
    "Subject",
    "SynthConfig",
    "SyntheticTruth",
    "adam_step",
    "assign_folds",
    "augmented_penalty",
    "backward",
    "baseline_decoupled",
    "baseline_pca_lstm",
    "build_normalized_laplacian",
    "connectome_from_timeseries",
    "cross_validate",
    "fit",
    "forward",
    "generate_synthetic_cohort",
    "impute_adjacency",
    "infer_loadings",
    "load_checkpoint",
    "load_cohort",
    "loading_objective_gradient",
    "masked_mse",
    "median_absolute_error",
    "mutual_information",
    "predict",
    "predict_with_trace",
    "procrustes_target",
    "procrustes_update",
    "qp_build",
    "qp_solve",
    "save_checkpoint",
    "save_cohort",
    "sliding_window_correlations",
    "softmax",
    "srddl_loss",
    "subtract_principal_component",
    "update_constraint_dual",
    "update_constraint_primal",
    "weighted_frobenius",
]
