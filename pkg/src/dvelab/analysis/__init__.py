from .gmm import (
    GmmFit,
    aic_score,
    clustering_hypothesis_test,
    em_fit,
    select_num_clusters,
)
from .values import (
    FineTuneConfig,
    ValueMatrix,
    estimate_true_values,
    oracle_value_matrix,
    tabular_policy,
)
from .variance import (
    LAMBDA_GRID,
    VarianceDecomposition,
    exact_policy_gradient,
    expected_psi_squared,
    lemma1_check,
    lemma2_sweep,
    softmax_policy,
    variance_decomposition,
)
from .experiments import CurvePoint, variance_vs_levels

__all__ = [
    "GmmFit", "aic_score", "clustering_hypothesis_test", "em_fit",
    "select_num_clusters",
    "FineTuneConfig", "ValueMatrix", "estimate_true_values",
    "oracle_value_matrix", "tabular_policy",
    "LAMBDA_GRID", "VarianceDecomposition", "exact_policy_gradient",
    "expected_psi_squared", "lemma1_check", "lemma2_sweep", "softmax_policy",
    "variance_decomposition",
    "CurvePoint", "variance_vs_levels",
]
