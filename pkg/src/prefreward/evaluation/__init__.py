"""Distances, regressions, effect sizes, action tables and feature importance."""
from .distance import (DistanceSummary, action_distance, policy_actions, step_distances,
                       trajectory_distance, zscore)
from .heatmap import ANNOTATION_FLOOR, action_frequencies, action_heatmap, heatmap_rows
from .importance import FeatureImportance, ForestConfig, permutation_importance
from .regression import (RankDeficiencyError, RegressionResult, log_likelihood, logistic_fit,
                         ols_classical_se, ols_hc3)
from .stats import cohens_d, correlation_matrix, spearman

__all__ = [
    "DistanceSummary", "action_distance", "policy_actions", "step_distances", "trajectory_distance", "zscore",
    "ANNOTATION_FLOOR", "action_frequencies", "action_heatmap", "heatmap_rows",
    "FeatureImportance", "ForestConfig", "permutation_importance",
    "RankDeficiencyError", "RegressionResult", "log_likelihood", "logistic_fit", "ols_classical_se", "ols_hc3",
    "cohens_d", "correlation_matrix", "spearman",
]
