from .discretize import IV_THRESHOLDS, VASO_THRESHOLDS, discretize_dose, discretize_doses
from .features import COVARIATES, FULL_FEATURES, REDUCED_FEATURES, SOFA_ORGANS, feature_names
from .io import load_cohort, save_cohort, trajectory_from_record, trajectory_to_record, write_summary_csv
from .synthetic import SynthConfig, generate_synthetic_cohort
from .types import (
    N_ACTIONS,
    N_BINS,
    STEP_HOURS,
    Action,
    Cohort,
    FeatureScaler,
    Trajectory,
    fit_split_and_scaler,
    joint_index,
    split_joint,
    with_scaler,
)

__all__ = [
    "Action", "Cohort", "FeatureScaler", "Trajectory", "SynthConfig",
    "IV_THRESHOLDS", "VASO_THRESHOLDS", "N_ACTIONS", "N_BINS", "STEP_HOURS",
    "COVARIATES", "FULL_FEATURES", "REDUCED_FEATURES", "SOFA_ORGANS",
    "discretize_dose", "discretize_doses", "feature_names", "fit_split_and_scaler",
    "generate_synthetic_cohort", "joint_index", "load_cohort", "save_cohort",
    "split_joint", "trajectory_from_record", "trajectory_to_record", "with_scaler",
    "write_summary_csv",
]
