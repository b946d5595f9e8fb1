"""Ordered state feature names.

Grouped the way the ICU sepsis literature groups them: demographics and
scores (8), vitals (11), labs (24), interventions (2), others (3).
"""

DEMOGRAPHICS = ("age", "gender", "weight", "icu_readmission", "gcs", "elixhauser", "sofa", "sirs")
VITALS = (
    "hr", "sbp", "mbp", "dbp", "resp_rate", "temperature",
    "paco2", "pao2", "pf_ratio", "spo2", "shock_index",
)
LABS = (
    "albumin", "ph", "calcium", "glucose", "hemoglobin", "magnesium", "wbc",
    "creatinine", "bicarbonate", "sodium", "lactate", "chloride", "platelets",
    "potassium", "ptt", "pt", "ast", "alt", "bun", "inr", "ionised_calcium",
    "total_bilirubin", "base_excess", "phosphate",
)
INTERVENTIONS = ("mech_vent", "fio2")
OTHERS = ("urine_output", "total_output", "time_since_sepsis")

FULL_FEATURES = DEMOGRAPHICS + VITALS + LABS + INTERVENTIONS + OTHERS

# variables unavailable in the external cohort
REDUCED_DROP = ("pt", "inr", "paco2", "elixhauser")
REDUCED_FEATURES = tuple(f for f in FULL_FEATURES if f not in REDUCED_DROP)

SOFA_ORGANS = ("respiration", "coagulation", "liver", "cardiovascular", "cns", "renal")

COVARIATES = ("age", "sofa_baseline", "elixhauser", "lactate", "shock_index", "mech_vent_baseline")


def feature_names(reduced=False):
    return REDUCED_FEATURES if reduced else FULL_FEATURES


def default_feature_names(n_features):
    if n_features == len(FULL_FEATURES):
        return FULL_FEATURES
    if n_features == len(REDUCED_FEATURES):
        return REDUCED_FEATURES
    return None
