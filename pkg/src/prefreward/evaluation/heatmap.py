"""Joint action frequency tables stratified by baseline severity."""
import numpy as np

from ..cohort.types import N_BINS, split_joint
from ..exceptions import InputError
from .distance import policy_actions

SEVERITY_THRESHOLD = 8.0
ANNOTATION_FLOOR = 0.04


def action_frequencies(joint_actions):
    """5x5 table (rows IV bin, columns vasopressor bin) of normalized frequencies."""
    a = np.asarray(joint_actions, dtype=np.int64).ravel()
    table = np.zeros((N_BINS, N_BINS))
    if a.size == 0:
        return table
    iv, vaso = split_joint(a)
    np.add.at(table, (iv, vaso), 1.0)
    return table / a.size


def action_heatmap(policy, cohort, severity_split=SEVERITY_THRESHOLD, trajectories=None):
    """Per-stratum frequency tables: ``low`` (baseline SOFA below the split) and ``high``.

    ``policy=None`` tabulates the recorded clinician actions. Empty strata
    yield all-zero tables.
    """
    trajs = cohort.trajectories if trajectories is None else trajectories
    if not trajs:
        raise InputError("no trajectories to tabulate")
    buckets = {"low": [], "high": []}
    for traj in trajs:
        if policy is None:
            acts = traj.joint_actions
        else:
            acts = policy_actions(policy, cohort.standardized(traj))
        key = "low" if float(traj.covariates["sofa_baseline"]) < severity_split else "high"
        buckets[key].append(acts)
    return {k: action_frequencies(np.concatenate(v) if v else []) for k, v in buckets.items()}


def heatmap_rows(policy_name, tables):
    rows = []
    for stratum, table in tables.items():
        for i in range(N_BINS):
            for j in range(N_BINS):
                f = float(table[i, j])
                rows.append({"policy": policy_name, "stratum": stratum, "iv_bin": i, "vaso_bin": j,
                             "frequency": f, "annotate": int(f >= ANNOTATION_FLOOR)})
    return rows
