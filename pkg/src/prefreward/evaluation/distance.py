"""Policy-versus-clinician action distances."""
from dataclasses import dataclass, field

import numpy as np

from ..cohort.types import N_BINS, split_joint
from ..exceptions import InputError, NumericalError


def action_distance(policy_a, clin_a):
    """Per-axis absolute bin differences and their Euclidean combination."""
    d_iv = abs(int(policy_a.iv_bin) - int(clin_a.iv_bin))
    d_vaso = abs(int(policy_a.vaso_bin) - int(clin_a.vaso_bin))
    return d_iv, d_vaso, float(np.hypot(d_iv, d_vaso))


def step_distances(policy_joint, clin_joint):
    """Vectorized distances for arrays of joint action indices."""
    p_iv, p_vaso = split_joint(np.asarray(policy_joint))
    c_iv, c_vaso = split_joint(np.asarray(clin_joint))
    d_iv = np.abs(p_iv - c_iv)
    d_vaso = np.abs(p_vaso - c_vaso)
    return d_iv, d_vaso, np.hypot(d_iv, d_vaso)


def policy_actions(policy, states):
    """Joint actions chosen by ``policy`` for standardized ``states``.

    Accepts any object with ``predict`` (learned or random policies) or a
    plain callable mapping a state matrix to joint actions.
    """
    predict = getattr(policy, "predict", None) or policy
    if not callable(predict):
        raise InputError("policy must expose predict() or be callable")
    a = np.asarray(predict(np.atleast_2d(states)), dtype=np.int64).ravel()
    if a.shape[0] != np.atleast_2d(states).shape[0]:
        raise InputError("policy returned the wrong number of actions")
    if a.size and (a.min() < 0 or a.max() >= N_BINS * N_BINS):
        raise InputError("policy returned an action outside 0..24")
    return a


def trajectory_distance(policy, traj, scaler=None):
    """Mean per-step joint distance between policy and recorded actions."""
    states = traj.states if scaler is None else scaler.transform(traj.states)
    actions = policy_actions(policy, states)
    d_iv, d_vaso, d_joint = step_distances(actions, traj.joint_actions)
    return float(d_joint.mean())


def zscore(x):
    x = np.asarray(x, dtype=float)
    sd = x.std()
    if not np.isfinite(sd) or sd == 0:
        raise NumericalError("cannot z-score a constant distance column")
    return (x - x.mean()) / sd


@dataclass
class DistanceSummary:
    ids: list
    mean_joint: np.ndarray
    z: np.ndarray
    steps: list = field(repr=False, default_factory=list)

    @classmethod
    def compute(cls, policy, trajectories, scaler=None):
        ids, means, steps = [], [], []
        for traj in trajectories:
            states = traj.states if scaler is None else scaler.transform(traj.states)
            actions = policy_actions(policy, states)
            comps = step_distances(actions, traj.joint_actions)
            ids.append(traj.id)
            means.append(float(comps[2].mean()))
            steps.append({"policy_actions": actions, "d_iv": comps[0], "d_vaso": comps[1], "d_joint": comps[2]})
        means = np.array(means)
        return cls(ids, means, zscore(means), steps)
