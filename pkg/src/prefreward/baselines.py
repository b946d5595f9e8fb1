"""Handcrafted reward formulations and the uniform random policy.

Step indices are 0-based; the terminal step of a trajectory of length T is
``T - 1``. All functions read *raw* state values from the trajectory.
"""
import logging
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._random import as_generator
from .cohort.features import SOFA_ORGANS
from .exceptions import ConfigError, InputError

logger = logging.getLogger(__name__)

NEWS2_MAX = 20


def _check_step(traj, t):
    T = len(traj)
    if not 0 <= t < T:
        raise InputError(f"step {t} outside trajectory of length {T}")
    return T - 1


def mortality_reward(traj, t, R=15.0):
    """0 before the terminal step; +R / -R at the terminal step for survivors / decedents."""
    last = _check_step(traj, t)
    if t < last:
        return 0.0
    return -float(R) if traj.mortality else float(R)


@dataclass(frozen=True)
class SofaLacCoeffs:
    c0: float = -0.025
    c1: float = -0.125
    c2: float = -2.0
    r_outcome_survive: float = 15.0
    r_outcome_die: float = -15.0

    def __post_init__(self):
        if not all(np.isfinite(v) for v in asdict(self).values()):
            raise ConfigError("SOFA-lactate coefficients must be finite")


def _feature(traj, names, name):
    try:
        return traj.states[:, names.index(name)]
    except ValueError:
        raise InputError(f"state feature '{name}' required but not present") from None


def sofa_lac_reward(traj, t, coeffs=SofaLacCoeffs(), feature_names=None):
    """Organ-dysfunction count, SOFA change and lactate change, plus terminal outcome.

    Without per-organ subscores the organ count is approximated by
    ``1{SOFA_t > 0}``. At the terminal step the change terms are zero.
    """
    from .cohort.features import default_feature_names

    names = tuple(feature_names or default_feature_names(traj.states.shape[1]) or ())
    last = _check_step(traj, t)
    sofa = _feature(traj, names, "sofa")
    lactate = _feature(traj, names, "lactate")
    if traj.sofa_components is not None:
        n_organs = float(np.sum(traj.sofa_components[t] > 0))
    else:
        n_organs = float(sofa[t] > 0)
    r = coeffs.c0 * np.tanh(n_organs)
    if t < last:
        r += coeffs.c1 * (sofa[t + 1] - sofa[t]) + coeffs.c2 * np.tanh(lactate[t + 1] - lactate[t])
    else:
        r += coeffs.r_outcome_die if traj.mortality else coeffs.r_outcome_survive
    return float(r)


@dataclass(frozen=True)
class News2Components:
    s_rr: int
    s_spo2: int
    s_o2: int
    s_bp: int
    s_hr: int
    s_temp: int
    s_cns: int

    @property
    def total(self):
        return self.s_rr + self.s_spo2 + self.s_o2 + self.s_bp + self.s_hr + self.s_temp + self.s_cns

    def as_tuple(self):
        return (self.s_rr, self.s_spo2, self.s_o2, self.s_bp, self.s_hr, self.s_temp, self.s_cns)


# (upper bound inclusive, points); last entry catches everything above
_RR = ((8, 3), (11, 1), (20, 0), (24, 2), (np.inf, 3))
_SPO2 = ((91, 3), (93, 2), (95, 1), (np.inf, 0))
_SBP = ((90, 3), (100, 2), (110, 1), (219, 0), (np.inf, 3))
_HR = ((40, 3), (50, 1), (90, 0), (110, 1), (130, 2), (np.inf, 3))
_TEMP = ((35.0, 3), (36.0, 1), (38.0, 0), (39.0, 1), (np.inf, 2))


def _lookup(value, table, name):
    value = float(value)
    if not np.isfinite(value):
        raise InputError(f"{name} must be finite")
    for upper, points in table:
        if value <= upper:
            return points
    raise AssertionError("unreachable")


def news2_score(rr, spo2, supplemental_o2, sbp, hr, temp, gcs):
    """NEWS2 scale-1 component scores; supplemental O2 is proxied by mechanical ventilation."""
    return News2Components(
        s_rr=_lookup(rr, _RR, "respiratory rate"),
        s_spo2=_lookup(spo2, _SPO2, "SpO2"),
        s_o2=2 if supplemental_o2 else 0,
        s_bp=_lookup(sbp, _SBP, "systolic BP"),
        s_hr=_lookup(hr, _HR, "heart rate"),
        s_temp=_lookup(temp, _TEMP, "temperature"),
        s_cns=3 if float(gcs) < 15 else 0,
    )


def news2_from_state(state, feature_names, mech_vent=None):
    idx = {n: i for i, n in enumerate(feature_names)}
    vent = state[idx["mech_vent"]] > 0.5 if mech_vent is None else mech_vent
    return news2_score(
        state[idx["resp_rate"]], state[idx["spo2"]], vent, state[idx["sbp"]],
        state[idx["hr"]], state[idx["temperature"]], state[idx["gcs"]],
    )


def news2_reward(traj, t, r_outcome_die=-1.0, r_outcome_survive=0.0, feature_names=None):
    """Negative normalized NEWS2 of the next state; terminal step carries the outcome instead."""
    from .cohort.features import default_feature_names

    names = tuple(feature_names or default_feature_names(traj.states.shape[1]) or ())
    last = _check_step(traj, t)
    if t == last:
        return float(r_outcome_die if traj.mortality else r_outcome_survive)
    comp = news2_from_state(traj.states[t + 1], names, mech_vent=bool(traj.mech_vent[t + 1]))
    return -comp.total / NEWS2_MAX


def reward_trace(traj, formulation, feature_names=None, **kw):
    """Per-step rewards of one trajectory under a named baseline formulation."""
    T = len(traj)
    if formulation == "mortality":
        return np.array([mortality_reward(traj, t, **kw) for t in range(T)])
    if formulation == "sofa_lac":
        if traj.sofa_components is None:
            logger.debug("trajectory %s has no per-organ SOFA subscores", traj.id)
        return np.array([sofa_lac_reward(traj, t, feature_names=feature_names, **kw) for t in range(T)])
    if formulation == "news2":
        return np.array([news2_reward(traj, t, feature_names=feature_names, **kw) for t in range(T)])
    raise ConfigError(f"unknown baseline reward {formulation!r}; expected mortality, sofa_lac or news2")


BASELINE_REWARDS = ("mortality", "sofa_lac", "news2")


def random_policy(num_actions=25, rng=None):
    """One uniformly random joint action index."""
    if num_actions < 1:
        raise InputError("num_actions must be >= 1")
    return int(as_generator(rng).integers(num_actions))


class RandomPolicy(BaseEstimator):
    """Uniform random policy with the same ``predict`` surface as learned policies."""

    def __init__(self, num_actions=25, seed=0):
        self.num_actions = num_actions
        self.seed = seed

    def fit(self, X=None, y=None):
        self.rng_ = np.random.default_rng(self.seed)
        return self

    def predict(self, states):
        if not hasattr(self, "rng_"):
            self.fit()
        n = np.atleast_2d(np.asarray(states)).shape[0]
        return self.rng_.integers(self.num_actions, size=n)
