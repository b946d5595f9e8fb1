"""Trajectory data model.

Trajectories hold *raw* (unstandardized) state values so that handcrafted
rewards can read physiological quantities directly; models consume states
through the cohort's fitted :class:`FeatureScaler`.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_matrix
from ..exceptions import DataValidationError
from .features import COVARIATES, SOFA_ORGANS, default_feature_names

logger = logging.getLogger(__name__)

N_BINS = 5
N_ACTIONS = N_BINS * N_BINS
STEP_HOURS = 4
SPLITS = ("train", "test")

DISCHARGE_CATEGORIES = (
    "home", "home_health", "rehab", "assisted_living", "skilled_nursing",
    "long_term_acute_care", "acute_hospital", "hospice", "death",
    "other", "against_medical_advice", "psychiatric",
)


@dataclass(frozen=True)
class Action:
    iv_bin: int
    vaso_bin: int

    def __post_init__(self):
        for name in ("iv_bin", "vaso_bin"):
            v = getattr(self, name)
            if int(v) != v or not 0 <= v < N_BINS:
                raise DataValidationError(f"must be an integer in 0..4, got {v!r}", field=name)
        object.__setattr__(self, "iv_bin", int(self.iv_bin))
        object.__setattr__(self, "vaso_bin", int(self.vaso_bin))

    @property
    def joint_index(self):
        return N_BINS * self.iv_bin + self.vaso_bin

    @classmethod
    def from_joint(cls, joint):
        joint = int(joint)
        if not 0 <= joint < N_ACTIONS:
            raise DataValidationError(f"joint index must be in 0..24, got {joint}", field="joint_index")
        return cls(joint // N_BINS, joint % N_BINS)


def joint_index(iv_bins, vaso_bins):
    return N_BINS * np.asarray(iv_bins) + np.asarray(vaso_bins)


def split_joint(joint):
    joint = np.asarray(joint)
    return joint // N_BINS, joint % N_BINS


def _frozen(arr, dtype):
    arr = np.array(arr, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One patient episode on the 4-hour grid.

    ``states`` has shape (T, D) in raw clinical units. ``tqs`` is the
    trajectory quality score (0 marks an unscorable record). ``quality`` is
    the latent ground truth emitted by the synthetic generator and is None
    for ingested data.
    """

    id: str
    states: np.ndarray
    iv_bins: np.ndarray
    vaso_bins: np.ndarray
    mortality: bool
    tqs: int
    confidence: float
    vasopressor_on: np.ndarray
    mech_vent: np.ndarray
    rrt: np.ndarray
    alive: np.ndarray
    map: np.ndarray
    covariates: dict
    discharge_category: Optional[str] = None
    sofa_components: Optional[np.ndarray] = None
    quality: Optional[float] = None
    split: Optional[str] = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] < 1:
            raise DataValidationError(f"expected a non-empty (T, D) matrix, got shape {states.shape}", field="states")
        T = states.shape[0]
        if not np.all(np.isfinite(states)):
            raise DataValidationError("non-finite state value", field="states")
        object.__setattr__(self, "states", _frozen(states, float))

        for name in ("iv_bins", "vaso_bins"):
            b = np.asarray(getattr(self, name))
            if b.shape != (T,):
                raise DataValidationError(f"expected length {T}, got shape {b.shape}", field=name)
            if b.size and (np.any(b != np.round(b)) or b.min() < 0 or b.max() >= N_BINS):
                raise DataValidationError("bins must be integers in 0..4", field=name)
            object.__setattr__(self, name, _frozen(b, np.int64))

        for name in ("vasopressor_on", "mech_vent", "rrt", "alive"):
            f = np.asarray(getattr(self, name))
            if f.shape != (T,):
                raise DataValidationError(f"expected length {T}, got shape {f.shape}", field=name)
            if f.dtype != bool and not np.all(np.isin(f, (0, 1))):
                raise DataValidationError("flags must be boolean", field=name)
            object.__setattr__(self, name, _frozen(f, bool))

        m = np.asarray(self.map, dtype=float)
        if m.shape != (T,) or not np.all(np.isfinite(m)):
            raise DataValidationError(f"expected {T} finite values", field="map")
        object.__setattr__(self, "map", _frozen(m, float))

        if self.sofa_components is not None:
            sc = np.asarray(self.sofa_components, dtype=float)
            if sc.shape != (T, len(SOFA_ORGANS)):
                raise DataValidationError(
                    f"expected shape ({T}, {len(SOFA_ORGANS)}), got {sc.shape}", field="sofa_components"
                )
            object.__setattr__(self, "sofa_components", _frozen(sc, float))

        alive = self.alive
        if np.any(np.diff(alive.astype(int)) > 0):
            raise DataValidationError("alive flags must be non-increasing", field="alive")
        if bool(self.mortality) != (not alive[-1]):
            raise DataValidationError("mortality must be true iff the last alive flag is false", field="mortality")
        object.__setattr__(self, "mortality", bool(self.mortality))

        if isinstance(self.tqs, bool) or int(self.tqs) != self.tqs or not 0 <= self.tqs <= 5:
            raise DataValidationError(f"must be an integer in 0..5, got {self.tqs!r}", field="tqs")
        object.__setattr__(self, "tqs", int(self.tqs))
        c = float(self.confidence)
        if not (0.0 <= c <= 1.0):
            raise DataValidationError(f"must lie in [0, 1], got {self.confidence!r}", field="confidence")
        if self.tqs == 0 and c != 0.0:
            raise DataValidationError("unscorable trajectories (tqs=0) must have confidence 0", field="confidence")
        object.__setattr__(self, "confidence", c)

        if self.discharge_category is not None and self.discharge_category not in DISCHARGE_CATEGORIES:
            raise DataValidationError(
                f"unknown category {self.discharge_category!r}", field="discharge_category"
            )
        if self.split is not None and self.split not in SPLITS:
            raise DataValidationError(f"must be one of {SPLITS}", field="split")

        cov = dict(self.covariates)
        for key in COVARIATES:
            if key == "elixhauser":
                continue
            if key not in cov:
                raise DataValidationError(f"missing covariate '{key}'", field="covariates")
        object.__setattr__(self, "covariates", cov)

    def __len__(self):
        return self.states.shape[0]

    @property
    def n_steps(self):
        return self.states.shape[0]

    @property
    def joint_actions(self):
        return joint_index(self.iv_bins, self.vaso_bins)

    @property
    def actions(self):
        return [Action(int(i), int(v)) for i, v in zip(self.iv_bins, self.vaso_bins)]

    def with_split(self, split):
        return replace(self, split=split)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        from .io import trajectory_to_record

        return trajectory_to_record(self) == trajectory_to_record(other)

    __hash__ = None


class FeatureScaler(TransformerMixin, BaseEstimator):
    """Per-feature standardization. Zero-variance features keep scale 1."""

    def fit(self, X, y=None):
        X = check_matrix(X)
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        degenerate = std == 0
        if np.any(degenerate):
            logger.warning("zero-variance features %s; using std=1", np.flatnonzero(degenerate).tolist())
        self.scale_ = np.where(degenerate, 1.0, std)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_matrix(X, self.n_features_in_)
        return (X - self.mean_) / self.scale_

    def to_dict(self):
        check_is_fitted(self, "mean_")
        return {"mean": self.mean_.tolist(), "scale": self.scale_.tolist()}

    @classmethod
    def from_dict(cls, d):
        s = cls()
        s.mean_ = np.asarray(d["mean"], dtype=float)
        s.scale_ = np.asarray(d["scale"], dtype=float)
        if s.mean_.shape != s.scale_.shape:
            raise DataValidationError("scaler mean/scale shape mismatch", field="scaler")
        s.n_features_in_ = s.mean_.shape[0]
        return s


@dataclass(frozen=True, eq=False)
class Cohort:
    trajectories: tuple
    feature_names: tuple
    scaler: Optional[FeatureScaler] = None
    _std_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        object.__setattr__(self, "trajectories", trajs)
        names = tuple(self.feature_names) if self.feature_names is not None else None
        if names is None and trajs:
            names = default_feature_names(trajs[0].states.shape[1])
            if names is None:
                raise DataValidationError("feature names required for non-standard feature count", field="feature_names")
        object.__setattr__(self, "feature_names", names)
        seen = set()
        for t in trajs:
            if t.states.shape[1] != len(names):
                raise DataValidationError(
                    f"trajectory {t.id!r} has {t.states.shape[1]} features, expected {len(names)}", field="states"
                )
            if t.id in seen:
                raise DataValidationError(f"duplicate trajectory id {t.id!r}", field="id")
            seen.add(t.id)

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]

    def __eq__(self, other):
        if not isinstance(other, Cohort):
            return NotImplemented
        return self.feature_names == other.feature_names and self.trajectories == other.trajectories

    __hash__ = None

    @property
    def n_features(self):
        return len(self.feature_names)

    @property
    def is_split(self):
        return all(t.split is not None for t in self.trajectories)

    def feature_index(self, name):
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise DataValidationError(f"feature '{name}' not present in cohort", field="feature_names") from None

    def subset(self, split):
        """Cohort restricted to one split tag (sharing the fitted scaler)."""
        if split in (None, "all"):
            return self
        return Cohort(tuple(t for t in self.trajectories if t.split == split), self.feature_names, self.scaler)

    def train(self):
        return self.subset("train")

    def test(self):
        return self.subset("test")

    def standardized(self, traj):
        """Scaled states of ``traj`` (cached by id)."""
        if self.scaler is None:
            raise DataValidationError("cohort has no fitted scaler; call fit_split_and_scaler first", field="scaler")
        key = traj.id
        cached = self._std_cache.get(key)
        if cached is None or cached.shape != traj.states.shape:
            cached = self.scaler.transform(traj.states)
            cached.setflags(write=False)
            self._std_cache[key] = cached
        return cached

    def stacked(self, standardized=True):
        """All steps stacked: (states, iv_bins, vaso_bins, trajectory_index)."""
        if not self.trajectories:
            return np.zeros((0, self.n_features)), np.zeros(0, int), np.zeros(0, int), np.zeros(0, int)
        states = [self.standardized(t) if standardized else t.states for t in self.trajectories]
        idx = np.concatenate([np.full(len(t), i) for i, t in enumerate(self.trajectories)])
        return (
            np.vstack(states),
            np.concatenate([t.iv_bins for t in self.trajectories]),
            np.concatenate([t.vaso_bins for t in self.trajectories]),
            idx,
        )


def fit_split_and_scaler(cohort, train_frac=0.8, seed=0):
    """Seeded train/test split plus a scaler fitted on training states only."""
    from .._random import substream

    if not 0 < train_frac < 1:
        raise DataValidationError(f"train_frac must lie in (0, 1), got {train_frac}", field="train_frac")
    n = len(cohort)
    if n < 2:
        raise DataValidationError("need at least two trajectories to split", field="trajectories")
    perm = substream(seed, "split").permutation(n)
    n_train = int(round(train_frac * n))
    n_train = min(max(n_train, 1), n - 1)
    is_train = np.zeros(n, dtype=bool)
    is_train[perm[:n_train]] = True
    trajs = tuple(t.with_split("train" if is_train[i] else "test") for i, t in enumerate(cohort.trajectories))
    return with_scaler(Cohort(trajs, cohort.feature_names))


def with_scaler(cohort):
    """Refit the scaler on the cohort's existing train split."""
    train_states = [t.states for t in cohort.trajectories if t.split == "train"]
    if not train_states:
        raise DataValidationError("cohort has no training trajectories", field="split")
    scaler = FeatureScaler().fit(np.vstack(train_states))
    return Cohort(cohort.trajectories, cohort.feature_names, scaler)
