"""Random-forest permutation importance for predicting policy action bins."""
from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import RandomForestClassifier
from sklearn.inspection import permutation_importance as _sk_permutation_importance

from .._random import substream
from ..exceptions import InputError


@dataclass(frozen=True)
class ForestConfig:
    n_estimators: int = 200
    max_depth: int = 12
    n_repeats: int = 5
    test_frac: float = 0.25
    max_rows: int = None
    n_jobs: int = 1


@dataclass(frozen=True)
class FeatureImportance:
    feature: str
    importance: float
    std: float
    rank: int


def permutation_importance(labels, states, feature_names=None, forest_cfg=ForestConfig(), seed=0):
    """Mean held-out accuracy drop when each feature column is permuted.

    Returns features ordered by decreasing importance (ties keep column order).
    """
    X = np.asarray(states, dtype=float)
    y = np.asarray(labels).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise InputError(f"states shape {X.shape} does not match {y.shape[0]} labels")
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise InputError("one feature name per column required")
    if np.unique(y).size < 2:
        raise InputError("target has a single class; nothing to attribute")
    rng = substream(seed, "forest")
    idx = rng.permutation(len(y))
    if forest_cfg.max_rows is not None and len(idx) > forest_cfg.max_rows:
        idx = idx[:forest_cfg.max_rows]
    n_test = max(1, int(round(forest_cfg.test_frac * len(idx))))
    test, train = idx[:n_test], idx[n_test:]
    if np.unique(y[train]).size < 2:
        raise InputError("training split has a single class")
    forest = RandomForestClassifier(
        n_estimators=forest_cfg.n_estimators, max_depth=forest_cfg.max_depth, max_features="sqrt",
        bootstrap=True, criterion="gini", random_state=int(rng.integers(2**31 - 1)), n_jobs=forest_cfg.n_jobs,
    ).fit(X[train], y[train])
    res = _sk_permutation_importance(
        forest, X[test], y[test], scoring="accuracy", n_repeats=forest_cfg.n_repeats,
        random_state=int(rng.integers(2**31 - 1)), n_jobs=1,
    )
    order = sorted(range(len(names)), key=lambda j: (-res.importances_mean[j], j))
    return [FeatureImportance(names[j], float(res.importances_mean[j]), float(res.importances_std[j]), r + 1)
            for r, j in enumerate(order)]
