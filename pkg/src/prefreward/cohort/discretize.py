import math

import numpy as np

from ..exceptions import InputError
from .types import Action

# 4-hourly dose quantile cut points; bin k covers (t[k-1], t[k]], zero is bin 0
IV_THRESHOLDS = (0.0, 50.05, 213.33, 520.0)
VASO_THRESHOLDS = (0.0, 7.20, 17.41, 40.06)


def _bin(dose, thresholds, name):
    if not isinstance(dose, (int, float, np.floating, np.integer)) or not math.isfinite(dose):
        raise InputError(f"{name} dose must be a finite number, got {dose!r}")
    if dose < 0:
        raise InputError(f"{name} dose must be non-negative, got {dose}")
    for k, t in enumerate(thresholds):
        if dose <= t:
            return k
    return len(thresholds)


def discretize_dose(iv_ml_per_4h, vaso_mcg_per_kg_per_4h):
    """Map raw 4-hourly IV fluid (mL) and vasopressor (mcg/kg) doses to an Action."""
    return Action(
        _bin(iv_ml_per_4h, IV_THRESHOLDS, "iv"),
        _bin(vaso_mcg_per_kg_per_4h, VASO_THRESHOLDS, "vasopressor"),
    )


def discretize_doses(iv, vaso):
    """Vectorised variant returning (iv_bins, vaso_bins) integer arrays."""
    iv = np.asarray(iv, dtype=float)
    vaso = np.asarray(vaso, dtype=float)
    for arr, name in ((iv, "iv"), (vaso, "vasopressor")):
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise InputError(f"{name} doses must be finite and non-negative")
    iv_bins = np.searchsorted(np.asarray(IV_THRESHOLDS), iv, side="left")
    vaso_bins = np.searchsorted(np.asarray(VASO_THRESHOLDS), vaso, side="left")
    return iv_bins.astype(np.int64), vaso_bins.astype(np.int64)
