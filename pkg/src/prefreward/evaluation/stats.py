"""Rank correlation and standardized effect sizes."""
import numpy as np
from scipy.stats import rankdata

from .._random import substream
from ..exceptions import InputError, NumericalError


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a @ a) * (b @ b))
    if denom == 0:
        raise NumericalError("correlation undefined for a constant input")
    return float(np.clip((a @ b) / denom, -1.0, 1.0))


def spearman(x, y):
    """Pearson correlation of mid-ranks."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape or x.size < 2:
        raise InputError("spearman needs two equal-length inputs with at least 2 values")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InputError("spearman inputs must be finite")
    return _pearson(rankdata(x), rankdata(y))


def correlation_matrix(columns):
    """Pairwise Spearman matrix over a dict of equal-length columns (NaN rows dropped per pair)."""
    names = list(columns)
    k = len(names)
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            a = np.asarray(columns[names[i]], dtype=float)
            b = np.asarray(columns[names[j]], dtype=float)
            ok = np.isfinite(a) & np.isfinite(b)
            try:
                out[i, j] = out[j, i] = spearman(a[ok], b[ok])
            except (InputError, NumericalError):
                out[i, j] = out[j, i] = np.nan
    return names, out


def _d(a, b):
    na, nb = len(a), len(b)
    pooled = np.sqrt(((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2))
    if pooled == 0:
        return None
    return (a.mean() - b.mean()) / pooled


def cohens_d(group_a, group_b, n_boot=1000, seed=0, level=0.95):
    """Pooled-SD Cohen's d of ``a - b`` with a percentile bootstrap interval.

    Bootstrap resamples with zero pooled SD are skipped.
    """
    a = np.asarray(group_a, dtype=float).ravel()
    b = np.asarray(group_b, dtype=float).ravel()
    if len(a) < 2 or len(b) < 2:
        raise InputError("each group needs at least 2 observations")
    d = _d(a, b)
    if d is None:
        raise NumericalError("pooled standard deviation is 0; Cohen's d is infinite or undefined")
    if n_boot <= 0:
        return float(d), float("nan"), float("nan")
    rng = substream(seed, "bootstrap")
    boots = []
    for _ in range(int(n_boot)):
        v = _d(rng.choice(a, len(a)), rng.choice(b, len(b)))
        if v is not None:
            boots.append(v)
    if not boots:
        raise NumericalError("every bootstrap resample was degenerate")
    tail = 100 * (1 - level) / 2
    lo, hi = np.percentile(boots, [tail, 100 - tail])
    return float(d), float(lo), float(hi)
