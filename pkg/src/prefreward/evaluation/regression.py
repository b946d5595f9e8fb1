"""Linear regression with HC3 errors and IRLS logistic regression."""
from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats
from scipy.special import expit

from ..exceptions import ConvergenceError, InputError, NumericalError

Z95 = 1.96


class RankDeficiencyError(NumericalError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient; collinear columns: {', '.join(self.columns)}")


@dataclass
class RegressionResult:
    names: list
    coef: np.ndarray
    se: np.ndarray
    model: str
    n: int
    iterations: int = 0

    @property
    def ci_lo(self):
        return self.coef - Z95 * self.se

    @property
    def ci_hi(self):
        return self.coef + Z95 * self.se

    @property
    def pvalues(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.abs(self.coef / self.se)
        return np.where(self.se > 0, 2 * stats.norm.sf(z), np.where(self.coef == 0, 1.0, 0.0))

    def __getitem__(self, name):
        return float(self.coef[self.names.index(name)])

    def rows(self):
        p = self.pvalues
        return [
            {"term": n, "coef": float(b), "se": float(s), "ci_lo": float(lo), "ci_hi": float(hi), "p": float(pv)}
            for n, b, s, lo, hi, pv in zip(self.names, self.coef, self.se, self.ci_lo, self.ci_hi, p)
        ]


def _prepare(y, X, names):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise InputError(f"X has shape {X.shape}, y has length {y.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InputError("regression inputs contain non-finite values")
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise InputError("one name per design column required")
    n, p = X.shape
    if n <= p:
        raise InputError(f"need more observations ({n}) than columns ({p})")
    return y, X, names


def _check_rank(X, names, tol=1e-10):
    s = linalg.svdvals(X)
    if s[-1] > tol * s[0]:
        return
    _, _, vt = linalg.svd(X, full_matrices=False)
    null = vt[s <= tol * s[0]]
    involved = np.any(np.abs(null) > 1e-6, axis=0)
    raise RankDeficiencyError([n for n, flag in zip(names, involved) if flag])


def ols_hc3(y, X, names=None):
    """OLS via QR with HC3 heteroskedasticity-consistent standard errors."""
    y, X, names = _prepare(y, X, names)
    _check_rank(X, names)
    Q, R = linalg.qr(X, mode="economic")
    beta = linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ beta
    h = np.sum(Q * Q, axis=1)
    if np.any(h >= 1 - 1e-10):
        bad = np.flatnonzero(h >= 1 - 1e-10)
        raise NumericalError(f"observation(s) {bad.tolist()} have leverage 1; HC3 undefined")
    Rinv = linalg.solve_triangular(R, np.eye(R.shape[0]))
    bread = Rinv @ Rinv.T
    omega = (resid / (1 - h)) ** 2
    meat = (X * omega[:, None]).T @ X
    cov = bread @ meat @ bread
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    return RegressionResult(names, beta, se, "ols_hc3", len(y))


def ols_classical_se(y, X):
    """Homoskedastic OLS standard errors, for comparison with HC3."""
    y, X, _ = _prepare(y, X, None)
    beta, *_ = linalg.lstsq(X, y)
    resid = y - X @ beta
    n, p = X.shape
    sigma2 = resid @ resid / (n - p)
    return np.sqrt(np.diag(sigma2 * linalg.inv(X.T @ X)))


def logistic_fit(y, X, names=None, max_iter=100, tol=1e-8, eta_limit=30.0):
    """Logistic MLE by IRLS; standard errors from the inverse observed information.

    Raises ConvergenceError if the linear predictor diverges (suggesting
    separation) or the score does not fall below ``tol`` in ``max_iter`` steps.
    """
    y, X, names = _prepare(y, X, names)
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise InputError("logistic outcome must be binary")
    if np.all(y == y[0]):
        raise ConvergenceError(
            f"outcome is constant ({int(y[0])} for all {len(y)} rows); the intercept diverges and no MLE exists"
        )
    _check_rank(X, names)
    beta = np.zeros(X.shape[1])
    for it in range(1, max_iter + 1):
        eta = X @ beta
        mu = expit(eta)
        score = X.T @ (y - mu)
        if np.max(np.abs(eta)) > eta_limit:
            raise ConvergenceError(
                f"linear predictor diverged (|eta| > {eta_limit}) after {it - 1} iterations; "
                "the outcome may be perfectly separated, inspect the data"
            )
        if np.max(np.abs(score)) < tol:
            return _logistic_result(names, beta, X, mu, len(y), it - 1)
        w = mu * (1 - mu)
        info = (X * w[:, None]).T @ X
        try:
            beta = beta + linalg.solve(info, score, assume_a="pos")
        except linalg.LinAlgError as exc:
            raise ConvergenceError(f"information matrix singular at iteration {it}: {exc}") from None
    eta = X @ beta
    mu = expit(eta)
    if np.max(np.abs(X.T @ (y - mu))) < tol:
        return _logistic_result(names, beta, X, mu, len(y), max_iter)
    raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations (max |score| above {tol})")


def _logistic_result(names, beta, X, mu, n, iterations):
    w = mu * (1 - mu)
    info = (X * w[:, None]).T @ X
    cov = linalg.inv(info)
    return RegressionResult(names, beta, np.sqrt(np.clip(np.diag(cov), 0, None)), "logistic", n, iterations)


def log_likelihood(beta, y, X):
    eta = np.asarray(X) @ beta
    return float(np.sum(y * eta - np.logaddexp(0, eta)))
