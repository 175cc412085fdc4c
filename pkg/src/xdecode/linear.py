"""Sample-weighted binary logistic regression and evaluation helpers.

The fitted objective is::

    sum_i w_i * logloss(x_i @ beta + b, y_i) + (l2_strength / 2) * ||beta||^2

with the intercept ``b`` left unpenalized (``C = 1 / l2_strength`` in the
usual inverse-regularization parametrization). The solver is a damped Newton
method; when there are more features than samples the problem is solved in
the row space of ``X`` (thin SVD), which gives the same optimum because any
component of ``beta`` orthogonal to the rows only adds penalty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import expit

from .errors import (
    ConvergenceError,
    DegenerateDataError,
    InvalidArgumentError,
    UndefinedMetricError,
)


@dataclass(frozen=True)
class FitConfig:
    l2_strength: float = 1.0
    tol: float = 1e-4
    max_iter: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.l2_strength) or self.l2_strength < 0:
            raise InvalidArgumentError(f"l2_strength must be >= 0, got {self.l2_strength}")
        if not self.tol > 0:
            raise InvalidArgumentError(f"tol must be > 0, got {self.tol}")
        if int(self.max_iter) < 1:
            raise InvalidArgumentError(f"max_iter must be >= 1, got {self.max_iter}")

    @property
    def C(self) -> float:
        return np.inf if self.l2_strength == 0 else 1.0 / self.l2_strength


@dataclass(frozen=True, eq=False)
class LinearClassifier:
    beta: np.ndarray
    intercept: float = 0.0

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).ravel()
        if not np.all(np.isfinite(beta)) or not np.isfinite(self.intercept):
            raise InvalidArgumentError("classifier parameters must be finite")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "intercept", float(self.intercept))

    @property
    def n_features(self) -> int:
        return len(self.beta)

    def decision_function(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != len(self.beta):
            raise InvalidArgumentError(f"X has {X.shape[1]} columns, model expects {len(self.beta)}")
        return X @ self.beta + self.intercept

    def __eq__(self, other):
        if not isinstance(other, LinearClassifier):
            return NotImplemented
        return np.array_equal(self.beta, other.beta) and self.intercept == other.intercept


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InvalidArgumentError(f"expected a 2D feature matrix, got shape {X.shape}")
    return X


def _check_xyw(X, y, sample_weights):
    X = _as_matrix(X)
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != len(X):
        raise InvalidArgumentError(f"y has shape {y.shape}, expected ({len(X)},)")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidArgumentError("labels must be binary (0/1)")
    y = y.astype(float)
    if sample_weights is None:
        w = np.ones(len(y))
    else:
        w = np.asarray(sample_weights, dtype=float)
        if w.shape != y.shape:
            raise InvalidArgumentError(f"sample_weights has shape {w.shape}, expected {y.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidArgumentError("sample weights must be finite and nonnegative")
    if not np.all(np.isfinite(X)):
        raise InvalidArgumentError("X contains non-finite values")
    return X, y, w


def penalized_loss(beta, intercept, X, y, w, l2_strength) -> float:
    z = X @ beta + intercept
    return float(w @ (np.logaddexp(0.0, z) - y * z) + 0.5 * l2_strength * beta @ beta)


def penalized_gradient(beta, intercept, X, y, w, l2_strength):
    """Gradient of the penalized weighted loss as ``(d_beta, d_intercept)``."""
    r = w * (expit(X @ beta + intercept) - y)
    return X.T @ r + l2_strength * beta, float(r.sum())


def _newton(F, y, w, l2, tol_fn, max_iter):
    """Damped Newton on features ``F``; ``tol_fn(gamma, b) -> (ok, gnorm)``."""
    n, r = F.shape
    A = np.hstack([F, np.ones((n, 1))])
    pen = np.full(r + 1, l2)
    pen[-1] = 0.0
    theta = np.zeros(r + 1)

    def objective(t):
        z = A @ t
        return float(w @ (np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * t[:-1] @ t[:-1])

    f = objective(theta)
    gnorm = np.inf
    for _ in range(int(max_iter)):
        p = expit(A @ theta)
        grad = A.T @ (w * (p - y)) + pen * theta
        ok, gnorm = tol_fn(theta[:-1], theta[-1])
        if ok:
            return theta[:-1], float(theta[-1])
        H = (A * (w * p * (1 - p))[:, None]).T @ A
        H[np.diag_indices_from(H)] += pen
        try:
            step = linalg.solve(H, grad, assume_a="pos", check_finite=False)
        except (linalg.LinAlgError, ValueError):
            step = linalg.lstsq(H, grad, check_finite=False)[0]
        slope = -grad @ step
        t = 1.0
        gsq = grad @ grad
        while True:
            cand = theta - t * step
            f_new = objective(cand)
            if f_new <= f + 1e-4 * t * slope:
                break
            # near the optimum objective differences drop below float
            # resolution; accept steps that still shrink the gradient
            if f_new <= f + 1e-12 * max(1.0, abs(f)):
                pc = expit(A @ cand)
                gc = A.T @ (w * (pc - y)) + pen * cand
                if gc @ gc < gsq:
                    break
            t *= 0.5
            if t < 1e-12:
                raise ConvergenceError(
                    f"line search failed (gradient inf-norm {gnorm:.3g})", grad_norm=gnorm
                )
        theta, f = cand, f_new
    ok, gnorm = tol_fn(theta[:-1], theta[-1])
    if ok:
        return theta[:-1], float(theta[-1])
    raise ConvergenceError(
        f"logistic fit did not converge in {max_iter} iterations (gradient inf-norm {gnorm:.3g})",
        grad_norm=gnorm,
    )


def fit_logistic(X, y, sample_weights=None, cfg: FitConfig | None = None) -> LinearClassifier:
    """Fit a weighted, L2-penalized binary logistic regression.

    Parameters
    ----------
    X : array_like, shape (n_samples, n_features)
    y : array_like of {0, 1}, shape (n_samples,)
    sample_weights : array_like, shape (n_samples,), optional
        Nonnegative per-sample weights; unit weights when omitted.
    cfg : FitConfig, optional

    Returns
    -------
    LinearClassifier
        Parameters at which the infinity norm of the penalized gradient is
        at most ``cfg.tol``.

    Raises
    ------
    DegenerateDataError
        If one class has no sample with positive weight.
    ConvergenceError
        If the tolerance is not met within ``cfg.max_iter`` Newton steps.
    """
    cfg = cfg or FitConfig()
    X, y, w = _check_xyw(X, y, sample_weights)
    active = w > 0
    if not (np.any(active & (y == 1)) and np.any(active & (y == 0))):
        raise DegenerateDataError("both classes need at least one sample with positive weight")
    n, d = X.shape
    l2 = float(cfg.l2_strength)

    def stationarity(beta_full, b):
        gb, gi = penalized_gradient(beta_full, b, X, y, w, l2)
        gnorm = max(np.max(np.abs(gb), initial=0.0), abs(gi))
        return gnorm <= cfg.tol, gnorm

    if d > n and l2 > 0:
        # row-space reduction: beta = V @ gamma, X @ beta = (U S) @ gamma
        U, S, Vt = linalg.svd(X, full_matrices=False, check_finite=False)
        keep = S > S[0] * 1e-12 if len(S) and S[0] > 0 else np.zeros(len(S), bool)
        U, S, Vt = U[:, keep], S[keep], Vt[keep]
        F = U * S
        gamma, b = _newton(F, y, w, l2, lambda g, b: stationarity(Vt.T @ g, b), cfg.max_iter)
        beta = Vt.T @ gamma
    else:
        beta, b = _newton(X, y, w, l2, stationarity, cfg.max_iter)
    return LinearClassifier(beta, b)


def predict(model: LinearClassifier, X):
    """Return ``(scores, labels)``; a score of exactly 0 maps to class 0."""
    scores = model.decision_function(X)
    return scores, (scores > 0).astype(int)


def balanced_accuracy(y_true, y_pred) -> float:
    """Mean of sensitivity and specificity."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise InvalidArgumentError("y_true and y_pred must be 1D arrays of equal length")
    pos = y_true == 1
    neg = y_true == 0
    if not pos.any() or not neg.any():
        raise UndefinedMetricError("balanced accuracy needs both classes in y_true")
    sens = np.mean(y_pred[pos] == 1)
    spec = np.mean(y_pred[neg] == 0)
    return float((sens + spec) / 2)


def log_loss_terms(model: LinearClassifier, X, y) -> np.ndarray:
    z = model.decision_function(X)
    y = np.asarray(y, dtype=float)
    return np.logaddexp(0.0, z) - y * z


def weighted_empirical_risk(model: LinearClassifier, X, y, weights) -> float:
    """Importance-weighted sample average of the log-loss.

    With ``weights[i]`` standing for the density ratio target/source at the
    i-th source sample, this is the sample-average estimate of the target
    risk from source data.
    """
    X, y, w = _check_xyw(X, y, weights)
    if len(y) == 0:
        raise InvalidArgumentError("empty sample")
    return float(np.mean(w * log_loss_terms(model, X, y)))
