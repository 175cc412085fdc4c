"""Domain adaptation for linear classifiers.

Every ``adapt_*`` function takes a :class:`DomainPair` (labelled source data
plus a small labelled target training set) and returns an
:class:`AdaptedModel` whose ``predict`` expects *target-domain* inputs.

Method identifiers (also used by the CLI and result tables) are listed in
:data:`METHODS`. Unsupervised methods only ever look at ``pair.Xt``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable

import cvxopt
import cvxopt.solvers
import numpy as np
from scipy import linalg
from scipy.special import expit

from .errors import (
    ConvergenceError,
    DegenerateDataError,
    DivergenceError,
    InvalidArgumentError,
    SingularSystemError,
)
from .kernels import median_heuristic, mmd_rbf, rbf_kernel, sq_dists
from .linear import FitConfig, LinearClassifier, _as_matrix, fit_logistic, predict

METHODS = (
    "baseline",
    "naive",
    "bw",
    "rtlc",
    "kmm",
    "tradaboost",
    "fa",
    "pred",
    "ulsif",
    "nnw",
    "rulsif",
    "sa",
    "iwn",
)
SUPERVISED = frozenset({"bw", "rtlc", "tradaboost", "fa", "pred"})
UNSUPERVISED = frozenset({"kmm", "ulsif", "nnw", "rulsif", "sa", "iwn"})
FEATURE_BASED = frozenset({"fa", "pred", "sa"})


@dataclass(frozen=True, eq=False)
class DomainPair:
    Xs: np.ndarray
    ys: np.ndarray
    Xt: np.ndarray
    yt: np.ndarray | None = None

    def __post_init__(self):
        Xs = _as_matrix(self.Xs)
        Xt = np.asarray(self.Xt, dtype=float)
        if Xt.size == 0:
            Xt = Xt.reshape(0, Xs.shape[1])
        Xt = _as_matrix(Xt)
        if Xs.shape[1] != Xt.shape[1]:
            raise InvalidArgumentError(
                f"source and target feature dims differ ({Xs.shape[1]} vs {Xt.shape[1]})"
            )
        ys = np.asarray(self.ys).astype(int)
        if ys.shape != (len(Xs),):
            raise InvalidArgumentError("ys must have one label per source row")
        yt = self.yt
        if yt is not None:
            yt = np.asarray(yt).astype(int).reshape(-1)
            if yt.shape != (len(Xt),):
                raise InvalidArgumentError("yt must have one label per target row")
        object.__setattr__(self, "Xs", Xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "Xt", Xt)
        object.__setattr__(self, "yt", yt)

    @property
    def n_s(self) -> int:
        return len(self.Xs)

    @property
    def n_t(self) -> int:
        return len(self.Xt)

    @property
    def n_features(self) -> int:
        return self.Xs.shape[1]

    def without_target(self) -> "DomainPair":
        return DomainPair(self.Xs, self.ys, np.empty((0, self.n_features)), np.empty(0, int))


@dataclass(frozen=True, eq=False)
class ImportanceWeights:
    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float).ravel()
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidArgumentError("importance weights must be finite and nonnegative")
        if not np.any(w > 0):
            raise InvalidArgumentError("importance weights are all zero")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)


class FeatureAugmentation:
    """Target rows map to ``(x, 0, x)``: common, source-specific, target-specific."""

    kind = "augment"

    @staticmethod
    def source(X):
        return np.hstack([X, X, np.zeros_like(X)])

    @staticmethod
    def target(X):
        return np.hstack([X, np.zeros_like(X), X])

    def transform(self, X):
        return self.target(_as_matrix(X))

    def describe(self):
        return {"kind": self.kind}


class StackedScore:
    """Appends the source model's decision score as an extra feature."""

    kind = "stacked_score"

    def __init__(self, source_model: LinearClassifier):
        self.source_model = source_model

    def transform(self, X):
        X = _as_matrix(X)
        return np.hstack([X, self.source_model.decision_function(X)[:, None]])

    def describe(self):
        return {"kind": self.kind, "source_intercept": self.source_model.intercept}


class SubspaceProjection:
    """Centers with the target mean and projects onto the target PCA basis."""

    kind = "subspace"

    def __init__(self, mean, basis):
        self.mean = mean
        self.basis = basis

    def transform(self, X):
        return (_as_matrix(X) - self.mean) @ self.basis

    def describe(self):
        return {"kind": self.kind, "subspace_dim": int(self.basis.shape[1])}


@dataclass(frozen=True, eq=False)
class AdaptedModel:
    model: LinearClassifier
    method: str
    hyperparams: dict = field(default_factory=dict)
    weights: ImportanceWeights | None = None
    feature_map: Any = None
    # (classifier, vote weight) pairs; only boosting fills this in
    ensemble: tuple = ()
    warning: str | None = None
    diagnostics: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if (self.feature_map is not None) != (self.method in FEATURE_BASED):
            raise InvalidArgumentError(f"feature_map must be set iff {self.method!r} is feature-based")

    def decision_function(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if self.ensemble:
            votes = np.zeros(len(X))
            for clf, alpha in self.ensemble:
                votes += alpha * ((clf.decision_function(X) > 0) - 0.5)
            return votes
        if self.feature_map is not None:
            X = self.feature_map.transform(X)
        return self.model.decision_function(X)

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) > 0).astype(int)


def _require_target_labels(pair: DomainPair, method: str):
    if pair.yt is None or pair.n_t < 2:
        raise DegenerateDataError(f"{method} needs at least 2 labelled target samples")
    if not (np.any(pair.yt == 1) and np.any(pair.yt == 0)):
        raise DegenerateDataError(f"{method} needs both classes in the target training set")


def _require_unlabeled_target(pair: DomainPair, method: str):
    if pair.n_t < 1:
        raise DegenerateDataError(f"{method} needs at least one target sample")


def _weighted_fit(pair, w, cfg, method, hyperparams):
    weights = ImportanceWeights(w)
    model = fit_logistic(pair.Xs, pair.ys, weights.w, cfg)
    return AdaptedModel(model, method, hyperparams, weights=weights)


# -- baseline / naive / balanced weighting ---------------------------------


def adapt_baseline(pair: DomainPair, cfg: FitConfig | None = None) -> AdaptedModel:
    """Source-only fit; the target data is never touched."""
    return AdaptedModel(fit_logistic(pair.Xs, pair.ys, None, cfg), "baseline", {})


def adapt_naive(pair: DomainPair, cfg: FitConfig | None = None) -> AdaptedModel:
    """Unit-weight fit on the row concatenation of source and target_train."""
    if pair.n_t == 0:
        return AdaptedModel(fit_logistic(pair.Xs, pair.ys, None, cfg), "naive", {})
    if pair.yt is None:
        raise DegenerateDataError("naive needs target labels")
    X = np.vstack([pair.Xs, pair.Xt])
    y = np.concatenate([pair.ys, pair.yt])
    return AdaptedModel(fit_logistic(X, y, None, cfg), "naive", {})


def balanced_weights(n_s: int, n_t: int, gamma: float) -> np.ndarray:
    """Per-row weights mixing the per-domain mean losses as ``(1-g, g)``.

    The overall scale ``(1-g)*n_s + g*n_t`` makes ``g = 0`` the unit-weight
    source fit and ``g = 1`` the unit-weight target fit.
    """
    scale = (1 - gamma) * n_s + gamma * n_t
    return np.concatenate(
        [np.full(n_s, scale * (1 - gamma) / n_s), np.full(n_t, scale * gamma / n_t)]
    )


def adapt_bw(pair: DomainPair, gamma: float = 0.5, cfg: FitConfig | None = None) -> AdaptedModel:
    if not 0 <= gamma <= 1:
        raise InvalidArgumentError(f"gamma must lie in [0, 1], got {gamma}")
    _require_target_labels(pair, "bw")
    X = np.vstack([pair.Xs, pair.Xt])
    y = np.concatenate([pair.ys, pair.yt])
    w = balanced_weights(pair.n_s, pair.n_t, gamma)
    return AdaptedModel(fit_logistic(X, y, w, cfg), "bw", {"gamma": gamma})


# -- regular transfer -------------------------------------------------------


def rtlc_solve(A, y, beta0, lam: float) -> np.ndarray:
    """``argmin_b ||A b - y||^2 + lam * ||b - beta0||^2`` in closed form."""
    A = _as_matrix(A)
    y = np.asarray(y, dtype=float)
    beta0 = np.asarray(beta0, dtype=float)
    if not np.isfinite(lam) or lam < 0:
        raise InvalidArgumentError(f"lambda must be >= 0, got {lam}")
    n, p = A.shape
    if lam == 0:
        if np.linalg.matrix_rank(A) < p:
            raise SingularSystemError("lambda = 0 with a rank-deficient target design")
        return linalg.solve(A.T @ A, A.T @ y, assume_a="pos")
    if n < p:
        # Woodbury: work with the n x n Gram matrix
        resid = y - A @ beta0
        return beta0 + A.T @ linalg.solve(A @ A.T + lam * np.eye(n), resid, assume_a="pos")
    return linalg.solve(A.T @ A + lam * np.eye(p), A.T @ y + lam * beta0, assume_a="pos")


def adapt_rtlc(
    pair: DomainPair,
    lam: float = 1.0,
    cfg: FitConfig | None = None,
    source_model: LinearClassifier | None = None,
) -> AdaptedModel:
    """Ridge regression of +-1 target labels pulled towards the source model.

    The intercept is an extra constant feature penalized towards the source
    intercept. ``source_model`` lets callers reuse an existing baseline fit.
    """
    if not np.isfinite(lam) or lam < 0:
        raise InvalidArgumentError(f"lambda must be >= 0, got {lam}")
    _require_target_labels(pair, "rtlc")
    src = source_model if source_model is not None else fit_logistic(pair.Xs, pair.ys, None, cfg)
    A = np.hstack([pair.Xt, np.ones((pair.n_t, 1))])
    beta0 = np.append(src.beta, src.intercept)
    coef = rtlc_solve(A, 2.0 * pair.yt - 1.0, beta0, lam)
    model = LinearClassifier(coef[:-1], coef[-1])
    return AdaptedModel(model, "rtlc", {"lambda": lam}, diagnostics={"source_model": src})


# -- kernel mean matching ---------------------------------------------------


def kmm_objective(w, K, kappa) -> float:
    return float(0.5 * w @ K @ w - kappa @ w)


def kmm_problem(Xs, Xt, bandwidth):
    """Kernel matrix and linear term of the KMM quadratic program."""
    n_s, n_t = len(Xs), len(Xt)
    K = rbf_kernel(Xs, Xs, bandwidth)
    kappa = (n_s / n_t) * rbf_kernel(Xs, Xt, bandwidth).sum(axis=1)
    return K, kappa


def kmm_weights(Xs, Xt, bandwidth: float, B: float = 1000.0, eps: float | None = None) -> np.ndarray:
    """Solve ``min 0.5 w'Kw - kappa'w`` s.t. ``0 <= w <= B``, ``|sum w - n_s| <= n_s eps``."""
    Xs = _as_matrix(Xs)
    Xt = _as_matrix(Xt)
    n_s = len(Xs)
    if eps is None:
        eps = (math.sqrt(n_s) - 1) / math.sqrt(n_s)
    if B <= 0 or eps < 0:
        raise InvalidArgumentError(f"KMM needs B > 0 and eps >= 0 (got B={B}, eps={eps})")
    if B * n_s < n_s * (1 - eps):
        raise InvalidArgumentError(f"KMM constraints are infeasible for B={B}, eps={eps}")
    K, kappa = kmm_problem(Xs, Xt, bandwidth)
    P = K + 1e-10 * np.eye(n_s)
    G = np.vstack([-np.eye(n_s), np.eye(n_s), np.ones((1, n_s)), -np.ones((1, n_s))])
    h = np.concatenate([np.zeros(n_s), np.full(n_s, B), [n_s * (1 + eps)], [-n_s * (1 - eps)]])
    opts = {"show_progress": False, "abstol": 1e-10, "reltol": 1e-10, "feastol": 1e-10, "maxiters": 200}
    sol = cvxopt.solvers.qp(
        cvxopt.matrix(P), cvxopt.matrix(-kappa), cvxopt.matrix(G), cvxopt.matrix(h), options=opts
    )
    w = np.clip(np.array(sol["x"]).ravel(), 0.0, B)
    if sol["status"] != "optimal":
        # interior-point can stall at very tight tolerances; accept a
        # feasible point that is no worse than the always-feasible w = 1
        ones = np.ones(n_s)
        feasible = abs(w.sum() - n_s) <= n_s * eps * (1 + 1e-8) + 1e-8
        if not (feasible and kmm_objective(w, K, kappa) <= kmm_objective(ones, K, kappa) + 1e-9):
            raise ConvergenceError(f"KMM quadratic program: solver status {sol['status']}")
    return w


def adapt_kmm(
    pair: DomainPair,
    kernel_bandwidth: float | None = None,
    B: float = 1000.0,
    eps: float | None = None,
    cfg: FitConfig | None = None,
) -> AdaptedModel:
    _require_unlabeled_target(pair, "kmm")
    bw = kernel_bandwidth or median_heuristic(pair.Xs, pair.Xt)
    if eps is None:
        eps = (math.sqrt(pair.n_s) - 1) / math.sqrt(pair.n_s)
    w = kmm_weights(pair.Xs, pair.Xt, bw, B, eps)
    return _weighted_fit(pair, w, cfg, "kmm", {"kernel_bandwidth": bw, "B": B, "eps": eps})


# -- TrAdaBoost -------------------------------------------------------------


def adapt_tradaboost(pair: DomainPair, n_rounds: int = 10, cfg: FitConfig | None = None) -> AdaptedModel:
    """Transfer boosting with hard-vote aggregation over the last rounds.

    Raw weights start at one; each round fits on weights rescaled to mean
    one. Misclassified source rows are multiplied by the fixed factor
    ``1 / (1 + sqrt(2 ln n_s / n_rounds))`` and misclassified target rows by
    ``(1 - err) / err``, ``err`` being the weighted target training error.
    ``diagnostics["weight_trajectory"]`` holds the raw weights at the start
    and after every completed round.
    """
    if int(n_rounds) < 1:
        raise InvalidArgumentError(f"n_rounds must be >= 1, got {n_rounds}")
    _require_target_labels(pair, "tradaboost")
    n_rounds = int(n_rounds)
    n_s, n_t = pair.n_s, pair.n_t
    X = np.vstack([pair.Xs, pair.Xt])
    y = np.concatenate([pair.ys, pair.yt])
    is_src = np.arange(n_s + n_t) < n_s
    beta_src = 1.0 / (1.0 + math.sqrt(2.0 * math.log(n_s) / n_rounds))

    raw = np.ones(n_s + n_t)
    trajectory = [raw.copy()]
    rounds = []  # (classifier, beta_round)
    errors = []
    warn = None
    for t in range(n_rounds):
        w_fit = raw * (len(raw) / raw.sum())
        clf = fit_logistic(X, y, w_fit, cfg)
        miss = predict(clf, X)[1] != y
        wt = raw[~is_src]
        err = float(wt[miss[~is_src]].sum() / wt.sum())
        errors.append(err)
        if err >= 0.5:
            warn = f"target error {err:.3f} >= 0.5 at round {t + 1}; stopped early"
            if not rounds:
                rounds.append((clf, None))
            break
        beta_t = max(err / (1.0 - err), 1e-10)
        rounds.append((clf, beta_t))
        raw = raw.copy()
        raw[is_src & miss] *= beta_src
        raw[~is_src & miss] /= beta_t
        trajectory.append(raw.copy())

    if rounds[-1][1] is None:
        ensemble = ((rounds[-1][0], 1.0),)
    else:
        keep = rounds[-math.ceil(len(rounds) / 2):]
        ensemble = tuple((clf, math.log(1.0 / b)) for clf, b in keep)
    if warn:
        warnings.warn(warn, RuntimeWarning, stacklevel=2)
    return AdaptedModel(
        rounds[-1][0],
        "tradaboost",
        {"n_rounds": n_rounds},
        weights=ImportanceWeights(raw[:n_s]),
        ensemble=ensemble,
        warning=warn,
        diagnostics={
            "weight_trajectory": np.array(trajectory),
            "target_errors": errors,
            "source_factor": beta_src,
        },
    )


# -- feature augmentation / stacking / subspace alignment -------------------


def adapt_fa(pair: DomainPair, cfg: FitConfig | None = None) -> AdaptedModel:
    _require_target_labels(pair, "fa")
    fmap = FeatureAugmentation()
    X = np.vstack([fmap.source(pair.Xs), fmap.target(pair.Xt)])
    y = np.concatenate([pair.ys, pair.yt])
    return AdaptedModel(fit_logistic(X, y, None, cfg), "fa", {}, feature_map=fmap)


def adapt_pred(pair: DomainPair, cfg: FitConfig | None = None) -> AdaptedModel:
    _require_target_labels(pair, "pred")
    src = fit_logistic(pair.Xs, pair.ys, None, cfg)
    fmap = StackedScore(src)
    model = fit_logistic(fmap.transform(pair.Xt), pair.yt, None, cfg)
    return AdaptedModel(model, "pred", {}, feature_map=fmap)


def pca_basis(X, k: int):
    """Mean and top-``k`` principal directions (columns), sign-fixed.

    Each direction is flipped so its largest-magnitude loading is positive.
    """
    mean = X.mean(axis=0)
    _, _, Vt = linalg.svd(X - mean, full_matrices=False)
    P = Vt[:k].T.copy()
    pivot = np.argmax(np.abs(P), axis=0)
    P *= np.sign(P[pivot, np.arange(P.shape[1])])
    return mean, P


def adapt_sa(pair: DomainPair, subspace_dim: int | None = None, cfg: FitConfig | None = None) -> AdaptedModel:
    """Subspace alignment: source PCA basis rotated onto the target one."""
    _require_unlabeled_target(pair, "sa")
    limit = min(pair.n_features, pair.n_s, pair.n_t)
    k = int(subspace_dim) if subspace_dim is not None else min(limit, 100)
    if k < 1 or k > limit:
        raise InvalidArgumentError(f"subspace_dim must be in [1, {limit}], got {subspace_dim}")
    mu_s, Ps = pca_basis(pair.Xs, k)
    mu_t, Pt = pca_basis(pair.Xt, k)
    M = Ps.T @ Pt
    Zs = (pair.Xs - mu_s) @ Ps @ M
    model = fit_logistic(Zs, pair.ys, None, cfg)
    return AdaptedModel(
        model,
        "sa",
        {"subspace_dim": k},
        feature_map=SubspaceProjection(mu_t, Pt),
        diagnostics={"alignment": M, "source_basis": Ps},
    )


# -- density-ratio fitting --------------------------------------------------


def ulsif_theta(Xs, Xt, centers, bandwidth: float, ridge: float, alpha: float = 0.0) -> np.ndarray:
    """Coefficients of the (relative) least-squares density-ratio model.

    ``H = (1 - alpha) * mean_s phi phi' + alpha * mean_t phi phi'``,
    ``h = mean_t phi`` and ``theta = max(0, (H + ridge I)^-1 h)``.
    """
    if not 0 <= alpha <= 1:
        raise InvalidArgumentError(f"alpha must lie in [0, 1], got {alpha}")
    if ridge < 0:
        raise InvalidArgumentError(f"ridge must be >= 0, got {ridge}")
    Phi_s = rbf_kernel(Xs, centers, bandwidth)
    Phi_t = rbf_kernel(Xt, centers, bandwidth)
    H = Phi_s.T @ Phi_s / len(Xs)
    if alpha > 0:
        H = (1 - alpha) * H + alpha * (Phi_t.T @ Phi_t / len(Xt))
    h = Phi_t.mean(axis=0)
    A = H + ridge * np.eye(len(h))
    try:
        theta = linalg.solve(A, h, assume_a="pos")
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularSystemError("density-ratio system H + ridge*I is singular") from exc
    if not np.all(np.isfinite(theta)):
        raise SingularSystemError("density-ratio system H + ridge*I is singular")
    return np.maximum(theta, 0.0)


def _ratio_centers(pair, n_centers, centers, seed):
    if centers == "source":
        return pair.Xs
    if centers != "target":
        raise InvalidArgumentError(f"centers must be 'target' or 'source', got {centers!r}")
    n_c = min(100, pair.n_t) if n_centers is None else int(n_centers)
    if not 1 <= n_c <= pair.n_t:
        raise InvalidArgumentError(f"n_centers must be in [1, {pair.n_t}], got {n_centers}")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(pair.n_t, size=n_c, replace=False))
    return pair.Xt[idx]


def _ratio_weights(pair, alpha, kernel_bandwidth, ridge, n_centers, centers, cfg):
    _require_unlabeled_target(pair, "ulsif")
    cfg = cfg or FitConfig()
    bw = kernel_bandwidth or median_heuristic(pair.Xs, pair.Xt)
    C = _ratio_centers(pair, n_centers, centers, cfg.seed)
    theta = ulsif_theta(pair.Xs, pair.Xt, C, bw, ridge, alpha)
    w = np.maximum(rbf_kernel(pair.Xs, C, bw) @ theta, 0.0)
    params = {"kernel_bandwidth": bw, "ridge": ridge, "n_centers": len(C), "centers": centers}
    return w, theta, params


def adapt_ulsif(
    pair: DomainPair,
    kernel_bandwidth: float | None = None,
    ridge: float = 0.7,
    n_centers: int | None = None,
    cfg: FitConfig | None = None,
    centers: str = "target",
) -> AdaptedModel:
    w, theta, params = _ratio_weights(pair, 0.0, kernel_bandwidth, ridge, n_centers, centers, cfg)
    if not np.any(w > 0):
        raise DegenerateDataError("density-ratio weights are all zero")
    out = _weighted_fit(pair, w, cfg, "ulsif", params)
    out.diagnostics["theta"] = theta
    return out


def adapt_rulsif(
    pair: DomainPair,
    alpha: float = 0.1,
    kernel_bandwidth: float | None = None,
    ridge: float = 0.7,
    n_centers: int | None = None,
    cfg: FitConfig | None = None,
    centers: str = "target",
) -> AdaptedModel:
    if not 0 <= alpha <= 1:
        raise InvalidArgumentError(f"alpha must lie in [0, 1], got {alpha}")
    w, theta, params = _ratio_weights(pair, alpha, kernel_bandwidth, ridge, n_centers, centers, cfg)
    if not np.any(w > 0):
        raise DegenerateDataError("density-ratio weights are all zero")
    out = _weighted_fit(pair, w, cfg, "rulsif", {"alpha": alpha, **params})
    out.diagnostics["theta"] = theta
    return out


def nnw_counts(Xs, Xt, radius: float) -> np.ndarray:
    """Number of target rows within Euclidean ``radius`` of each source row."""
    return (sq_dists(Xs, Xt) <= radius**2).sum(axis=1)


def adapt_nnw(pair: DomainPair, radius: float | None = None, cfg: FitConfig | None = None) -> AdaptedModel:
    _require_unlabeled_target(pair, "nnw")
    if radius is None:
        radius = float(np.median(np.sqrt(sq_dists(pair.Xs, pair.Xt))))
    if not radius > 0:
        raise InvalidArgumentError(f"radius must be > 0, got {radius}")
    counts = nnw_counts(pair.Xs, pair.Xt, radius).astype(float)
    w = counts / counts.mean() if counts.any() else np.ones(pair.n_s)
    return _weighted_fit(pair, w, cfg, "nnw", {"radius": radius})


# -- importance weighting network ------------------------------------------


def _softplus(z):
    return np.logaddexp(0.0, z)


class WeightNetwork:
    """One hidden tanh layer followed by a softplus output."""

    def __init__(self, n_in, hidden_units, rng, mean, scale):
        self.mean = mean
        self.scale = scale
        self.W1 = rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_in, hidden_units))
        self.b1 = np.zeros(hidden_units)
        self.W2 = np.zeros(hidden_units)
        # softplus(b2) = 1: constant unit output at initialization
        self.b2 = math.log(math.e - 1.0)

    def forward(self, X):
        Z = (X - self.mean) / self.scale
        Hd = np.tanh(Z @ self.W1 + self.b1)
        out = Hd @ self.W2 + self.b2
        return Z, Hd, out

    def weights(self, X):
        w = _softplus(self.forward(X)[2])
        return w / w.mean()


def _iwn_loss_grad(net, Xs, Kss, Kst_row, Ktt_mean):
    n = len(Xs)
    Z, Hd, out = net.forward(Xs)
    w = _softplus(out)
    S = w.sum()
    wn = n * w / S
    loss = wn @ Kss @ wn / n**2 - 2.0 * wn @ Kst_row / n + Ktt_mean
    g = 2.0 * (Kss @ wn) / n**2 - 2.0 * Kst_row / n
    dw = (n / S) * (g - (g @ w) / S)
    dz = dw * expit(out)
    grads = {
        "W2": Hd.T @ dz,
        "b2": float(dz.sum()),
    }
    dH = np.outer(dz, net.W2) * (1.0 - Hd**2)
    grads["W1"] = Z.T @ dH
    grads["b1"] = dH.sum(axis=0)
    return float(loss), grads


def iwn_weights(
    Xs,
    Xt,
    hidden_units: int = 16,
    steps: int = 100,
    learning_rate: float = 1.0,
    bandwidth: float | None = None,
    seed: int = 0,
):
    """Train the weight network by gradient descent on the weighted MMD.

    Returns ``(weights, history)``; the weights are those of the step with
    the lowest MMD seen, strictly positive and normalized to mean one.
    """
    Xs = _as_matrix(Xs)
    Xt = _as_matrix(Xt)
    bw = bandwidth or median_heuristic(Xs, Xt)
    rng = np.random.default_rng(seed)
    scale = Xs.std(axis=0)
    scale[scale == 0] = 1.0
    net = WeightNetwork(Xs.shape[1], int(hidden_units), rng, Xs.mean(axis=0), scale)
    Kss = rbf_kernel(Xs, Xs, bw)
    Kst_row = rbf_kernel(Xs, Xt, bw).mean(axis=1)
    Ktt_mean = float(rbf_kernel(Xt, Xt, bw).mean())

    best = net.weights(Xs)
    history = []
    best_loss = np.inf
    for step in range(int(steps) + 1):
        loss, grads = _iwn_loss_grad(net, Xs, Kss, Kst_row, Ktt_mean)
        if not np.isfinite(loss):
            raise DivergenceError(f"IWN loss became non-finite at step {step}")
        history.append(loss)
        if loss < best_loss:
            best_loss = loss
            best = net.weights(Xs)
        if step == steps:
            break
        net.W1 -= learning_rate * grads["W1"]
        net.b1 -= learning_rate * grads["b1"]
        net.W2 -= learning_rate * grads["W2"]
        net.b2 -= learning_rate * grads["b2"]
    return best, history


def adapt_iwn(
    pair: DomainPair,
    hidden_units: int = 16,
    steps: int = 100,
    learning_rate: float = 1.0,
    kernel_bandwidth: float | None = None,
    cfg: FitConfig | None = None,
) -> AdaptedModel:
    _require_unlabeled_target(pair, "iwn")
    cfg = cfg or FitConfig()
    bw = kernel_bandwidth or median_heuristic(pair.Xs, pair.Xt)
    w, history = iwn_weights(pair.Xs, pair.Xt, hidden_units, steps, learning_rate, bw, cfg.seed)
    out = _weighted_fit(
        pair,
        w,
        cfg,
        "iwn",
        {"hidden_units": hidden_units, "steps": steps, "learning_rate": learning_rate, "kernel_bandwidth": bw},
    )
    out.diagnostics["mmd_history"] = history
    return out


# -- dispatch ---------------------------------------------------------------

ADAPTERS: dict[str, Callable[..., AdaptedModel]] = {
    "baseline": adapt_baseline,
    "naive": adapt_naive,
    "bw": adapt_bw,
    "rtlc": adapt_rtlc,
    "kmm": adapt_kmm,
    "tradaboost": adapt_tradaboost,
    "fa": adapt_fa,
    "pred": adapt_pred,
    "ulsif": adapt_ulsif,
    "nnw": adapt_nnw,
    "rulsif": adapt_rulsif,
    "sa": adapt_sa,
    "iwn": adapt_iwn,
}


def adapt(method: str, pair: DomainPair, cfg: FitConfig | None = None, **hyperparams) -> AdaptedModel:
    """Run the adaptation method named ``method`` with flat hyperparameters."""
    try:
        fn = ADAPTERS[method]
    except KeyError:
        raise InvalidArgumentError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}") from None
    return fn(pair, cfg=cfg, **hyperparams)
