"""Synthetic two-domain datasets with known ground truth.

Each domain is a two-component Gaussian mixture with equal class priors and a
covariance shared by both classes. Samples are organized into trials of
``trial_length`` consecutive instances of one class; an optional trial effect
(an isotropic Gaussian offset shared within a trial) mimics the temporal
correlation of block designs.

The shift descriptor builds the target domain from the source one:

* ``rotation_deg`` rotates the class-mean direction ``u`` (uniform over the
  informative features) towards ``v`` (uniform over ``rotation_axis``, by
  default the first ``len(informative)`` non-informative features);
* ``mean_offset`` translates both target classes along ``u``;
* ``cov_scale`` multiplies the target noise standard deviation;
* ``label_flip_rate`` draws a target instance from the other class's
  component without changing its label.

Explicit ``source_means``/``target_means`` (shape ``(2, d)``) and
``source_cov``/``target_cov`` (a variance or a ``(d, d)`` matrix) override the
descriptor.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, stats
from scipy.special import logsumexp

from .dataset import SubjectDataset, write_bundle
from .errors import InvalidArgumentError
from .partitioning import SOURCE, TARGET, TrialTable
from .volume import BrainMask, VoxelGrid


@dataclass(frozen=True)
class SynthConfig:
    n_features: int | None = 2
    grid_dims: tuple | None = None
    voxel_size_mm: tuple = (3.0, 3.0, 3.0)
    n_source: int = 400
    n_target: int = 200
    trial_length: int = 5
    class_separation: float = 2.0
    informative: tuple | None = None
    noise_std: float = 1.0
    trial_effect_std: float = 0.0
    rotation_deg: float = 0.0
    rotation_axis: int | tuple | None = None
    mean_offset: float = 0.0
    cov_scale: float = 1.0
    label_flip_rate: float = 0.0
    source_means: list | None = None
    target_means: list | None = None
    source_cov: object = None
    target_cov: object = None
    seed: int = 0
    name: str = "synth"

    def __post_init__(self):
        if self.grid_dims is not None:
            object.__setattr__(self, "grid_dims", tuple(int(v) for v in self.grid_dims))
            object.__setattr__(self, "n_features", int(np.prod(self.grid_dims)))
        if self.n_features is None or int(self.n_features) < 1:
            raise InvalidArgumentError("give n_features >= 1 or grid_dims")
        if int(self.trial_length) < 1:
            raise InvalidArgumentError(f"trial_length must be >= 1, got {self.trial_length}")
        if self.n_source < 2 * self.trial_length or self.n_target < 2 * self.trial_length:
            raise InvalidArgumentError("each domain needs at least one trial per class")
        if not 0 <= self.label_flip_rate < 0.5:
            raise InvalidArgumentError("label_flip_rate must lie in [0, 0.5)")
        if self.noise_std <= 0 or self.cov_scale <= 0 or self.trial_effect_std < 0:
            raise InvalidArgumentError("noise_std and cov_scale must be > 0, trial_effect_std >= 0")
        object.__setattr__(self, "voxel_size_mm", tuple(float(v) for v in self.voxel_size_mm))
        if self.informative is not None:
            object.__setattr__(self, "informative", tuple(int(i) for i in self.informative))

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgumentError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DomainModel:
    """Class means ``(2, d)`` and shared covariance (variance or matrix)."""

    means: np.ndarray
    cov: object

    @property
    def isotropic(self) -> bool:
        return np.ndim(self.cov) == 0

    def chol(self):
        return linalg.cholesky(np.asarray(self.cov, dtype=float), lower=True)


def _check_cov(cov, d, what):
    if np.ndim(cov) == 0:
        if not float(cov) > 0:
            raise InvalidArgumentError(f"{what} variance must be positive")
        return float(cov)
    C = np.asarray(cov, dtype=float)
    if C.shape != (d, d) or not np.allclose(C, C.T):
        raise InvalidArgumentError(f"{what} must be a symmetric ({d}, {d}) matrix")
    try:
        linalg.cholesky(C, lower=True)
    except linalg.LinAlgError:
        raise InvalidArgumentError(f"{what} is not positive definite") from None
    return C


def domain_models(cfg: SynthConfig):
    """Return ``(source, target)`` :class:`DomainModel` for ``cfg``.

    The trial effect is folded into the covariance, which gives the marginal
    instance distribution.
    """
    d = int(cfg.n_features)
    info = cfg.informative if cfg.informative is not None else (0,)
    if any(i < 0 or i >= d for i in info):
        raise InvalidArgumentError("informative feature index out of range")
    u = np.zeros(d)
    u[list(info)] = 1.0
    u /= np.linalg.norm(u)
    rot = np.deg2rad(cfg.rotation_deg)
    if cfg.rotation_axis is not None:
        axes = tuple(int(a) for a in np.atleast_1d(cfg.rotation_axis))
    else:
        free = [j for j in range(d) if j not in info]
        axes = tuple(free[: len(info)])
    v = np.zeros(d)
    if not axes or set(axes) & set(info) or any(a < 0 or a >= d for a in axes):
        if rot != 0:
            raise InvalidArgumentError("rotation needs rotation_axis features outside the informative set")
    else:
        v[list(axes)] = 1.0
        v /= np.linalg.norm(v)
    half = cfg.class_separation / 2.0
    src_mu = np.stack([-half * u, half * u])
    direction = np.cos(rot) * u + np.sin(rot) * v
    tgt_mu = np.stack([-half * direction, half * direction]) + cfg.mean_offset * u
    src_cov = cfg.noise_std**2
    tgt_cov = (cfg.cov_scale * cfg.noise_std) ** 2
    if cfg.source_means is not None:
        src_mu = np.asarray(cfg.source_means, dtype=float)
    if cfg.target_means is not None:
        tgt_mu = np.asarray(cfg.target_means, dtype=float)
    for mu, what in ((src_mu, "source_means"), (tgt_mu, "target_means")):
        if mu.shape != (2, d):
            raise InvalidArgumentError(f"{what} must have shape (2, {d})")
    if cfg.source_cov is not None:
        src_cov = cfg.source_cov
    if cfg.target_cov is not None:
        tgt_cov = cfg.target_cov
    src_cov = _check_cov(src_cov, d, "source_cov")
    tgt_cov = _check_cov(tgt_cov, d, "target_cov")
    tau2 = cfg.trial_effect_std**2
    if tau2:
        src_cov = src_cov + tau2 if np.ndim(src_cov) == 0 else src_cov + tau2 * np.eye(d)
        tgt_cov = tgt_cov + tau2 if np.ndim(tgt_cov) == 0 else tgt_cov + tau2 * np.eye(d)
    return DomainModel(src_mu, src_cov), DomainModel(tgt_mu, tgt_cov)


def bayes_accuracy(model: DomainModel, flip_rate: float = 0.0) -> float:
    """Accuracy of the Bayes classifier for equal priors and shared covariance.

    ``Phi(delta / 2)`` with ``delta`` the Mahalanobis distance between the
    class means; a flip rate ``r`` turns it into ``(1 - r) a + r (1 - a)``.
    """
    diff = model.means[1] - model.means[0]
    if model.isotropic:
        delta = np.linalg.norm(diff) / np.sqrt(model.cov)
    else:
        z = linalg.solve_triangular(model.chol(), diff, lower=True)
        delta = np.linalg.norm(z)
    a = float(stats.norm.cdf(delta / 2.0))
    return (1 - flip_rate) * a + flip_rate * (1 - a)


def log_density(model: DomainModel, X) -> np.ndarray:
    """Log of the equal-prior mixture density at the rows of ``X``."""
    X = np.asarray(X, dtype=float)
    d = X.shape[1]
    comps = []
    if model.isotropic:
        s2 = float(model.cov)
        for mu in model.means:
            q = np.sum((X - mu) ** 2, axis=1) / s2
            comps.append(-0.5 * (q + d * np.log(2 * np.pi * s2)))
    else:
        L = model.chol()
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        for mu in model.means:
            z = linalg.solve_triangular(L, (X - mu).T, lower=True)
            comps.append(-0.5 * (np.sum(z**2, axis=0) + logdet + d * np.log(2 * np.pi)))
    return logsumexp(np.stack(comps), axis=0) + np.log(0.5)


def density_ratio(source: DomainModel, target: DomainModel, X) -> np.ndarray:
    """True ``p_T(x) / p_S(x)`` at the rows of ``X``."""
    return np.exp(log_density(target, X) - log_density(source, X))


def _draw(rng, model: DomainModel, means_idx, tau):
    n = len(means_idx)
    d = model.means.shape[1]
    # the trial effect is added afterwards, so draw with the remaining covariance
    base_cov = model.cov
    if tau:
        base_cov = base_cov - tau**2 if np.ndim(base_cov) == 0 else base_cov - tau**2 * np.eye(d)
    noise = rng.standard_normal((n, d))
    if np.ndim(base_cov) == 0:
        noise *= np.sqrt(base_cov)
    else:
        noise = noise @ linalg.cholesky(base_cov, lower=True).T
    return model.means[means_idx] + noise


def _trials(n, trial_length, first_id):
    k = np.arange(n) // trial_length
    return first_id + k, (k % 2).astype(int)


@dataclass(frozen=True, eq=False)
class SynthResult:
    dataset: SubjectDataset
    truth: dict = field(repr=False)


def generate_synth(cfg: SynthConfig) -> SynthResult:
    """Draw a two-domain dataset and its ground truth.

    ``truth`` holds ``bayes_accuracy_source``, ``bayes_accuracy_target`` and
    ``density_ratio`` (the true ``p_T / p_S`` at each source sample, in
    dataset row order).
    """
    src, tgt = domain_models(cfg)
    d = int(cfg.n_features)
    rng = np.random.default_rng(int(cfg.seed))

    trial_s, y_s = _trials(cfg.n_source, cfg.trial_length, 0)
    trial_t, y_t = _trials(cfg.n_target, cfg.trial_length, int(trial_s.max()) + 1)
    comp_t = y_t.copy()
    if cfg.label_flip_rate:
        flip = rng.random(cfg.n_target) < cfg.label_flip_rate
        comp_t[flip] = 1 - comp_t[flip]
    Xs = _draw(rng, src, y_s, cfg.trial_effect_std)
    Xt = _draw(rng, tgt, comp_t, cfg.trial_effect_std)
    if cfg.trial_effect_std:
        for X, trial in ((Xs, trial_s), (Xt, trial_t)):
            ids, inv = np.unique(trial, return_inverse=True)
            X += cfg.trial_effect_std * rng.standard_normal((len(ids), d))[inv]

    if cfg.grid_dims is not None:
        grid = VoxelGrid(cfg.grid_dims, cfg.voxel_size_mm)
    else:
        grid = VoxelGrid((d, 1, 1), cfg.voxel_size_mm)
    mask = BrainMask.full(grid)
    X = np.vstack([Xs, Xt]).astype(np.float32)
    samples = X.reshape((len(X),) + grid.dims)
    table = TrialTable(
        np.concatenate([trial_s, trial_t]),
        np.concatenate([y_s, y_t]),
        np.array([SOURCE] * cfg.n_source + [TARGET] * cfg.n_target),
    )
    ds = SubjectDataset(mask, samples, table, name=cfg.name, meta={"synth": cfg.to_dict()})
    truth = {
        "bayes_accuracy_source": bayes_accuracy(src),
        "bayes_accuracy_target": bayes_accuracy(tgt, cfg.label_flip_rate),
        "density_ratio": density_ratio(src, tgt, Xs.astype(np.float32).astype(float)),
    }
    return SynthResult(ds, truth)


def write_synth(result: SynthResult, out_dir) -> Path:
    """Write the bundle plus ``truth.json`` next to it."""
    out = Path(out_dir)
    write_bundle(result.dataset, out)
    truth = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in result.truth.items()}
    (out / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    return out
