"""Squared-exponential covariance, SPD solves and the exact GP posterior.

Locations are plain numpy arrays: a single location has shape ``(d,)`` and a
list of locations has shape ``(n, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

__all__ = [
    "NumericError",
    "Hyperparams",
    "Dataset",
    "PredictiveDistribution",
    "se_cov",
    "cov_matrix",
    "support_cov",
    "cholesky_jitter",
    "chol_solve",
    "full_gp_predict",
    "full_gp_predict_many",
    "as_locations",
]

# Sigma_SS is built noise-free and stabilised with jitter relative to signal_var.
SS_JITTER = 1e-12
SS_JITTER_MAX = 1e-4
VARIANCE_TOL = 1e-9


class NumericError(ArithmeticError):
    """A matrix that should be positive definite could not be factorised."""


@dataclass(frozen=True)
class Hyperparams:
    """Kernel and mean hyperparameters of the squared-exponential GP."""

    signal_var: float
    noise_var: float
    length_scales: tuple
    prior_mean: float = 0.0

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.length_scales))
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "signal_var", float(self.signal_var))
        object.__setattr__(self, "noise_var", float(self.noise_var))
        object.__setattr__(self, "prior_mean", float(self.prior_mean))
        if not self.signal_var > 0:
            raise ValueError(f"signal_var must be > 0, got {self.signal_var}")
        if not self.noise_var >= 0:
            raise ValueError(f"noise_var must be >= 0, got {self.noise_var}")
        if len(ls) == 0 or not all(v > 0 for v in ls):
            raise ValueError(f"length_scales must be positive, got {ls}")

    @property
    def dim(self) -> int:
        return len(self.length_scales)

    @property
    def prior_var(self) -> float:
        """Prior variance of a noisy measurement, sigma_s^2 + sigma_n^2."""
        return self.signal_var + self.noise_var

    def replace(self, **kw) -> "Hyperparams":
        vals = dict(signal_var=self.signal_var, noise_var=self.noise_var,
                    length_scales=self.length_scales, prior_mean=self.prior_mean)
        vals.update(kw)
        return Hyperparams(**vals)


@dataclass(frozen=True)
class Dataset:
    """Observed locations ``(n, d)`` and measurements ``(n,)``."""

    locations: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.locations, dtype=float)
        y = np.asarray(self.values, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(len(y), -1) if len(y) else X.reshape(0, max(X.size, 1))
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} locations but {y.shape[0]} values")
        if np.isnan(y).any():
            raise ValueError("dataset values contain NaN")
        if not np.isfinite(X).all():
            raise ValueError("dataset locations must be finite")
        object.__setattr__(self, "locations", X)
        object.__setattr__(self, "values", y)

    @classmethod
    def empty(cls, dim: int) -> "Dataset":
        return cls(np.zeros((0, dim)), np.zeros(0))

    def __len__(self):
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(np.vstack([self.locations, other.locations]),
                       np.concatenate([self.values, other.values]))

    def subset(self, mask) -> "Dataset":
        return Dataset(self.locations[mask], self.values[mask])


@dataclass(frozen=True)
class PredictiveDistribution:
    mean: float
    variance: float = field(default=0.0)

    def __post_init__(self):
        v = float(self.variance)
        if v < -VARIANCE_TOL:
            raise ValueError(f"negative predictive variance {v}")
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "variance", max(v, 0.0))


def as_locations(A, dim=None) -> np.ndarray:
    """Coerce ``A`` to a float ``(n, d)`` array."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A.reshape(1, -1) if dim is None or A.size == dim else A.reshape(-1, dim)
    if A.ndim != 2:
        raise ValueError(f"locations must be 1-D or 2-D, got shape {A.shape}")
    if dim is not None and A.shape[0] and A.shape[1] != dim:
        raise ValueError(f"location dimension {A.shape[1]} != {dim}")
    if A.shape[0] == 0 and dim is not None:
        A = A.reshape(0, dim)
    return A


def _scaled_sqdist(A, B, h):
    ell = np.asarray(h.length_scales)
    if A.shape[1] != ell.size or B.shape[1] != ell.size:
        raise ValueError(
            f"dimension mismatch: {A.shape[1]}, {B.shape[1]} vs {ell.size} length-scales")
    a = A / ell
    b = B / ell
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d2, 0.0)


def se_cov(x, x2, h: Hyperparams, include_noise: bool = False) -> float:
    """Covariance between two measurements.

    ``include_noise`` marks the two arguments as the same observation, in
    which case the noise variance is added. Coordinate equality alone never
    adds noise.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    x2 = np.asarray(x2, dtype=float).reshape(-1)
    if x.size != h.dim or x2.size != h.dim:
        raise ValueError(f"dimension mismatch: {x.size}, {x2.size} vs {h.dim}")
    r = (x - x2) / np.asarray(h.length_scales)
    k = h.signal_var * np.exp(-0.5 * float(r @ r))
    if include_noise:
        k += h.noise_var
    return k


def cov_matrix(A, B, h: Hyperparams, noise_mode: str = "none") -> np.ndarray:
    """Covariance matrix between location lists ``A`` and ``B``.

    ``noise_mode="diagonal"`` adds the noise variance on the diagonal and is
    only valid when ``A`` and ``B`` are the same ordered list.
    """
    A = as_locations(A, h.dim)
    B = as_locations(B, h.dim)
    K = h.signal_var * np.exp(-0.5 * _scaled_sqdist(A, B, h))
    if noise_mode == "diagonal":
        if A.shape != B.shape or not np.array_equal(A, B):
            raise ValueError("diagonal noise requires A and B to be the same list")
        K[np.diag_indices_from(K)] += h.noise_var
    elif noise_mode != "none":
        raise ValueError(f"unknown noise_mode {noise_mode!r}")
    return K


def cholesky_jitter(A, jitter=0.0, max_jitter=None, scale=1.0, what="matrix"):
    """Lower Cholesky factor of ``A + j*scale*I`` with an escalating jitter.

    Starts at ``jitter`` (may be 0) and multiplies by 10 until ``max_jitter``.
    Returns ``(L, jitter_used)``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0)), jitter
    if max_jitter is None:
        max_jitter = SS_JITTER_MAX
    ladder = [jitter] if jitter > 0 else [0.0]
    j = jitter if jitter > 0 else SS_JITTER
    while j <= max_jitter * (1 + 1e-12):
        if j not in ladder:
            ladder.append(j)
        j *= 10.0
    eye = np.eye(n)
    for j in ladder:
        try:
            L = np.linalg.cholesky(A + j * scale * eye)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            return L, j
    try:
        cond = np.linalg.cond(A)
    except np.linalg.LinAlgError:
        cond = np.inf
    raise NumericError(
        f"{what} ({n}x{n}) not positive definite after jitter up to "
        f"{max_jitter:g}*{scale:g}; condition number {cond:.3e}")


def chol_solve(L, B):
    """Solve ``(L L^T) X = B`` given the lower factor ``L``."""
    if L.shape[0] == 0:
        return np.zeros_like(np.asarray(B, dtype=float))
    return sla.cho_solve((L, True), B, check_finite=False)


def support_cov(points, h: Hyperparams):
    """Noise-free, jittered Sigma_SS and its lower Cholesky factor."""
    K = cov_matrix(points, points, h)
    L, j = cholesky_jitter(K, SS_JITTER, SS_JITTER_MAX, scale=h.signal_var,
                           what="Sigma_SS")
    return K + j * h.signal_var * np.eye(K.shape[0]), L


def full_gp_predict_many(X, data: Dataset, h: Hyperparams):
    """Exact GP posterior means and variances at the rows of ``X``.

    The variance is that of a noisy measurement (prior variance includes
    the noise variance), clamped at zero.
    """
    X = as_locations(X, h.dim)
    mu = np.full(X.shape[0], h.prior_mean)
    var = np.full(X.shape[0], h.prior_var)
    if len(data) == 0:
        return mu, var
    K = cov_matrix(data.locations, data.locations, h, "diagonal")
    L, _ = cholesky_jitter(K, 0.0, SS_JITTER_MAX, scale=h.signal_var,
                           what="Sigma_DD")
    Kxd = cov_matrix(X, data.locations, h)
    alpha = chol_solve(L, data.values - h.prior_mean)
    V = sla.solve_triangular(L, Kxd.T, lower=True, check_finite=False)
    mu = mu + Kxd @ alpha
    var = var - (V * V).sum(0)
    return mu, np.maximum(var, 0.0)


def full_gp_predict(x, data: Dataset, h: Hyperparams) -> PredictiveDistribution:
    """Exact GP predictive distribution at a single location."""
    if len(data) == 0:
        raise ValueError("full_gp_predict requires a nonempty dataset")
    mu, var = full_gp_predict_many(np.reshape(x, (1, -1)), data, h)
    return PredictiveDistribution(mu[0], var[0])
