"""Hyperparameter learning by maximising summed per-area log-marginal likelihoods.

Within one area the data blocks are conditionally independent given the
area's support set, so the training covariance is

    Xi = Q + blockdiag(K - Q) + noise_var * I,    Q = K_DS K_SS^-1 K_SD

with ``K`` noise-free. All areas share one set of hyperparameters, optimised
over log-parameters ``(log signal_var, log noise_var, log l_1, ..., log l_d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .kernel import (SS_JITTER, SS_JITTER_MAX, Dataset, Hyperparams, NumericError,
                     chol_solve, cholesky_jitter, cov_matrix)
from .summaries import SupportSet

__all__ = [
    "LogMarginalWorkspace",
    "OptimizerConfig",
    "HyperLearnError",
    "log_marginal_area",
    "log_marginal_workspace",
    "objective",
    "objective_gradient",
    "fd_gradient",
    "to_theta",
    "from_theta",
    "learn_hyperparams",
]

_LOG2PI = math.log(2.0 * math.pi)


class HyperLearnError(NumericError):
    """The objective became non-finite; ``last`` holds the last valid iterate."""

    def __init__(self, msg, last: Hyperparams):
        super().__init__(msg)
        self.last = last


@dataclass(frozen=True)
class LogMarginalWorkspace:
    xi: np.ndarray
    log_det: float
    quad_form: float

    @property
    def value(self) -> float:
        n = self.xi.shape[0]
        return -0.5 * (self.log_det + self.quad_form + n * _LOG2PI)


def _stack(blocks):
    blocks = [b for b in blocks if len(b)]
    if not blocks:
        return None, None, []
    D = np.vstack([b.locations for b in blocks])
    y = np.concatenate([b.values for b in blocks])
    return D, y, [len(b) for b in blocks]


def _xi(D, sizes, S, h):
    m = S.shape[0]
    Kss = cov_matrix(S, S, h) + SS_JITTER * h.signal_var * np.eye(m)
    Ksd = cov_matrix(S, D, h)
    Q = Ksd.T @ np.linalg.solve(Kss, Ksd)
    Q = 0.5 * (Q + Q.T)
    Kdd = cov_matrix(D, D, h)
    xi = Q.copy()
    start = 0
    for n in sizes:
        sl = slice(start, start + n)
        xi[sl, sl] = Kdd[sl, sl]
        start += n
    xi[np.diag_indices_from(xi)] += h.noise_var
    return xi


def log_marginal_workspace(data_blocks: Sequence[Dataset], s: SupportSet,
                           h: Hyperparams) -> LogMarginalWorkspace:
    D, y, sizes = _stack(data_blocks)
    if D is None:
        raise ValueError("log_marginal_area needs at least one observation")
    xi = _xi(D, sizes, s.points, h)
    L, _ = cholesky_jitter(xi, 0.0, SS_JITTER_MAX, scale=h.signal_var, what="Xi")
    r = y - h.prior_mean
    a = chol_solve(L, r)
    return LogMarginalWorkspace(xi, 2.0 * float(np.log(np.diag(L)).sum()), float(r @ a))


def log_marginal_area(data_blocks: Sequence[Dataset], s: SupportSet, h: Hyperparams) -> float:
    """``log p(y_D | S)`` for one area whose data is split into ``data_blocks``."""
    return log_marginal_workspace(data_blocks, s, h).value


# -- parameterisation -----------------------------------------------------

def to_theta(h: Hyperparams) -> np.ndarray:
    return np.log(np.r_[h.signal_var, h.noise_var, h.length_scales])


def from_theta(theta, prior_mean=0.0) -> Hyperparams:
    v = np.exp(np.asarray(theta, dtype=float))
    return Hyperparams(v[0], v[1], tuple(v[2:]), prior_mean)


Areas = Sequence[Tuple[Sequence[Dataset], SupportSet]]


def objective(areas: Areas, h: Hyperparams) -> float:
    """Sum of per-area log-marginal likelihoods, accumulated in area order."""
    return float(sum(log_marginal_area(blocks, s, h) for blocks, s in areas))


def _area_gradient(blocks, s, h):
    D, y, sizes = _stack(blocks)
    S = s.points
    m = S.shape[0]
    ell = np.asarray(h.length_scales)
    sv = h.signal_var
    Kss = cov_matrix(S, S, h) + SS_JITTER * sv * np.eye(m)
    Ksd = cov_matrix(S, D, h)
    Kdd = cov_matrix(D, D, h)
    B = np.linalg.solve(Kss, Ksd)                       # K_SS^-1 K_SD
    Q = Ksd.T @ B
    xi = Q.copy()
    mask = np.zeros_like(Q, dtype=bool)
    start = 0
    for n in sizes:
        sl = slice(start, start + n)
        mask[sl, sl] = True
        start += n
    xi[mask] = Kdd[mask]
    xi = 0.5 * (xi + xi.T)
    xi[np.diag_indices_from(xi)] += h.noise_var
    L, _ = cholesky_jitter(xi, 0.0, SS_JITTER_MAX, scale=sv, what="Xi")
    alpha = chol_solve(L, y - h.prior_mean)
    W = np.outer(alpha, alpha) - chol_solve(L, np.eye(len(y)))

    def dxi(dKss, dKsd, dKdd):
        dQ = dKsd.T @ B + B.T @ dKsd - B.T @ dKss @ B
        out = dQ.copy()
        out[mask] = dKdd[mask]
        return out

    g = np.empty(2 + ell.size)
    # every kernel block (and the relative jitter) scales with signal_var
    g[0] = 0.5 * float((W * np.where(mask, Kdd, Q)).sum())
    g[1] = 0.5 * h.noise_var * float(np.trace(W))
    Kss0 = Kss - SS_JITTER * sv * np.eye(m)
    for k in range(ell.size):
        dss = (S[:, None, k] - S[None, :, k]) ** 2 / ell[k] ** 2
        dsd = (S[:, None, k] - D[None, :, k]) ** 2 / ell[k] ** 2
        ddd = (D[:, None, k] - D[None, :, k]) ** 2 / ell[k] ** 2
        g[2 + k] = 0.5 * float((W * dxi(Kss0 * dss, Ksd * dsd, Kdd * ddd)).sum())
    return g


def objective_gradient(areas: Areas, h: Hyperparams) -> np.ndarray:
    """Analytic gradient of :func:`objective` with respect to log-parameters."""
    return np.sum([_area_gradient(b, s, h) for b, s in areas], axis=0)


def fd_gradient(areas: Areas, h: Hyperparams, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of :func:`objective` in log-parameter space."""
    theta = to_theta(h)
    g = np.empty_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = step
        fp = objective(areas, from_theta(theta + e, h.prior_mean))
        fm = objective(areas, from_theta(theta - e, h.prior_mean))
        g[k] = (fp - fm) / (2.0 * step)
    return g


@dataclass(frozen=True)
class OptimizerConfig:
    max_iter: int = 500
    tol: float = 1e-5
    fd_step: float = 1e-5
    max_backtracks: int = 30
    armijo: float = 1e-4
    gradient: str = "fd"                 # "fd" or "analytic"
    signal_var_bounds: Tuple[float, float] = (1e-6, 1e4)
    noise_var_bounds: Tuple[float, float] = (1e-6, 1e2)
    length_scale_bounds: Tuple[float, float] = (1e-3, 1e3)   # times domain width


@dataclass(frozen=True)
class LearnResult:
    h: Hyperparams
    value: float
    initial_value: float
    iterations: int
    converged: bool


def _bounds(areas, h, cfg):
    pts = np.vstack([b.locations for blocks, _ in areas for b in blocks if len(b)])
    width = np.ptp(pts, axis=0)
    width = np.where(width > 0, width, 1.0)
    lo = np.r_[cfg.signal_var_bounds[0], cfg.noise_var_bounds[0],
               cfg.length_scale_bounds[0] * width]
    hi = np.r_[cfg.signal_var_bounds[1], cfg.noise_var_bounds[1],
               cfg.length_scale_bounds[1] * width]
    return np.log(lo), np.log(hi)


def learn_hyperparams(areas: Areas, init: Hyperparams,
                      cfg: Optional[OptimizerConfig] = None, return_result: bool = False):
    """Projected gradient ascent with Armijo backtracking over log-parameters.

    Stops when the projected gradient's infinity norm drops below ``cfg.tol``,
    when no ascent step can be found, or after ``cfg.max_iter`` iterations.
    The prior mean is held fixed.
    """
    cfg = cfg or OptimizerConfig()
    if cfg.gradient not in ("fd", "analytic"):
        raise ValueError(f"unknown gradient mode {cfg.gradient!r}")
    areas = [(list(b), s) for b, s in areas]
    lo, hi = _bounds(areas, init, cfg)
    mean = init.prior_mean
    theta = np.clip(to_theta(init), lo, hi)
    h = from_theta(theta, mean)

    def f(th):
        try:
            return objective(areas, from_theta(th, mean))
        except NumericError:
            return -np.inf

    def grad(hh):
        if cfg.gradient == "analytic":
            return objective_gradient(areas, hh)
        return fd_gradient(areas, hh, cfg.fd_step)

    val = f(theta)
    if not np.isfinite(val):
        raise HyperLearnError("objective is not finite at the initial hyperparameters", h)
    f0 = val
    t = 1.0
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        g = grad(h)
        if not np.all(np.isfinite(g)):
            raise HyperLearnError(f"non-finite gradient at iteration {it}", h)
        pg = np.clip(theta + g, lo, hi) - theta
        if np.max(np.abs(pg)) < cfg.tol:
            converged = True
            break
        accepted = False
        for _ in range(cfg.max_backtracks + 1):
            cand = np.clip(theta + t * g, lo, hi)
            fc = f(cand)
            if np.isnan(fc):
                raise HyperLearnError(f"objective became NaN at iteration {it}", h)
            if fc >= val + cfg.armijo * float(g @ (cand - theta)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            converged = True
            break
        step = cand - theta
        theta, val = cand, fc
        h = from_theta(theta, mean)
        if np.max(np.abs(step)) < cfg.tol * 1e-3:
            converged = True
            break
        t = min(2.0 * t, 1e6)
    res = LearnResult(h, val, f0, it, converged)
    return res if return_result else h
