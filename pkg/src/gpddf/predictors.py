"""Decentralized predictors and centralized reference approximations.

``gpddf_predict`` / ``gpddfplus_predict`` work from summaries only (plus the
agent's own raw data for the latter). ``pitc_predict`` / ``pic_predict`` are
written directly from the centralized training-conditional formulas in data
space and share nothing with the summary code beyond :func:`cov_matrix`, so
they serve as independent references.
"""

from __future__ import annotations

import csv
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .kernel import (Dataset, Hyperparams, PredictiveDistribution, as_locations, chol_solve,
                     cholesky_jitter, cov_matrix, full_gp_predict_many, support_cov)
from .summaries import (GlobalSummary, LocalSummary, SupportSet, build_local_summary)

__all__ = [
    "gpddf_predict",
    "gpddf_predict_many",
    "gpddfplus_predict",
    "gpddfplus_predict_many",
    "pitc_predict",
    "pitc_predict_many",
    "pic_predict",
    "pic_predict_many",
    "local_gp_predict",
    "local_gp_predict_many",
    "write_predictions_csv",
]

# Reference implementations regularise Sigma_SS with the same relative jitter.
_ORACLE_SS_JITTER = 1e-12


def _clamp(var, h):
    return np.clip(var, 0.0, h.prior_var)


def gpddf_predict_many(g: GlobalSummary, X, s: SupportSet, h: Hyperparams):
    """GP-DDF means and variances at the rows of ``X`` from a global summary."""
    if g.support_id != s.id:
        raise ValueError(f"global summary on {g.support_id!r}, expected {s.id!r}")
    X = as_locations(X, h.dim)
    _, Lss = support_cov(s.points, h)
    Lg, _ = cholesky_jitter(g.psi_dot, 0.0, scale=h.signal_var, what="global Psi")
    Kxs = cov_matrix(X, s.points, h)
    mu = h.prior_mean + Kxs @ chol_solve(Lg, g.nu_dot)
    A = sla.solve_triangular(Lss, Kxs.T, lower=True, check_finite=False)
    B = sla.solve_triangular(Lg, Kxs.T, lower=True, check_finite=False)
    var = h.prior_var - (A * A).sum(0) + (B * B).sum(0)
    return mu, _clamp(var, h)


def gpddf_predict(g: GlobalSummary, x, s: SupportSet, h: Hyperparams) -> PredictiveDistribution:
    mu, var = gpddf_predict_many(g, np.reshape(x, (1, -1)), s, h)
    return PredictiveDistribution(mu[0], var[0])


def gpddfplus_predict_many(g: GlobalSummary, own_local: LocalSummary, own_data: Dataset,
                           X, s: SupportSet, h: Hyperparams):
    """GP-DDF+ means and variances: global summary plus the agent's own raw data.

    ``g`` must already include ``own_local``, and ``own_local`` must be the
    summary of exactly ``own_data``; this pairing cannot be checked here.
    """
    if g.support_id != s.id or own_local.support_id != s.id:
        raise ValueError("global/own summaries must be expressed in the prediction support")
    X = as_locations(X, h.dim)
    if len(own_data) == 0:
        return gpddf_predict_many(g, X, s, h)
    _, blocks = build_local_summary(own_data, s, h, extra_blocks=X)
    _, Lss = support_cov(s.points, h)
    Lg, _ = cholesky_jitter(g.psi_dot, 0.0, scale=h.signal_var, what="global Psi")
    Kxs = cov_matrix(X, s.points, h)
    KxsKinv = chol_solve(Lss, Kxs.T).T                       # Sigma_xS Sigma_SS^-1
    gamma = Kxs + KxsKinv @ own_local.psi - blocks.psi_bs   # m x |S|
    mu = (h.prior_mean + gamma @ chol_solve(Lg, g.nu_dot)
          - KxsKinv @ own_local.nu + blocks.nu_b)
    G = sla.solve_triangular(Lg, gamma.T, lower=True, check_finite=False)
    term = ((gamma * KxsKinv).sum(1)
            - (KxsKinv * blocks.psi_bs).sum(1)
            - (G * G).sum(0))
    var = h.prior_var - term - blocks.psi_bb_diag
    return mu, _clamp(var, h)


def gpddfplus_predict(g: GlobalSummary, own_local: LocalSummary, own_data: Dataset, x,
                      s: SupportSet, h: Hyperparams) -> PredictiveDistribution:
    mu, var = gpddfplus_predict_many(g, own_local, own_data, np.reshape(x, (1, -1)), s, h)
    return PredictiveDistribution(mu[0], var[0])


# -- centralized references ------------------------------------------------

def _stack(blocks: Sequence[Dataset], dim):
    blocks = [b for b in blocks]
    if not blocks or sum(len(b) for b in blocks) == 0:
        return np.zeros((0, dim)), np.zeros(0), []
    D = np.vstack([b.locations for b in blocks])
    y = np.concatenate([b.values for b in blocks])
    sizes = [len(b) for b in blocks]
    return D, y, sizes


def _pitc_train(D, sizes, S, h):
    """Nystrom cross term Q_DD, the PITC training covariance and K_SS^-1."""
    Kss = cov_matrix(S, S, h) + _ORACLE_SS_JITTER * h.signal_var * np.eye(len(S))
    Ksd = cov_matrix(S, D, h)
    Kss_inv_Ksd = np.linalg.solve(Kss, Ksd)
    Q = Ksd.T @ Kss_inv_Ksd
    Kdd = cov_matrix(D, D, h, "diagonal")
    C = Q.copy()
    start = 0
    for n in sizes:
        sl = slice(start, start + n)
        C[sl, sl] = Kdd[sl, sl]   # Q + blockdiag(K - Q)
        start += n
    return Kss, Ksd, C


def pitc_predict_many(blocks: Sequence[Dataset], s: SupportSet, X, h: Hyperparams):
    """PITC posterior at the rows of ``X``: blocks are independent given the support."""
    X = as_locations(X, h.dim)
    D, y, sizes = _stack(blocks, h.dim)
    mu = np.full(X.shape[0], h.prior_mean)
    var = np.full(X.shape[0], h.prior_var)
    if D.shape[0] == 0:
        return mu, var
    S = s.points
    Kss, Ksd, C = _pitc_train(D, sizes, S, h)
    Kxs = cov_matrix(X, S, h)
    Qxd = Kxs @ np.linalg.solve(Kss, Ksd)
    C = 0.5 * (C + C.T)
    alpha = np.linalg.solve(C, y - h.prior_mean)
    mu = mu + Qxd @ alpha
    var = var - np.einsum("ij,ji->i", Qxd, np.linalg.solve(C, Qxd.T))
    return mu, _clamp(var, h)


def pitc_predict(blocks: Sequence[Dataset], s: SupportSet, x, h: Hyperparams) -> PredictiveDistribution:
    mu, var = pitc_predict_many(blocks, s, np.reshape(x, (1, -1)), h)
    return PredictiveDistribution(mu[0], var[0])


def pic_predict_many(blocks: Sequence[Dataset], s: SupportSet, X, query_block: int,
                     h: Hyperparams):
    """PIC posterior: the queries join block ``query_block`` with exact covariance."""
    blocks = list(blocks)
    if not 0 <= query_block < len(blocks):
        raise IndexError(f"query_block {query_block} out of range for {len(blocks)} blocks")
    X = as_locations(X, h.dim)
    D, y, sizes = _stack(blocks, h.dim)
    mu = np.full(X.shape[0], h.prior_mean)
    var = np.full(X.shape[0], h.prior_var)
    if D.shape[0] == 0:
        return mu, var
    S = s.points
    Kss, Ksd, C = _pitc_train(D, sizes, S, h)
    Kxs = cov_matrix(X, S, h)
    Kxd = Kxs @ np.linalg.solve(Kss, Ksd)
    start = sum(sizes[:query_block])
    sl = slice(start, start + sizes[query_block])
    Kxd[:, sl] = cov_matrix(X, D[sl], h)
    C = 0.5 * (C + C.T)
    mu = mu + Kxd @ np.linalg.solve(C, y - h.prior_mean)
    var = var - np.einsum("ij,ji->i", Kxd, np.linalg.solve(C, Kxd.T))
    return mu, _clamp(var, h)


def pic_predict(blocks: Sequence[Dataset], s: SupportSet, x, query_block: int,
                h: Hyperparams) -> PredictiveDistribution:
    mu, var = pic_predict_many(blocks, s, np.reshape(x, (1, -1)), query_block, h)
    return PredictiveDistribution(mu[0], var[0])


def local_gp_predict_many(area_data: Dataset, X, h: Hyperparams):
    """Exact GP using only the data of the queries' own area; the prior if it has none."""
    if len(area_data) == 0:
        n = as_locations(X, h.dim).shape[0]
        return np.full(n, h.prior_mean), np.full(n, h.prior_var)
    return full_gp_predict_many(X, area_data, h)


def local_gp_predict(area_data: Dataset, x, h: Hyperparams) -> PredictiveDistribution:
    mu, var = local_gp_predict_many(area_data, np.reshape(x, (1, -1)), h)
    return PredictiveDistribution(mu[0], var[0])


def write_predictions_csv(path, X, mean, variance):
    """Stream predictions as rows of (coords..., mean, variance, log_variance)."""
    X = np.asarray(X, dtype=float)
    d = X.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k + 1}" for k in range(d)] + ["mean", "variance", "log_variance"])
        for row, m, v in zip(X, mean, variance):
            logv = np.log(v) if v > 0 else -np.inf
            w.writerow([repr(float(c)) for c in row] + [repr(float(m)), repr(float(v)),
                                                        repr(float(logv))])
