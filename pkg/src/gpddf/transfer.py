"""Moving summaries between support sets and bounding the resulting loss."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, List

import numpy as np

from .kernel import Hyperparams, as_locations, chol_solve, cov_matrix, support_cov
from .summaries import (LocalSummary, PriorSummary, SupportSet, local_to_prior,
                        prior_to_local)

__all__ = [
    "ClusterAssignment",
    "LossBoundReport",
    "transfer_prior",
    "transfer_local",
    "cluster_assign",
    "loss_bound",
    "write_bound_csv",
]


def _projection(s_old: SupportSet, s_new: SupportSet, h: Hyperparams):
    """``Sigma_S'S Sigma_SS^-1`` as an ``|S'| x |S|`` matrix (exactly I when S' = S)."""
    if s_new.points.shape == s_old.points.shape and np.array_equal(s_new.points, s_old.points):
        return np.eye(len(s_old))
    _, L = support_cov(s_old.points, h)
    Kns = cov_matrix(s_new.points, s_old.points, h)
    return chol_solve(L, Kns.T).T


def transfer_prior(p: PriorSummary, s_old: SupportSet, s_new: SupportSet,
                   h: Hyperparams) -> PriorSummary:
    """Re-express a prior summary on ``s_new``.

    Exact when the new support and the data are conditionally independent
    given the old support; otherwise a low-rank approximation.
    """
    if p.support_id != s_old.id:
        raise ValueError(f"prior summary on {p.support_id!r}, expected {s_old.id!r}")
    n = len(s_new)
    if p.is_zero():
        return PriorSummary(s_new.id, np.zeros(n), np.zeros((n, n)))
    P = _projection(s_old, s_new, h)
    omega = P @ p.omega
    phi = P @ p.phi @ P.T
    return PriorSummary(s_new.id, omega, 0.5 * (phi + phi.T))


def transfer_local(l: LocalSummary, s_old: SupportSet, s_new: SupportSet,
                   h: Hyperparams) -> LocalSummary:
    """Local summary on ``s_old`` -> prior -> transferred prior -> local on ``s_new``."""
    if l.support_id != s_old.id:
        raise ValueError(f"local summary on {l.support_id!r}, expected {s_old.id!r}")
    p = local_to_prior(l, s_old, h)
    return prior_to_local(transfer_prior(p, s_old, s_new, h), s_new, h)


@dataclass(frozen=True)
class ClusterAssignment:
    """Nearest support point (in length-scale units) for each input point."""

    index: np.ndarray        # support index c(x) per point
    sqdist: np.ndarray       # ||Lambda^-1 (x - c(x))||^2 per point
    members: tuple           # per support point, indices of assigned points

    def max_cluster(self) -> int:
        return max((len(m) for m in self.members), default=0)


def cluster_assign(points, s: SupportSet, h: Hyperparams) -> ClusterAssignment:
    """Assign each point to its closest support point; ties go to the lower index."""
    X = as_locations(points, h.dim)
    ell = np.asarray(h.length_scales)
    if X.shape[0] == 0:
        return ClusterAssignment(np.zeros(0, int), np.zeros(0),
                                 tuple(np.zeros(0, int) for _ in range(len(s))))
    diff = (X[:, None, :] - s.points[None, :, :]) / ell
    d2 = (diff ** 2).sum(-1)
    idx = np.argmin(d2, axis=1)  # first minimum == lowest index
    sq = d2[np.arange(X.shape[0]), idx]
    members = tuple(np.flatnonzero(idx == k) for k in range(len(s)))
    return ClusterAssignment(idx, sq, members)


@dataclass(frozen=True)
class LossBoundReport:
    actual_loss: float
    bound: float
    T: int
    T_prime: int
    eps_s_prime: float
    eps_d: float
    sigma_ss_inv_fnorm: float


def loss_bound(s_old: SupportSet, s_new: SupportSet, data_locs,
               h: Hyperparams) -> LossBoundReport:
    """Frobenius loss of the low-rank cross-covariance approximation and its bound.

    All covariances are noise-free; the support covariance carries the same
    jitter as every other use of ``Sigma_SS``.
    """
    D = as_locations(data_locs, h.dim)
    Kss, L = support_cov(s_old.points, h)
    Knd = cov_matrix(s_new.points, D, h)
    Kns = cov_matrix(s_new.points, s_old.points, h)
    Ksd = cov_matrix(s_old.points, D, h)
    resid = Knd - Kns @ chol_solve(L, Ksd)
    actual = float(np.linalg.norm(resid))

    Kinv = chol_solve(L, np.eye(len(s_old)))
    kinv_f = float(np.linalg.norm(Kinv))

    cs = cluster_assign(s_new.points, s_old, h)
    cd = cluster_assign(D, s_old, h)
    eps_s = float(cs.sqdist.mean()) if cs.sqdist.size else 0.0
    eps_d = float(cd.sqdist.mean()) if cd.sqdist.size else 0.0
    T, Tp = cd.max_cluster(), cs.max_cluster()
    m = len(s_old)
    sv = h.signal_var
    inner = (math.sqrt(eps_s) + math.sqrt(eps_s + eps_d) + math.sqrt(eps_d)
             + sv * kinv_f * m * math.sqrt(3.0 * eps_s * eps_d / math.e))
    bound = math.sqrt(3.0 / math.e) * sv * m * T * Tp * inner
    return LossBoundReport(actual, bound, T, Tp, eps_s, eps_d, kinv_f)


def write_bound_csv(path, reports: Iterable[LossBoundReport], extra: List[dict] = None):
    """Write one row per trial with every report field (plus optional extra columns)."""
    reports = list(reports)
    names = [f.name for f in fields(LossBoundReport)]
    extra_names = list(extra[0].keys()) if extra else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial"] + extra_names + names)
        for i, r in enumerate(reports):
            row = asdict(r)
            ex = [extra[i][k] for k in extra_names] if extra else []
            w.writerow([i] + ex + [repr(row[k]) if isinstance(row[k], float) else row[k]
                                   for k in names])
