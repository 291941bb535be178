"""Local, prior and global summaries of data relative to a support set.

A local summary ``(nu, psi)`` encapsulates an agent's data conditioned on the
support set; a prior summary ``(omega, phi)`` uses the unconditioned data
covariance instead, which is the representation in which switching support
sets is a linear map. Both are constant-size in the data and are related by
the invertible maps :func:`local_to_prior` / :func:`prior_to_local`.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Hashable, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .kernel import (Dataset, Hyperparams, NumericError, SS_JITTER_MAX, as_locations,
                     chol_solve, cholesky_jitter, cov_matrix, support_cov)

__all__ = [
    "SupportSet",
    "LocalSummary",
    "PriorSummary",
    "GlobalSummary",
    "LocalBlocks",
    "build_local_summary",
    "aggregate_global",
    "local_to_prior",
    "prior_to_local",
    "assimilate",
    "zero_local",
    "support_hash",
    "summary_to_bytes",
    "summary_from_bytes",
    "record_size",
]

PSD_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class SupportSet:
    """Ordered support locations for one local area, tagged by ``id``."""

    id: Hashable
    points: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float)
        if P.ndim == 1:
            P = P.reshape(1, -1)
        if P.shape[0] == 0:
            raise ValueError("support set must be nonempty")
        if P.shape[0] > 1:
            diff = P[:, None, :] - P[None, :, :]
            d2 = (diff ** 2).sum(-1)
            np.fill_diagonal(d2, np.inf)
            if (d2 == 0).any():
                raise ValueError(f"support set {self.id!r} has duplicate points")
        object.__setattr__(self, "points", P)

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


def _check_sym(name, M):
    nrm = np.linalg.norm(M)
    if np.linalg.norm(M - M.T) > 1e-10 * max(nrm, 1e-300):
        raise ValueError(f"{name} is not symmetric")


@dataclass(frozen=True, eq=False)
class LocalSummary:
    support_id: Hashable
    nu: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=float).reshape(-1)
        psi = np.asarray(self.psi, dtype=float)
        if psi.shape != (nu.size, nu.size):
            raise ValueError(f"psi shape {psi.shape} does not match nu length {nu.size}")
        _check_sym("psi", psi)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "psi", psi)

    @property
    def size(self):
        return self.nu.size

    def is_zero(self):
        return not self.nu.any() and not self.psi.any()


@dataclass(frozen=True, eq=False)
class PriorSummary:
    support_id: Hashable
    omega: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float).reshape(-1)
        phi = np.asarray(self.phi, dtype=float)
        if phi.shape != (omega.size, omega.size):
            raise ValueError(f"phi shape {phi.shape} does not match omega length {omega.size}")
        _check_sym("phi", phi)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "phi", phi)

    @property
    def size(self):
        return self.omega.size

    def is_zero(self):
        return not self.omega.any() and not self.phi.any()


@dataclass(frozen=True, eq=False)
class GlobalSummary:
    support_id: Hashable
    nu_dot: np.ndarray
    psi_dot: np.ndarray


@dataclass(frozen=True, eq=False)
class LocalBlocks:
    """Local-data terms for extra locations B.

    ``nu_b`` is ``nu_{B|D}``, ``psi_bs`` is ``Psi_{BS|D}`` and ``psi_bb_diag``
    the diagonal of ``Psi_{BB|D}``.
    """

    nu_b: np.ndarray
    psi_bs: np.ndarray
    psi_bb_diag: np.ndarray


def _sym(M):
    return 0.5 * (M + M.T)


def zero_local(s: SupportSet) -> LocalSummary:
    n = len(s)
    return LocalSummary(s.id, np.zeros(n), np.zeros((n, n)))


def _check_overlap(D, S, h):
    if h.noise_var > 0 or len(D) == 0:
        return
    diff = D[:, None, :] - S[None, :, :]
    if ((diff ** 2).sum(-1) == 0).any():
        raise ValueError(
            "an observed location coincides with a support point; this requires noise_var > 0")


def build_local_summary(data: Dataset, s: SupportSet, h: Hyperparams,
                        extra_blocks=None):
    """Summarise ``data`` against support set ``s``.

    Returns a :class:`LocalSummary`, or ``(LocalSummary, LocalBlocks)`` when
    ``extra_blocks`` (locations B) is given.
    """
    n = len(s)
    B = None if extra_blocks is None else as_locations(extra_blocks, h.dim)
    if len(data) == 0:
        summ = zero_local(s)
        if B is None:
            return summ
        m = B.shape[0]
        return summ, LocalBlocks(np.zeros(m), np.zeros((m, n)), np.zeros(m))

    D = data.locations
    _check_overlap(D, s.points, h)
    Kss, Lss = support_cov(s.points, h)
    Ksd = cov_matrix(s.points, D, h)
    Kdd = cov_matrix(D, D, h, "diagonal")
    W = sla.solve_triangular(Lss, Ksd, lower=True, check_finite=False)
    Kdd_s = _sym(Kdd - W.T @ W)
    L, _ = cholesky_jitter(Kdd_s, 0.0, SS_JITTER_MAX, scale=h.signal_var,
                           what="Sigma_DD|S")
    r = data.values - h.prior_mean
    A = sla.solve_triangular(L, Ksd.T, lower=True, check_finite=False)  # L^-1 Sigma_DS
    a = sla.solve_triangular(L, r, lower=True, check_finite=False)
    nu = A.T @ a
    psi = _sym(A.T @ A)
    summ = LocalSummary(s.id, nu, psi)
    if B is None:
        return summ
    Kbd = cov_matrix(B, D, h)
    Ab = sla.solve_triangular(L, Kbd.T, lower=True, check_finite=False)
    blocks = LocalBlocks(Ab.T @ a, Ab.T @ A, (Ab * Ab).sum(0))
    return summ, blocks


def _check_support(summ, s):
    if summ.support_id != s.id:
        raise ValueError(
            f"summary expressed in support {summ.support_id!r}, expected {s.id!r}")
    if summ.size != len(s):
        raise ValueError(f"summary size {summ.size} != support size {len(s)}")


def aggregate_global(locals_: Sequence[LocalSummary], s: SupportSet,
                     h: Hyperparams) -> GlobalSummary:
    """Sum local summaries and add the (jittered) support covariance."""
    Kss, _ = support_cov(s.points, h)
    nu = np.zeros(len(s))
    psi = np.zeros((len(s), len(s)))
    for l in locals_:
        _check_support(l, s)
        nu = nu + l.nu
        psi = psi + l.psi
    return GlobalSummary(s.id, nu, _sym(psi + Kss))


def assimilate(a: LocalSummary, b: LocalSummary) -> LocalSummary:
    """Combine two local summaries on the same support by summation."""
    if a.support_id != b.support_id:
        raise ValueError(f"cannot assimilate summaries on {a.support_id!r} and {b.support_id!r}")
    if a.size != b.size:
        raise ValueError("summary sizes differ")
    return LocalSummary(a.support_id, a.nu + b.nu, _sym(a.psi + b.psi))


def local_to_prior(l: LocalSummary, s: SupportSet, h: Hyperparams) -> PriorSummary:
    """Convert a local summary to the prior summary on the same support.

    Uses ``phi = K (K + psi)^-1 psi`` and ``omega = K (K + psi)^-1 nu`` with
    ``K`` the support covariance, which never inverts a rank-deficient psi.
    """
    _check_support(l, s)
    if l.is_zero():
        return PriorSummary(s.id, np.zeros(l.size), np.zeros((l.size, l.size)))
    Kss, _ = support_cov(s.points, h)
    M = _sym(Kss + l.psi)
    L, _ = cholesky_jitter(M, 0.0, SS_JITTER_MAX, scale=h.signal_var,
                           what="Sigma_SS + Psi")
    X = chol_solve(L, np.column_stack([l.psi, l.nu]))
    phi = _sym(Kss @ X[:, :-1])
    omega = Kss @ X[:, -1]
    return PriorSummary(s.id, omega, phi)


def prior_to_local(p: PriorSummary, s: SupportSet, h: Hyperparams) -> LocalSummary:
    """Convert a prior summary back to the local summary on the same support.

    ``psi = phi (K - phi)^-1 K`` and ``nu = K (K - phi)^-1 omega``; both are
    linear solves against ``K - phi``, which must be positive definite.
    """
    if p.support_id != s.id:
        raise ValueError(f"summary expressed in support {p.support_id!r}, expected {s.id!r}")
    if p.is_zero():
        return zero_local(s)
    Kss, _ = support_cov(s.points, h)
    C = _sym(Kss - p.phi)
    try:
        L, _ = cholesky_jitter(C, 0.0, SS_JITTER_MAX, scale=h.signal_var,
                               what="Sigma_SS - Phi")
    except NumericError as exc:
        raise NumericError(
            f"prior summary on {s.id!r} is inconsistent or over-informative: {exc}") from exc
    X = chol_solve(L, np.column_stack([Kss, p.omega]))
    psi = _sym(p.phi @ X[:, :-1])
    nu = Kss @ X[:, -1]
    return LocalSummary(s.id, nu, psi)


# -- binary records -------------------------------------------------------

_KIND = {LocalSummary: 1.0, PriorSummary: 2.0, GlobalSummary: 3.0}


def support_hash(support_id) -> int:
    """48-bit hash of a support id, exactly representable as a float64."""
    digest = hashlib.blake2b(repr(support_id).encode(), digest_size=6).digest()
    return int.from_bytes(digest, "little")


def record_size(n: int) -> int:
    """Bytes in the binary record of a summary on ``n`` support points."""
    return 8 * (3 + n + n * n)


def summary_to_bytes(summ) -> bytes:
    """Little-endian float64 record: kind, support hash, n, vector, matrix."""
    kind = _KIND[type(summ)]
    if isinstance(summ, LocalSummary):
        vec, mat = summ.nu, summ.psi
    elif isinstance(summ, PriorSummary):
        vec, mat = summ.omega, summ.phi
    else:
        vec, mat = summ.nu_dot, summ.psi_dot
    n = vec.size
    head = np.array([kind, float(support_hash(summ.support_id)), float(n)])
    body = np.concatenate([head, vec, np.ascontiguousarray(mat).reshape(-1)])
    return body.astype("<f8").tobytes()


def summary_from_bytes(buf: bytes, support_ids: Optional[Sequence] = None, offset: int = 0):
    """Decode one record starting at ``offset``.

    The support id is resolved against ``support_ids`` by hash; when it is
    not found (or no candidates are given) the integer hash is used as id.
    Returns ``(summary, next_offset)``.
    """
    head = np.frombuffer(buf, dtype="<f8", count=3, offset=offset)
    kind, hsh, n = int(head[0]), int(head[1]), int(head[2])
    count = n + n * n
    body = np.frombuffer(buf, dtype="<f8", count=count, offset=offset + 24).astype(float)
    sid = hsh
    for cand in support_ids or ():
        if support_hash(cand) == hsh:
            sid = cand
            break
    vec, mat = body[:n].copy(), body[n:].reshape(n, n).copy()
    cls = {1: LocalSummary, 2: PriorSummary, 3: GlobalSummary}.get(kind)
    if cls is None:
        raise ValueError(f"unknown summary record kind {kind}")
    return cls(sid, vec, mat), offset + record_size(n)
