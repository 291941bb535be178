"""Random problem instances shared by the test modules."""

import numpy as np

from gpddf.kernel import Dataset, Hyperparams
from gpddf.summaries import SupportSet


def random_hyper(rng, dim=2, lo=2.0, hi=10.0, mean=None):
    return Hyperparams(float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.01, 0.2)),
                       tuple(rng.uniform(lo, hi, dim)),
                       float(rng.normal()) if mean is None else mean)


def random_dataset(rng, n, lo=0.0, hi=50.0, dim=2):
    return Dataset(rng.uniform(lo, hi, (n, dim)), rng.normal(size=n))


def random_support(rng, m, lo=0.0, hi=50.0, dim=2, sid="S"):
    return SupportSet(sid, rng.uniform(lo, hi, (m, dim)))


def random_instance(rng, max_agents=4, max_obs=30, min_support=5, max_support=18):
    """(h, blocks, support, queries) with N <= 4, |D_i| <= 30, |S| <= 18 on [0, 50]^2."""
    h = random_hyper(rng)
    n_agents = int(rng.integers(1, max_agents + 1))
    blocks = [random_dataset(rng, int(rng.integers(0, max_obs + 1))) for _ in range(n_agents)]
    s = random_support(rng, int(rng.integers(min_support, max_support + 1)))
    X = rng.uniform(0, 50, (5, 2))
    return h, blocks, s, X


def textbook_gp(X, D, y, h):
    """Exact GP posterior with explicit inverses (deliberately naive)."""
    ell = np.asarray(h.length_scales)

    def k(A, B):
        d = ((A[:, None, :] - B[None, :, :]) / ell) ** 2
        return h.signal_var * np.exp(-0.5 * d.sum(-1))

    Kinv = np.linalg.inv(k(D, D) + h.noise_var * np.eye(len(D)))
    Kxd = k(X, D)
    mu = h.prior_mean + Kxd @ Kinv @ (y - h.prior_mean)
    var = h.signal_var + h.noise_var - np.einsum("ij,jk,ik->i", Kxd, Kinv, Kxd)
    return mu, var
