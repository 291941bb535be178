"""
Summaries, fusion and support-set transfer
==========================================

Four agents each hold a private batch of noisy measurements. They compress
their data into fixed-size summaries over a shared support set, add the
summaries up, and predict. The result is compared against a centralized
PITC computed from the raw data.
"""

import numpy as np

from gpddf import (Dataset, Hyperparams, SupportSet, aggregate_global, build_local_summary,
                   gpddf_predict_many, pitc_predict_many, transfer_local)

rng = np.random.default_rng(0)
h = Hyperparams(signal_var=1.0, noise_var=0.01, length_scales=(8.0, 8.0))


def truth(X):
    return np.sin(X[:, 0] / 6.0) * np.cos(X[:, 1] / 9.0)


# %% Each agent measures a random patch of [0, 50]^2.
blocks = []
for _ in range(4):
    X = rng.uniform(0, 50, (25, 2))
    blocks.append(Dataset(X, truth(X) + 0.1 * rng.standard_normal(25)))

# %% Summaries on a 6 x 3 support grid; their size does not depend on the data.
g = np.linspace(4, 46, 6), np.linspace(8, 42, 3)
support = SupportSet("common", np.array([[a, b] for b in g[1] for a in g[0]]))
local = [build_local_summary(b, support, h) for b in blocks]
print("summary shapes:", local[0].nu.shape, local[0].psi.shape)

glob = aggregate_global(local, support, h)
Xq = rng.uniform(0, 50, (200, 2))
mu, var = gpddf_predict_many(glob, Xq, support, h)
mu_ref, var_ref = pitc_predict_many(blocks, support, Xq, h)
print("max |fused - PITC| mean: %.2e  variance: %.2e"
      % (np.abs(mu - mu_ref).max(), np.abs(var - var_ref).max()))
print("RMSE vs truth: %.4f" % np.sqrt(np.mean((mu - truth(Xq)) ** 2)))

# %% Re-expressing the summaries on a shifted support set.
# The transferred summaries approximate ones built on the new support directly.
shifted = SupportSet("shifted", support.points + [3.0, 2.0])
moved = [transfer_local(l, support, shifted, h) for l in local]
mu2, _ = gpddf_predict_many(aggregate_global(moved, shifted, h), Xq, shifted, h)
print("RMSE after transfer to a shifted support: %.4f"
      % np.sqrt(np.mean((mu2 - truth(Xq)) ** 2)))

direct = [build_local_summary(b, shifted, h) for b in blocks]
mu3, _ = gpddf_predict_many(aggregate_global(direct, shifted, h), Xq, shifted, h)
print("RMSE when built on the shifted support directly: %.4f"
      % np.sqrt(np.mean((mu3 - truth(Xq)) ** 2)))
