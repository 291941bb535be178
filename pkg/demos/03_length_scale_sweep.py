"""
RMSE reduction over local PITCs across length-scales
====================================================

A reduced version of the acceptance sweep (3 seeds instead of 10). Positive
numbers mean the method beats PITC run on each area's own data alone.
"""

from gpddf import ExperimentConfig, Hyperparams, SimConfig, summarize_sweep, sweep

cfg = ExperimentConfig(
    sim=SimConfig(n_agents=4, areas_shape=(2, 2), support_size=18, steps=25),
    hyper=Hyperparams(1.0, 0.01, (10.0, 10.0)),
    methods=("gpddf", "gpddf-ass", "full-pitcs", "local-pitcs"))
rows, _ = sweep(cfg, [1, 2, 5, 10, 15, 20], seeds=range(3))

table = {}
for r in summarize_sweep(rows):
    table.setdefault(r["length_scale"], {})[r["method"]] = r["mean_reduction"]

methods = ["gpddf", "gpddf-ass", "full-pitcs"]
print("length-scale " + "".join(f"{m:>12s}" for m in methods))
for ell, red in table.items():
    print(f"{ell:12g} " + "".join(f"{red[m]:+12.4f}" for m in methods))
