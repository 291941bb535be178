"""
Lazy versus eager transfer on a patrolling fleet
================================================

Four agents patrol a 2 x 2 grid of areas twice. In eager mode every move
re-expresses the agent's summary on the new area's support, so loss piles
up hop after hop. In lazy mode summaries stay on the support where the data
was gathered (handed over or backed up) and are transferred once, when a
prediction is requested.
"""

from gpddf import ExperimentConfig, Hyperparams, SimConfig, generate_gp_field, run_experiment
from gpddf.fleet import memory_accounting

h = Hyperparams(1.0, 0.01, (10.0, 10.0))
field = generate_gp_field(seed=3, grid_w=50, grid_h=50, h=h)

for mode in ("eager", "lazy"):
    cfg = ExperimentConfig(
        sim=SimConfig(n_agents=4, areas_shape=(2, 2), policy="patrol_to_and_fro", tours=2,
                      steps=32, seed=3, mode=mode),
        hyper=h, methods=("gpddf-ass", "local-pitcs", "full-pitcs"))
    rep = run_experiment(cfg, field)
    rows = {r["method"]: r for r in rep.rows}
    ass = rows["gpddf-ass"]
    kinds = {}
    for e in rep.fleet.events:
        kinds[e.kind] = kinds.get(e.kind, 0) + 1
    print(f"\n{mode} mode")
    print(f"  RMSE agent-centric {ass['rmse']:.4f}   local PITCs {rows['local-pitcs']['rmse']:.4f}"
          f"   full PITCs {rows['full-pitcs']['rmse']:.4f}")
    print(f"  transits {ass['transits']}, transfers on transit {ass['transit_transfers']}, "
          f"at prediction {ass['predict_transfers']}, bytes sent {ass['bytes']}")
    print("  events:", dict(sorted(kinds.items())))
    print("  stored scalars:", memory_accounting(rep.fleet)["total"])
