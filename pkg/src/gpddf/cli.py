"""Command-line entry point: ``gpddf <subcommand> [options]``.

Every dotted configuration key (for example ``sim.n_agents``) can be set in a
flat ``key = value`` file passed with ``--config`` and overridden by the
matching ``--sim.n_agents`` flag.

Exit codes: 0 success, 2 argument error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import bench
from .fleet import POLICIES, MODES, PREDICTORS, SimConfig, save_checkpoint
from .hyperlearn import OptimizerConfig, learn_hyperparams
from .kernel import Hyperparams, NumericError
from .predictors import write_predictions_csv
from .transfer import write_bound_csv

EXIT_OK, EXIT_ARGS, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _floats(s):
    return tuple(float(v) for v in str(s).replace(";", ",").split(",") if v.strip())


def _ints(s):
    return tuple(int(v) for v in str(s).replace(";", ",").split(",") if v.strip())


def _shape(s):
    return tuple(int(v) for v in str(s).lower().replace("x", ",").split(",") if v.strip())


def _strs(s):
    return tuple(v.strip() for v in str(s).split(",") if v.strip())


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (parser, default, help)
CONFIG_KEYS = {
    "field.width": (int, 50, "grid width of a generated field"),
    "field.height": (int, 50, "grid height of a generated field"),
    "field.csv": (str, None, "use this x1..xd,y CSV as the field instead of generating one"),
    "hyper.file": (str, None, "key-value hyperparameter file"),
    "hyper.signal_var": (float, 1.0, "signal variance"),
    "hyper.noise_var": (float, 0.01, "noise variance"),
    "hyper.length_scales": (_floats, (10.0, 10.0), "comma-separated length-scales"),
    "hyper.prior_mean": (float, 0.0, "constant prior mean"),
    "sim.n_agents": (int, 4, "number of agents"),
    "sim.areas": (_shape, (2, 2), "area grid, e.g. 2x2"),
    "sim.support_size": (int, 18, "support points per area"),
    "sim.margin": (float, 0.10, "support margin as a fraction of the area width"),
    "sim.policy": (str, "random_within", "movement policy: " + ", ".join(POLICIES)),
    "sim.steps": (int, 25, "simulation ticks"),
    "sim.obs_per_step": (int, 1, "observations per agent per tick"),
    "sim.seed": (int, 0, "random seed"),
    "sim.mode": (str, "lazy", "transfer mode: " + ", ".join(MODES)),
    "sim.predictor": (str, "gpddf", "fleet predictor: " + ", ".join(PREDICTORS)),
    "sim.tours": (int, 1, "tour repetitions for tour policies"),
    "sim.start_areas": (_ints, None, "comma-separated start area per agent"),
    "run.methods": (_strs, bench.METHODS, "comma-separated methods"),
    "run.varmaps": (_bool, True, "write varmap_<method>.csv files"),
    "sweep.length_scales": (_floats, (1.0, 2.0, 5.0, 10.0, 15.0, 20.0), "sweep length-scales"),
    "sweep.seeds": (int, 10, "seeds 0..n-1 per length-scale"),
}


def _add_keys(p, prefixes):
    p.add_argument("--config", help="flat key = value configuration file")
    for key, (_, default, help_) in CONFIG_KEYS.items():
        if key.split(".")[0] in prefixes:
            p.add_argument(f"--{key}", dest=key, default=None, metavar="V",
                           help=f"{help_} (default {default})")


def resolve(args, prefixes):
    """Merge defaults, config file and CLI flags; returns ``(values, explicitly_set)``."""
    vals = {k: v[1] for k, v in CONFIG_KEYS.items() if k.split(".")[0] in prefixes}
    explicit = set()
    raw = {}
    if getattr(args, "config", None):
        for k, v in bench.parse_config_file(args.config).items():
            if k not in CONFIG_KEYS:
                raise ValueError(f"{args.config}: unknown key {k!r}")
            raw[k] = v
    for k in vals:
        v = getattr(args, k, None)
        if v is not None:
            raw[k] = v
    for k, v in raw.items():
        try:
            vals[k] = CONFIG_KEYS[k][0](v)
        except ValueError as e:
            raise ValueError(f"bad value for {k}: {e}") from None
        explicit.add(k)
    return vals, explicit


def hyper_from(vals, explicit) -> Hyperparams:
    base = dict(signal_var=vals["hyper.signal_var"], noise_var=vals["hyper.noise_var"],
                length_scales=vals["hyper.length_scales"], prior_mean=vals["hyper.prior_mean"])
    if vals.get("hyper.file"):
        h = bench.read_hyperparams(vals["hyper.file"])
        file_vals = dict(signal_var=h.signal_var, noise_var=h.noise_var,
                         length_scales=h.length_scales, prior_mean=h.prior_mean)
        for k in file_vals:
            if f"hyper.{k}" not in explicit:
                base[k] = file_vals[k]
    return Hyperparams(**base)


def sim_from(vals) -> SimConfig:
    return SimConfig(n_agents=vals["sim.n_agents"], areas_shape=vals["sim.areas"],
                     support_size=vals["sim.support_size"], margin=vals["sim.margin"],
                     policy=vals["sim.policy"], steps=vals["sim.steps"],
                     obs_per_step=vals["sim.obs_per_step"], seed=vals["sim.seed"],
                     mode=vals["sim.mode"], predictor=vals["sim.predictor"],
                     tours=vals["sim.tours"], start_areas=vals["sim.start_areas"])


def experiment_from(vals, explicit) -> bench.ExperimentConfig:
    return bench.ExperimentConfig(sim=sim_from(vals), hyper=hyper_from(vals, explicit),
                                  field_width=vals["field.width"],
                                  field_height=vals["field.height"],
                                  field_csv=vals["field.csv"], methods=vals["run.methods"])


# -- subcommands ----------------------------------------------------------

def cmd_genfield(args):
    vals, explicit = resolve(args, ("field", "hyper", "sim"))
    h = hyper_from(vals, explicit)
    fld = bench.generate_gp_field(vals["sim.seed"], vals["field.width"], vals["field.height"], h)
    rng = np.random.default_rng(np.random.SeedSequence([vals["sim.seed"], 1]))
    bench.write_csv_dataset(args.out, fld.dataset(noisy=args.noisy, rng=rng))
    print(f"wrote {len(fld)} points to {args.out}")


def cmd_simulate(args):
    vals, explicit = resolve(args, ("field", "hyper", "sim", "run"))
    cfg = experiment_from(vals, explicit)
    rep = bench.run_experiment(cfg)
    rep.write(args.out, varmaps=vals["run.varmaps"])
    if args.checkpoint:
        save_checkpoint(rep.fleet, args.checkpoint)
    for r in rep.rows:
        print(f"{r['method']:>14s}  rmse {r['rmse']:.6f}  reduction {r['rmse_reduction']:+.6f}")


def _load_queries(path, dim):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    cols = [i for i, c in enumerate(header) if c.strip().startswith("x")]
    if len(cols) != dim:
        raise ValueError(f"{path}: expected {dim} coordinate columns x1..x{dim}")
    A = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if A.size == 0:
        return np.zeros((0, dim))
    if not np.all(np.isfinite(A[:, cols])):
        raise ValueError(f"{path}: non-finite query coordinates")
    return A[:, cols]


def cmd_fuse(args):
    vals, explicit = resolve(args, ("hyper", "sim"))
    h = hyper_from(vals, explicit)
    data = bench.load_csv_dataset(args.data)
    Q = _load_queries(args.queries, data.dim) if args.queries else data.locations
    cfg = replace(sim_from(vals), obs_per_step=0)
    fleet = bench.fleet_from_data(data, Q, cfg, h)
    common = bench.common_support(fleet.partition, cfg)
    mu, var, _ = bench.predict_method(args.method, fleet, Q, h, common)
    write_predictions_csv(args.out, Q, mu, var)
    print(f"wrote {Q.shape[0]} predictions to {args.out}")


def cmd_learn_hyper(args):
    vals, explicit = resolve(args, ("hyper", "sim"))
    init = hyper_from(vals, explicit)
    data = bench.load_csv_dataset(args.data)
    if init.dim != data.dim:
        init = init.replace(length_scales=(init.length_scales[0],) * data.dim)
    cfg = replace(sim_from(vals), obs_per_step=0)
    fleet = bench.fleet_from_data(data, data.locations, cfg, init)
    part = fleet.partition
    areas_ = part.area_of(data.locations)
    areas = [([data.subset(areas_ == k)], part.support(k))
             for k in range(part.K) if np.any(areas_ == k)]
    res = learn_hyperparams(areas, init, OptimizerConfig(max_iter=args.max_iter,
                                                         gradient=args.gradient),
                            return_result=True)
    bench.write_hyperparams(args.out, res.h)
    print(f"log-likelihood {res.initial_value:.6f} -> {res.value:.6f} "
          f"after {res.iterations} iterations; wrote {args.out}")


def cmd_bound(args):
    reports, extra = bench.bound_trials(args.trials, args.seed)
    write_bound_csv(args.out, reports, extra)
    ok = sum(r.actual_loss <= r.bound for r in reports)
    print(f"{ok}/{len(reports)} trials within bound; wrote {args.out}")
    return EXIT_OK if ok == len(reports) else EXIT_NUMERIC


def cmd_sweep(args):
    vals, explicit = resolve(args, ("field", "hyper", "sim", "run", "sweep"))
    cfg = experiment_from(vals, explicit)
    rows, timings = bench.sweep(cfg, vals["sweep.length_scales"], range(vals["sweep.seeds"]))
    os.makedirs(args.out, exist_ok=True)
    bench.write_rows(os.path.join(args.out, "report.csv"), rows)
    summary = bench.summarize_sweep(rows)
    bench.write_rows(os.path.join(args.out, "summary.csv"), summary)
    bench.write_rows(os.path.join(args.out, "timing.csv"), timings)
    for r in summary:
        print(f"l={r['length_scale']:<5g} {r['method']:>14s}  "
              f"mean reduction {r['mean_reduction']:+.5f}")


def build_parser():
    p = argparse.ArgumentParser(prog="gpddf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("genfield", help="draw a synthetic GP field to CSV")
    _add_keys(g, ("field", "hyper", "sim"))
    g.add_argument("--out", required=True)
    g.add_argument("--noisy", action="store_true", help="add observation noise")
    g.set_defaults(func=cmd_genfield)

    s = sub.add_parser("simulate", help="run one experiment and write report/varmaps/events")
    _add_keys(s, ("field", "hyper", "sim", "run"))
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--checkpoint", help="also write a fleet checkpoint here")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fuse", help="one-shot prediction from a data CSV")
    _add_keys(f, ("hyper", "sim"))
    f.add_argument("--data", required=True)
    f.add_argument("--queries", help="CSV with x1..xd columns (default: the data locations)")
    f.add_argument("--method", default="gpddf-ass", choices=bench.METHODS)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fuse)

    lh = sub.add_parser("learn-hyper", help="fit common hyperparameters to a data CSV")
    _add_keys(lh, ("hyper", "sim"))
    lh.add_argument("--data", required=True)
    lh.add_argument("--out", required=True)
    lh.add_argument("--max-iter", type=int, default=500)
    lh.add_argument("--gradient", choices=("fd", "analytic"), default="fd")
    lh.set_defaults(func=cmd_learn_hyper)

    b = sub.add_parser("bound", help="random loss-bound trials to bound_trials.csv")
    b.add_argument("--trials", type=int, default=1000)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="bound_trials.csv")
    b.set_defaults(func=cmd_bound)

    w = sub.add_parser("sweep", help="length-scale sweep of RMSE reductions")
    _add_keys(w, ("field", "hyper", "sim", "run", "sweep"))
    w.add_argument("--out", required=True, help="output directory")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rc = args.func(args)
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, IndexError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ARGS
    return rc or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
