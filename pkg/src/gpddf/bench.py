"""Synthetic fields, dataset I/O, experiment orchestration and metrics.

An experiment draws (or loads) a field, runs the fleet simulator, predicts at
every field location with each requested method and reports RMSE against the
noise-free truth. Methods:

==================  ===========================================================
``gpddf``           one common support set over the whole domain
``gpddf-ass``       agent-centric supports with lazy/eager transfer (the fleet)
``gpddfplus``       common support, plus the predicting agent's own raw data
``gpddfplus-ass``   agent-centric variant of the above
``local-pitcs``     PITC over the data gathered in the query's area only
``full-pitcs``      PITC over all data on the query area's support set
``local-gps``       exact GP over the data gathered in the query's area only
==================  ===========================================================
"""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .fleet import Area, AreaPartition, Fleet, SimConfig, make_support_set
from .kernel import (SS_JITTER_MAX, Dataset, Hyperparams, as_locations, cholesky_jitter,
                     cov_matrix)
from .predictors import (gpddf_predict_many, gpddfplus_predict_many, local_gp_predict_many,
                         pitc_predict_many, write_predictions_csv)
from .summaries import SupportSet, aggregate_global, build_local_summary
from .transfer import loss_bound

__all__ = [
    "GPField",
    "ExperimentConfig",
    "ExperimentReport",
    "METHODS",
    "MAX_FIELD_POINTS",
    "generate_gp_field",
    "load_csv_dataset",
    "write_csv_dataset",
    "rmse",
    "run_experiment",
    "common_support",
    "fleet_from_data",
    "predict_method",
    "write_rows",
    "sweep",
    "summarize_sweep",
    "bound_trials",
    "read_hyperparams",
    "write_hyperparams",
    "parse_config_file",
]

METHODS = ("gpddf", "gpddf-ass", "gpddfplus", "gpddfplus-ass",
           "local-pitcs", "full-pitcs", "local-gps")
MAX_FIELD_POINTS = 4096


# -- fields and datasets --------------------------------------------------

@dataclass(frozen=True)
class GPField:
    """Truth values at fixed locations plus the noise added to each observation.

    For generated fields ``truth`` is the noise-free latent draw; for loaded
    datasets it is the measured value and ``noise_var`` is 0.
    """

    locations: np.ndarray
    truth: np.ndarray
    noise_var: float
    lo: np.ndarray
    hi: np.ndarray
    jitter: float = 0.0

    def __len__(self):
        return self.truth.shape[0]

    @property
    def dim(self):
        return self.locations.shape[1]

    def dataset(self, noisy=False, rng=None) -> Dataset:
        y = self.truth
        if noisy:
            rng = rng if rng is not None else np.random.default_rng(0)
            y = y + rng.normal(0.0, math.sqrt(self.noise_var), y.shape)
        return Dataset(self.locations, y)


def generate_gp_field(seed, grid_w: int, grid_h: int, h: Hyperparams) -> GPField:
    """One exact draw of the latent GP at the cell centres of a ``grid_w x grid_h`` grid.

    Locations run with x fastest and sit at ``(i + 0.5, j + 0.5)``.
    """
    n = grid_w * grid_h
    if grid_w < 1 or grid_h < 1:
        raise ValueError("grid dimensions must be positive")
    if n > MAX_FIELD_POINTS:
        raise ValueError(f"grid of {n} points exceeds {MAX_FIELD_POINTS}; "
                         "generate smaller tiles instead")
    if h.dim != 2:
        raise ValueError("grid fields need two length-scales")
    gx, gy = np.meshgrid(np.arange(grid_w) + 0.5, np.arange(grid_h) + 0.5)
    X = np.column_stack([gx.ravel(), gy.ravel()])
    K = cov_matrix(X, X, h)
    L, j = cholesky_jitter(K, 0.0, SS_JITTER_MAX, scale=h.signal_var, what="field covariance")
    rng = np.random.default_rng(seed)
    latent = h.prior_mean + L @ rng.standard_normal(n)
    return GPField(X, latent, h.noise_var, np.zeros(2), np.array([grid_w, grid_h], float), j)


def field_from_dataset(data: Dataset) -> GPField:
    if len(data) == 0:
        raise ValueError("cannot build a field from an empty dataset")
    lo = data.locations.min(0)
    hi = data.locations.max(0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    return GPField(data.locations, data.values, 0.0, lo, hi)


def load_csv_dataset(path) -> Dataset:
    """Read a CSV with header ``x1,...,xd,y``; a header-only file is an empty dataset."""
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        try:
            header = [c.strip() for c in next(rows)]
        except StopIteration:
            raise ValueError(f"{path}: missing header") from None
        d = len(header) - 1
        if d < 1 or header[-1] != "y" or header[:-1] != [f"x{k + 1}" for k in range(d)]:
            raise ValueError(f"{path}:1: header must be x1,...,xd,y, got {','.join(header)}")
        vals = []
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != d + 1:
                raise ValueError(f"{path}:{lineno}: expected {d + 1} fields, got {len(row)}")
            try:
                v = [float(c) for c in row]
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None
            if not all(math.isfinite(x) for x in v):
                raise ValueError(f"{path}:{lineno}: non-finite value")
            vals.append(v)
    A = np.asarray(vals, dtype=float).reshape(-1, d + 1)
    return Dataset(A[:, :d], A[:, d])


def write_csv_dataset(path, data: Dataset):
    d = data.dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k + 1}" for k in range(d)] + ["y"])
        for x, y in zip(data.locations, data.values):
            w.writerow([repr(float(c)) for c in x] + [repr(float(y))])


def rmse(pred_means, truth) -> float:
    p = np.asarray(pred_means, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} truths")
    if p.size == 0:
        raise ValueError("rmse of an empty set")
    return float(np.sqrt(np.mean((p - t) ** 2)))


# -- hyperparameter files -------------------------------------------------

def _read_kv(path) -> Dict[str, str]:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def read_hyperparams(path) -> Hyperparams:
    kv = _read_kv(path)
    try:
        return Hyperparams(float(kv["signal_var"]), float(kv["noise_var"]),
                           tuple(float(v) for v in kv["length_scales"].split(",")),
                           float(kv.get("prior_mean", 0.0)))
    except KeyError as e:
        raise ValueError(f"{path}: missing key {e.args[0]}") from None


def write_hyperparams(path, h: Hyperparams):
    with open(path, "w") as fh:
        fh.write(f"signal_var = {h.signal_var!r}\n")
        fh.write(f"noise_var = {h.noise_var!r}\n")
        fh.write("length_scales = " + ", ".join(repr(v) for v in h.length_scales) + "\n")
        fh.write(f"prior_mean = {h.prior_mean!r}\n")


def parse_config_file(path) -> Dict[str, str]:
    """Flat ``section.key = value`` file (``#`` comments) as a string dict."""
    return _read_kv(path)


# -- experiments ----------------------------------------------------------

@dataclass
class ExperimentConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    hyper: Hyperparams = field(default_factory=lambda: Hyperparams(1.0, 0.01, (10.0, 10.0)))
    field_width: int = 50
    field_height: int = 50
    field_csv: Optional[str] = None
    methods: Sequence[str] = METHODS

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")


@dataclass
class ExperimentReport:
    rows: List[dict]
    predictions: Dict[str, tuple]
    timings: Dict[str, float]
    fleet: Fleet
    field: GPField

    def write(self, out_dir, varmaps=True):
        os.makedirs(out_dir, exist_ok=True)
        write_rows(os.path.join(out_dir, "report.csv"), self.rows)
        write_rows(os.path.join(out_dir, "timing.csv"),
                   [dict(method=m, seconds=t) for m, t in self.timings.items()])
        self.fleet.write_events(os.path.join(out_dir, "events.csv"))
        if varmaps:
            for m, (mu, var) in self.predictions.items():
                write_predictions_csv(os.path.join(out_dir, f"varmap_{m}.csv"),
                                      self.field.locations, mu, var)


def write_rows(path, rows: List[dict]):
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def _partition(cfg: ExperimentConfig, fld: GPField) -> AreaPartition:
    shape = tuple(cfg.sim.areas_shape) + (1,) * max(0, fld.dim - len(cfg.sim.areas_shape))
    return AreaPartition(fld.lo, fld.hi, shape[:fld.dim], cfg.sim.support_size, cfg.sim.margin)


def _field_sampler(fld: GPField, part: AreaPartition):
    area_ids = part.area_of(fld.locations)
    cells = {k: np.flatnonzero(area_ids == k) for k in range(part.K)}
    index = {tuple(x): i for i, x in enumerate(fld.locations)}
    sd = math.sqrt(fld.noise_var)

    def sample_position(area, rng):
        c = cells[area]
        if c.size == 0:
            raise ValueError(f"area {area} contains no field locations")
        return fld.locations[c[rng.integers(c.size)]]

    def observe(pos, rng):
        y = fld.truth[index[tuple(pos)]]
        return float(y + sd * rng.standard_normal()) if sd > 0 else float(y)

    return sample_position, observe


def _agent_blocks(fleet: Fleet, area=None):
    return [fleet.observed(agent=a.id, area=area) for a in fleet.agents]


def _common_predict(fleet, X, areas, h, support: SupportSet, plus: bool):
    blocks = _agent_blocks(fleet)
    locs = [build_local_summary(b, support, h) for b in blocks]
    g = aggregate_global(locs, support, h)
    mu = np.empty(X.shape[0])
    var = np.empty(X.shape[0])
    for area in np.unique(areas):
        sel = areas == area
        if plus:
            r = fleet.responsible_agent(int(area)).id
            mu[sel], var[sel] = gpddfplus_predict_many(g, locs[r], blocks[r], X[sel], support, h)
        else:
            mu[sel], var[sel] = gpddf_predict_many(g, X[sel], support, h)
    return mu, var


def _per_area(fleet, X, areas, h, fn):
    mu = np.empty(X.shape[0])
    var = np.empty(X.shape[0])
    for area in np.unique(areas):
        sel = areas == area
        mu[sel], var[sel] = fn(int(area), X[sel])
    return mu, var


def predict_method(method, fleet: Fleet, X, h: Hyperparams, common: SupportSet):
    """Predictions of one method at ``X`` plus the transfers it performed."""
    part = fleet.partition
    areas = part.area_of(X)
    before = fleet.predict_transfers
    if method == "gpddf":
        res = _common_predict(fleet, X, areas, h, common, False)
    elif method == "gpddfplus":
        res = _common_predict(fleet, X, areas, h, common, True)
    elif method in ("gpddf-ass", "gpddfplus-ass"):
        mu, var, _ = fleet.predict(X, method[:-4])
        res = (mu, var)
    elif method == "local-pitcs":
        res = _per_area(fleet, X, areas, h, lambda a, Xa: pitc_predict_many(
            _agent_blocks(fleet, a), part.support(a), Xa, h))
    elif method == "full-pitcs":
        blocks = _agent_blocks(fleet)
        res = _per_area(fleet, X, areas, h, lambda a, Xa: pitc_predict_many(
            blocks, part.support(a), Xa, h))
    elif method == "local-gps":
        res = _per_area(fleet, X, areas, h, lambda a, Xa: local_gp_predict_many(
            fleet.observed(area=a), Xa, h))
    else:
        raise ValueError(f"unknown method {method!r}")
    return res[0], res[1], fleet.predict_transfers - before


def common_support(part: AreaPartition, sim: SimConfig) -> SupportSet:
    """Support set of the configured size spread over the whole domain."""
    return make_support_set(Area("common", part.lo, part.hi), sim.support_size, sim.margin)


def fleet_from_data(data: Dataset, queries, sim: SimConfig, h: Hyperparams) -> Fleet:
    """A stationary fleet with one agent per area holding that area's data.

    The domain is the bounding box of the data and query locations.
    """
    Q = as_locations(queries, data.dim)
    pts = np.vstack([data.locations, Q])
    if pts.shape[0] == 0:
        raise ValueError("need data or query locations to define the domain")
    lo, hi = pts.min(0), pts.max(0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    shape = tuple(sim.areas_shape) + (1,) * max(0, data.dim - len(sim.areas_shape))
    part = AreaPartition(lo, hi, shape[:data.dim], sim.support_size, sim.margin)
    sim = replace(sim, n_agents=part.K, areas_shape=part.shape,
                  start_areas=tuple(range(part.K)), policy="random_within")
    fleet = Fleet(part, h, sim)
    areas = part.area_of(data.locations) if len(data) else np.zeros(0, int)
    for a in fleet.agents:
        a.raw = data.subset(areas == a.id)
    fleet.history = [(int(k), int(k), x, float(y))
                     for k, x, y in zip(areas, data.locations, data.values)]
    return fleet


def run_experiment(cfg: ExperimentConfig, fld: Optional[GPField] = None,
                   extra: Optional[dict] = None) -> ExperimentReport:
    """Simulate the fleet once and evaluate every method on all field locations.

    Report rows are deterministic given the configuration; wall-clock times
    are kept separately in ``timings``.
    """
    h = cfg.hyper
    if fld is None:
        if cfg.field_csv:
            fld = field_from_dataset(load_csv_dataset(cfg.field_csv))
        else:
            fld = generate_gp_field(cfg.sim.seed, cfg.field_width, cfg.field_height, h)
    if fld.dim != h.dim:
        raise ValueError(f"field dimension {fld.dim} != hyperparameter dimension {h.dim}")
    part = _partition(cfg, fld)
    sample_position, observe = _field_sampler(fld, part)
    fleet = Fleet(part, h, cfg.sim, sample_position, observe).run()
    transit_bytes = fleet.bytes_sent
    common = common_support(part, cfg.sim)
    X = fld.locations
    methods = list(cfg.methods)
    order = methods if "local-pitcs" in methods else ["local-pitcs"] + methods
    results, timings = {}, {}
    for m in order:
        t0 = time.perf_counter()
        b0 = fleet.bytes_sent
        mu, var, transfers = predict_method(m, fleet, X, h, common)
        timings[m] = time.perf_counter() - t0
        results[m] = (mu, var, transfers, fleet.bytes_sent - b0)
    base = rmse(results["local-pitcs"][0], fld.truth)
    rows = []
    for m in methods:
        mu, var, transfers, pbytes = results[m]
        e = rmse(mu, fld.truth)
        ass = m.endswith("-ass")
        row = dict(extra or {})
        row.update(seed=cfg.sim.seed, method=m, mode=cfg.sim.mode if ass else "",
                   rmse=e, rmse_reduction=base - e,
                   transits=fleet.transit_count if ass else 0,
                   transit_transfers=fleet.transit_transfers if ass else 0,
                   predict_transfers=transfers,
                   bytes=(transit_bytes + pbytes) if ass else 0,
                   n_obs=len(fleet.history))
        rows.append(row)
    return ExperimentReport(rows, {m: results[m][:2] for m in methods}, timings, fleet, fld)


def sweep(cfg: ExperimentConfig, length_scales: Sequence[float], seeds: Sequence[int]):
    """Run one experiment per (length-scale, seed); returns all report rows and timings."""
    rows, timings = [], []
    for ell in length_scales:
        h = cfg.hyper.replace(length_scales=(float(ell),) * cfg.hyper.dim)
        for seed in seeds:
            c = replace(cfg, hyper=h, sim=replace(cfg.sim, seed=int(seed)))
            rep = run_experiment(c, extra=dict(length_scale=float(ell)))
            rows.extend(rep.rows)
            timings.extend(dict(length_scale=float(ell), seed=int(seed), method=m, seconds=t)
                           for m, t in rep.timings.items())
    return rows, timings


def summarize_sweep(rows: List[dict]) -> List[dict]:
    """Mean RMSE and reduction per (length_scale, method), in first-seen order."""
    groups: Dict[tuple, list] = {}
    for r in rows:
        groups.setdefault((r["length_scale"], r["method"]), []).append(r)
    out = []
    for (ell, m), rs in groups.items():
        out.append(dict(length_scale=ell, method=m, n=len(rs),
                        mean_rmse=float(np.mean([r["rmse"] for r in rs])),
                        mean_reduction=float(np.mean([r["rmse_reduction"] for r in rs]))))
    return out


# -- loss-bound trials ----------------------------------------------------

def bound_trials(n_trials: int, seed: int = 0, domain: float = 50.0):
    """Random (S, S', D) configurations with their actual loss and bound.

    Length-scales are drawn from 1..20 and support sizes from 4..18.
    """
    rng = np.random.default_rng(seed)
    reports, extra = [], []
    for _ in range(n_trials):
        ell = int(rng.integers(1, 21))
        m = int(rng.integers(4, 19))
        m2 = int(rng.integers(4, 19))
        nd = int(rng.integers(1, 31))
        h = Hyperparams(float(rng.uniform(0.5, 2.0)), 0.01, (float(ell), float(ell)))
        s_old = SupportSet("old", rng.uniform(0, domain, (m, 2)))
        s_new = SupportSet("new", rng.uniform(0, domain, (m2, 2)))
        D = rng.uniform(0, domain, (nd, 2))
        reports.append(loss_bound(s_old, s_new, D, h))
        extra.append(dict(length_scale=ell, support_size=m, new_support_size=m2, n_data=nd,
                          signal_var=h.signal_var))
    return reports, extra
