"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the summary lines
(they are also printed without ``-s`` through the terminal reporter).
"""

import csv
import time

import numpy as np
import pytest
from scipy.stats import binomtest

from gpddf.bench import (ExperimentConfig, bound_trials, generate_gp_field, run_experiment,
                         summarize_sweep, sweep)
from gpddf.cli import main
from gpddf.fleet import AreaPartition, Fleet, SimConfig, memory_accounting
from gpddf.hyperlearn import fd_gradient, learn_hyperparams, objective_gradient, OptimizerConfig
from gpddf.kernel import Dataset, Hyperparams, cov_matrix
from gpddf.predictors import (gpddf_predict_many, gpddfplus_predict_many, pic_predict_many,
                              pitc_predict_many)
from gpddf.summaries import (PriorSummary, SupportSet, aggregate_global, build_local_summary,
                             local_to_prior, prior_to_local)
from gpddf.transfer import transfer_local, write_bound_csv

from helpers import random_dataset, random_hyper, random_instance, random_support
from test_summaries import direct_prior, rel


@pytest.fixture
def verdict(request):
    """Print ``criterion N: PASS|FAIL detail`` and fail the test if not ok."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        if reporter is not None:
            reporter.write_line(line)
        else:
            print(line)
        assert ok, line

    return emit


def _oracle_gap(plus, seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(200):
        h, blocks, s, X = random_instance(rng)
        locs = [build_local_summary(b, s, h) for b in blocks]
        g = aggregate_global(locs, s, h)
        if plus:
            i = int(rng.integers(len(blocks)))
            got = gpddfplus_predict_many(g, locs[i], blocks[i], X, s, h)
            ref = pic_predict_many(blocks, s, X, i, h)
        else:
            got = gpddf_predict_many(g, X, s, h)
            ref = pitc_predict_many(blocks, s, X, h)
        worst = max(worst, np.abs(got[0] - ref[0]).max(), np.abs(got[1] - ref[1]).max())
    return worst


def test_criterion_01_pitc_equivalence(verdict):
    t0 = time.perf_counter()
    gap = _oracle_gap(False, 101)
    dt = time.perf_counter() - t0
    verdict(1, gap < 1e-8 and dt < 60, f"max |GP-DDF - PITC| = {gap:.2e} (< 1e-8), {dt:.1f}s")


def test_criterion_02_pic_equivalence(verdict):
    t0 = time.perf_counter()
    gap = _oracle_gap(True, 202)
    dt = time.perf_counter() - t0
    verdict(2, gap < 1e-8 and dt < 60, f"max |GP-DDF+ - PIC| = {gap:.2e} (< 1e-8), {dt:.1f}s")


def test_criterion_03_round_trip_and_prior_summary(verdict):
    rng = np.random.default_rng(303)
    trip = direct = 0.0
    for _ in range(500):
        h = random_hyper(rng)
        s = random_support(rng, int(rng.integers(2, 19)))
        data = random_dataset(rng, int(rng.integers(1, 31)))
        l = build_local_summary(data, s, h)
        p = local_to_prior(l, s, h)
        back = prior_to_local(p, s, h)
        trip = max(trip, rel(back.nu, l.nu), rel(back.psi, l.psi))
        omega, phi = direct_prior(data, s, h)
        direct = max(direct, rel(p.omega, omega), rel(p.phi, phi))
        fwd = local_to_prior(prior_to_local(PriorSummary(s.id, omega, 0.5 * (phi + phi.T)), s, h),
                             s, h)
        trip = max(trip, rel(fwd.omega, omega), rel(fwd.phi, phi))
    verdict(3, trip < 1e-8 and direct < 1e-8,
            f"round trip rel {trip:.2e}, prior vs direct rel {direct:.2e} (< 1e-8)")


def test_criterion_04_transfer_exactness(verdict):
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(100):
        h = random_hyper(rng, mean=0.0)
        s_old = random_support(rng, int(rng.integers(5, 19)), sid="old")
        s_new = random_support(rng, int(rng.integers(5, 19)), sid="new")
        k = int(rng.integers(1, len(s_old) + 1))
        idx = rng.choice(len(s_old), k, replace=False)
        data = Dataset(s_old.points[idx], rng.normal(size=k))
        out = transfer_local(build_local_summary(data, s_old, h), s_old, s_new, h)
        ref = build_local_summary(data, s_new, h)
        worst = max(worst, np.abs(out.nu - ref.nu).max(), np.abs(out.psi - ref.psi).max())
    verdict(4, worst < 1e-7, f"max |transferred - rebuilt| = {worst:.2e} (< 1e-7)")


def test_criterion_05_loss_bound(verdict, tmp_path):
    reports, extra = bound_trials(1000, seed=505)
    path = tmp_path / "bound_trials.csv"
    write_bound_csv(path, reports, extra)
    rows = list(csv.DictReader(open(path)))
    held = sum(float(r["actual_loss"]) <= float(r["bound"]) for r in rows)
    ells = {e["length_scale"] for e in extra}
    sizes = {e["support_size"] for e in extra}
    ok = held == 1000 and len(rows) == 1000 and ells <= set(range(1, 21)) and \
        sizes <= set(range(4, 19))
    verdict(5, ok, f"{held}/1000 trials within bound; wrote {path.name}")


def test_criterion_06_length_scale_sweep(verdict):
    t0 = time.perf_counter()
    ells = [1, 2, 5, 10, 15, 20]
    cfg = ExperimentConfig(
        sim=SimConfig(n_agents=4, areas_shape=(2, 2), support_size=18, steps=25),
        hyper=Hyperparams(1.0, 0.01, (10.0, 10.0)), field_width=50, field_height=50,
        methods=("gpddf", "gpddf-ass", "full-pitcs", "local-pitcs"))
    rows, _ = sweep(cfg, ells, range(10))
    dt = time.perf_counter() - t0
    red = {(r["length_scale"], r["method"]): r["mean_reduction"] for r in summarize_sweep(rows)}
    a = all(red[(l, "gpddf")] < 0 for l in (5.0, 10.0, 15.0))
    b = all(red[(l, m)] > 0 for l in (5.0, 10.0, 15.0) for m in ("gpddf-ass", "full-pitcs"))
    ass = [red[(float(l), "gpddf-ass")] for l in ells]
    c = abs(ass[0]) < ass[3] and abs(ass[-1]) < ass[3]
    d = all(red[(float(l), "full-pitcs")] >= red[(float(l), "gpddf-ass")] - 0.02 for l in ells)
    curve = " ".join(f"{l}:{v:+.4f}" for l, v in zip(ells, ass))
    verdict(6, a and b and c and d and dt < 600,
            f"(a) {a} (b) {b} (c) {c} (d) {d}; ASS reductions {curve}; {dt:.0f}s")


def test_criterion_07_lazy_not_worse_than_eager(verdict):
    lazy, eager = [], []
    h = Hyperparams(1.0, 0.01, (10.0, 10.0))
    for seed in range(50):
        fld = generate_gp_field(seed, 50, 50, h)
        for mode, out in (("lazy", lazy), ("eager", eager)):
            cfg = ExperimentConfig(
                sim=SimConfig(n_agents=4, areas_shape=(2, 2), policy="patrol_to_and_fro",
                              tours=2, steps=32, seed=seed, mode=mode),
                hyper=h, methods=("gpddf-ass",))
            out.append(run_experiment(cfg, fld).rows[0]["rmse"])
    lazy, eager = np.array(lazy), np.array(eager)
    wins = int((lazy < eager).sum())
    n = int((lazy != eager).sum())
    p = binomtest(wins, n, 0.5, alternative="greater").pvalue if n else 1.0
    ok = lazy.mean() <= eager.mean() and p < 0.05
    verdict(7, ok, f"mean RMSE lazy {lazy.mean():.5f} vs eager {eager.mean():.5f}; "
                   f"lazy better in {wins}/{n} seeds, sign test p = {p:.2e}")


def _quiet_fleet(part, cfg):
    def sample_position(area, rng):
        a = part.areas[area]
        return rng.uniform(a.lo, a.hi)
    return Fleet(part, Hyperparams(1.0, 0.01, (5.0, 5.0)), cfg, sample_position,
                 lambda pos, rng: float(rng.standard_normal()))


def test_criterion_08_memory_accounting(verdict):
    m = 18
    unit = m * m + m
    details, ok = [], True
    for K, N in ((4, 1), (4, 3), (6, 2)):
        part = AreaPartition([0, 0], [10.0 * (K + N - 1), 10], (K + N - 1, 1), support_size=m)
        cfg = SimConfig(n_agents=N, areas_shape=part.shape, support_size=m, mode="lazy",
                        start_areas=(0,) + tuple(range(K, K + N - 1)))
        f = _quiet_fleet(part, cfg)
        for area in range(1, K):
            f.transit(f.agents[0], area)
        total = memory_accounting(f)["total"]
        expect = (K - 1 + 1) * unit + (N - 1) * unit
        ok &= total == expect
        details.append(f"tourist K={K},N={N}: {total}=={expect}")
    worst = 0.0
    for K, N in ((4, 4), (4, 8), (9, 9)):
        side = int(round(np.sqrt(K)))
        part = AreaPartition([0, 0], [40, 40], (side, K // side), support_size=m)
        cfg = SimConfig(n_agents=N, areas_shape=part.shape, support_size=m, mode="lazy",
                        policy="patrol_to_and_fro", steps=4 * K, seed=K + N)
        f = _quiet_fleet(part, cfg)
        for _ in range(cfg.steps):
            f.step(cfg.steps)
            worst = max(worst, memory_accounting(f)["total"] / (max(K, N) * unit))
    ok &= worst <= 2.0
    details.append(f"even: max total/(max(K,N)(|S|^2+|S|)) = {worst:.2f} (<= 2)")
    verdict(8, ok, "; ".join(details))


def _time_transfer(m, n, rng, h, repeats=7):
    s_old = SupportSet("a", rng.uniform(0, 50, (m, 2)))
    s_new = SupportSet("b", rng.uniform(0, 50, (m, 2)))
    l = build_local_summary(Dataset(rng.uniform(0, 50, (n, 2)), rng.normal(size=n)), s_old, h)
    loops = max(20, int(2e5 / m ** 2))
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(loops):
            transfer_local(l, s_old, s_new, h)
        best = min(best, (time.perf_counter() - t0) / loops)
    return best


def test_criterion_09_transfer_cost_scaling(verdict):
    rng = np.random.default_rng(909)
    h = Hyperparams(1.0, 0.01, (10.0, 10.0))
    t_small, t_big = _time_transfer(18, 100, rng, h), _time_transfer(18, 400, rng, h)
    ratio = t_big / t_small
    sizes = [8, 16, 32, 64]
    times = [_time_transfer(m, 100, rng, h) for m in sizes]
    slope = float(np.polyfit(np.log(sizes), np.log(times), 1)[0])
    ok = 0.8 <= ratio <= 1.2 and 2.2 <= slope <= 3.5
    verdict(9, ok, f"4x data time ratio {ratio:.2f} (0.8-1.2); |S| fit exponent {slope:.2f} "
                   f"(2.2-3.5); times {', '.join(f'{t * 1e3:.3f}ms' for t in times)}")


def _recovery_areas(seed):
    truth = Hyperparams(1.0, 0.01, (3.0, 3.0))
    rng = np.random.default_rng(seed)
    part = AreaPartition([0, 0], [20, 10], (2, 1), support_size=18)
    X = rng.uniform([0, 0], [20, 10], (200, 2))
    y = np.linalg.cholesky(cov_matrix(X, X, truth, "diagonal")) @ rng.normal(size=200)
    a = part.area_of(X)
    return [([Dataset(X[a == k], y[a == k])], part.support(k)) for k in range(2)]


def test_criterion_10_hyperparameter_recovery(verdict):
    good = 0
    for seed in range(10):
        h = learn_hyperparams(_recovery_areas(seed), Hyperparams(0.5, 0.1, (1.5, 6.0)),
                              OptimizerConfig(gradient="analytic"))
        ls = np.asarray(h.length_scales)
        good += bool(np.all((ls >= 3.0 / 1.5) & (ls <= 3.0 * 1.5)))
    areas = _recovery_areas(99)
    grad_err = 0.0
    for h in (Hyperparams(0.5, 0.1, (1.5, 6.0)), Hyperparams(1.2, 0.02, (3.5, 2.5))):
        ga, gf = objective_gradient(areas, h), fd_gradient(areas, h)
        grad_err = max(grad_err, float(np.linalg.norm(ga - gf) / np.linalg.norm(ga)))
    verdict(10, good >= 8 and grad_err < 1e-4,
            f"length-scales within x/1.5 of truth in {good}/10 seeds; "
            f"FD vs analytic gradient rel {grad_err:.1e}")


def test_criterion_11_determinism(verdict, tmp_path):
    args = ["--sim.policy", "patrol_to_and_fro", "--sim.seed", "11", "--sim.steps", "16"]
    codes = [main(["simulate", "--out", str(tmp_path / d)] + args) for d in ("a", "b")]
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("report.csv", "events.csv"))
    verdict(11, codes == [0, 0] and same, f"report.csv and events.csv byte-identical: {same}")
