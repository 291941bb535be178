import csv
import math

import numpy as np
import pytest

from gpddf.bench import (ExperimentConfig, bound_trials, common_support,
                         field_from_dataset, fleet_from_data, generate_gp_field,
                         load_csv_dataset, parse_config_file, predict_method, read_hyperparams,
                         rmse, run_experiment, summarize_sweep, sweep, write_csv_dataset,
                         write_hyperparams)
from gpddf.fleet import SimConfig
from gpddf.kernel import Dataset, Hyperparams
from gpddf.predictors import local_gp_predict, pitc_predict_many


H = Hyperparams(1.0, 0.01, (5.0, 5.0))


def small_cfg(**sim):
    base = dict(n_agents=2, areas_shape=(2, 1), support_size=6, steps=6)
    base.update(sim)
    return ExperimentConfig(sim=SimConfig(**base), hyper=H, field_width=12, field_height=8)


def test_rmse_examples():
    assert rmse([1, 2], [2, 4]) == pytest.approx(math.sqrt(2.5))
    assert rmse([3.0], [3.0]) == 0.0
    with pytest.raises(ValueError):
        rmse([1, 2], [1])
    with pytest.raises(ValueError):
        rmse([], [])


def test_csv_round_trip_and_header_only(tmp_path):
    d = Dataset([[0.5, 1.25], [3.0, -2.0]], [0.1, 7.0])
    p = tmp_path / "d.csv"
    write_csv_dataset(p, d)
    back = load_csv_dataset(p)
    np.testing.assert_array_equal(back.locations, d.locations)
    np.testing.assert_array_equal(back.values, d.values)
    (tmp_path / "e.csv").write_text("x1,x2,y\n")
    assert len(load_csv_dataset(tmp_path / "e.csv")) == 0


def test_csv_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x1,x2,y\n1,2,3\n4,5,nan\n")
    with pytest.raises(ValueError, match=r"bad\.csv:3"):
        load_csv_dataset(p)
    p.write_text("x1,x2,y\n1,2\n")
    with pytest.raises(ValueError, match=r":2: expected 3 fields"):
        load_csv_dataset(p)
    p.write_text("a,b,c\n")
    with pytest.raises(ValueError, match=":1:"):
        load_csv_dataset(p)


def test_field_layout_and_determinism():
    f = generate_gp_field(3, 4, 3, H)
    assert len(f) == 12
    np.testing.assert_allclose(f.locations[:5], [[0.5, 0.5], [1.5, 0.5], [2.5, 0.5],
                                                 [3.5, 0.5], [0.5, 1.5]])
    np.testing.assert_array_equal(f.truth, generate_gp_field(3, 4, 3, H).truth)
    assert not np.array_equal(f.truth, generate_gp_field(4, 4, 3, H).truth)
    with pytest.raises(ValueError):
        generate_gp_field(0, 100, 100, H)


def test_field_moments_monte_carlo():
    h = Hyperparams(2.0, 0.01, (1.5, 1.5))
    draws = np.array([generate_gp_field(s, 3, 1, h).truth for s in range(4000)])
    se = 2.0 * math.sqrt(2 / 4000)
    np.testing.assert_allclose(draws.var(0), 2.0, atol=5 * se)
    c01 = np.mean(draws[:, 0] * draws[:, 1])
    assert c01 == pytest.approx(2.0 * math.exp(-0.5 / 1.5 ** 2), abs=5 * se)
    assert abs(draws.mean()) < 5 * math.sqrt(2.0 / 4000)


def test_field_from_dataset_and_noisy_observations():
    d = Dataset([[0.0, 0.0], [2.0, 1.0]], [1.0, 2.0])
    f = field_from_dataset(d)
    np.testing.assert_array_equal(f.hi, [2.0, 1.0])
    assert f.noise_var == 0.0
    g = generate_gp_field(0, 10, 10, H)
    noisy = g.dataset(noisy=True, rng=np.random.default_rng(1))
    assert 0.05 < np.std(noisy.values - g.truth) < 0.15


def test_hyperparams_file_round_trip(tmp_path):
    p = tmp_path / "h.txt"
    h = Hyperparams(1.5, 0.02, (3.0, 4.5), prior_mean=-0.25)
    write_hyperparams(p, h)
    assert read_hyperparams(p) == h
    p.write_text("signal_var = 1\n")
    with pytest.raises(ValueError, match="noise_var"):
        read_hyperparams(p)
    p.write_text("# comment\nsim.steps = 4  # trailing\n\nrun.methods = gpddf\n")
    assert parse_config_file(p) == {"sim.steps": "4", "run.methods": "gpddf"}


def test_zero_observation_run_gives_prior_everywhere():
    rep = run_experiment(small_cfg(obs_per_step=0))
    fld = rep.field
    expect = rmse(np.zeros(len(fld)), fld.truth)
    for r in rep.rows:
        assert r["rmse"] == pytest.approx(expect, rel=1e-12)
        assert r["rmse_reduction"] == pytest.approx(0.0, abs=1e-12)
        assert r["n_obs"] == 0


def test_single_area_agent_centric_equals_common_support():
    cfg = small_cfg(areas_shape=(1, 1), n_agents=3, obs_per_step=2, seed=5)
    rep = run_experiment(cfg)
    for a, b in (("gpddf-ass", "gpddf"), ("gpddfplus-ass", "gpddfplus")):
        np.testing.assert_allclose(rep.predictions[a][0], rep.predictions[b][0], atol=1e-10)
        np.testing.assert_allclose(rep.predictions[a][1], rep.predictions[b][1], atol=1e-10)
    row = {r["method"]: r for r in rep.rows}
    assert row["gpddf-ass"]["predict_transfers"] == 0


def test_local_pitcs_uses_only_area_data():
    cfg = small_cfg(seed=2)
    rep = run_experiment(cfg)
    fleet, fld = rep.fleet, rep.field
    part = fleet.partition
    areas = part.area_of(fld.locations)
    sel = areas == 1
    blocks = [fleet.observed(agent=a.id, area=1) for a in fleet.agents]
    mu, _ = pitc_predict_many(blocks, part.support(1), fld.locations[sel], H)
    np.testing.assert_allclose(rep.predictions["local-pitcs"][0][sel], mu, atol=1e-12)
    x = fld.locations[np.flatnonzero(sel)[0]]
    p = local_gp_predict(fleet.observed(area=1), x, H)
    assert rep.predictions["local-gps"][0][np.flatnonzero(sel)[0]] == pytest.approx(p.mean)


def test_report_columns_and_reduction_baseline(tmp_path):
    rep = run_experiment(small_cfg(seed=1))
    row = {r["method"]: r for r in rep.rows}
    assert row["local-pitcs"]["rmse_reduction"] == 0.0
    for r in rep.rows:
        assert r["rmse_reduction"] == pytest.approx(row["local-pitcs"]["rmse"] - r["rmse"])
    rep.write(tmp_path, varmaps=True)
    with open(tmp_path / "report.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["seed", "method", "mode", "rmse", "rmse_reduction", "transits",
                      "transit_transfers", "predict_transfers", "bytes", "n_obs"]
    assert (tmp_path / "events.csv").exists() and (tmp_path / "timing.csv").exists()
    assert (tmp_path / "varmap_gpddf-ass.csv").exists()


def test_bytes_do_not_depend_on_observation_count():
    rows = []
    for k in (1, 4):
        cfg = small_cfg(policy="patrol_to_and_fro", obs_per_step=k, seed=3)
        rows.append({r["method"]: r for r in run_experiment(cfg).rows}["gpddf-ass"])
    assert rows[0]["bytes"] == rows[1]["bytes"] > 0
    assert rows[1]["n_obs"] == 4 * rows[0]["n_obs"]


def test_unknown_method_rejected():
    with pytest.raises(ValueError):
        ExperimentConfig(methods=("kriging",))


def test_fleet_from_data_one_agent_per_area():
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 10, (30, 2))
    d = Dataset(X, np.sin(X[:, 0]))
    fleet = fleet_from_data(d, [[5.0, 5.0]], SimConfig(areas_shape=(2, 2), support_size=6), H)
    assert len(fleet.agents) == 4
    assert sum(len(a.raw) for a in fleet.agents) == 30
    for a in fleet.agents:
        assert np.all(fleet.partition.area_of(a.raw.locations) == a.id)
    mu, var, t = predict_method("gpddf-ass", fleet, np.array([[5.0, 5.0]]), H,
                                common_support(fleet.partition, fleet.config))
    assert np.isfinite(mu[0]) and t == 3


def test_sweep_and_summary():
    cfg = small_cfg(steps=3)
    cfg.methods = ("gpddf", "local-pitcs")
    rows, timings = sweep(cfg, [2.0, 4.0], [0, 1])
    assert len(rows) == 8 and len(timings) == 8
    summ = summarize_sweep(rows)
    assert [(s["length_scale"], s["method"], s["n"]) for s in summ] == \
        [(2.0, "gpddf", 2), (2.0, "local-pitcs", 2), (4.0, "gpddf", 2), (4.0, "local-pitcs", 2)]


def test_bound_trials_hold():
    reports, extra = bound_trials(100, seed=3)
    assert all(0 <= r.actual_loss <= r.bound for r in reports)
    assert all(1 <= e["length_scale"] <= 20 and 4 <= e["support_size"] <= 18 for e in extra)
