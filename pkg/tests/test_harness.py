import itertools
import math

import numpy as np
import pytest

from spikewave import baselines, harness, swp
from spikewave.envsim import build_park_env, build_uniform_env, calibrate, segment_mean
from spikewave.eprop import normalize_cost
from spikewave.errors import InputError
from spikewave.harness import ExperimentConfig
from spikewave.lattice import (LAYER_NAMES, SENSED_LAYERS, CostLayerSet, GridSpec, combine_layers,
                               format_costmap, parse_costmap)
from spikewave.stats import METRICS, trend_rows


def small_env(seed=0, noise=True):
    env = build_park_env(seed, 5, 5, n_trees=(2, 3), n_intraversable=(0, 0), masked_patch=0)
    if not noise:
        env.noise_sigma = {k: 0.0 for k in env.noise_sigma}
        env.foot_traffic[:] = 0.0
    return env


def test_config_defaults_and_round_trip():
    cfg = ExperimentConfig()
    assert (cfg.trials, cfg.delta, cfg.tau, cfg.beta) == (350, 0.5, 25, -10)
    assert (cfg.min_separation, cfg.sampled_paths) == (3, 25)
    assert cfg.layers == LAYER_NAMES
    text = harness.format_config(ExperimentConfig(trials=12, layers=("slope",), start=(1, 2)))
    back = harness.parse_config(text)
    assert back == ExperimentConfig(trials=12, layers=("slope",), start=(1, 2))
    assert harness.parse_config("# nothing\n\ntrials = 3  # short\n").trials == 3
    for bad in ("trails = 3", "trials 3", "trials = many", "layers = wind"):
        with pytest.raises(InputError):
            harness.parse_config(bad)


def test_norms_round_trip():
    env = small_env()
    norms = calibrate(env, 100, np.random.default_rng(0))
    assert harness.parse_norms(harness.format_norms(norms)) == norms
    with pytest.raises(InputError):
        harness.parse_norms("intraversable = 0,1")


def test_zero_trials_leaves_initial_map():
    res = harness.run_learning(ExperimentConfig(trials=0), small_env())
    assert np.all(res.layers.stacked() == 1.0)
    assert res.mse == [0.0] and res.trials == []


def test_noise_free_learning_reaches_model_costs():
    env = small_env(noise=False)
    res = harness.run_learning(ExperimentConfig(trials=400, seed=0), env)
    assert (res.visits > 0).all()
    for n in env.grid.nodes():
        some_nb = next(m for m in env.grid.nodes() if max(abs(m[0] - n[0]), abs(m[1] - n[1])) == 1)
        mean = segment_mean(env, some_nb, n)
        for name in SENSED_LAYERS:
            target = normalize_cost(mean[name], res.layers.norms[name])
            inc = res.layers[name].incoming(n)
            assert np.nanmax(np.abs(inc - target)) < 0.1, (n, name)


def test_learning_outputs_and_determinism(tmp_path):
    env = build_park_env(1, 9, 9)
    cfg = ExperimentConfig(trials=30, seed=4)
    a = harness.run_learning(cfg, env, out_dir=tmp_path / "a")
    b = harness.run_learning(cfg, env, out_dir=tmp_path / "b")
    for name in ("mse.csv", "trials.csv", "final.costmap", "trial_0017.costmap"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert len(list((tmp_path / "a").glob("trial_*.costmap"))) == 31
    assert (tmp_path / "a" / "mse.csv").read_text().splitlines()[0] == "trial,mse"
    assert len(a.mse) == 31 and a.mse[-1] == 0.0
    for i in (0, 9, 30):
        text = (tmp_path / "a" / f"trial_{i:04d}.costmap").read_text()
        assert format_costmap(parse_costmap(text)) == text
    assert b.trials_csv() == a.trials_csv()


def test_unreachable_goal_skips_trial():
    mask = np.ones((5, 5), bool)
    mask[:, 2] = False
    env = build_uniform_env(5, 5)
    env.grid = GridSpec(5, 5, traversable=mask)
    res = harness.run_learning(ExperimentConfig(trials=40, seed=2), env)
    assert any(t.status == "unreachable" for t in res.trials)
    assert len(res.trials) == 40


def brute_force_pairs(grid, sep):
    return sum(1 for a, b in itertools.permutations(grid.nodes(), 2)
               if max(abs(a[0] - b[0]), abs(a[1] - b[1])) >= sep)


def test_pair_enumeration():
    g = GridSpec(5, 5)
    pairs = harness.eval_pairs(g, 3)
    assert len(pairs) == brute_force_pairs(g, 3) == 2 * len({frozenset(p) for p in pairs})
    mask = np.random.default_rng(0).random((7, 6)) > 0.2
    g = GridSpec(6, 7, traversable=mask)
    assert len(harness.eval_pairs(g, 2)) == brute_force_pairs(g, 2)


def test_uniform_map_ties():
    g = GridSpec(5, 5)
    layers = CostLayerSet.fresh(g)
    ev = harness.evaluate_exhaustive(layers, ExperimentConfig(rrt_iterations=500))
    combined = combine_layers(layers, LAYER_NAMES)
    by = {(r.planner, r.start, r.goal): r for r in ev.records}
    for s, t in harness.eval_pairs(g, 3):
        opt, _ = baselines.dijkstra(combined, s, t)
        assert by["swp", s, t].cost_normalized == by["astar", s, t].cost_normalized == opt
    assert ev.table["swp"].means["cost_normalized"] == ev.table["astar"].means["cost_normalized"]


def test_table_means_match_records():
    env = build_park_env(3, 8, 8)
    res = harness.run_learning(ExperimentConfig(trials=60, seed=1), env)
    ev = harness.evaluate_exhaustive(res.layers, ExperimentConfig(rrt_iterations=400))
    for row in ev.table.rows:
        recs = [r for r in ev.records if r.planner == row.planner]
        assert row.n == len(recs)
        for m in METRICS:
            assert row.means[m] == pytest.approx(sum(getattr(r, m) for r in recs) / len(recs))
        if row.planner != "swp":
            assert all(v is not None for v in row.p_adjusted.values())
    assert ev.table.m_comparisons == 15


def test_evaluation_determinism(tmp_path):
    env = build_park_env(2, 7, 7)
    res = harness.run_learning(ExperimentConfig(trials=40, seed=3), env)
    cfg = ExperimentConfig(rrt_iterations=300, seed=9)
    for mode in ("a", "b"):
        harness.evaluate_exhaustive(res.layers, cfg).write(tmp_path / mode)
        harness.evaluate_sampled(env, res.layers, cfg).write(tmp_path / f"s{mode}")
    for name in ("paths.csv", "table.csv", "trend.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    for name in ("paths.csv", "table.csv"):
        assert (tmp_path / "sa" / name).read_bytes() == (tmp_path / "sb" / name).read_bytes()
    head = (tmp_path / "a" / "paths.csv").read_text().splitlines()[0]
    assert head.startswith("planner,start,goal,length_m,cost_current,cost_obstacle,cost_slope,"
                           "cost_normalized")


@pytest.fixture(scope="module")
def learned_park():
    env = build_park_env(0)
    return env, harness.run_learning(ExperimentConfig(), env)


def test_sampled_evaluation_accounting(learned_park):
    env, res = learned_park
    ev = harness.evaluate_sampled(env, res.layers)
    assert ev.n_pairs == 25
    for row in ev.table.rows:
        assert row.n == 25 - row.excluded
        assert all(math.isfinite(v) for v in row.means.values())
    assert ev.table["swp"].means["cost_obstacle"] < ev.table["rrtstar"].means["cost_obstacle"]


def test_adaptation_contract(learned_park):
    env, res = learned_park
    s, g, obstacle = harness.choose_adaptation_task(res.layers, res.visits)
    out = harness.adaptation_scenario(env, res.layers, s, g, obstacle)
    assert obstacle in out.paths[0]
    assert len(out.paths) == 3 and len(out.deltas) == 2
    assert out.deltas[0].shape == (17, 17, 8)
    # the learned map passed in is not touched
    assert res.layers["obstacle"] == res.snapshots[-1]["obstacle"]
    off = next(n for n in env.grid.nodes() if n not in out.paths[0])
    with pytest.raises(InputError):
        harness.adaptation_scenario(env, res.layers, s, g, off)
    paths_csv, deltas_csv = harness.adaptation_csvs(out)
    assert paths_csv.startswith("update,step,row,col\n0,0,")
    assert deltas_csv.startswith("update,row,col,direction,change\n1,")


def test_trend_rows_are_monotone_in_threshold(learned_park):
    env, res = learned_park
    layers = res.layers
    recs = []
    combined = combine_layers(layers, LAYER_NAMES)
    coster = baselines.PathCoster(combined, layers)
    for s, t in harness.eval_pairs(layers.grid, 3)[:400]:
        recs.append(harness._map_record("swp", s, t, swp.plan(combined, s, t), coster))
    rows = trend_rows(recs, 5.1)
    ns = [int(r[2]) for r in rows[1:]]
    assert ns == sorted(ns, reverse=True) and ns[0] == len(recs)
