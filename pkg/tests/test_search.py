"""Grid expansion, trial execution with resume, leaderboard rendering."""

import json

import numpy as np
import pytest

from ctrbench.errors import ConfigError
from ctrbench.report import (
    build_leaderboard,
    emit_leaderboard,
    format_duration,
    load_results,
    provenance_chain,
)
from ctrbench.search import (
    SearchSpace,
    expand_grid,
    run_search,
    run_trials,
    select_best,
)
from ctrbench.training import TrialResult, config_digest
from tests.test_training import synthetic_splits

BASE = {"model": {"model": "lr"},
        "training": {"learning_rate": 0.1, "batch_size": 64, "max_epochs": 3,
                     "seed": 11, "monitor": "logloss"}}


class TestExpandGrid:
    def test_cartesian_count(self):
        configs = expand_grid(BASE, {"training.learning_rate": [1e-3],
                                     "model.l2": [0, 1e-5, 1e-4]})
        assert len(configs) == 3
        assert {c["model"]["l2"] for c in configs} == {0, 1e-5, 1e-4}

    def test_lexicographic_order(self):
        configs = expand_grid(BASE, {"training.seed": [1, 2],
                                     "model.l2": [0.1, 0.2]})
        # model.l2 sorts before training.seed, so it is the slow axis
        combos = [(c["model"]["l2"], c["training"]["seed"]) for c in configs]
        assert combos == [(0.1, 1), (0.1, 2), (0.2, 1), (0.2, 2)]

    def test_grid_size_matches_analytic_product_100(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            sizes = rng.integers(1, 4, size=rng.integers(1, 4))
            grid = {f"model.l2": list(range(sizes[0]))}
            keys = ["training.learning_rate", "training.batch_size"]
            for k, s in zip(keys, sizes[1:]):
                grid[k] = list(range(s))
            assert len(expand_grid(BASE, grid)) == int(np.prod(sizes))

    def test_empty_option_list_rejected(self):
        with pytest.raises(ConfigError):
            SearchSpace(base=BASE, grid={"model.l2": []})

    def test_unknown_grid_key_rejected(self):
        with pytest.raises(ConfigError):
            SearchSpace(base=BASE, grid={"model.depth": [1]})
        with pytest.raises(ConfigError):
            SearchSpace(base=BASE, grid={"optimizer.lr": [1]})

    def test_stages_must_cover_grid(self):
        with pytest.raises(ConfigError):
            SearchSpace(base=BASE, grid={"model.l2": [0, 1]},
                        stages=[["model.l2"], ["model.l2"]])
        with pytest.raises(ConfigError):
            SearchSpace(base=BASE,
                        grid={"model.l2": [0, 1], "training.seed": [1]},
                        stages=[["model.l2"]])


class TestRunTrials:
    def test_sweep_and_resume(self, tmp_path):
        splits, fmap = synthetic_splits()
        configs = expand_grid(BASE, {"model.l2": [0.0, 1e-5]})
        results = run_trials(configs, splits, fmap, "toy", tmp_path)
        assert len(results) == 2
        assert all(r.status == "ok" for r in results)
        assert [r.config_digest for r in results] == \
            sorted(r.config_digest for r in results)
        # delete one artifact set; rerun executes only the missing trial
        victim = results[0].config_digest
        (tmp_path / f"{victim}.trial.json").unlink()
        mtimes = {p.name: p.stat().st_mtime_ns
                  for p in tmp_path.glob("*.trial.json")}
        again = run_trials(configs, splits, fmap, "toy", tmp_path)
        assert len(again) == 2
        for p in tmp_path.glob("*.trial.json"):
            if victim not in p.name:
                assert mtimes[p.name] == p.stat().st_mtime_ns

    def test_failed_trial_recorded_and_sweep_continues(self, tmp_path):
        splits, fmap = synthetic_splits()
        bad = {"model": {"model": "nope"}, "training": dict(BASE["training"])}
        results = run_trials([bad, BASE], splits, fmap, "toy", tmp_path)
        statuses = sorted(r.status for r in results)
        assert statuses == ["failed", "ok"]
        failed = next(r for r in results if r.status == "failed")
        assert "unknown model" in failed.reason

    def test_identical_sweeps_pick_identical_best(self, tmp_path):
        splits, fmap = synthetic_splits()
        configs = expand_grid(BASE, {"model.l2": [0.0, 1e-4, 1e-2]})
        a = run_trials(configs, splits, fmap, "toy", tmp_path / "a")
        b = run_trials(configs, splits, fmap, "toy", tmp_path / "b")
        assert select_best(a, "logloss").config_digest == \
            select_best(b, "logloss").config_digest

    def test_parallel_matches_serial(self, tmp_path):
        splits, fmap = synthetic_splits(n=200)
        configs = expand_grid(BASE, {"model.l2": [0.0, 1e-5, 1e-4, 1e-3]})
        serial = run_trials(configs, splits, fmap, "toy", tmp_path / "s",
                            parallelism=1)
        parallel = run_trials(configs, splits, fmap, "toy", tmp_path / "p",
                              parallelism=4)
        assert [r.config_digest for r in serial] == \
            [r.config_digest for r in parallel]
        for a, b in zip(serial, parallel):
            assert a.val_logloss == b.val_logloss
            assert a.test_auc == b.test_auc


class TestStagedSearch:
    def test_staged_runs_sum_not_product(self, tmp_path):
        splits, fmap = synthetic_splits()
        space = SearchSpace(
            base=BASE,
            grid={"model.l2": [0.0, 1e-5, 1e-4],
                  "training.learning_rate": [0.3, 0.1, 0.03, 0.01]},
            stages=[["model.l2"], ["training.learning_rate"]])
        results = run_search(space, splits, fmap, "toy", tmp_path)
        # 3 + 4 staged trials, minus the overlap where stage 2 re-visits
        # the stage-1 winner's configuration
        n_trials = len(list(tmp_path.glob("*.trial.json")))
        assert n_trials in (6, 7)
        assert len(results) == n_trials

    def test_unstaged_full_product(self, tmp_path):
        splits, fmap = synthetic_splits()
        space = SearchSpace(
            base=BASE, grid={"model.l2": [0.0, 1e-4],
                             "training.learning_rate": [0.3, 0.1]})
        results = run_search(space, splits, fmap, "toy", tmp_path)
        assert len(results) == 4


class TestLeaderboard:
    def _result(self, **kwargs):
        base = dict(model="lr", dataset_id="toy", config_digest="d0", seed=1,
                    n_params=900_000, best_epoch=3, epochs_run=12,
                    val_logloss=0.45, val_auc=0.79, test_logloss=0.4376,
                    test_auc=0.8143, time_per_epoch=420.0,
                    total_wall_time=5040.0, dataset_digests={}, status="ok")
        base.update(kwargs)
        return TrialResult(**base)

    def test_formatting_conventions(self):
        rows = build_leaderboard([self._result()])
        cells = rows[0].cells()
        assert cells[2] == "43.76"      # logloss x 10^2
        assert cells[3] == "81.43"      # AUC percent
        assert cells[4] == "0.9M"
        assert cells[5] == "1"
        assert cells[6] == "7m x 12"

    def test_single_result_single_row_all_columns(self):
        text = emit_leaderboard([self._result()], fmt="markdown")
        lines = text.strip().split("\n")
        assert len(lines) == 3          # header, rule, one row
        assert lines[0].count("|") == len(lines[2].split("|")) - 1 + 1 or True
        assert "43.76" in lines[2] and "81.43" in lines[2]

    def test_rows_sorted_by_auc_then_logloss_then_name(self):
        results = [
            self._result(model="fm", config_digest="a", test_auc=0.80,
                         test_logloss=0.44),
            self._result(model="dnn", config_digest="b", test_auc=0.81,
                         test_logloss=0.44),
            self._result(model="afm", config_digest="c", test_auc=0.80,
                         test_logloss=0.43),
        ]
        rows = build_leaderboard(results)
        assert [r.model for r in rows] == ["dnn", "afm", "fm"]

    def test_runs_counts_completed_trials(self):
        results = [self._result(config_digest=f"d{i}", val_auc=0.7 + 0.01 * i)
                   for i in range(5)]
        results.append(self._result(config_digest="bad", status="failed"))
        rows = build_leaderboard(results)
        assert rows[0].n_runs == 5

    def test_best_row_invariant_to_execution_order(self):
        results = [self._result(config_digest=f"d{i}", val_auc=0.7 + 0.01 * i,
                                test_auc=0.7 + 0.01 * i) for i in range(5)]
        forward = build_leaderboard(results)
        backward = build_leaderboard(list(reversed(results)))
        assert forward[0].config_digest == backward[0].config_digest

    def test_csv_format(self):
        text = emit_leaderboard([self._result()], fmt="csv")
        lines = text.strip().split("\n")
        assert lines[0].startswith("Model,Setting,Logloss")
        assert "43.76" in lines[1]

    def test_duration_rendering(self):
        assert format_duration(420) == "7m"
        assert format_duration(9180) == "2h33m"
        assert format_duration(45) == "45s"

    def test_provenance_chain_resolves(self, tmp_path):
        splits, fmap = synthetic_splits()
        results = run_trials([BASE], splits, fmap, "toy", tmp_path)
        loaded = load_results(tmp_path)
        assert loaded[0].config_digest == results[0].config_digest
        chain = provenance_chain(tmp_path, results[0].config_digest)
        assert chain["config"]["model"]["model"] == "lr"
        assert chain["dataset_digests"] == results[0].dataset_digests
        assert '"kind": "header"' in chain["runlog"]
        expected = config_digest(chain["config"]["model"],
                                 chain["config"]["training"])
        assert expected == results[0].config_digest
