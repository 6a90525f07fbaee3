"""Grid expansion and trial execution with resume and provenance.

Every trial is identified by the md5 of its canonicalized config; a
finished trial leaves <digest>.trial.json and <digest>.runlog.jsonl in
the run directory, and a rerun of the same sweep skips it. Trials are
pure functions of (config, dataset digests, seed), so parallel execution
cannot change results.
"""

from __future__ import annotations

import copy
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path

from ctrbench.config import parse_experiment
from ctrbench.dataset import SplitTriple
from ctrbench.errors import ConfigError, CtrbenchError
from ctrbench.models import build_model
from ctrbench.models.base import ModelConfig
from ctrbench.preprocess import FeatureMap
from ctrbench.training import TrainConfig, TrialResult, config_digest, train


def experiment_digest(config: dict) -> str:
    """Digest of the fully resolved config; invalid configs fall back to
    hashing their raw dict so failures still get a stable identity."""
    try:
        _, _, resolved = parse_experiment(config)
        return config_digest(resolved["model"], resolved["training"])
    except CtrbenchError:
        return config_digest(dict(config.get("model", {})),
                             dict(config.get("training", {})))


@dataclass
class SearchSpace:
    """A base config plus per-key option lists; dotted keys address the
    model/training sections. Optional stages tune key groups
    sequentially, carrying each stage's best forward."""

    base: dict
    grid: dict[str, list] = dc_field(default_factory=dict)
    stages: list[list[str]] | None = None

    ALLOWED_FILE_KEYS = frozenset({"base", "grid", "stages"})

    def __post_init__(self):
        for key, options in self.grid.items():
            section, _, name = key.partition(".")
            if section not in ("model", "training") or not name:
                raise ConfigError(
                    f"grid key {key!r} must look like model.<key> or "
                    f"training.<key>")
            allowed = ModelConfig.ALLOWED_FILE_KEYS if section == "model" \
                else TrainConfig.ALLOWED_FILE_KEYS
            if name not in allowed:
                raise ConfigError(f"grid key {key!r} is not a config key")
            if not isinstance(options, list) or not options:
                raise ConfigError(f"grid key {key!r} needs a non-empty list")
        if self.stages is not None:
            seen: set[str] = set()
            for group in self.stages:
                for key in group:
                    if key not in self.grid:
                        raise ConfigError(f"stage key {key!r} not in grid")
                    if key in seen:
                        raise ConfigError(f"stage key {key!r} repeated")
                    seen.add(key)
            if seen != set(self.grid):
                raise ConfigError("stages must cover every grid key exactly once")

    @classmethod
    def from_dict(cls, payload: dict) -> "SearchSpace":
        unknown = set(payload) - cls.ALLOWED_FILE_KEYS
        if unknown:
            raise ConfigError(f"unknown search space keys: {sorted(unknown)}")
        if "base" not in payload:
            raise ConfigError("search space needs a 'base' config")
        return cls(base=payload["base"], grid=payload.get("grid", {}),
                   stages=payload.get("stages"))


def _apply_option(config: dict, dotted: str, value) -> None:
    section, _, name = dotted.partition(".")
    config.setdefault(section, {})[name] = value


def expand_grid(base: dict, grid: dict[str, list]) -> list[dict]:
    """Deterministic cartesian expansion: keys in lexicographic order,
    options in list order."""
    keys = sorted(grid)
    configs = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        cfg = copy.deepcopy(base)
        for key, value in zip(keys, combo):
            _apply_option(cfg, key, value)
        configs.append(cfg)
    return configs


def _trial_paths(out_dir: Path, digest: str) -> tuple[Path, Path, Path]:
    return (out_dir / f"{digest}.trial.json",
            out_dir / f"{digest}.runlog.jsonl",
            out_dir / f"{digest}.config.json")


def run_one_trial(config: dict, splits: SplitTriple, fmap: FeatureMap,
                  dataset_id: str, out_dir: Path,
                  save_model_snapshot: bool = False) -> TrialResult:
    """Train one config in isolation and persist its artifacts (trial
    result, run log, resolved config). Failures are recorded, not raised."""
    digest = experiment_digest(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trial_path, runlog_path, config_path = _trial_paths(out_dir, digest)
    stored_config = {"model": dict(config.get("model", {})),
                     "training": dict(config.get("training", {}))}
    try:
        model_cfg, train_cfg, resolved = parse_experiment(config)
        stored_config = resolved
        model = build_model(model_cfg, fmap, seed=train_cfg.seed)
        model, log, result = train(model, splits, train_cfg,
                                   dataset_id=dataset_id,
                                   model_cfg_snapshot=resolved["model"])
        runlog_path.write_text(log.to_jsonl())
        if save_model_snapshot:
            from ctrbench.training import save_snapshot

            save_snapshot(model, out_dir / f"{digest}.snapshot")
    except CtrbenchError as exc:
        result = TrialResult(
            model=str(stored_config["model"].get("model", "?")),
            dataset_id=dataset_id, config_digest=digest,
            seed=int(stored_config["training"].get("seed", 0)),
            n_params=0, best_epoch=0, epochs_run=0, val_logloss=float("nan"),
            val_auc=float("nan"), test_logloss=float("nan"),
            test_auc=float("nan"), time_per_epoch=0.0, total_wall_time=0.0,
            dataset_digests=splits.digests(), status="failed",
            reason=f"{type(exc).__name__}: {exc}")
    config_path.write_text(json.dumps(stored_config, indent=2, sort_keys=True))
    trial_path.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    return result


def run_trials(configs: list[dict], splits: SplitTriple, fmap: FeatureMap,
               dataset_id: str, out_dir: Path,
               parallelism: int = 1) -> list[TrialResult]:
    """Run a list of resolved configs; completed digests are loaded from
    disk instead of re-executed. Output is ordered by config digest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    results: dict[str, TrialResult] = {}
    pending: list[dict] = []
    seen_digests: set[str] = set()
    for config in configs:
        digest = experiment_digest(config)
        if digest in seen_digests:
            continue
        seen_digests.add(digest)
        trial_path, _, _ = _trial_paths(out_dir, digest)
        if trial_path.exists():
            results[digest] = TrialResult.from_dict(
                json.loads(trial_path.read_text()))
        else:
            pending.append(config)
    if parallelism == 1 or len(pending) <= 1:
        finished = [run_one_trial(c, splits, fmap, dataset_id, out_dir)
                    for c in pending]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            finished = list(pool.map(
                run_one_trial, pending,
                itertools.repeat(splits), itertools.repeat(fmap),
                itertools.repeat(dataset_id), itertools.repeat(out_dir)))
    for result in finished:
        results[result.config_digest] = result
    return [results[d] for d in sorted(results)]


def select_best(results: list[TrialResult], monitor: str = "auc") -> TrialResult:
    """Best completed trial by validation monitor; ties break by
    validation logloss, then digest, so selection is order-invariant."""
    completed = [r for r in results if r.status == "ok"]
    if not completed:
        raise ConfigError("no completed trials to select from")
    if monitor == "auc":
        key = lambda r: (-r.val_auc, r.val_logloss, r.config_digest)
    else:
        key = lambda r: (r.val_logloss, -r.val_auc, r.config_digest)
    return min(completed, key=key)


def run_search(space: SearchSpace, splits: SplitTriple, fmap: FeatureMap,
               dataset_id: str, out_dir: Path, parallelism: int = 1,
               monitor: str = "auc") -> list[TrialResult]:
    """Full sweep: plain cartesian grid, or staged groups each expanded
    around the best config of the previous stage."""
    if not space.stages:
        configs = expand_grid(space.base, space.grid)
        return run_trials(configs, splits, fmap, dataset_id, out_dir,
                          parallelism)
    base = copy.deepcopy(space.base)
    all_results: list[TrialResult] = []
    for group in space.stages:
        stage_grid = {k: space.grid[k] for k in group}
        configs = expand_grid(base, stage_grid)
        stage_results = run_trials(configs, splits, fmap, dataset_id, out_dir,
                                   parallelism)
        all_results.extend(stage_results)
        best = select_best(stage_results, monitor)
        best_config = json.loads(
            (Path(out_dir) / f"{best.config_digest}.config.json").read_text())
        base = best_config
    return sorted({r.config_digest: r for r in all_results}.values(),
                  key=lambda r: r.config_digest)
