"""Leaderboard reports: best trial per (model, dataset setting), with
logloss scaled by 10^2 and AUC as a percentage, both at two decimals."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

from ctrbench.errors import ConfigError
from ctrbench.training import TrialResult

COLUMNS = ("Model", "Setting", "Logloss", "AUC(%)", "#Params", "#Runs",
           "TimexEpochs", "ConfigDigest", "Seed")


def format_logloss(value: float) -> str:
    return f"{value * 100:.2f}"


def format_auc(value: float) -> str:
    return f"{value * 100:.2f}"


def format_params(count: int) -> str:
    return f"{count / 1e6:.1f}M"


def format_duration(seconds: float) -> str:
    seconds = max(seconds, 0.0)
    if seconds < 60:
        return f"{round(seconds)}s"
    minutes = int(seconds // 60)
    if minutes < 60:
        return f"{minutes}m"
    return f"{minutes // 60}h{minutes % 60}m"


@dataclass
class LeaderboardRow:
    model: str
    setting: str
    logloss: float
    auc: float
    n_params: int
    n_runs: int
    time_per_epoch: float
    epochs: int
    config_digest: str
    seed: int

    def cells(self) -> list[str]:
        return [
            self.model, self.setting, format_logloss(self.logloss),
            format_auc(self.auc), format_params(self.n_params),
            str(self.n_runs),
            f"{format_duration(self.time_per_epoch)} x {self.epochs}",
            self.config_digest, str(self.seed),
        ]


def build_leaderboard(results: list[TrialResult],
                      monitor: str = "auc") -> list[LeaderboardRow]:
    """One row per (model, setting): the best completed trial by the
    validation monitor, reporting its test metrics. #Runs counts every
    completed trial in the group."""
    if not results:
        raise ConfigError("no trial results to report")
    groups: dict[tuple[str, str], list[TrialResult]] = {}
    for r in results:
        if r.status != "ok":
            continue
        groups.setdefault((r.model, r.dataset_id), []).append(r)
    if not groups:
        raise ConfigError("no completed trials to report")
    rows = []
    for (model, setting), trials in groups.items():
        from ctrbench.search import select_best

        best = select_best(trials, monitor)
        rows.append(LeaderboardRow(
            model=model, setting=setting, logloss=best.test_logloss,
            auc=best.test_auc, n_params=best.n_params, n_runs=len(trials),
            time_per_epoch=best.time_per_epoch, epochs=best.epochs_run,
            config_digest=best.config_digest, seed=best.seed))
    rows.sort(key=lambda r: (-r.auc, r.logloss, r.model))
    return rows


def emit_leaderboard(results: list[TrialResult], fmt: str = "markdown",
                     monitor: str = "auc") -> str:
    rows = build_leaderboard(results, monitor)
    if fmt in ("md", "markdown"):
        lines = ["| " + " | ".join(COLUMNS) + " |",
                 "|" + "|".join("---" for _ in COLUMNS) + "|"]
        for row in rows:
            lines.append("| " + " | ".join(row.cells()) + " |")
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(COLUMNS)
        for row in rows:
            writer.writerow(row.cells())
        return buf.getvalue()
    raise ConfigError(f"unknown report format {fmt!r}; use markdown or csv")


def load_results(runs_dir: Path) -> list[TrialResult]:
    """Collect every persisted trial result under a run directory."""
    runs_dir = Path(runs_dir)
    results = []
    for path in sorted(runs_dir.glob("*.trial.json")):
        results.append(TrialResult.from_dict(json.loads(path.read_text())))
    if not results:
        raise ConfigError(f"no trial results under {runs_dir}")
    return results


def provenance_chain(runs_dir: Path, digest: str) -> dict:
    """Resolve a leaderboard row's digest to its stored config, run log,
    and dataset digests."""
    runs_dir = Path(runs_dir)
    trial_path = runs_dir / f"{digest}.trial.json"
    config_path = runs_dir / f"{digest}.config.json"
    runlog_path = runs_dir / f"{digest}.runlog.jsonl"
    if not (trial_path.exists() and config_path.exists()):
        raise ConfigError(f"incomplete provenance for digest {digest}")
    trial = json.loads(trial_path.read_text())
    return {
        "config": json.loads(config_path.read_text()),
        "trial": trial,
        "runlog": runlog_path.read_text() if runlog_path.exists() else "",
        "dataset_digests": trial["dataset_digests"],
    }
