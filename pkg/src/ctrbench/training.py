"""The training loop: epoch iteration, reduce-LR-on-plateau, early
stopping, best-checkpoint retention, and fully seeded run logs.

The scheduler and stopper are pure state machines over the monitored
validation metric, so a logged monitor series replays into the exact
same learning-rate schedule and stop epoch.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np

from ctrbench.dataset import SplitTriple, iterate_batches
from ctrbench.errors import ConfigError, NumericError
from ctrbench.metrics import evaluate
from ctrbench import ndgrad as ng
from ctrbench.models.base import Model

_MONITORS = ("auc", "logloss")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 10000
    batch_size_ladder: tuple[int, ...] = (5000, 2000, 1000)
    max_epochs: int = 100
    monitor: str = "auc"
    patience: int = 2
    scheduler_patience: int = 1
    lr_reduce_factor: float = 10.0
    min_lr: float = 1e-6
    min_delta: float = 1e-6
    eval_every: int = 1
    seed: int = 2018
    deterministic_mode: bool = True

    ALLOWED_FILE_KEYS = frozenset({
        "learning_rate", "batch_size", "batch_size_ladder", "max_epochs",
        "monitor", "patience", "scheduler_patience", "lr_reduce_factor",
        "min_lr", "min_delta", "eval_every", "seed", "deterministic_mode",
    })

    def __post_init__(self):
        self.batch_size_ladder = tuple(int(b) for b in self.batch_size_ladder)
        if self.monitor not in _MONITORS:
            raise ConfigError(f"monitor must be one of {_MONITORS}")
        if self.patience < 1 or self.scheduler_patience < 1:
            raise ConfigError("patience values must be >= 1")
        if self.lr_reduce_factor <= 1:
            raise ConfigError("lr_reduce_factor must be > 1")
        if self.min_delta < 0:
            raise ConfigError("min_delta must be >= 0")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("learning_rate, batch_size, max_epochs must be positive")

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        unknown = set(payload) - cls.ALLOWED_FILE_KEYS
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        kwargs = dict(payload)
        if "batch_size_ladder" in kwargs:
            kwargs["batch_size_ladder"] = tuple(kwargs["batch_size_ladder"])
        return cls(**kwargs)

    def non_paper_flags(self) -> list[str]:
        flags = []
        if self.patience not in (2, 3):
            flags.append(f"patience={self.patience} outside the usual 2-3")
        return flags


def _improved(value: float, best: float | None, min_delta: float, mode: str) -> bool:
    if best is None:
        return True
    if mode == "max":
        return value >= best + min_delta
    return value <= best - min_delta


class PlateauScheduler:
    """Divide lr by the factor after `patience` consecutive evaluations
    without improvement; floor at min_lr; best resets only on improvement."""

    def __init__(self, lr: float, factor: float = 10.0, patience: int = 1,
                 min_lr: float = 1e-6, min_delta: float = 1e-6, mode: str = "max"):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.min_delta = min_delta
        self.mode = mode
        self.best: float | None = None
        self.misses = 0

    def update(self, value: float) -> float:
        if _improved(value, self.best, self.min_delta, self.mode):
            self.best = value
            self.misses = 0
        else:
            self.misses += 1
            if self.misses >= self.patience:
                reduced = self.lr / self.factor
                # division noise must not leak past the floor (1e-5/10 is
                # one ulp above 1e-6 in binary64)
                if reduced <= self.min_lr * (1.0 + 1e-9):
                    reduced = self.min_lr
                self.lr = reduced
                self.misses = 0
        return self.lr


class EarlyStopper:
    """Stop after `patience` consecutive evaluations without improvement."""

    def __init__(self, patience: int = 2, min_delta: float = 1e-6, mode: str = "max"):
        self.patience = patience
        self.min_delta = min_delta
        self.mode = mode
        self.best: float | None = None
        self.misses = 0

    def update(self, value: float) -> bool:
        if _improved(value, self.best, self.min_delta, self.mode):
            self.best = value
            self.misses = 0
            return False
        self.misses += 1
        return self.misses >= self.patience


@dataclass
class RunLog:
    config: dict
    seed: int
    dataset_digests: dict = dc_field(default_factory=dict)
    records: list[dict] = dc_field(default_factory=list)
    events: list[str] = dc_field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0
    total_wall_time: float = 0.0

    _VOLATILE_RECORD_KEYS = ("wall_time",)

    def add_record(self, **kwargs) -> None:
        self.records.append(kwargs)

    def deterministic_payload(self) -> dict:
        """Everything except wall-clock timings; two runs with the same
        seed and config must serialize this identically."""
        records = [{k: v for k, v in r.items()
                    if k not in self._VOLATILE_RECORD_KEYS}
                   for r in self.records]
        return {
            "config": self.config,
            "seed": self.seed,
            "dataset_digests": self.dataset_digests,
            "records": records,
            "events": self.events,
            "stop_reason": self.stop_reason,
            "best_epoch": self.best_epoch,
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps({"kind": "header", "config": self.config,
                             "seed": self.seed,
                             "dataset_digests": self.dataset_digests},
                            sort_keys=True)]
        for r in self.records:
            lines.append(json.dumps({"kind": "eval", **r}, sort_keys=True))
        for e in self.events:
            lines.append(json.dumps({"kind": "event", "message": e}, sort_keys=True))
        lines.append(json.dumps({"kind": "footer", "stop_reason": self.stop_reason,
                                 "best_epoch": self.best_epoch,
                                 "total_wall_time": self.total_wall_time},
                                sort_keys=True))
        return "\n".join(lines) + "\n"


@dataclass
class TrialResult:
    model: str
    dataset_id: str
    config_digest: str
    seed: int
    n_params: int
    best_epoch: int
    epochs_run: int
    val_logloss: float
    val_auc: float
    test_logloss: float
    test_auc: float
    time_per_epoch: float
    total_wall_time: float
    dataset_digests: dict
    status: str = "ok"
    reason: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "TrialResult":
        return cls(**payload)


def config_digest(model_cfg: dict, train_cfg: dict) -> str:
    blob = json.dumps({"model": model_cfg, "training": train_cfg},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.md5(blob.encode()).hexdigest()


def bce_with_logits(logits: ng.Tensor, labels: np.ndarray) -> ng.Tensor:
    """Mean binary cross-entropy from raw logits, in the stable
    softplus(z) - y*z form."""
    y = ng.Tensor(labels)
    return ng.mean_reduce(ng.sub(ng.softplus(logits),
                                 ng.elementwise_mul(y, logits)))


def _param_norm_summary(model: Model) -> str:
    worst = max(model.parameters(),
                key=lambda p: float(np.abs(p.data).max()), default=None)
    if worst is None:
        return "no parameters"
    return (f"max |value| {float(np.abs(worst.data).max()):.3e} "
            f"in {worst.name!r}")


def _run_epoch(model: Model, splits: SplitTriple, cfg: TrainConfig,
               optimizer: ng.Adam, epoch: int, batch_size: int) -> float:
    """One shuffled pass over the training split; returns mean train loss."""
    total_loss = 0.0
    total_n = 0
    shuffle_seed = cfg.seed if cfg.deterministic_mode else None
    for batch_index, batch in enumerate(
            iterate_batches(splits.train, batch_size,
                            shuffle_seed=shuffle_seed, epoch=epoch)):
        with ng.Tape():
            logits = model.forward(batch, train_mode=True)
            loss = bce_with_logits(logits, batch.labels)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch} batch "
                    f"{batch_index} (lr={optimizer.lr:g}, "
                    f"{_param_norm_summary(model)})")
            ng.backward(loss)
        optimizer.step()
        total_loss += value * batch.size
        total_n += batch.size
    return total_loss / max(total_n, 1)


def train(model: Model, splits: SplitTriple, cfg: TrainConfig,
          dataset_id: str = "", model_cfg_snapshot: dict | None = None
          ) -> tuple[Model, RunLog, TrialResult]:
    """Train to the early-stopping point, restore the best snapshot by
    the monitored validation metric, then evaluate once on test."""
    mode = "max" if cfg.monitor == "auc" else "min"
    scheduler = PlateauScheduler(cfg.learning_rate, cfg.lr_reduce_factor,
                                 cfg.scheduler_patience, cfg.min_lr,
                                 cfg.min_delta, mode)
    stopper = EarlyStopper(cfg.patience, cfg.min_delta, mode)
    optimizer = ng.Adam(model.parameters(), lr=cfg.learning_rate)
    model.reset_dropout_rng(cfg.seed)

    model_snapshot = model_cfg_snapshot or {}
    train_snapshot = {k: (list(v) if isinstance(v, tuple) else v)
                      for k, v in asdict(cfg).items()}
    log = RunLog(config={"model": model_snapshot, "training": train_snapshot},
                 seed=cfg.seed, dataset_digests=splits.digests())
    for flag in cfg.non_paper_flags():
        log.events.append(f"non-paper setting: {flag}")

    best_state = model.state_arrays()
    best_value: float | None = None
    best_epoch = 0
    stop_reason = "max_epochs"
    batch_size = cfg.batch_size
    ladder = list(cfg.batch_size_ladder)
    run_start = time.perf_counter()
    epochs_run = 0

    epoch = 1
    while epoch <= cfg.max_epochs:
        epoch_start = time.perf_counter()
        epoch_entry_state = model.state_arrays()
        try:
            train_loss = _run_epoch(model, splits, cfg, optimizer, epoch,
                                    batch_size)
        except MemoryError:
            if not ladder:
                raise
            model.load_state_arrays(epoch_entry_state)
            batch_size = ladder.pop(0)
            log.events.append(
                f"memory exhaustion at epoch {epoch}; retrying with "
                f"batch_size={batch_size}")
            continue
        epochs_run = epoch
        if epoch % cfg.eval_every == 0 or epoch == cfg.max_epochs:
            val = evaluate(model.predict_logits(splits.validation),
                           splits.validation.labels)
            monitored = val.auc if cfg.monitor == "auc" else val.logloss
            improved = _improved(monitored, best_value, cfg.min_delta, mode)
            if improved:
                best_value = monitored
                best_epoch = epoch
                best_state = model.state_arrays()
            lr_before = scheduler.lr
            lr_after = scheduler.update(monitored)
            if lr_after != lr_before:
                log.events.append(
                    f"epoch {epoch}: lr reduced {lr_before:g} -> {lr_after:g}")
            optimizer.lr = lr_after
            log.add_record(epoch=epoch, train_loss=train_loss,
                           val_logloss=val.logloss, val_auc=val.auc,
                           lr=lr_before, batch_size=batch_size,
                           wall_time=time.perf_counter() - epoch_start)
            if stopper.update(monitored):
                stop_reason = "early_stop"
                break
        epoch += 1

    model.load_state_arrays(best_state)
    test = evaluate(model.predict_logits(splits.test), splits.test.labels)
    val_best = evaluate(model.predict_logits(splits.validation),
                        splits.validation.labels)
    total = time.perf_counter() - run_start
    log.stop_reason = stop_reason
    log.best_epoch = best_epoch
    log.total_wall_time = total

    digest = config_digest(model_snapshot, train_snapshot)
    result = TrialResult(
        model=model.name, dataset_id=dataset_id, config_digest=digest,
        seed=cfg.seed, n_params=model.count_params(), best_epoch=best_epoch,
        epochs_run=epochs_run, val_logloss=val_best.logloss,
        val_auc=val_best.auc, test_logloss=test.logloss, test_auc=test.auc,
        time_per_epoch=total / max(epochs_run, 1), total_wall_time=total,
        dataset_digests=splits.digests(),
    )
    return model, log, result


# ---------------------------------------------------------------------------
# Snapshots (little-endian float64 payload plus a JSON manifest)
# ---------------------------------------------------------------------------


def save_snapshot(model: Model, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = []
    offset = 0
    chunks = []
    for name, p in model.params.items():
        blob = p.data.astype("<f8").tobytes()
        manifest.append({"name": name, "shape": list(p.data.shape),
                         "offset": offset, "dtype": "<f8"})
        offset += len(blob)
        chunks.append(blob)
    (directory / "params.bin").write_bytes(b"".join(chunks))
    (directory / "params.json").write_text(json.dumps(
        {"parameters": manifest, "model": model.name}, indent=2))


def load_snapshot(model: Model, directory: Path) -> None:
    directory = Path(directory)
    manifest = json.loads((directory / "params.json").read_text())
    blob = (directory / "params.bin").read_bytes()
    state = {}
    for entry in manifest["parameters"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype=entry["dtype"], count=count,
                            offset=entry["offset"])
        state[entry["name"]] = arr.reshape(shape).astype(np.float64)
    model.load_state_arrays(state)
