"""Command-line interface.

Pipeline: synth -> preprocess -> split -> train/tune -> report.
Every command accepts --seed and prints its resolved configuration
before doing any work. Exit codes: 0 ok, 1 usage/config, 2 data,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from ctrbench.config import load_config_file, load_structured_file, parse_experiment
from ctrbench.dataset import (
    encode_and_store,
    load_split,
    partition_digest,
    split_dataset,
    write_manifest,
)
from ctrbench.errors import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_NUMERIC,
    EXIT_OK,
    ConfigError,
    DataError,
    NumericError,
)
from ctrbench import ndgrad as ng
from ctrbench.models import MODEL_NAMES, build_model
from ctrbench.preprocess import (
    SEQUENCE_SEPARATOR,
    DatasetRecipe,
    build_feature_map,
    read_csv_rows,
)
from ctrbench.report import emit_leaderboard, load_results
from ctrbench.search import SearchSpace, run_one_trial, run_search
from ctrbench.synth import SynthSpec, generate_files
from ctrbench.training import bce_with_logits


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _print_resolved(name: str, payload: dict) -> None:
    print(f"# resolved {name} config")
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


def _load_recipe(path: Path) -> DatasetRecipe:
    payload = load_structured_file(path)
    if "dataset" in payload:
        payload = payload["dataset"]
    return DatasetRecipe.from_dict(payload)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    payload = load_structured_file(args.spec)
    if args.seed is not None:
        payload["seed"] = args.seed
    spec = SynthSpec.from_dict(payload)
    _print_resolved("synth", spec.__dict__)
    csv_path, oracle_path, recipe_path = generate_files(spec, args.out)
    oracle = json.loads(oracle_path.read_text())
    print(f"wrote {csv_path}, {oracle_path}, {recipe_path}")
    print(f"oracle logloss {oracle['oracle_logloss']:.6f}, "
          f"oracle auc {oracle['oracle_auc']:.6f}, "
          f"positive rate {oracle['realized_positive_rate']:.4f}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    recipe = _load_recipe(args.recipe)
    if args.seed is not None:
        recipe.split_seed = args.seed
    _print_resolved("preprocess", {
        "label": recipe.label, "split_seed": recipe.split_seed,
        "fields": [s.name for s in recipe.fields]})
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    specs = recipe.output_specs()
    n = 0
    with open(out_dir / "tokens.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([recipe.label] + [s.name for s in specs])
        for row, label in read_csv_rows(args.input, recipe):
            cells = [str(label)]
            for spec in specs:
                value = row[spec.name]
                cells.append(SEQUENCE_SEPARATOR.join(value)
                             if spec.kind == "sequence" else value)
            writer.writerow(cells)
            n += 1
    (out_dir / "recipe.json").write_text(json.dumps({
        "label": recipe.label,
        "timestamp_layout": recipe.timestamp_layout,
        "split_seed": recipe.split_seed,
        "fields": [
            {"name": s.name, "kind": s.kind, "min_count": s.min_count,
             "numeric_transform": s.numeric_transform, "max_len": s.max_len,
             "pooling": s.pooling, "drop": False, "derived_from": None}
            for s in specs
        ],
    }, indent=2))
    print(f"wrote {n} token rows to {out_dir / 'tokens.csv'}")
    return EXIT_OK


def _read_token_table(data_dir: Path) -> tuple[DatasetRecipe, list[dict], list[int]]:
    recipe_path = Path(data_dir) / "recipe.json"
    tokens_path = Path(data_dir) / "tokens.csv"
    if not recipe_path.exists() or not tokens_path.exists():
        raise DataError(f"{data_dir} does not contain recipe.json and tokens.csv "
                        f"(run preprocess first)")
    recipe = DatasetRecipe.from_dict(json.loads(recipe_path.read_text()))
    rows, labels = [], []
    with open(tokens_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for i, raw in enumerate(reader):
            label = raw[recipe.label]
            if label not in ("0", "1"):
                raise DataError(f"bad label {label!r}", row=i, field=recipe.label)
            labels.append(int(label))
            row = {}
            for spec in recipe.fields:
                value = raw[spec.name]
                row[spec.name] = ([t for t in value.split(SEQUENCE_SEPARATOR)
                                   if t != ""]
                                  if spec.kind == "sequence" else value)
            rows.append(row)
    return recipe, rows, labels


def cmd_split(args) -> int:
    data_dir = Path(args.data)
    recipe, rows, labels = _read_token_table(data_dir)
    seed = args.seed if args.seed is not None else recipe.split_seed
    _print_resolved("split", {"seed": seed, "n_rows": len(rows),
                              "ratios": "8:1:1"})
    train_idx, val_idx, test_idx = split_dataset(len(rows), seed)
    fmap = build_feature_map((rows[i] for i in train_idx), recipe.fields)
    md5s = {}
    for part, idx in (("train", train_idx), ("validation", val_idx),
                      ("test", test_idx)):
        ds = encode_and_store([rows[i] for i in idx],
                              [labels[i] for i in idx],
                              fmap, data_dir / f"{part}.bars")
        md5s[part] = ds.md5
        print(f"{part}: {len(idx)} samples, md5 {ds.md5}")
    write_manifest(
        data_dir, fmap, seed, md5s,
        dataset_id=f"{data_dir.name}-s{seed}",
        extra={"partition_digests": {
            "train": partition_digest(train_idx),
            "validation": partition_digest(val_idx),
            "test": partition_digest(test_idx)}})
    print(f"total features {fmap.total_features} across "
          f"{len(fmap.fields)} fields")
    return EXIT_OK


def cmd_train(args) -> int:
    payload = load_config_file(args.config)
    _, _, resolved = parse_experiment(payload, seed_override=args.seed)
    _print_resolved("experiment", resolved)
    splits, fmap, manifest = load_split(args.data)
    result = run_one_trial(resolved, splits, fmap, manifest["dataset_id"],
                           Path(args.out), save_model_snapshot=True)
    if result.status != "ok":
        raise ConfigError(f"trial failed: {result.reason}")
    print(f"config digest {result.config_digest}")
    print(f"best epoch {result.best_epoch} of {result.epochs_run}")
    print(f"val  logloss {result.val_logloss:.6f}  auc {result.val_auc:.6f}")
    print(f"test logloss {result.test_logloss:.6f}  auc {result.test_auc:.6f}")
    print(f"params {result.n_params}")
    return EXIT_OK


def cmd_tune(args) -> int:
    payload = load_structured_file(args.space)
    section = payload.get("search", payload)
    space = SearchSpace.from_dict(section)
    if args.seed is not None:
        space.base.setdefault("training", {})["seed"] = args.seed
    _print_resolved("search", {"base": space.base,
                               "grid": {k: list(v) for k, v in space.grid.items()},
                               "stages": space.stages})
    splits, fmap, manifest = load_split(args.data)
    results = run_search(space, splits, fmap, manifest["dataset_id"],
                         Path(args.out), parallelism=args.parallel)
    print(f"{len(results)} trials complete "
          f"({sum(r.status == 'ok' for r in results)} ok)")
    print(emit_leaderboard(results, fmt="markdown"))
    return EXIT_OK


def cmd_report(args) -> int:
    results = load_results(args.runs)
    _print_resolved("report", {"runs": str(args.runs), "format": args.format,
                               "n_trials": len(results)})
    print(emit_leaderboard(results, fmt=args.format))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from ctrbench.dataset import Batch
    from ctrbench.models.base import ModelConfig
    from ctrbench.preprocess import FieldSpec

    seed = args.seed if args.seed is not None else 0
    n_fields, vocab_tokens, batch_size = 5, 6, 4
    rows = [{f"f{i}": f"t{v}" for i in range(n_fields)}
            for v in range(vocab_tokens)]
    fmap = build_feature_map(rows, [FieldSpec(f"f{i}", min_count=1)
                                    for i in range(n_fields)])
    kwargs = {"model": args.model, "embedding_dim": 4, "hidden_units": (8,),
              "init_scale": 0.5}
    if args.model == "dcn":
        kwargs["cross_layers"] = 2
    elif args.model == "xdeepfm":
        kwargs["cin_layer_sizes"] = (3, 2)
    elif args.model == "afm":
        kwargs["attention_dim"] = 3
    elif args.model == "hofm":
        kwargs["order3_dim"] = 3
    cfg = ModelConfig(**kwargs)
    _print_resolved("gradcheck", {"model": args.model, "seed": seed,
                                  "batch_size": batch_size, "tol": args.tol})
    model = build_model(cfg, fmap, seed=seed)
    rng = np.random.default_rng(seed)
    batch = Batch(
        columns={f"f{i}": rng.integers(0, vocab_tokens + 2, size=batch_size)
                 .astype(np.uint32) for i in range(n_fields)},
        labels=rng.integers(0, 2, size=batch_size).astype(np.float64))

    def loss():
        return bce_with_logits(model.forward(batch, train_mode=True),
                               batch.labels)

    report = ng.grad_check(loss, model.parameters(), tol=args.tol)
    print(report)
    if not report.ok:
        raise NumericError(
            f"gradient check failed for {sorted(report.failed)}")
    print(f"all {len(report.max_rel_error)} parameters within tol {args.tol:g}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="ctrbench",
                     description="Reproducible CTR-prediction benchmarking")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="synth spec (yaml/json)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("preprocess", help="CSV to token table")
    p.add_argument("--recipe", required=True, help="dataset recipe (yaml/json)")
    p.add_argument("--in", dest="input", required=True, help="raw CSV file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the recipe split seed")
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("split", help="seeded 8:1:1 split and binary encode")
    p.add_argument("--data", required=True, help="preprocess output dir")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("train", help="train one experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="split output dir")
    p.add_argument("--out", required=True, help="run artifact dir")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("tune", help="grid search over a space file")
    p.add_argument("--space", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("report", help="leaderboard from stored trials")
    p.add_argument("--runs", required=True)
    p.add_argument("--format", choices=("md", "markdown", "csv"),
                   default="md")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("gradcheck", help="finite-difference check a model")
    p.add_argument("--model", required=True, choices=sorted(MODEL_NAMES))
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
