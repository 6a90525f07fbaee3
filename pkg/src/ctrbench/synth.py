"""Seeded synthetic CTR data with a known ground-truth click model.

Labels are drawn as Bernoulli(sigmoid(score + intercept)) where the
score comes from a chosen functional form over latent per-token
embeddings. The generator records the exact logloss of the true
probabilities on the emitted sample (the Bayes score for this data), so
trained models have a hard floor to be measured against.

Optional numeric and sequence columns are pure pipeline-coverage noise:
they carry no signal, keeping the oracle exact.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ctrbench.errors import ConfigError
from ctrbench.metrics import auc
from ctrbench.preprocess import SEQUENCE_SEPARATOR

_GROUND_TRUTHS = ("constant", "linear", "pairwise_fm", "third_order")


@dataclass
class SynthSpec:
    n_samples: int = 10_000
    categorical_vocab_sizes: tuple[int, ...] = (50, 50, 50, 50, 50, 50)
    numeric_fields: int = 0
    sequence_fields: tuple[tuple[int, int], ...] = ()  # (vocab, max_len)
    ground_truth: str = "pairwise_fm"
    latent_dim: int = 4
    positive_rate: float = 0.5
    score_std: float = 1.5
    seed: int = 0

    ALLOWED_FILE_KEYS = frozenset({
        "n_samples", "categorical_vocab_sizes", "numeric_fields",
        "sequence_fields", "ground_truth", "latent_dim", "positive_rate",
        "score_std", "seed",
    })

    def __post_init__(self):
        self.categorical_vocab_sizes = tuple(int(v) for v in
                                             self.categorical_vocab_sizes)
        self.sequence_fields = tuple((int(a), int(b))
                                     for a, b in self.sequence_fields)
        if self.ground_truth not in _GROUND_TRUTHS:
            raise ConfigError(f"ground_truth must be one of {_GROUND_TRUTHS}")
        if not 0.0 < self.positive_rate < 1.0:
            raise ConfigError("positive_rate must be in (0, 1)")
        if self.n_samples < 1 or self.latent_dim < 1 or self.score_std < 0:
            raise ConfigError("n_samples, latent_dim, score_std must be positive")
        if self.ground_truth == "pairwise_fm" and len(self.categorical_vocab_sizes) < 2:
            raise ConfigError("pairwise_fm needs at least 2 categorical fields")
        if self.ground_truth == "third_order" and len(self.categorical_vocab_sizes) < 3:
            raise ConfigError("third_order needs at least 3 categorical fields")

    @classmethod
    def from_dict(cls, payload: dict) -> "SynthSpec":
        unknown = set(payload) - cls.ALLOWED_FILE_KEYS
        if unknown:
            raise ConfigError(f"unknown synth spec keys: {sorted(unknown)}")
        kwargs = dict(payload)
        if "categorical_vocab_sizes" in kwargs:
            kwargs["categorical_vocab_sizes"] = tuple(
                kwargs["categorical_vocab_sizes"])
        if "sequence_fields" in kwargs:
            kwargs["sequence_fields"] = tuple(
                tuple(x) for x in kwargs["sequence_fields"])
        return cls(**kwargs)


@dataclass
class OracleRecord:
    oracle_logloss: float
    oracle_auc: float
    realized_positive_rate: float
    target_positive_rate: float
    intercept: float
    n_samples: int
    seed: int
    ground_truth: str

    def to_dict(self) -> dict:
        return asdict(self)


def _true_scores(spec: SynthSpec, rng: np.random.Generator,
                 indices: list[np.ndarray]) -> np.ndarray:
    m = len(spec.categorical_vocab_sizes)
    n = spec.n_samples
    d = spec.latent_dim
    if spec.ground_truth == "constant":
        return np.zeros(n)
    if spec.ground_truth == "linear":
        sigma = spec.score_std / math.sqrt(m)
        weights = [rng.normal(0.0, sigma, size=v)
                   for v in spec.categorical_vocab_sizes]
        return sum(weights[f][indices[f]] for f in range(m))
    n_pairs = m * (m - 1) // 2
    n_triples = m * (m - 1) * (m - 2) // 6
    if spec.ground_truth == "pairwise_fm":
        tau = (spec.score_std ** 2 / (n_pairs * d)) ** 0.25
    else:
        tau = (spec.score_std ** 2 / (max(n_triples, 1) * d)) ** (1.0 / 6.0)
    latents = [rng.normal(0.0, tau, size=(v, d))
               for v in spec.categorical_vocab_sizes]
    rows = [latents[f][indices[f]] for f in range(m)]  # each (n, d)
    score = np.zeros(n)
    if spec.ground_truth == "pairwise_fm":
        for i in range(m):
            for j in range(i + 1, m):
                score += (rows[i] * rows[j]).sum(axis=1)
    else:
        for i in range(m):
            for j in range(i + 1, m):
                pair = rows[i] * rows[j]
                for k in range(j + 1, m):
                    score += (pair * rows[k]).sum(axis=1)
    return score


def _solve_intercept(scores: np.ndarray, target: float) -> float:
    """Bisection for c with mean(sigmoid(scores + c)) == target."""
    lo, hi = -30.0, 30.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _sigmoid(scores + mid).mean() < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def generate(spec: SynthSpec) -> tuple[str, OracleRecord]:
    """Returns (csv_text, oracle). Same spec and seed give identical
    bytes and identical oracle numbers."""
    rng = np.random.default_rng(spec.seed)
    m = len(spec.categorical_vocab_sizes)
    n = spec.n_samples
    indices = [rng.integers(0, v, size=n)
               for v in spec.categorical_vocab_sizes]
    scores = _true_scores(spec, rng, indices)
    intercept = _solve_intercept(scores, spec.positive_rate)
    p_true = _sigmoid(scores + intercept)
    labels = (rng.random(n) < p_true).astype(np.uint8)

    numeric = [np.where(rng.random(n) < 0.05, -1.0,
                        np.round(rng.exponential(30.0, size=n), 3))
               for _ in range(spec.numeric_fields)]
    sequences = []
    for vocab, max_len in spec.sequence_fields:
        lengths = rng.integers(1, max_len + 1, size=n)
        sequences.append([
            SEQUENCE_SEPARATOR.join(f"s{t}" for t in rng.integers(0, vocab,
                                                                  size=k))
            for k in lengths
        ])

    header = ["label"] + [f"c{f}" for f in range(m)] \
        + [f"n{j}" for j in range(spec.numeric_fields)] \
        + [f"q{j}" for j in range(len(spec.sequence_fields))]
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for i in range(n):
        parts = [str(labels[i])]
        parts += [f"v{indices[f][i]}" for f in range(m)]
        parts += [("" if numeric[j][i] < 0 else f"{numeric[j][i]:g}")
                  for j in range(spec.numeric_fields)]
        parts += [sequences[j][i] for j in range(len(spec.sequence_fields))]
        buf.write(",".join(parts) + "\n")

    eps = np.finfo(float).tiny
    oracle_logloss = float(-(labels * np.log(np.maximum(p_true, eps))
                             + (1 - labels) * np.log(np.maximum(1 - p_true, eps))
                             ).mean())
    try:
        oracle_auc = auc(p_true, labels)
    except Exception:
        oracle_auc = float("nan")
    record = OracleRecord(
        oracle_logloss=oracle_logloss, oracle_auc=float(oracle_auc),
        realized_positive_rate=float(labels.mean()),
        target_positive_rate=spec.positive_rate, intercept=intercept,
        n_samples=n, seed=spec.seed, ground_truth=spec.ground_truth,
    )
    return buf.getvalue(), record


def default_recipe(spec: SynthSpec, min_count: int = 1,
                   split_seed: int = 2018) -> dict:
    """Dataset recipe matching the generator's CSV layout."""
    fields = [{"name": f"c{f}", "kind": "categorical", "min_count": min_count}
              for f in range(len(spec.categorical_vocab_sizes))]
    fields += [{"name": f"n{j}", "kind": "numeric", "min_count": min_count}
               for j in range(spec.numeric_fields)]
    fields += [{"name": f"q{j}", "kind": "sequence", "max_len": max_len,
                "pooling": "mean", "min_count": min_count}
               for j, (_, max_len) in enumerate(spec.sequence_fields)]
    return {"label": "label", "fields": fields, "split_seed": split_seed}


def generate_files(spec: SynthSpec, out_dir: Path) -> tuple[Path, Path, Path]:
    """Write data.csv, oracle.json, and a matching recipe.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_text, record = generate(spec)
    csv_path = out_dir / "data.csv"
    csv_path.write_text(csv_text)
    oracle_path = out_dir / "oracle.json"
    oracle_path.write_text(json.dumps(record.to_dict(), indent=2, sort_keys=True))
    recipe_path = out_dir / "recipe.json"
    recipe_path.write_text(json.dumps(default_recipe(spec), indent=2))
    return csv_path, oracle_path, recipe_path
