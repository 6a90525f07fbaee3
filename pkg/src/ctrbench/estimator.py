"""Estimator-style facade over the model zoo and trainer.

``CTRClassifier`` follows the scikit-learn conventions (constructor
stores hyper-parameters verbatim, ``fit``/``predict_proba``/``predict``,
``get_params``/``set_params``), so it composes with sklearn pipelines
and ``clone`` without this package importing sklearn itself.

Input X is a 2-D array-like of categorical tokens (any dtype; values
are treated as strings), one column per field. Vocabularies are built
on the training portion of ``fit``; unseen tokens map to the OOV index.
"""

from __future__ import annotations

import inspect

import numpy as np

from ctrbench.dataset import EncodedDataset, SplitTriple, encode_rows
from ctrbench.errors import ConfigError, DataError
from ctrbench.metrics import auc
from ctrbench.models import ModelConfig, build_model
from ctrbench.preprocess import FieldSpec, build_feature_map
from ctrbench.training import TrainConfig, train


def check_token_matrix(X, n_columns: int | None = None
                       ) -> tuple[np.ndarray, list[str]]:
    """Returns (2-D object array of string tokens, column names);
    rejects ragged or empty input."""
    columns = getattr(X, "columns", None)
    values = getattr(X, "values", X)
    arr = np.asarray(values, dtype=object)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DataError(f"X must be a non-empty 2-D array, got shape {arr.shape}")
    if n_columns is not None and arr.shape[1] != n_columns:
        raise DataError(f"X has {arr.shape[1]} columns, expected {n_columns}")
    tokens = np.empty_like(arr)
    for j in range(arr.shape[1]):
        tokens[:, j] = [str(v) for v in arr[:, j]]
    names = [str(c) for c in columns] if columns is not None \
        else [f"field_{j}" for j in range(arr.shape[1])]
    return tokens, names


def check_binary_labels(y, n_rows: int) -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1 or len(arr) != n_rows:
        raise DataError(f"y must be 1-D with {n_rows} entries, got {arr.shape}")
    values = set(np.unique(arr).tolist())
    if not values <= {0, 1, 0.0, 1.0, False, True}:
        raise DataError(f"y must be binary 0/1, got values {sorted(values)[:5]}")
    return arr.astype(np.uint8)


class CTRClassifier:
    """Binary CTR classifier over categorical token columns."""

    def __init__(self, model: str = "fm", embedding_dim: int = 16,
                 hidden_units: tuple[int, ...] = (64, 32), dropout: float = 0.0,
                 use_batch_norm: bool = False, l2: float = 0.0,
                 cross_layers: int | None = None,
                 cin_layer_sizes: tuple[int, ...] | None = None,
                 attention_dim: int | None = None,
                 order3_dim: int | None = None,
                 learning_rate: float = 1e-3, batch_size: int = 1024,
                 max_epochs: int = 20, patience: int = 2,
                 monitor: str = "auc", min_count: int = 1,
                 val_fraction: float = 0.1, seed: int = 0):
        self.model = model
        self.embedding_dim = embedding_dim
        self.hidden_units = hidden_units
        self.dropout = dropout
        self.use_batch_norm = use_batch_norm
        self.l2 = l2
        self.cross_layers = cross_layers
        self.cin_layer_sizes = cin_layer_sizes
        self.attention_dim = attention_dim
        self.order3_dim = order3_dim
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.monitor = monitor
        self.min_count = min_count
        self.val_fraction = val_fraction
        self.seed = seed

    # -- sklearn plumbing -------------------------------------------------

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [n for n in sig.parameters if n != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "CTRClassifier":
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ConfigError(
                    f"invalid parameter {key!r} for CTRClassifier")
            setattr(self, key, value)
        return self

    # -- fitting -----------------------------------------------------------

    def _configs(self) -> tuple[ModelConfig, TrainConfig]:
        model_cfg = ModelConfig(
            model=self.model, embedding_dim=self.embedding_dim,
            hidden_units=tuple(self.hidden_units), dropout=self.dropout,
            use_batch_norm=self.use_batch_norm, l2=self.l2,
            cross_layers=self.cross_layers,
            cin_layer_sizes=self.cin_layer_sizes,
            attention_dim=self.attention_dim, order3_dim=self.order3_dim)
        train_cfg = TrainConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            max_epochs=self.max_epochs, patience=self.patience,
            monitor=self.monitor, seed=self.seed)
        return model_cfg, train_cfg

    def _rows(self, tokens: np.ndarray) -> list[dict]:
        return [dict(zip(self.field_names_, row)) for row in tokens]

    def fit(self, X, y) -> "CTRClassifier":
        tokens, names = check_token_matrix(X)
        labels = check_binary_labels(y, tokens.shape[0])
        if not 0.0 < self.val_fraction < 0.5:
            raise ConfigError("val_fraction must be in (0, 0.5)")
        self.field_names_ = names
        self.n_features_in_ = tokens.shape[1]
        self.classes_ = np.array([0, 1])
        model_cfg, train_cfg = self._configs()

        n = tokens.shape[0]
        n_val = max(int(round(n * self.val_fraction)), 1)
        perm = np.random.default_rng(self.seed).permutation(n)
        val_idx, train_idx = perm[:n_val], perm[n_val:]
        if len(train_idx) == 0:
            raise DataError("not enough rows to hold out a validation set")

        specs = [FieldSpec(name, min_count=self.min_count) for name in names]
        train_rows = self._rows(tokens[train_idx])
        self.feature_map_ = build_feature_map(train_rows, specs)

        def encode(idx) -> EncodedDataset:
            return EncodedDataset(
                feature_map_digest=self.feature_map_.digest(),
                columns=encode_rows(self._rows(tokens[idx]), self.feature_map_),
                labels=labels[idx])

        val_ds = encode(val_idx)
        # the facade has no separate test set; test metrics mirror validation
        splits = SplitTriple(encode(train_idx), val_ds, val_ds, seed=self.seed)
        model = build_model(model_cfg, self.feature_map_, seed=self.seed)
        self.model_, self.run_log_, self.result_ = train(
            model, splits, train_cfg, dataset_id="fit",
            model_cfg_snapshot={"model": self.model})
        return self

    # -- prediction ---------------------------------------------------------

    def _require_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise ConfigError("this CTRClassifier instance is not fitted yet")

    def decision_function(self, X) -> np.ndarray:
        self._require_fitted()
        tokens, _ = check_token_matrix(X, n_columns=self.n_features_in_)
        ds = EncodedDataset(
            feature_map_digest=self.feature_map_.digest(),
            columns=encode_rows(self._rows(tokens), self.feature_map_),
            labels=np.zeros(tokens.shape[0], dtype=np.uint8))
        return self.model_.predict_logits(ds, batch_size=self.batch_size)

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision_function(X)
        p = np.empty_like(z)
        pos = z >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        p[~pos] = ez / (1.0 + ez)
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= 0.0).astype(int)

    def score(self, X, y) -> float:
        """AUC on the given data (the benchmark's ranking metric)."""
        tokens, _ = check_token_matrix(X, n_columns=self.n_features_in_)
        labels = check_binary_labels(y, tokens.shape[0])
        return auc(self.decision_function(X), labels)

    def __repr__(self) -> str:
        return f"CTRClassifier(model={self.model!r})"
