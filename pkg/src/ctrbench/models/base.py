"""Model configuration and the shared building blocks of the zoo.

Parameter creation order is deliberate: models that must degenerate into
one another under equal seeds (DCN with zero cross layers vs DNN,
xDeepFM with an empty CIN vs Wide&Deep) create their shared parameters
in the same order, so the initializer stream lines up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ctrbench.errors import ConfigError, NumericError
from ctrbench import ndgrad as ng
from ctrbench.ndgrad import Parameter, Tensor
from ctrbench.preprocess import FeatureMap

# Knobs that must be present exactly for the models that use them.
_REQUIRED_KNOBS = {
    "dcn": ("cross_layers",),
    "xdeepfm": ("cin_layer_sizes",),
    "afm": ("attention_dim",),
    "hofm": ("order3_dim",),
}
_SPECIFIC_KNOBS = ("cross_layers", "cin_layer_sizes", "attention_dim", "order3_dim")


@dataclass
class ModelConfig:
    model: str
    embedding_dim: int = 16
    hidden_units: tuple[int, ...] = (64, 32)
    activation: str = "relu"
    dropout: float = 0.0
    use_batch_norm: bool = False
    l2: float = 0.0
    cross_layers: int | None = None
    cin_layer_sizes: tuple[int, ...] | None = None
    cin_pool_all_layers: bool = True
    attention_dim: int | None = None
    attention_dropout: float = 0.0
    order3_dim: int | None = None
    init_scale: float = 0.01

    ALLOWED_FILE_KEYS = frozenset({
        "model", "embedding_dim", "hidden_units", "activation", "dropout",
        "use_batch_norm", "l2", "cross_layers", "cin_layer_sizes",
        "cin_pool_all_layers", "attention_dim", "attention_dropout",
        "order3_dim", "init_scale",
    })

    def __post_init__(self):
        self.hidden_units = tuple(int(u) for u in self.hidden_units)
        if self.cin_layer_sizes is not None:
            self.cin_layer_sizes = tuple(int(s) for s in self.cin_layer_sizes)
        if self.embedding_dim < 1:
            raise ConfigError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be >= 0, got {self.l2}")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        required = _REQUIRED_KNOBS.get(self.model, ())
        for knob in _SPECIFIC_KNOBS:
            value = getattr(self, knob)
            if knob in required and value is None:
                raise ConfigError(f"model {self.model!r} requires {knob}")
            if knob not in required and value is not None:
                raise ConfigError(f"{knob} does not apply to model {self.model!r}")
        if self.model != "afm" and self.attention_dropout != 0.0:
            raise ConfigError("attention_dropout only applies to afm")
        if self.model != "xdeepfm" and self.cin_pool_all_layers is not True:
            raise ConfigError("cin_pool_all_layers only applies to xdeepfm")
        if self.model == "hofm" and self.order3_dim < 1:
            raise ConfigError("order3_dim must be >= 1")

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        unknown = set(payload) - cls.ALLOWED_FILE_KEYS
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        if "model" not in payload:
            raise ConfigError("model config needs a 'model' key")
        kwargs = dict(payload)
        if "hidden_units" in kwargs:
            kwargs["hidden_units"] = tuple(kwargs["hidden_units"])
        if kwargs.get("cin_layer_sizes") is not None:
            kwargs["cin_layer_sizes"] = tuple(kwargs["cin_layer_sizes"])
        return cls(**kwargs)


class Model:
    """A parameter set plus a forward pass from Batch to (B,) logits."""

    name = "base"

    def __init__(self, cfg: ModelConfig, fmap: FeatureMap, seed: int = 0):
        self.cfg = cfg
        self.fmap = fmap
        self.params: dict[str, Parameter] = {}
        self._init_rng = np.random.default_rng(seed)
        self.dropout_rng = np.random.default_rng([seed, 1])
        self._build()

    # -- parameter management -------------------------------------------

    def add_param(self, name: str, shape: tuple[int, ...], *, zero: bool = False,
                  fill: float | None = None, l2: float | None = None,
                  frozen_rows: tuple[int, ...] = ()) -> Parameter:
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        if fill is not None:
            values = np.full(shape, fill, dtype=ng.DEFAULT_DTYPE)
        elif zero:
            values = ng.zeros_init(shape)
        else:
            values = ng.normal_init(self._init_rng, shape, self.cfg.init_scale)
        l2_weight = self.cfg.l2 if l2 is None else l2
        p = Parameter(name, values, l2_weight=l2_weight, frozen_rows=frozen_rows)
        self.params[name] = p
        return p

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def count_params(self) -> int:
        return sum(p.count() for p in self.params.values())

    def reset_dropout_rng(self, seed: int) -> None:
        self.dropout_rng = np.random.default_rng([seed, 1])

    # -- forward ---------------------------------------------------------

    def _build(self) -> None:
        raise NotImplementedError

    def forward(self, batch, train_mode: bool = False) -> Tensor:
        raise NotImplementedError

    def _finish_logits(self, logits: Tensor) -> Tensor:
        batch = logits.shape[0]
        out = ng.reshape(logits, (batch,)) if logits.data.ndim != 1 else logits
        if not np.all(np.isfinite(out.data)):
            raise NumericError(f"{self.name}: non-finite logits at the output head")
        return out

    def predict_logits(self, dataset, batch_size: int = 4096) -> np.ndarray:
        """Eval-mode logits over a whole EncodedDataset, no tape."""
        from ctrbench.dataset import iterate_batches

        chunks = [self.forward(b, train_mode=False).data
                  for b in iterate_batches(dataset, batch_size)]
        return np.concatenate(chunks) if chunks else np.empty(0)

    # -- snapshots --------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        for name, values in state.items():
            if name not in self.params:
                raise ConfigError(f"snapshot has unknown parameter {name!r}")
            if self.params[name].data.shape != values.shape:
                raise ConfigError(f"snapshot shape mismatch for {name!r}")
            self.params[name].tensor.data = values.copy()


class EmbeddingSet:
    """One (vocab, d) table per field; lookup pools sequence fields."""

    def __init__(self, model: Model, fmap: FeatureMap, dim: int, prefix: str = "embedding"):
        self.fmap = fmap
        self.dim = dim
        self.tables: dict[str, Parameter] = {}
        for spec in fmap.fields:
            frozen = (0,) if spec.kind == "sequence" else ()
            self.tables[spec.name] = model.add_param(
                f"{prefix}.{spec.name}", (fmap.vocab_size(spec.name), dim),
                frozen_rows=frozen)

    def lookup(self, batch) -> list[Tensor]:
        """Per-field (B, d) embeddings; mean pooling divides by the number
        of non-padding entries (at least one)."""
        out = []
        for spec in self.fmap.fields:
            idx = batch.columns[spec.name]
            emb = ng.embedding_lookup(self.tables[spec.name].tensor, idx)
            if spec.kind == "sequence":
                pooled = ng.sum_reduce(emb, axis=1)
                if spec.pooling == "mean":
                    counts = np.maximum((idx != 0).sum(axis=1), 1).astype(np.float64)
                    pooled = ng.elementwise_mul(
                        pooled, Tensor((1.0 / counts)[:, None]))
                emb = pooled
            out.append(emb)
        return out


class LinearTerm:
    """Per-feature weights plus a global bias: the LR part of a model."""

    def __init__(self, model: Model, fmap: FeatureMap, prefix: str = "linear"):
        self.fmap = fmap
        self.tables: dict[str, Parameter] = {}
        for spec in fmap.fields:
            frozen = (0,) if spec.kind == "sequence" else ()
            self.tables[spec.name] = model.add_param(
                f"{prefix}.{spec.name}", (fmap.vocab_size(spec.name), 1),
                frozen_rows=frozen)
        self.bias = model.add_param(f"{prefix}.bias", (1,), zero=True, l2=0.0)

    def forward(self, batch) -> Tensor:
        total = None
        for spec in self.fmap.fields:
            idx = batch.columns[spec.name]
            w = ng.embedding_lookup(self.tables[spec.name].tensor, idx)
            if spec.kind == "sequence":
                w = ng.sum_reduce(w, axis=1)  # (B, k, 1) -> (B, 1)
            total = w if total is None else ng.add(total, w)
        total = ng.add(total, self.bias.tensor)
        return ng.reshape(total, (total.shape[0],))


class MlpTower:
    """Dense layers with relu, optional batch norm, optional dropout."""

    def __init__(self, model: Model, in_dim: int, prefix: str = "mlp"):
        self.model = model
        self.cfg = model.cfg
        self.prefix = prefix
        self.layers: list[tuple[Parameter, Parameter]] = []
        self.bn: list[tuple[Parameter, Parameter, ng.BatchNormState] | None] = []
        self.out_dim = in_dim
        for i, units in enumerate(self.cfg.hidden_units):
            w = model.add_param(f"{prefix}.{i}.weight", (self.out_dim, units))
            b = model.add_param(f"{prefix}.{i}.bias", (units,), zero=True, l2=0.0)
            self.layers.append((w, b))
            if self.cfg.use_batch_norm:
                gamma = model.add_param(f"{prefix}.{i}.bn_gamma", (units,),
                                        fill=1.0, l2=0.0)
                beta = model.add_param(f"{prefix}.{i}.bn_beta", (units,),
                                       zero=True, l2=0.0)
                self.bn.append((gamma, beta, ng.BatchNormState(units)))
            else:
                self.bn.append(None)
            self.out_dim = units

    def forward(self, x: Tensor, train_mode: bool) -> Tensor:
        for i, (w, b) in enumerate(self.layers):
            x = ng.add(ng.matmul(x, w.tensor), b.tensor)
            if self.bn[i] is not None:
                gamma, beta, state = self.bn[i]
                x = ng.batch_norm(x, gamma.tensor, beta.tensor, state, train_mode)
            x = ng.relu(x)
            if self.cfg.dropout > 0.0:
                x = ng.dropout(x, self.cfg.dropout, train_mode,
                               rng=self.model.dropout_rng)
            if not np.all(np.isfinite(x.data)):
                raise NumericError(f"non-finite activation in {self.prefix}.{i}")
        return x


class DenseHead:
    """Final linear map to one logit column."""

    def __init__(self, model: Model, in_dim: int, prefix: str = "head"):
        self.weight = model.add_param(f"{prefix}.weight", (in_dim, 1))
        self.bias = model.add_param(f"{prefix}.bias", (1,), zero=True, l2=0.0)

    def forward(self, x: Tensor) -> Tensor:
        return ng.add(ng.matmul(x, self.weight.tensor), self.bias.tensor)
