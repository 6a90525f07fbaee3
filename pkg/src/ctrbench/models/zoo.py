"""The thirteen CTR models.

Every model maps a Batch of per-field indices to raw (B,) logits; the
sigmoid lives in the loss and metric code, never here.
"""

from __future__ import annotations


from ctrbench.errors import ConfigError
from ctrbench import ndgrad as ng
from ctrbench.ndgrad import Tensor
from ctrbench.models.base import (
    DenseHead,
    EmbeddingSet,
    LinearTerm,
    MlpTower,
    Model,
    ModelConfig,
)
from ctrbench.models import interactions as ix


class LogisticRegression(Model):
    name = "lr"

    def _build(self):
        self.linear = LinearTerm(self, self.fmap)

    def forward(self, batch, train_mode=False):
        return self._finish_logits(self.linear.forward(batch))


class FactorizationMachine(Model):
    name = "fm"

    def _build(self):
        self.linear = LinearTerm(self, self.fmap)
        self.embeddings = EmbeddingSet(self, self.fmap, self.cfg.embedding_dim)

    def forward(self, batch, train_mode=False):
        logit = self.linear.forward(batch)
        logit = ng.add(logit, ix.fm_pairwise_sum(self.embeddings.lookup(batch)))
        return self._finish_logits(logit)


class FieldAwareFM(Model):
    """Each feature keeps one vector per other field, stored as a single
    (vocab, (m-1)*d) table per field."""

    name = "ffm"

    def _build(self):
        m = len(self.fmap.fields)
        if m < 2:
            raise ConfigError("ffm needs at least 2 fields")
        self.linear = LinearTerm(self, self.fmap)
        self.n_fields = m
        self.tables = {}
        for spec in self.fmap.fields:
            frozen = (0,) if spec.kind == "sequence" else ()
            self.tables[spec.name] = self.add_param(
                f"field_embedding.{spec.name}",
                (self.fmap.vocab_size(spec.name), (m - 1) * self.cfg.embedding_dim),
                frozen_rows=frozen)

    def _field_vectors(self, batch):
        """vectors[i][g] = (B, d) vector field i exposes to field g."""
        d = self.cfg.embedding_dim
        m = self.n_fields
        vectors: list[list[Tensor | None]] = []
        for i, spec in enumerate(self.fmap.fields):
            idx = batch.columns[spec.name]
            block = ng.embedding_lookup(self.tables[spec.name].tensor, idx)
            if spec.kind == "sequence":
                block = ng.sum_reduce(block, axis=1)
            row: list[Tensor | None] = []
            for g in range(m):
                if g == i:
                    row.append(None)
                    continue
                slot = g if g < i else g - 1
                row.append(ng.slice_tensor(
                    block, (slice(None), slice(slot * d, (slot + 1) * d))))
            vectors.append(row)
        return vectors

    def forward(self, batch, train_mode=False):
        logit = self.linear.forward(batch)
        logit = ng.add(logit, ix.field_aware_interaction(self._field_vectors(batch)))
        return self._finish_logits(logit)


class HigherOrderFM(Model):
    """FM plus a third-order term over separate embedding tables.
    Orders beyond 3 are rejected at configuration time."""

    name = "hofm"

    def _build(self):
        self.linear = LinearTerm(self, self.fmap)
        self.embeddings = EmbeddingSet(self, self.fmap, self.cfg.embedding_dim)
        self.embeddings3 = EmbeddingSet(self, self.fmap, self.cfg.order3_dim,
                                        prefix="embedding3")

    def forward(self, batch, train_mode=False):
        logit = self.linear.forward(batch)
        logit = ng.add(logit, ix.fm_pairwise_sum(self.embeddings.lookup(batch)))
        logit = ng.add(logit, ix.hofm_third_order(self.embeddings3.lookup(batch)))
        return self._finish_logits(logit)


class FieldWeightedFM(Model):
    """FM with one learned weight per unordered field pair."""

    name = "fwfm"

    def _build(self):
        self.linear = LinearTerm(self, self.fmap)
        self.embeddings = EmbeddingSet(self, self.fmap, self.cfg.embedding_dim)
        m = len(self.fmap.fields)
        self.pair_weights = self.add_param("pair_weights", (m * (m - 1) // 2,))

    def forward(self, batch, train_mode=False):
        logit = self.linear.forward(batch)
        logit = ng.add(logit, ix.fwfm_interaction(
            self.embeddings.lookup(batch), self.pair_weights.tensor))
        return self._finish_logits(logit)


class DeepNetwork(Model):
    name = "dnn"

    def _build(self):
        self.embeddings = EmbeddingSet(self, self.fmap, self.cfg.embedding_dim)
        in_dim = len(self.fmap.fields) * self.cfg.embedding_dim
        self.tower = MlpTower(self, in_dim)
        self.head = DenseHead(self, self.tower.out_dim)

    def forward(self, batch, train_mode=False):
        x0 = ng.concat(self.embeddings.lookup(batch), axis=1)
        logit = self.head.forward(self.tower.forward(x0, train_mode))
        return self._finish_logits(logit)


class WideDeep(Model):
    """LR over the encoded features plus a DNN over the embeddings."""

    name = "wide_deep"

    def _build(self):
        self.linear = LinearTerm(self, self.fmap)
        self.embeddings = EmbeddingSet(self, self.fmap, self.cfg.embedding_dim)
        in_dim = len(self.fmap.fields) * self.cfg.embedding_dim
        self.tower = MlpTower(self, in_dim)
        self.head = DenseHead(self, self.tower.out_dim)

    def _deep_logit(self, batch, train_mode):
        x0 = ng.concat(self.embeddings.lookup(batch), axis=1)
        out = self.head.forward(self.tower.forward(x0, train_mode))
        return ng.reshape(out, (out.shape[0],))

    def forward(self, batch, train_mode=False):
        wide = self.linear.forward(batch)
        logit = ng.add(wide, self._deep_logit(batch, train_mode))
        return self._finish_logits(logit)


class InnerProductNN(Model):
    """DNN over [flattened embeddings || pairwise inner products]."""

    name = "ipnn"

    def _build(self):
        m = len(self.fmap.fields)
        if m < 2:
            raise ConfigError("ipnn needs at least 2 fields")
        self.embeddings = EmbeddingSet(self, self.fmap, self.cfg.embedding_dim)
        in_dim = m * self.cfg.embedding_dim + m * (m - 1) // 2
        self.tower = MlpTower(self, in_dim)
        self.head = DenseHead(self, self.tower.out_dim)

    def forward(self, batch, train_mode=False):
        embs = self.embeddings.lookup(batch)
        x0 = ng.concat([ng.concat(embs, axis=1),
                        ix.inner_product_features(embs)], axis=1)
        logit = self.head.forward(self.tower.forward(x0, train_mode))
        return self._finish_logits(logit)


class NeuralFM(Model):
    """Linear part plus a DNN over the bi-interaction pooled vector."""

    name = "nfm"

    def _build(self):
        self.linear = LinearTerm(self, self.fmap)
        self.embeddings = EmbeddingSet(self, self.fmap, self.cfg.embedding_dim)
        self.tower = MlpTower(self, self.cfg.embedding_dim)
        self.head = DenseHead(self, self.tower.out_dim)

    def forward(self, batch, train_mode=False):
        pooled = ix.bi_interaction_pool(self.embeddings.lookup(batch))
        deep = self.head.forward(self.tower.forward(pooled, train_mode))
        logit = ng.add(self.linear.forward(batch),
                       ng.reshape(deep, (deep.shape[0],)))
        return self._finish_logits(logit)


class AttentionalFM(Model):
    """Pairwise products pooled through a one-hidden-layer attention
    network with softmax over the pair axis."""

    name = "afm"

    def _build(self):
        m = len(self.fmap.fields)
        if m < 2:
            raise ConfigError("afm needs at least 2 fields")
        d, t = self.cfg.embedding_dim, self.cfg.attention_dim
        self.linear = LinearTerm(self, self.fmap)
        self.embeddings = EmbeddingSet(self, self.fmap, d)
        self.attn_weight = self.add_param("attention.weight", (d, t))
        self.attn_bias = self.add_param("attention.bias", (t,), zero=True, l2=0.0)
        self.attn_context = self.add_param("attention.context", (t, 1))
        self.projection = self.add_param("attention.projection", (d, 1))

    def forward(self, batch, train_mode=False):
        embs = self.embeddings.lookup(batch)
        b, d = embs[0].shape
        products = []
        for i in range(len(embs)):
            for j in range(i + 1, len(embs)):
                products.append(ng.reshape(
                    ng.elementwise_mul(embs[i], embs[j]), (b, 1, d)))
        pooled = ix.afm_attention_pool(
            ng.concat(products, axis=1), self.attn_weight.tensor,
            self.attn_bias.tensor, self.attn_context.tensor,
            self.projection.tensor, dropout_rate=self.cfg.attention_dropout,
            train_mode=train_mode, rng=self.dropout_rng)
        logit = ng.add(self.linear.forward(batch), pooled)
        return self._finish_logits(logit)


class DeepFM(Model):
    """FM and a DNN tower sharing one embedding table."""

    name = "deepfm"

    def _build(self):
        self.linear = LinearTerm(self, self.fmap)
        self.embeddings = EmbeddingSet(self, self.fmap, self.cfg.embedding_dim)
        in_dim = len(self.fmap.fields) * self.cfg.embedding_dim
        self.tower = MlpTower(self, in_dim)
        self.head = DenseHead(self, self.tower.out_dim)

    def forward(self, batch, train_mode=False):
        embs = self.embeddings.lookup(batch)
        logit = ng.add(self.linear.forward(batch), ix.fm_pairwise_sum(embs))
        deep = self.head.forward(self.tower.forward(ng.concat(embs, axis=1),
                                                    train_mode))
        logit = ng.add(logit, ng.reshape(deep, (deep.shape[0],)))
        return self._finish_logits(logit)


class DeepCrossNetwork(Model):
    """Parallel cross network and DNN tower; with zero cross layers the
    model is exactly the DNN (the cross branch is omitted, not identity)."""

    name = "dcn"

    def _build(self):
        self.embeddings = EmbeddingSet(self, self.fmap, self.cfg.embedding_dim)
        in_dim = len(self.fmap.fields) * self.cfg.embedding_dim
        self.cross_params = []
        for i in range(self.cfg.cross_layers):
            w = self.add_param(f"cross.{i}.weight", (in_dim, 1))
            b = self.add_param(f"cross.{i}.bias", (in_dim,), zero=True, l2=0.0)
            self.cross_params.append((w, b))
        self.tower = MlpTower(self, in_dim)
        head_in = self.tower.out_dim + (in_dim if self.cfg.cross_layers else 0)
        self.head = DenseHead(self, head_in)

    def forward(self, batch, train_mode=False):
        x0 = ng.concat(self.embeddings.lookup(batch), axis=1)
        deep = self.tower.forward(x0, train_mode)
        if self.cross_params:
            xl = x0
            for w, b in self.cross_params:
                xl = ix.cross_layer(x0, xl, w.tensor, b.tensor)
            combined = ng.concat([xl, deep], axis=1)
        else:
            combined = deep
        logit = self.head.forward(combined)
        return self._finish_logits(logit)


class XDeepFM(Model):
    """Linear part, DNN tower, and a compressed interaction network;
    with an empty CIN this is exactly the wide+deep sum."""

    name = "xdeepfm"

    def _build(self):
        self.linear = LinearTerm(self, self.fmap)
        self.embeddings = EmbeddingSet(self, self.fmap, self.cfg.embedding_dim)
        m = len(self.fmap.fields)
        in_dim = m * self.cfg.embedding_dim
        self.tower = MlpTower(self, in_dim)
        self.head = DenseHead(self, self.tower.out_dim)
        self.cin_weights = []
        h_prev = m
        pooled_dim = 0
        for i, h in enumerate(self.cfg.cin_layer_sizes):
            self.cin_weights.append(self.add_param(
                f"cin.{i}.weight", (h, h_prev * m)))
            if self.cfg.cin_pool_all_layers or i == len(self.cfg.cin_layer_sizes) - 1:
                pooled_dim += h
            h_prev = h
        if self.cin_weights:
            self.cin_head = self.add_param("cin.head", (pooled_dim, 1))

    def forward(self, batch, train_mode=False):
        embs = self.embeddings.lookup(batch)
        wide = self.linear.forward(batch)
        deep = self.head.forward(self.tower.forward(ng.concat(embs, axis=1),
                                                    train_mode))
        logit = ng.add(wide, ng.reshape(deep, (deep.shape[0],)))
        if self.cin_weights:
            b, d = embs[0].shape
            x0 = ng.concat([ng.reshape(e, (b, 1, d)) for e in embs], axis=1)
            x_prev = x0
            pooled = []
            last = len(self.cin_weights) - 1
            for i, w in enumerate(self.cin_weights):
                x_prev = ix.cin_layer(x_prev, x0, w.tensor)
                if self.cfg.cin_pool_all_layers or i == last:
                    pooled.append(ng.sum_reduce(x_prev, axis=2))
            cin_vec = ng.concat(pooled, axis=1) if len(pooled) > 1 else pooled[0]
            cin_logit = ng.matmul(cin_vec, self.cin_head.tensor)
            logit = ng.add(logit, ng.reshape(cin_logit, (b,)))
        return self._finish_logits(logit)


MODEL_CLASSES: dict[str, type[Model]] = {
    cls.name: cls for cls in (
        LogisticRegression, FactorizationMachine, FieldAwareFM, HigherOrderFM,
        FieldWeightedFM, DeepNetwork, WideDeep, InnerProductNN, NeuralFM,
        AttentionalFM, DeepFM, DeepCrossNetwork, XDeepFM,
    )
}

MODEL_NAMES = tuple(MODEL_CLASSES)


def build_model(cfg: ModelConfig, fmap, seed: int = 0) -> Model:
    """Instantiate one of the thirteen models with seeded initialization."""
    try:
        cls = MODEL_CLASSES[cfg.model]
    except KeyError:
        raise ConfigError(
            f"unknown model {cfg.model!r}; available: {sorted(MODEL_CLASSES)}")
    return cls(cfg, fmap, seed=seed)
