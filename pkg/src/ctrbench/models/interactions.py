"""Feature-interaction kernels shared by the model zoo.

All kernels are batched: embeddings come in as (B, d) tensors, one per
field, and scalar-valued interactions come out as (B,) tensors.

The field-aware and field-weighted kernels are computed as perturbations
around the plain FM kernel. This keeps their degenerate configurations
(tied vectors, all-one pair weights) bit-for-bit equal to FM, which the
degeneracy suite asserts, while the general case still evaluates the
exact pairwise sums (the correction terms carry the difference).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ctrbench.errors import ConfigError, DimensionError
from ctrbench import ndgrad as ng
from ctrbench.ndgrad import Tensor


def _zeros_like_batch(embeddings: Sequence[Tensor]) -> Tensor:
    return Tensor(np.zeros(embeddings[0].shape[0]))


def rowwise_dot(a: Tensor, b: Tensor) -> Tensor:
    """(B, d) x (B, d) -> (B,)."""
    return ng.sum_reduce(ng.elementwise_mul(a, b), axis=1)


def fm_pairwise_sum(embeddings: Sequence[Tensor]) -> Tensor:
    """Sum over i<j of <v_i, v_j> via the linear-time identity
    0.5 * (||sum v||^2 - sum ||v||^2)."""
    if len(embeddings) == 0:
        return Tensor(0.0)
    total = embeddings[0]
    for e in embeddings[1:]:
        total = ng.add(total, e)
    sum_of_squares = ng.square(embeddings[0])
    for e in embeddings[1:]:
        sum_of_squares = ng.add(sum_of_squares, ng.square(e))
    diff = ng.sub(ng.square(total), sum_of_squares)
    return ng.scalar_mul(ng.sum_reduce(diff, axis=1), 0.5)


def bi_interaction_pool(embeddings: Sequence[Tensor]) -> Tensor:
    """Sum over i<j of v_i (.) v_j as a (B, d) vector, via the
    elementwise form of the FM identity."""
    if len(embeddings) == 0:
        return Tensor(0.0)
    total = embeddings[0]
    for e in embeddings[1:]:
        total = ng.add(total, e)
    sum_of_squares = ng.square(embeddings[0])
    for e in embeddings[1:]:
        sum_of_squares = ng.add(sum_of_squares, ng.square(e))
    return ng.scalar_mul(ng.sub(ng.square(total), sum_of_squares), 0.5)


def field_aware_interaction(vectors: Sequence[Sequence[Tensor | None]]) -> Tensor:
    """Sum over i<j of <v_{i->field(j)}, v_{j->field(i)}>.

    ``vectors[i][g]`` is the (B, d) vector feature i exposes to field g;
    the diagonal entries are unused. Evaluated as FM over one reference
    vector per feature plus per-pair corrections, so tying all of a
    feature's vectors together reproduces the FM kernel exactly.
    """
    m = len(vectors)
    if m < 2:
        return _zeros_like_first_entry(vectors)
    base = [vectors[i][1 if i == 0 else 0] for i in range(m)]
    total = fm_pairwise_sum(base)
    for i in range(m):
        for j in range(i + 1, m):
            term = rowwise_dot(vectors[i][j], vectors[j][i])
            reference = rowwise_dot(base[i], base[j])
            total = ng.add(total, ng.sub(term, reference))
    return total


def _zeros_like_first_entry(vectors) -> Tensor:
    for row in vectors:
        for v in row:
            if v is not None:
                return Tensor(np.zeros(v.shape[0]))
    return Tensor(0.0)


def fwfm_interaction(embeddings: Sequence[Tensor], pair_weights: Tensor) -> Tensor:
    """Sum over i<j of r_{f(i),f(j)} <v_i, v_j>, with one weight per
    unordered field pair packed in (i<j) lexicographic order.

    Evaluated as fm_pairwise_sum plus (r - 1)-weighted corrections, so
    all-one weights reproduce the FM kernel exactly.
    """
    m = len(embeddings)
    n_pairs = m * (m - 1) // 2
    if pair_weights.shape != (n_pairs,):
        raise DimensionError(
            f"fwfm_interaction: expected {n_pairs} pair weights, "
            f"got shape {pair_weights.shape}")
    if m < 2:
        return _zeros_like_batch(embeddings) if m else Tensor(0.0)
    total = fm_pairwise_sum(embeddings)
    one = Tensor(np.ones(1))
    k = 0
    for i in range(m):
        for j in range(i + 1, m):
            r_k = ng.slice_tensor(pair_weights, slice(k, k + 1))
            delta = ng.sub(r_k, one)
            total = ng.add(total, ng.elementwise_mul(
                rowwise_dot(embeddings[i], embeddings[j]), delta))
            k += 1
    return total


def hofm_third_order(embeddings: Sequence[Tensor]) -> Tensor:
    """Sum over i<j<k of sum_t v_i[t] v_j[t] v_k[t], by explicit triple
    loop over fields (fine for the field counts of tabular CTR data)."""
    m = len(embeddings)
    if m < 3:
        return _zeros_like_batch(embeddings) if m else Tensor(0.0)
    total = None
    for i in range(m):
        for j in range(i + 1, m):
            pair = ng.elementwise_mul(embeddings[i], embeddings[j])
            for k in range(j + 1, m):
                term = ng.sum_reduce(ng.elementwise_mul(pair, embeddings[k]), axis=1)
                total = term if total is None else ng.add(total, term)
    return total


def inner_product_features(embeddings: Sequence[Tensor]) -> Tensor:
    """All pairwise inner products in (i<j) lexicographic order,
    returned as a (B, m(m-1)/2) tensor."""
    m = len(embeddings)
    if m < 2:
        raise ConfigError("inner_product_features needs at least 2 fields")
    batch = embeddings[0].shape[0]
    products = []
    for i in range(m):
        for j in range(i + 1, m):
            dot = rowwise_dot(embeddings[i], embeddings[j])
            products.append(ng.reshape(dot, (batch, 1)))
    return ng.concat(products, axis=1)


def afm_attention_pool(pair_products: Tensor, attn_weight: Tensor,
                       attn_bias: Tensor, attn_context: Tensor,
                       projection: Tensor, dropout_rate: float = 0.0,
                       train_mode: bool = False,
                       rng: np.random.Generator | None = None) -> Tensor:
    """Attention-weighted pooling of pairwise products.

    pair_products: (B, P, d); attn_weight: (d, t); attn_bias: (t,);
    attn_context: (t, 1); projection: (d, 1). Returns (B,).
    Attention weights are softmax-normalized over the pair axis, with
    optional dropout applied to the weights.
    """
    b, p, d = pair_products.shape
    flat = ng.reshape(pair_products, (b * p, d))
    hidden = ng.relu(ng.add(ng.matmul(flat, attn_weight), attn_bias))
    scores = ng.reshape(ng.matmul(hidden, attn_context), (b, p))
    weights = ng.softmax(scores, axis=1)
    if dropout_rate > 0.0:
        weights = ng.dropout(weights, dropout_rate, train_mode, rng=rng)
    weighted = ng.elementwise_mul(pair_products, ng.reshape(weights, (b, p, 1)))
    pooled = ng.sum_reduce(weighted, axis=1)
    return ng.reshape(ng.matmul(pooled, projection), (b,))


def cross_layer(x0: Tensor, xl: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Rank-one cross update x_{l+1} = x0 (xl^T w) + b + xl.
    x0, xl: (B, D); weight: (D, 1); bias: (D,)."""
    if x0.shape != xl.shape or weight.shape != (x0.shape[1], 1) \
            or bias.shape != (x0.shape[1],):
        raise DimensionError(
            f"cross_layer: shapes x0={x0.shape} xl={xl.shape} "
            f"w={weight.shape} b={bias.shape} do not conform")
    scale = ng.matmul(xl, weight)  # (B, 1)
    return ng.add(ng.add(ng.elementwise_mul(x0, scale), bias), xl)


def cin_layer(x_prev: Tensor, x0: Tensor, weight: Tensor) -> Tensor:
    """Compressed-interaction map.

    x_prev: (B, H, d); x0: (B, m, d); weight: (H_next, H*m) holding
    W[h, i, j] flattened as i*m + j. Output (B, H_next, d) with
    out[b, h, t] = sum_{i,j} W[h, i, j] x_prev[b, i, t] x0[b, j, t].
    """
    b, h, d = x_prev.shape
    _, m, d0 = x0.shape
    if d != d0 or x0.shape[0] != b:
        raise DimensionError(
            f"cin_layer: x_prev {x_prev.shape} and x0 {x0.shape} do not conform")
    h_next = weight.shape[0]
    if weight.shape != (h_next, h * m):
        raise DimensionError(
            f"cin_layer: weight {weight.shape} does not match H*m = {h * m}")
    outer = ng.elementwise_mul(ng.reshape(x_prev, (b, h, 1, d)),
                               ng.reshape(x0, (b, 1, m, d)))
    stacked = ng.transpose(ng.reshape(outer, (b, h * m, d)), (0, 2, 1))
    flat = ng.reshape(stacked, (b * d, h * m))
    compressed = ng.matmul(flat, ng.transpose(weight, (1, 0)))
    return ng.transpose(ng.reshape(compressed, (b, d, h_next)), (0, 2, 1))
