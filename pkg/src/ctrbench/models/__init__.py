"""CTR model zoo: thirteen models behind one build/forward interface."""

from ctrbench.models.base import Model, ModelConfig
from ctrbench.models.interactions import (
    afm_attention_pool,
    bi_interaction_pool,
    cin_layer,
    cross_layer,
    field_aware_interaction,
    fm_pairwise_sum,
    fwfm_interaction,
    hofm_third_order,
    inner_product_features,
)
from ctrbench.models.zoo import MODEL_CLASSES, MODEL_NAMES, build_model

__all__ = [
    "MODEL_CLASSES", "MODEL_NAMES", "Model", "ModelConfig",
    "afm_attention_pool", "bi_interaction_pool", "build_model", "cin_layer",
    "cross_layer", "field_aware_interaction", "fm_pairwise_sum",
    "fwfm_interaction", "hofm_third_order", "inner_product_features",
]
