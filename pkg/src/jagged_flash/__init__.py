"""Jagged tensor operators, jagged flash attention and an analytic cost model."""

from .attention import (
    AttentionSaved,
    ScratchMeter,
    dense_attention,
    dense_flash_attention,
    feature_interaction,
    jagged_attention,
    jagged_flash_attention,
    jagged_flash_attention_backward,
    jagged_flash_attention_forward,
)
from .core import (
    Jagged2Tensor,
    JaggedTensor,
    LengthDistribution,
    ShapeError,
    dense_to_jagged,
    dense_to_jagged2,
    elementwise,
    gen_lengths,
    jagged2_to_dense,
    jagged_to_dense,
    make_jagged,
)
from .costmodel import CostReport, OpConfig, cost_report, sweep_cost
from .linalg import (
    Layer,
    array_jagged_bmm_jagged_out,
    jagged2_softmax,
    jagged_dense_bmm,
    jagged_jagged_bmm,
    jagged_jagged_bmm_jagged_out,
    jagged_mlp,
    jagged_softmax,
    vjp,
)
from .parallel import num_threads, set_num_threads

__version__ = "0.1.0"

__all__ = [
    "AttentionSaved",
    "CostReport",
    "Jagged2Tensor",
    "JaggedTensor",
    "Layer",
    "LengthDistribution",
    "OpConfig",
    "ScratchMeter",
    "ShapeError",
    "array_jagged_bmm_jagged_out",
    "cost_report",
    "dense_attention",
    "dense_flash_attention",
    "dense_to_jagged",
    "dense_to_jagged2",
    "elementwise",
    "feature_interaction",
    "gen_lengths",
    "jagged2_softmax",
    "jagged2_to_dense",
    "jagged_attention",
    "jagged_dense_bmm",
    "jagged_flash_attention",
    "jagged_flash_attention_backward",
    "jagged_flash_attention_forward",
    "jagged_jagged_bmm",
    "jagged_jagged_bmm_jagged_out",
    "jagged_mlp",
    "jagged_softmax",
    "jagged_to_dense",
    "make_jagged",
    "num_threads",
    "set_num_threads",
    "sweep_cost",
    "vjp",
]
