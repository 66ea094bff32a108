"""Coarse-to-fine autoregressive graph generation.

A vector-quantized graph autoencoder turns each graph into a pyramid of
token maps; a block-causal transformer then predicts those maps one
resolution at a time, so sampling needs only about log N forward calls
instead of one per node. Evaluation ships the standard distribution
metrics plus molecular validity checks and an attention-cost harness.
"""

from .errors import (
    NumericError,
    ScalegraphError,
    ShapeError,
    UsageError,
    ValidationError,
)
from .graphs import Graph, GraphBatch, batch_and_pad, permute_graph
from .transformer import ScaleSchedule, build_scale_schedule

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "GraphBatch",
    "NumericError",
    "ScaleSchedule",
    "ScalegraphError",
    "ShapeError",
    "UsageError",
    "ValidationError",
    "batch_and_pad",
    "build_scale_schedule",
    "permute_graph",
    "__version__",
]
