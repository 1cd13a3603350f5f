"""Condensate: CPU inference for decoder-only transformers with sparse
attention over the anchor + window + top-k position set, a full-attention
oracle, an equivalence lab, and op-count/wall-clock scaling benchmarks."""

__version__ = "0.1.0"

from condensate.backend import BACKEND_NAME, available_backends, has_compiled_core

__all__ = ["BACKEND_NAME", "available_backends", "has_compiled_core", "__version__"]
