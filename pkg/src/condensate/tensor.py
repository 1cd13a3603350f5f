"""Deterministic dense float32 primitives.

This is the only module in which raw forward-path floating-point
arithmetic lives. Every sum is an IEEE-754 float32 left fold in ascending
index order (see ``condensate._pykern`` for the full arithmetic
contract); identical inputs therefore produce bit-identical outputs on
both kernel backends. Diagnostics elsewhere use float64 and are not
bit-pinned.

Vectors ("Vec32") are 1-D C-contiguous float32 ndarrays, matrices
("Mat32") are 2-D C-contiguous float32 ndarrays, both with finite
elements. The helpers here validate at the public boundary; internal
engine loops call the backend kernels directly on already-validated data.
"""

from __future__ import annotations

import numpy as np

from condensate.backend import kernels
from condensate.errors import EmptyInputError, ShapeError

__all__ = [
    "as_vec32",
    "as_mat32",
    "matvec",
    "stable_softmax",
    "rope_apply",
    "argmax_det",
    "l2_norm",
    "dot",
    "rms_norm",
    "layer_norm",
    "gelu",
]


def as_vec32(x, name: str = "vector") -> np.ndarray:
    v = np.ascontiguousarray(x, dtype=np.float32)
    if v.ndim != 1:
        raise ShapeError(f"{name}: expected 1-D, got shape {v.shape}")
    if v.size and not np.isfinite(v).all():
        raise ShapeError(f"{name}: contains non-finite elements")
    return v


def as_mat32(x, name: str = "matrix") -> np.ndarray:
    m = np.ascontiguousarray(x, dtype=np.float32)
    if m.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D, got shape {m.shape}")
    if m.size and not np.isfinite(m).all():
        raise ShapeError(f"{name}: contains non-finite elements")
    return m


def matvec(m, x) -> np.ndarray:
    """y[r] = sum_c m[r, c] * x[c], float32, ascending-column fold."""
    m = as_mat32(m, "m")
    x = as_vec32(x, "x")
    if m.shape[1] != x.shape[0]:
        raise ShapeError(
            f"matvec: m has {m.shape[1]} cols but x has {x.shape[0]} elements"
        )
    if x.shape[0] == 0:
        raise EmptyInputError("matvec: empty input")
    return kernels.matvec(m, x)


def stable_softmax(scores) -> np.ndarray:
    """Max-shifted softmax with a float32 ascending-index denominator."""
    s = as_vec32(scores, "scores")
    if s.shape[0] == 0:
        raise EmptyInputError("stable_softmax: empty input")
    return kernels.softmax(s)


def rope_apply(v, pos, theta_base) -> np.ndarray:
    """Rotate pairs (v[2i], v[2i+1]) by pos * theta_base**(-2i/d)."""
    x = as_vec32(v, "v")
    if x.shape[0] == 0:
        raise EmptyInputError("rope_apply: empty input")
    if x.shape[0] % 2:
        raise ShapeError(f"rope_apply: length {x.shape[0]} is odd")
    return kernels.rope(x, float(pos), float(theta_base))


def argmax_det(v) -> int:
    """Index of the maximum; ties break to the lowest index."""
    x = as_vec32(v, "v")
    if x.shape[0] == 0:
        raise EmptyInputError("argmax_det: empty input")
    return kernels.argmax(x)


def l2_norm(v) -> np.float32:
    """Euclidean norm, float64 accumulation, rounded to float32."""
    x = as_vec32(v, "v")
    if x.shape[0] == 0:
        raise EmptyInputError("l2_norm: empty input")
    return np.float32(kernels.l2_norm(x))


def dot(a, b) -> np.float32:
    va = as_vec32(a, "a")
    vb = as_vec32(b, "b")
    if va.shape[0] != vb.shape[0]:
        raise ShapeError("dot: length mismatch")
    if va.shape[0] == 0:
        raise EmptyInputError("dot: empty input")
    return np.float32(kernels.dot(va, vb))


def rms_norm(x, gain, eps: float = 1e-5) -> np.ndarray:
    v = as_vec32(x, "x")
    g = as_vec32(gain, "gain")
    if v.shape[0] != g.shape[0]:
        raise ShapeError("rms_norm: gain length mismatch")
    if v.shape[0] == 0:
        raise EmptyInputError("rms_norm: empty input")
    return kernels.rms_norm(v, g, np.float32(eps))


def layer_norm(x, gain, bias, eps: float = 1e-5) -> np.ndarray:
    v = as_vec32(x, "x")
    g = as_vec32(gain, "gain")
    b = as_vec32(bias, "bias")
    if not (v.shape[0] == g.shape[0] == b.shape[0]):
        raise ShapeError("layer_norm: gain/bias length mismatch")
    if v.shape[0] == 0:
        raise EmptyInputError("layer_norm: empty input")
    return kernels.layer_norm(v, g, b, np.float32(eps))


def gelu(x) -> np.ndarray:
    v = as_vec32(x, "x")
    return kernels.gelu(v)
