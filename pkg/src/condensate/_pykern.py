"""Pure-Python (numpy) kernel backend.

This module and the compiled twin ``condensate._ckern`` implement the same
pinned arithmetic and must produce bit-identical results:

* All forward-path sums are IEEE-754 float32 left folds in ascending index
  order, seeded with the first term (``acc = x[0]; acc += x[1]; ...``).
  ``np.add.accumulate`` implements exactly that fold, which is why it is
  used here instead of ``np.sum`` (pairwise) or BLAS (blocked).
* Elementwise float32 multiply/divide/add round once per operation; the
  vectorized numpy forms are bit-equal to scalar C code compiled without
  FMA contraction.
* Transcendentals (exp, tanh, cos, sin) are evaluated in float64 through
  libm via ``math.*`` and then rounded to float32 where the contract says
  so. numpy's vectorized float64 exp/tanh differ from libm by 1 ulp on
  some inputs, so they are never used on the forward path.
* Reductions that feed diagnostics (mass coverage, cosine) are float64 and
  only need 1e-9-level agreement; exact fold order is not pinned there.

The compiled backend is selected at import when available; this module is
the fallback and the executable specification of the arithmetic.
"""

import math

import numpy as np

NAME = "python"

_F32 = np.float32
_F64 = np.float64


def _fold32(x: np.ndarray) -> np.float32:
    """Strict ascending left fold of a float32 vector."""
    if x.shape[0] == 1:
        return x[0]
    return np.add.accumulate(x)[-1]


def matvec(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Row-wise float32 dot products, accumulated left to right."""
    prod = m * x
    return np.ascontiguousarray(np.add.accumulate(prod, axis=1)[:, -1])


def dot(a: np.ndarray, b: np.ndarray) -> float:
    return float(_fold32(a * b))


def softmax(scores: np.ndarray) -> np.ndarray:
    """Numerically stable softmax with a pinned float32 denominator fold.

    exp terms are computed as float32(exp_f64(s - max)); the difference is
    exact because any difference of two float32 values is representable in
    float64.
    """
    m = float(scores.max())
    t = scores.astype(_F64) - m
    e = np.array([math.exp(v) for v in t.tolist()], dtype=_F64).astype(_F32)
    d = _fold32(e)
    return e / d


def _exp_terms(scores: np.ndarray, m: float) -> tuple[np.ndarray, np.ndarray]:
    """(float64 exp terms, float32-rounded exp terms) against max ``m``."""
    t = scores.astype(_F64) - m
    e64 = np.array([math.exp(v) for v in t.tolist()], dtype=_F64)
    return e64, e64.astype(_F32)


def attend_row(
    q: np.ndarray, keys: np.ndarray, values: np.ndarray, inv_scale: float
) -> tuple[np.ndarray, np.ndarray]:
    """One query attending over all rows of ``keys``/``values``.

    Returns (output vector, raw scaled scores). Scores are scaled by
    multiplying with ``inv_scale`` (pinned: multiply, not divide).
    """
    raw = np.add.accumulate(keys * q, axis=1)[:, -1]
    scores = np.ascontiguousarray(raw * _F32(inv_scale))
    w = softmax(scores)
    out = np.add.accumulate(values * w[:, None], axis=0)[-1]
    return np.ascontiguousarray(out), scores


def attend_gather(
    q: np.ndarray,
    keys: np.ndarray,
    values: np.ndarray,
    idx: np.ndarray,
    inv_scale: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Attention restricted to the sorted position subset ``idx``."""
    out, scores = attend_row(q, keys[idx], values[idx], inv_scale)
    return out, scores


def causal_attend(
    q_all: np.ndarray, keys: np.ndarray, values: np.ndarray, inv_scale: float
) -> np.ndarray:
    """Per-position causal attention: row i attends over keys[:i+1]."""
    n = q_all.shape[0]
    out = np.empty_like(q_all)
    for i in range(n):
        out[i], _ = attend_row(q_all[i], keys[: i + 1], values[: i + 1], inv_scale)
    return out


def rope(x: np.ndarray, pos: float, theta: float) -> np.ndarray:
    """Rotary embedding on even-length vectors, pair i rotated by
    pos * theta**(-2i/d). Angles and trig in float64, rotation in float32."""
    d = x.shape[0]
    out = np.empty_like(x)
    for i in range(d // 2):
        freq = theta ** (-(2.0 * i) / d)
        angle = pos * freq
        c = _F32(math.cos(angle))
        s = _F32(math.sin(angle))
        x0 = x[2 * i]
        x1 = x[2 * i + 1]
        out[2 * i] = _F32(_F32(x0 * c) - _F32(x1 * s))
        out[2 * i + 1] = _F32(_F32(x0 * s) + _F32(x1 * c))
    return out


def rms_norm(x: np.ndarray, gain: np.ndarray, eps: float) -> np.ndarray:
    n = x.shape[0]
    ss = _fold32(x * x)
    ms = _F32(ss / _F32(n))
    inv = _F32(1.0 / math.sqrt(float(ms) + float(eps)))
    return (x * inv) * gain


def layer_norm(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float
) -> np.ndarray:
    n = x.shape[0]
    mean = _F32(_fold32(x) / _F32(n))
    dev = x - mean
    var = _F32(_fold32(dev * dev) / _F32(n))
    inv = _F32(1.0 / math.sqrt(float(var) + float(eps)))
    return ((dev * inv) * gain) + bias


_GELU_K = 0.7978845608028654  # sqrt(2/pi)


def gelu(x: np.ndarray) -> np.ndarray:
    """tanh-form GELU, inner expression in float64, one rounding to f32."""
    out = np.empty_like(x)
    for i, v in enumerate(x.tolist()):
        inner = _GELU_K * (v + 0.044715 * (v * v * v))
        out[i] = _F32(0.5 * v * (1.0 + math.tanh(inner)))
    return out


def l2_norm(x: np.ndarray) -> float:
    """Euclidean norm: float64 sum of squares, then rounded to float32."""
    sq = x.astype(_F64) ** 2
    if sq.shape[0] == 1:
        acc = sq[0]
    else:
        acc = np.add.accumulate(sq)[-1]
    return float(_F32(math.sqrt(acc)))


def row_norms(keys: np.ndarray) -> np.ndarray:
    sq = keys.astype(_F64) ** 2
    acc = np.add.accumulate(sq, axis=1)[:, -1]
    # float64 sqrt is correctly rounded, np.sqrt == math.sqrt bit-for-bit
    return np.sqrt(acc).astype(_F32)


def argmax(x: np.ndarray) -> int:
    """Index of the maximum; ties resolve to the lowest index."""
    return int(np.argmax(x))


def topk(
    vals: np.ndarray, k: int, ex_lo: int, ex_hi: int, exclude_anchor: bool
) -> np.ndarray:
    """Positions of the k largest values outside [ex_lo, ex_hi) (and
    position 0 when exclude_anchor). Ties prefer the lower position.
    Result is sorted ascending by position."""
    n = vals.shape[0]
    if k <= 0 or n == 0:
        return np.empty(0, dtype=np.int64)
    pos = np.arange(n, dtype=np.int64)
    mask = np.ones(n, dtype=bool)
    if ex_hi > ex_lo:
        mask[max(ex_lo, 0) : min(ex_hi, n)] = False
    if exclude_anchor and n > 0:
        mask[0] = False
    cand = pos[mask]
    if cand.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    order = np.lexsort((cand, -vals[cand].astype(_F64)))
    chosen = cand[order[:k]]
    chosen.sort()
    return chosen


def ulp_check(
    scores: np.ndarray, idx: np.ndarray, values: np.ndarray
) -> tuple[bool, float, float]:
    """Decide whether restricting attention to ``idx`` is exact in float32.

    Exact means: the row maximum lies inside the subset, folding the
    excluded exp terms into the float32 denominator changes nothing, and
    folding the excluded weighted-value terms into each float32 output
    accumulator changes nothing. When the flag is true, gathered sparse
    attention is bit-identical to the dense row.

    Returns (exact, max excluded dense softmax weight (f64),
    subset mass under the dense softmax (f64)).
    """
    n = scores.shape[0]
    if idx.shape[0] == 0:
        return False, 1.0, 0.0
    sel_mask = np.zeros(n, dtype=bool)
    sel_mask[idx] = True
    m_all = float(scores.max())
    e64, e32 = _exp_terms(scores, m_all)
    # sequential f64 folds so both backends agree to the bit
    total64 = float(np.add.accumulate(e64)[-1])
    sel = e64[sel_mask]
    sel64 = float(np.add.accumulate(sel)[-1])
    cond_mass = sel64 / total64
    excl = e64[~sel_mask]
    max_excl_w = float(excl.max() / total64) if excl.shape[0] else 0.0

    if float(scores[sel_mask].max()) != m_all:
        return False, max_excl_w, cond_mass
    d_dense = _fold32(e32)
    d_sparse = _fold32(e32[sel_mask])
    if d_dense != d_sparse:
        return False, max_excl_w, cond_mass
    w = e32 / d_dense
    num_dense = np.add.accumulate(values * w[:, None], axis=0)[-1]
    sel_rows = values[sel_mask] * w[sel_mask][:, None]
    num_sparse = np.add.accumulate(sel_rows, axis=0)[-1]
    exact = bool(np.all(num_dense == num_sparse))
    return exact, max_excl_w, cond_mass
