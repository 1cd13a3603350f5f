"""Full O(n^2) causal attention: the oracle and the prefill/pillar path.

The forward block here is the single definition of the model arithmetic;
the sparse engine reuses these helpers so that sparse-vs-dense output
comparisons differ only in which positions attention reads, never in
operation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from condensate.backend import kernels
from condensate.cache import KVCache
from condensate.errors import EmptyInputError, SequenceOverflowError, ShapeError
from condensate.model import Model, ModelSpec

DESK_ORACLE_CAP = 4096  # longest context the O(n^2) oracle is asked to run


@dataclass
class AttentionRow:
    pos: int
    scores: np.ndarray  # raw scaled scores over cached positions
    weights: np.ndarray  # stable softmax of scores


def inv_scale_of(spec: ModelSpec) -> np.float32:
    return np.float32(1.0 / math.sqrt(float(spec.head_dim)))


def dense_attend(
    q, keys, values, *, inv_scale: float | None = None, pos: int | None = None
) -> tuple[np.ndarray, AttentionRow]:
    """Full attention of one query over all cached keys/values."""
    q = np.ascontiguousarray(q, dtype=np.float32)
    K = np.ascontiguousarray(keys, dtype=np.float32)
    V = np.ascontiguousarray(values, dtype=np.float32)
    if K.ndim != 2 or V.ndim != 2 or K.shape[0] != V.shape[0]:
        raise ShapeError("dense_attend: keys/values must be (N, d) with equal N")
    if K.shape[0] == 0:
        raise EmptyInputError("dense_attend: no cached positions")
    if K.shape[1] != q.shape[0]:
        raise ShapeError("dense_attend: q/key dim mismatch")
    if inv_scale is None:
        inv_scale = np.float32(1.0 / math.sqrt(float(q.shape[0])))
    out, scores = kernels.attend_row(q, K, V, np.float32(inv_scale))
    row = AttentionRow(
        pos=K.shape[0] - 1 if pos is None else pos,
        scores=scores,
        weights=kernels.softmax(scores),
    )
    return out, row


# ---------------------------------------------------------------------------
# transformer block helpers, shared with the sparse engine
# ---------------------------------------------------------------------------


def embed_token(model: Model, token: int, pos: int) -> np.ndarray:
    h = model.embedding[token].copy()
    if model.pos_embedding is not None:
        h = h + model.pos_embedding[pos]
    return h


def _norm(model: Model, x: np.ndarray, gain: np.ndarray, bias) -> np.ndarray:
    if model.spec.norm_kind == "layernorm":
        b = bias if bias is not None else np.zeros_like(gain)
        return kernels.layer_norm(x, gain, b, np.float32(model.spec.norm_eps))
    return kernels.rms_norm(x, gain, np.float32(model.spec.norm_eps))


def _linear(w: np.ndarray, x: np.ndarray, b) -> np.ndarray:
    y = kernels.matvec(w, x)
    if b is not None:
        y = y + b
    return y


def project_qkv(
    model: Model, li: int, h: np.ndarray, pos: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Pre-norm projection with rotary applied; returns (x_norm, q, k, v)
    where q is (H, d) and k, v are (H_kv, d)."""
    s = model.spec
    lw = model.layers[li]
    x = _norm(model, h, lw.norm1, lw.norm1_bias)
    q = _linear(lw.w_q, x, lw.b_q).reshape(s.n_heads, s.head_dim)
    k = _linear(lw.w_k, x, lw.b_k).reshape(s.n_kv_heads, s.head_dim)
    v = _linear(lw.w_v, x, lw.b_v).reshape(s.n_kv_heads, s.head_dim)
    if s.rope_enabled:
        q = np.stack(
            [kernels.rope(np.ascontiguousarray(q[i]), float(pos), s.rope_theta)
             for i in range(s.n_heads)]
        )
        k = np.stack(
            [kernels.rope(np.ascontiguousarray(k[i]), float(pos), s.rope_theta)
             for i in range(s.n_kv_heads)]
        )
    return x, q, k, v


def finish_block(model: Model, li: int, h: np.ndarray, attn_concat: np.ndarray) -> np.ndarray:
    lw = model.layers[li]
    h = h + _linear(lw.w_o, attn_concat, lw.b_o)
    y = _norm(model, h, lw.norm2, lw.norm2_bias)
    inner = kernels.gelu(_linear(lw.mlp_in, y, lw.b_mlp_in))
    h = h + _linear(lw.mlp_out, inner, lw.b_mlp_out)
    return h


def final_hidden(model: Model, h: np.ndarray) -> np.ndarray:
    return _norm(model, h, model.final_norm, model.final_norm_bias)


def logits_of(model: Model, h_final: np.ndarray) -> np.ndarray:
    return kernels.matvec(model.lm_head, h_final)


# ---------------------------------------------------------------------------
# full forward (prefill)
# ---------------------------------------------------------------------------


@dataclass
class ForwardResult:
    cache: KVCache
    logits: np.ndarray  # final-position logits
    hidden: np.ndarray  # final-position post-norm hidden state
    all_logits: np.ndarray | None = None
    probe_rows: list[AttentionRow] | None = None  # per query head


def full_forward(
    model: Model,
    tokens: list[int],
    cache: KVCache | None = None,
    want_all_logits: bool = False,
    probe: tuple[int, int] | None = None,  # (layer, query position)
) -> ForwardResult:
    """Causal full-attention pass over a prompt, populating the cache.

    Attention rows are materialized only for the requested probe; the rest
    of the pass keeps O(N) transient memory per query.
    """
    s = model.spec
    n = len(tokens)
    if n == 0:
        raise EmptyInputError("full_forward: empty prompt")
    if n > s.max_seq:
        raise SequenceOverflowError(f"prompt length {n} > max_seq {s.max_seq}")
    if cache is None:
        cache = KVCache(s, mode="full")
    if cache.n != 0:
        raise SequenceOverflowError("full_forward requires an empty cache")
    inv_scale = inv_scale_of(s)

    hs = np.stack([embed_token(model, t, p) for p, t in enumerate(tokens)])
    probe_rows: list[AttentionRow] | None = None
    for li in range(s.n_layers):
        qs = np.empty((n, s.n_heads, s.head_dim), dtype=np.float32)
        ks = np.empty((n, s.n_kv_heads, s.head_dim), dtype=np.float32)
        vs = np.empty((n, s.n_kv_heads, s.head_dim), dtype=np.float32)
        for p in range(n):
            _, qs[p], ks[p], vs[p] = project_qkv(model, li, hs[p], p)
        concat = np.empty((n, s.n_heads * s.head_dim), dtype=np.float32)
        for qh in range(s.n_heads):
            kh = s.kv_head_of(qh)
            K = np.ascontiguousarray(ks[:, kh])
            V = np.ascontiguousarray(vs[:, kh])
            Q = np.ascontiguousarray(qs[:, qh])
            concat[:, qh * s.head_dim : (qh + 1) * s.head_dim] = kernels.causal_attend(
                Q, K, V, inv_scale
            )
            if probe is not None and probe[0] == li:
                p = probe[1]
                if p < 0 or p >= n:
                    raise ShapeError(f"probe position {probe[1]} out of range")
                _, scores = kernels.attend_row(
                    np.ascontiguousarray(Q[p]), K[: p + 1], V[: p + 1], inv_scale
                )
                row = AttentionRow(pos=p, scores=scores, weights=kernels.softmax(scores))
                if probe_rows is None:
                    probe_rows = []
                probe_rows.append(row)
        for p in range(n):
            hs[p] = finish_block(model, li, hs[p], concat[p])
        for kh in range(s.n_kv_heads):
            cache.append_block(li, kh, np.ascontiguousarray(ks[:, kh]),
                               np.ascontiguousarray(vs[:, kh]))
    cache.advance_block(n)

    all_logits = None
    if want_all_logits:
        all_logits = np.stack(
            [logits_of(model, final_hidden(model, hs[p])) for p in range(n)]
        )
        hidden = final_hidden(model, hs[n - 1])
        logits = all_logits[n - 1]
    else:
        hidden = final_hidden(model, hs[n - 1])
        logits = logits_of(model, hidden)
    if probe is not None and probe_rows is None:
        raise ShapeError(f"probe layer {probe[0]} out of range")
    return ForwardResult(
        cache=cache, logits=logits, hidden=hidden,
        all_logits=all_logits, probe_rows=probe_rows,
    )


# ---------------------------------------------------------------------------
# dense decoding session: the oracle side of lockstep comparisons
# ---------------------------------------------------------------------------


class DenseSession:
    """Plain full-attention greedy decoding; no routing, tracking, or
    selection machinery. The reference the sparse engine is held against."""

    def __init__(self, model: Model):
        self.model = model
        self.cache = KVCache(model.spec, mode="full")
        self._inv_scale = inv_scale_of(model.spec)

    def prefill(self, tokens: list[int]) -> tuple[int, np.ndarray, np.ndarray]:
        res = full_forward(self.model, tokens, cache=self.cache)
        return kernels.argmax(res.logits), res.logits, res.hidden

    def step(self, prev_token: int) -> tuple[int, np.ndarray, np.ndarray]:
        model, s, cache = self.model, self.model.spec, self.cache
        pos = cache.n
        if pos >= s.max_seq:
            raise SequenceOverflowError(f"context {pos} reached max_seq")
        h = embed_token(model, prev_token, pos)
        for li in range(s.n_layers):
            _, q, k, v = project_qkv(model, li, h, pos)
            for kh in range(s.n_kv_heads):
                cache.append(li, kh, k[kh], v[kh])
            concat = np.empty(s.n_heads * s.head_dim, dtype=np.float32)
            for qh in range(s.n_heads):
                kh = s.kv_head_of(qh)
                K, V, _, _ = cache.view(li, kh)
                out, _ = kernels.attend_row(
                    np.ascontiguousarray(q[qh]), K, V, self._inv_scale
                )
                concat[qh * s.head_dim : (qh + 1) * s.head_dim] = out
            h = finish_block(model, li, h, concat)
        cache.advance()
        hidden = final_hidden(model, h)
        logits = logits_of(model, hidden)
        return kernels.argmax(logits), logits, hidden
