"""Sparse decoding engine: prefill, pillar/sparse layer routing, spike
tracking with persistence, optional condensate eviction, greedy
generation, and multiply-accumulate instrumentation.

Pillar layers attend over every cached position and record their
highest-scoring positions into the spike tracker; positions spiking at
least ``persist_threshold`` times join the persistent set and are included
in every later sparse-layer condensate. Sparse layers attend over at most
``budget_cap`` positions regardless of context length.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from condensate.backend import kernels
from condensate.cache import KVCache
from condensate.dense import (
    embed_token,
    final_hidden,
    finish_block,
    full_forward,
    inv_scale_of,
    logits_of,
    project_qkv,
)
from condensate.errors import ConfigError, SequenceOverflowError
from condensate.model import Model
from condensate.selection import (
    CondensateConfig,
    adaptive_window,
    build_condensate,
    rep_score,
    ulp_report_for_row,
)

OPS_PER_POSITION = 2  # one MAC for the score dot, one for the value sum


def pillar_layer_ops(n_heads: int, n_ctx: int, head_dim: int) -> int:
    return OPS_PER_POSITION * n_heads * n_ctx * head_dim


def sparse_layer_ops(set_sizes_per_head, head_dim: int) -> int:
    return OPS_PER_POSITION * head_dim * int(sum(set_sizes_per_head))


def dense_equiv_step_ops(n_layers: int, n_heads: int, n_ctx: int, head_dim: int) -> int:
    return OPS_PER_POSITION * n_layers * n_heads * n_ctx * head_dim


def prefill_ops(n_layers: int, n_heads: int, m: int, head_dim: int) -> int:
    return OPS_PER_POSITION * n_layers * n_heads * head_dim * (m * (m + 1) // 2)


def amortized_per_layer(n_ctx: int, budget: int, n_layers: int, n_pillars: int) -> float:
    """Per-layer attended positions averaged over pillar and sparse layers."""
    return (n_pillars * n_ctx + (n_layers - n_pillars) * budget) / n_layers


def reduction_ratio(n_ctx: int, budget: int, n_layers: int, n_pillars: int) -> float:
    """Dense ops over sparse-engine ops for one decode step."""
    return (n_layers * n_ctx) / (n_pillars * n_ctx + (n_layers - n_pillars) * budget)


class SpikeTracker:
    """Per-position count of pillar top-k_spike appearances."""

    def __init__(self):
        self.counts: dict[int, int] = {}

    def record(self, pos: int) -> int:
        c = self.counts.get(pos, 0) + 1
        self.counts[pos] = c
        return c


class PersistentSet:
    def __init__(self):
        self.positions: set[int] = set()
        self.inserted_at: dict[int, int] = {}

    def add(self, pos: int, step: int) -> None:
        if pos not in self.positions:
            self.positions.add(pos)
            self.inserted_at[pos] = step

    def __contains__(self, pos: int) -> bool:
        return pos in self.positions

    def __len__(self) -> int:
        return len(self.positions)


@dataclass
class LayerDiag:
    mode: str  # "pillar" | "sparse"
    set_size: int
    ops: int
    ulp_exact: bool | None = None
    condensate_mass: float | None = None


@dataclass
class StepDiagnostics:
    token: int
    n_ctx: int
    layers: list[LayerDiag]
    ops_actual: int
    ops_dense_equiv: int
    condensate_mass: float | None = None  # min over sparse layers
    ulp_exact_all: bool | None = None
    sets: list[np.ndarray] | None = None  # per sparse layer: logical positions


@dataclass
class GenerationResult:
    tokens: list[int]
    steps: list[StepDiagnostics]
    prefill_ops: int
    ops_actual: int
    ops_dense_equiv: int
    stopped_on_eos: bool


class SparseSession:
    """One generation context: model (shared, read-only) plus exclusively
    owned cache, tracker, and persistent set."""

    def __init__(
        self,
        model: Model,
        cfg: CondensateConfig,
        retention: str = "full",
        diagnostics: bool = False,
        record_sets: bool = False,
    ):
        s = model.spec
        for li in cfg.pillar_layers:
            if not 0 <= li < s.n_layers:
                raise ConfigError(f"pillar layer {li} outside [0, {s.n_layers})")
        self.model = model
        self.cfg = cfg
        self.diagnostics = diagnostics
        self.record_sets = record_sets
        self.cache = KVCache(s, mode=retention)
        self.tracker = SpikeTracker()
        self.persistent = PersistentSet()
        self.tokens_seen: list[int] = []
        self._inv_scale = inv_scale_of(s)
        self._step_index = 0

    # -- prefill ------------------------------------------------------------

    def prefill(self, tokens: list[int]) -> tuple[int, np.ndarray, np.ndarray]:
        res = full_forward(self.model, list(tokens), cache=self.cache)
        self.tokens_seen.extend(int(t) for t in tokens)
        if self.cache.mode == "evict":
            self._evict()
        return kernels.argmax(res.logits), res.logits, res.hidden

    # -- decode -------------------------------------------------------------

    def _retained_logical(self) -> np.ndarray:
        n = self.cache.n
        keep = set(range(max(n - self.cfg.w_max, 0), n))
        keep.add(0)
        keep.update(p for p in self.persistent.positions if p < n)
        return np.array(sorted(keep), dtype=np.int64)

    def _evict(self) -> None:
        self.cache.evict_to(self._retained_logical())

    def _window_for_layer(self, li: int) -> int:
        if not self.cfg.adaptive or li < self.model.spec.n_layers // 2:
            return self.cfg.window
        recent = self.tokens_seen[-self.cfg.w_max :]
        return adaptive_window(rep_score(recent), self.cfg)

    def step(self, prev_token: int) -> tuple[int, StepDiagnostics]:
        model, s, cache, cfg = self.model, self.model.spec, self.cache, self.cfg
        pos = cache.n
        if pos >= s.max_seq:
            raise SequenceOverflowError(f"context {pos} reached max_seq")
        if pos == 0:
            raise ConfigError("decode before prefill")
        self._step_index += 1
        self.tokens_seen.append(int(prev_token))
        h = embed_token(model, int(prev_token), pos)
        layer_diags: list[LayerDiag] = []
        step_sets: list[np.ndarray] | None = [] if self.record_sets else None

        for li in range(s.n_layers):
            _, q, k, v = project_qkv(model, li, h, pos)
            for kh in range(s.n_kv_heads):
                cache.append(li, kh, k[kh], v[kh])
            concat = np.empty(s.n_heads * s.head_dim, dtype=np.float32)
            if li in cfg.pillar_layers:
                diag = self._pillar_layer(li, q, concat)
            else:
                diag = self._sparse_layer(li, q, concat, step_sets)
            layer_diags.append(diag)
            h = finish_block(model, li, h, concat)
        cache.advance()
        if cache.mode == "evict":
            self._evict()

        hidden = final_hidden(model, h)
        logits = logits_of(model, hidden)
        token = kernels.argmax(logits)
        self._last_logits = logits
        self._last_hidden = hidden

        sparse_masses = [
            d.condensate_mass for d in layer_diags if d.condensate_mass is not None
        ]
        sparse_exacts = [d.ulp_exact for d in layer_diags if d.ulp_exact is not None]
        diag = StepDiagnostics(
            token=token,
            n_ctx=cache.n,
            layers=layer_diags,
            ops_actual=sum(d.ops for d in layer_diags),
            ops_dense_equiv=dense_equiv_step_ops(
                s.n_layers, s.n_heads, cache.n, s.head_dim
            ),
            condensate_mass=min(sparse_masses) if sparse_masses else None,
            ulp_exact_all=all(sparse_exacts) if sparse_exacts else None,
            sets=step_sets,
        )
        return token, diag

    def _pillar_layer(self, li: int, q: np.ndarray, concat: np.ndarray) -> LayerDiag:
        s, cfg, cache = self.model.spec, self.cfg, self.cache
        n_visible = 0
        for qh in range(s.n_heads):
            kh = s.kv_head_of(qh)
            K, V, _, logical = cache.view(li, kh)
            n_visible = K.shape[0]
            out, scores = kernels.attend_row(
                np.ascontiguousarray(q[qh]), K, V, self._inv_scale
            )
            concat[qh * s.head_dim : (qh + 1) * s.head_dim] = out
            spikes = kernels.topk(scores, cfg.k_spike, 0, 0, False)
            for slot in spikes:
                lp = int(logical[slot])
                if self.tracker.record(lp) >= cfg.persist_threshold:
                    self.persistent.add(lp, self._step_index)
        return LayerDiag(
            mode="pillar",
            set_size=n_visible,
            ops=pillar_layer_ops(s.n_heads, n_visible, s.head_dim),
        )

    def _persistent_rows(self, logical: np.ndarray) -> np.ndarray:
        """Persistent logical positions mapped to resident view rows."""
        if not self.persistent.positions:
            return np.empty(0, dtype=np.int64)
        pp = np.array(sorted(self.persistent.positions), dtype=np.int64)
        m = logical.shape[0]
        loc = np.searchsorted(logical, pp)
        mask = (loc < m) & (logical[np.minimum(loc, m - 1)] == pp)
        return loc[mask]

    def _sparse_layer(
        self, li: int, q: np.ndarray, concat: np.ndarray, step_sets=None
    ) -> LayerDiag:
        s, cfg, cache = self.model.spec, self.cfg, self.cache
        window = self._window_for_layer(li)
        set_sizes = []
        layer_logical: set[int] = set()
        worst_mass: float | None = None
        all_exact: bool | None = None
        for kh in range(s.n_kv_heads):
            K, V, norms, logical = cache.view(li, kh)
            m = K.shape[0]
            # condensate built in view-row space; view rows ascend with
            # logical position, so gather order matches the dense fold
            persist_rows = self._persistent_rows(logical)
            cset_shared = None
            if cfg.selector == "keynorm":
                cset_shared = build_condensate(
                    m, cfg, persistent=persist_rows, key_norms=norms, window=window
                )
            for qh in range(kh * s.gqa_ratio, (kh + 1) * s.gqa_ratio):
                qv = np.ascontiguousarray(q[qh])
                if cset_shared is not None:
                    cset = cset_shared
                else:
                    # score-ranked selection needs the per-query row; an
                    # O(N) scan kept for selector studies
                    scores = kernels.matvec(K, qv) * self._inv_scale
                    cset = build_condensate(
                        m, cfg, persistent=persist_rows, scores=scores, window=window
                    )
                set_sizes.append(len(cset))
                if step_sets is not None:
                    layer_logical.update(
                        int(x) for x in logical[cset.positions].tolist()
                    )
                out, _sel_scores = kernels.attend_gather(
                    qv, K, V, cset.positions, self._inv_scale
                )
                concat[qh * s.head_dim : (qh + 1) * s.head_dim] = out
                if self.diagnostics:
                    _, full_scores = kernels.attend_row(qv, K, V, self._inv_scale)
                    rep = ulp_report_for_row(full_scores, cset.positions, V)
                    worst_mass = (
                        rep.condensate_mass
                        if worst_mass is None
                        else min(worst_mass, rep.condensate_mass)
                    )
                    all_exact = (
                        rep.exact if all_exact is None else (all_exact and rep.exact)
                    )
        if step_sets is not None:
            step_sets.append(np.array(sorted(layer_logical), dtype=np.int64))
        return LayerDiag(
            mode="sparse",
            set_size=max(set_sizes),
            ops=sparse_layer_ops(set_sizes, s.head_dim),
            ulp_exact=all_exact,
            condensate_mass=worst_mass,
        )

    @property
    def last_logits(self) -> np.ndarray:
        return self._last_logits

    @property
    def last_hidden(self) -> np.ndarray:
        return self._last_hidden


def generate(
    model: Model,
    prompt: list[int],
    cfg: CondensateConfig,
    max_tokens: int,
    retention: str = "full",
    diagnostics: bool = False,
    record_sets: bool = False,
) -> GenerationResult:
    """Greedy generation: prefill, then decode until EOS or the budget.

    The prefill's argmax is the first generated token and counts against
    ``max_tokens``.
    """
    s = model.spec
    session = SparseSession(
        model, cfg, retention=retention, diagnostics=diagnostics,
        record_sets=record_sets,
    )
    first, _, _ = session.prefill(prompt)
    p_ops = prefill_ops(s.n_layers, s.n_heads, len(prompt), s.head_dim)
    tokens: list[int] = []
    steps: list[StepDiagnostics] = []
    stopped = False
    if max_tokens > 0:
        tokens.append(first)
        if first == s.eos_token:
            stopped = True
        while not stopped and len(tokens) < max_tokens:
            tok, diag = session.step(tokens[-1])
            tokens.append(tok)
            steps.append(diag)
            if tok == s.eos_token:
                stopped = True
    return GenerationResult(
        tokens=tokens,
        steps=steps,
        prefill_ops=p_ops,
        ops_actual=sum(d.ops_actual for d in steps),
        ops_dense_equiv=sum(d.ops_dense_equiv for d in steps),
        stopped_on_eos=stopped,
    )


def read_trace(path) -> list[dict]:
    """Parse a JSONL generation trace back into per-step dicts."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def trace_op_summary(steps: list[dict]) -> dict:
    """Aggregate op counts from a parsed trace: totals and the overall
    dense-equivalent reduction ratio."""
    actual = sum(s["ops_actual"] for s in steps)
    dense = sum(s["ops_dense_equiv"] for s in steps)
    return {
        "steps": len(steps),
        "ops_actual": actual,
        "ops_dense_equiv": dense,
        "reduction": (dense / actual) if actual else None,
    }


def step_diag_json(diag: StepDiagnostics, step_index: int) -> str:
    """One JSON line of the generation trace."""
    return json.dumps(
        {
            "step": step_index,
            "token": diag.token,
            "n_ctx": diag.n_ctx,
            "ops_actual": diag.ops_actual,
            "ops_dense_equiv": diag.ops_dense_equiv,
            "condensate_mass": diag.condensate_mass,
            "ulp_exact_all": diag.ulp_exact_all,
            "layers": [
                {
                    "mode": d.mode,
                    "set_size": d.set_size,
                    "ops": d.ops,
                    "ulp_exact": d.ulp_exact,
                }
                for d in diag.layers
            ],
        },
        sort_keys=True,
    )
