"""Growable per-layer, per-kv-head KV storage with optional eviction.

Keys are stored post-rotation, keyed to their original (logical) positions,
so physically compacting the cache never disturbs positional encoding.
Retention in evict mode is decided globally (the rule is layer-independent)
and applied to every layer/head buffer; retained entries are exact copies.

Append protocol: during one token, every (layer, kv head) appends exactly
once, then ``advance()`` commits the position. Views taken between a
layer's append and the commit include that pending entry, which is how the
new token attends to itself.
"""

from __future__ import annotations

import numpy as np

from condensate.backend import kernels
from condensate.errors import CacheStateError
from condensate.model import ModelSpec

_INITIAL_CAPACITY = 256


class KVCache:
    def __init__(self, spec: ModelSpec, mode: str = "full"):
        if mode not in ("full", "evict"):
            raise CacheStateError(f"unknown retention mode '{mode}'")
        self.spec = spec
        self.mode = mode
        self.n = 0  # logical length: tokens processed
        d = spec.head_dim
        cap = _INITIAL_CAPACITY
        self._k = [
            [np.empty((cap, d), dtype=np.float32) for _ in range(spec.n_kv_heads)]
            for _ in range(spec.n_layers)
        ]
        self._v = [
            [np.empty((cap, d), dtype=np.float32) for _ in range(spec.n_kv_heads)]
            for _ in range(spec.n_layers)
        ]
        self._norms = [
            [np.empty(cap, dtype=np.float32) for _ in range(spec.n_kv_heads)]
            for _ in range(spec.n_layers)
        ]
        self._count = 0  # committed resident entries
        self._logical = np.empty(cap, dtype=np.int64)
        self._pending: set[tuple[int, int]] = set()
        self._pending_len = 0

    # -- growth --------------------------------------------------------------

    def _ensure_capacity(self, want: int) -> None:
        cap = self._k[0][0].shape[0]
        if want <= cap:
            return
        new_cap = cap
        while new_cap < want:
            new_cap *= 2
        keep = self._count + self._pending_len
        for li in range(self.spec.n_layers):
            for kh in range(self.spec.n_kv_heads):
                for store in (self._k, self._v):
                    grown = np.empty((new_cap, self.spec.head_dim), dtype=np.float32)
                    grown[:keep] = store[li][kh][:keep]
                    store[li][kh] = grown
                grown_n = np.empty(new_cap, dtype=np.float32)
                grown_n[:keep] = self._norms[li][kh][:keep]
                self._norms[li][kh] = grown_n
        grown_l = np.empty(new_cap, dtype=np.int64)
        grown_l[:keep] = self._logical[:keep]
        self._logical = grown_l

    # -- appends -------------------------------------------------------------

    def append(self, li: int, kh: int, k: np.ndarray, v: np.ndarray) -> None:
        if (li, kh) in self._pending:
            raise CacheStateError(f"double append for layer {li} head {kh}")
        self._ensure_capacity(self._count + 1)
        slot = self._count
        self._k[li][kh][slot] = k
        self._v[li][kh][slot] = v
        self._norms[li][kh][slot] = kernels.l2_norm(np.ascontiguousarray(k))
        self._logical[slot] = self.n
        self._pending.add((li, kh))
        self._pending_len = 1

    def advance(self) -> int:
        expected = self.spec.n_layers * self.spec.n_kv_heads
        if len(self._pending) != expected or self._pending_len != 1:
            raise CacheStateError(
                f"advance with {len(self._pending)}/{expected} appends"
            )
        self._pending.clear()
        self._pending_len = 0
        pos = self.n
        self._count += 1
        self.n += 1
        return pos

    def append_block(self, li: int, kh: int, K: np.ndarray, V: np.ndarray) -> None:
        """Bulk append for prefill; advance_block() commits."""
        if (li, kh) in self._pending:
            raise CacheStateError(f"double append for layer {li} head {kh}")
        m = K.shape[0]
        self._ensure_capacity(self._count + m)
        self._k[li][kh][self._count : self._count + m] = K
        self._v[li][kh][self._count : self._count + m] = V
        self._norms[li][kh][self._count : self._count + m] = kernels.row_norms(
            np.ascontiguousarray(K)
        )
        self._logical[self._count : self._count + m] = np.arange(
            self.n, self.n + m, dtype=np.int64
        )
        self._pending.add((li, kh))
        self._pending_len = m

    def advance_block(self, m: int) -> None:
        expected = self.spec.n_layers * self.spec.n_kv_heads
        if len(self._pending) != expected or self._pending_len != m:
            raise CacheStateError(
                f"advance_block with {len(self._pending)}/{expected} appends"
            )
        self._pending.clear()
        self._pending_len = 0
        self._count += m
        self.n += m

    # -- views -----------------------------------------------------------------

    @property
    def resident(self) -> int:
        return self._count

    def _view_len(self, li: int, kh: int) -> int:
        return self._count + (self._pending_len if (li, kh) in self._pending else 0)

    def view(self, li: int, kh: int):
        """(keys, values, key norms, logical positions) visible to an
        attention call for this layer/head, including any pending append."""
        m = self._view_len(li, kh)
        return (
            self._k[li][kh][:m],
            self._v[li][kh][:m],
            self._norms[li][kh][:m],
            self._logical[:m],
        )

    def logical_positions(self) -> np.ndarray:
        """Ascending logical ids of committed resident entries."""
        return self._logical[: self._count]

    def physical_of(self, logical: np.ndarray) -> np.ndarray:
        """Map logical positions to physical slots; raises if any evicted."""
        logical = np.asarray(logical, dtype=np.int64)
        if logical.size == 0:
            return np.empty(0, dtype=np.int64)
        if self._count == 0:
            raise CacheStateError("logical position not resident")
        res = self._logical[: self._count]
        phys = np.searchsorted(res, logical)
        if np.any(phys >= self._count) or np.any(
            res[np.minimum(phys, self._count - 1)] != logical
        ):
            raise CacheStateError("logical position not resident")
        return phys

    # -- eviction ----------------------------------------------------------------

    def evict_to(self, retain_logical: np.ndarray) -> int:
        """Keep only the given logical positions (all must be resident);
        returns the number of entries dropped. Retained rows are copied
        bit-for-bit."""
        if self.mode != "evict":
            raise CacheStateError("evict_to on a full-retention cache")
        if self._pending:
            raise CacheStateError("evict_to during a pending append")
        phys = self.physical_of(retain_logical)
        dropped = self._count - phys.shape[0]
        if dropped == 0:
            return 0
        keep = phys.shape[0]
        for li in range(self.spec.n_layers):
            for kh in range(self.spec.n_kv_heads):
                self._k[li][kh][:keep] = self._k[li][kh][phys]
                self._v[li][kh][:keep] = self._v[li][kh][phys]
                self._norms[li][kh][:keep] = self._norms[li][kh][phys]
        self._logical[:keep] = self._logical[phys]
        self._count = keep
        return dropped
