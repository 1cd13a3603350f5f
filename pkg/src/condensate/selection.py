"""Where to attend: condensate-set construction, top-k selectors, sparse
renormalized softmax, the float32 exactness predicate, adaptive window,
and attention-mass accounting.

A condensate set is the union of the anchor position 0, the trailing local
window, any persistent positions, and a dynamically selected top-k.
Sparse attention gathers keys/values at those positions in ascending
order, so its accumulation order is the dense order restricted to the set;
whenever every excluded exp term is below the float32 accumulators' unit
in the last place, the sparse output is bit-identical to the dense one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from condensate.backend import kernels
from condensate.errors import ConfigError, EmptyInputError, ShapeError

DEFAULT_BUDGET = 128


@dataclass(frozen=True)
class CondensateConfig:
    window: int = 64
    topk: int = 32
    k_spike: int = 32
    persist_threshold: int = 2
    w_min: int = 64
    w_max: int = 256
    budget_cap: int = DEFAULT_BUDGET
    pillar_layers: frozenset[int] = frozenset()
    selector: str = "keynorm"  # dynamic selector in the decode engine
    adaptive: bool = False  # late layers use the repetition-adaptive window

    def __post_init__(self):
        if self.window < 0 or self.topk < 0 or self.k_spike < 0:
            raise ConfigError("window/topk/k_spike must be >= 0")
        if 1 + self.window + self.topk > self.budget_cap:
            raise ConfigError(
                f"1 + W + k = {1 + self.window + self.topk} exceeds budget "
                f"cap {self.budget_cap}"
            )
        if self.w_min > self.w_max:
            raise ConfigError("w_min must be <= w_max")
        if self.persist_threshold < 1:
            raise ConfigError("persist_threshold must be >= 1")
        if self.selector not in ("keynorm", "scores"):
            raise ConfigError(f"unknown selector '{self.selector}'")

    def with_pillars(self, layers) -> "CondensateConfig":
        return CondensateConfig(
            window=self.window,
            topk=self.topk,
            k_spike=self.k_spike,
            persist_threshold=self.persist_threshold,
            w_min=self.w_min,
            w_max=self.w_max,
            budget_cap=self.budget_cap,
            pillar_layers=frozenset(int(x) for x in layers),
            selector=self.selector,
            adaptive=self.adaptive,
        )


@dataclass
class CondensateSet:
    positions: np.ndarray  # sorted unique int64
    anchor_part: np.ndarray
    window_part: np.ndarray
    dynamic_part: np.ndarray  # persistent and top-k members outside the window

    def __len__(self) -> int:
        return int(self.positions.shape[0])


@dataclass
class UlpReport:
    max_excluded_weight: float
    condensate_mass: float
    exact: bool


def topk_scores(scores, exclude: tuple[int, int], k: int) -> np.ndarray:
    """Positions of the k highest scores outside [exclude), excluding the
    anchor; ties break to the lower position."""
    s = np.ascontiguousarray(scores, dtype=np.float32)
    return kernels.topk(s, int(k), int(exclude[0]), int(exclude[1]), True)


def topk_keynorm(key_norms, exclude: tuple[int, int], k: int) -> np.ndarray:
    """Positions of the k largest key L2 norms outside [exclude); ties
    break to the lower position."""
    n = np.ascontiguousarray(key_norms, dtype=np.float32)
    return kernels.topk(n, int(k), int(exclude[0]), int(exclude[1]), True)


def build_condensate(
    n: int,
    cfg: CondensateConfig,
    persistent=(),
    scores=None,
    key_norms=None,
    window: int | None = None,
) -> CondensateSet:
    """Anchor + trailing window + persistent + dynamic top-k for the query
    at position n-1.

    The dynamic ranking source is ``scores`` or ``key_norms`` (exactly one
    may be given; none means no top-k). When the union exceeds the budget
    cap, dynamic members are dropped in ascending ranking order; the anchor
    and window are never dropped.
    """
    if n < 1:
        raise EmptyInputError("build_condensate: empty context")
    if scores is not None and key_norms is not None:
        raise ConfigError("give scores or key_norms, not both")
    w = cfg.window if window is None else int(window)
    win_lo = max(n - w, 0)
    window_part = np.arange(win_lo, n, dtype=np.int64)
    anchor_part = (
        np.empty(0, dtype=np.int64) if win_lo == 0 else np.array([0], dtype=np.int64)
    )

    source = scores if scores is not None else key_norms
    dyn: list[tuple[float, int]] = []  # (ranking value, position)
    seen = set()
    if source is not None:
        src = np.ascontiguousarray(source, dtype=np.float32)
        if src.shape[0] != n:
            raise ShapeError(f"ranking source has {src.shape[0]} entries for n={n}")
        picked = kernels.topk(src, int(cfg.topk), win_lo, n, True)
        for p in picked:
            dyn.append((float(src[p]), int(p)))
            seen.add(int(p))
    for p in persistent:
        p = int(p)
        if p < win_lo and p != 0 and p < n and p not in seen:
            val = float(source[p]) if source is not None else float("inf")
            dyn.append((val, p))
            seen.add(p)

    over = (len(anchor_part) + len(window_part) + len(dyn)) - cfg.budget_cap
    if over > 0:
        # drop lowest-ranked dynamic members first; ties drop the higher
        # position so determinism favors earlier context
        dyn.sort(key=lambda t: (t[0], -t[1]))
        dyn = dyn[over:]
    dynamic_part = np.array(sorted(p for _, p in dyn), dtype=np.int64)

    positions = np.concatenate([anchor_part, dynamic_part, window_part])
    positions = np.unique(positions)
    return CondensateSet(
        positions=positions,
        anchor_part=anchor_part,
        window_part=window_part,
        dynamic_part=dynamic_part,
    )


def sparse_attend(
    q,
    keys,
    values,
    cset: CondensateSet | np.ndarray,
    inv_scale: float | None = None,
    want_ulp: bool = False,
) -> tuple[np.ndarray, UlpReport | None]:
    """Attention over the gathered condensate positions (ascending order).

    With ``want_ulp`` the full score row is computed and the exactness
    predicate evaluated against it (float64 diagnostics, float32 fold
    simulation); otherwise only the O(|set|) gathered work happens.
    """
    q = np.ascontiguousarray(q, dtype=np.float32)
    K = np.ascontiguousarray(keys, dtype=np.float32)
    V = np.ascontiguousarray(values, dtype=np.float32)
    idx = cset.positions if isinstance(cset, CondensateSet) else np.asarray(cset)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if idx.shape[0] == 0:
        raise EmptyInputError("sparse_attend: empty condensate set")
    if idx[0] < 0 or idx[-1] >= K.shape[0]:
        raise ShapeError("sparse_attend: set positions out of range")
    if inv_scale is None:
        inv_scale = np.float32(1.0 / np.sqrt(float(q.shape[0])))
    out, _sel_scores = kernels.attend_gather(q, K, V, idx, np.float32(inv_scale))
    report = None
    if want_ulp:
        _, full_scores = kernels.attend_row(q, K, V, np.float32(inv_scale))
        exact, max_w, mass = kernels.ulp_check(full_scores, idx, V)
        report = UlpReport(
            max_excluded_weight=max_w, condensate_mass=mass, exact=exact
        )
    return out, report


def ulp_report_for_row(scores, idx, values) -> UlpReport:
    """Exactness predicate for an existing score row and position subset."""
    s = np.ascontiguousarray(scores, dtype=np.float32)
    i = np.ascontiguousarray(idx, dtype=np.int64)
    v = np.ascontiguousarray(values, dtype=np.float32)
    exact, max_w, mass = kernels.ulp_check(s, i, v)
    return UlpReport(max_excluded_weight=max_w, condensate_mass=mass, exact=exact)


def rep_score(tokens) -> float:
    """Fraction of bigram occurrences whose pair value appears more than
    once in the window; 0 for fewer than two tokens."""
    toks = list(tokens)
    if len(toks) < 2:
        return 0.0
    grams = list(zip(toks, toks[1:]))
    counts: dict[tuple[int, int], int] = {}
    for g in grams:
        counts[g] = counts.get(g, 0) + 1
    repeated = sum(1 for g in grams if counts[g] > 1)
    return min(max(repeated / len(grams), 0.0), 1.0)


def adaptive_window(rep: float, cfg: CondensateConfig) -> int:
    """w_min + (w_max - w_min) * rep, rounded half-up, clamped."""
    if not 0.0 <= rep <= 1.0:
        raise ConfigError(f"rep score {rep} outside [0, 1]")
    w = int(np.floor(cfg.w_min + (cfg.w_max - cfg.w_min) * rep + 0.5))
    return min(max(w, cfg.w_min), cfg.w_max)


def softmax64(scores) -> np.ndarray:
    """Diagnostic softmax in float64; resolves masses far below the f32
    unit in the last place."""
    s = np.asarray(scores, dtype=np.float64)
    e = np.exp(s - s.max())
    return e / e.sum()


def mass_coverage(row, cset: CondensateSet | np.ndarray) -> tuple[float, float]:
    """(inside mass, outside mass) of an attention row, float64 softmax
    recomputed from the raw scores."""
    scores = getattr(row, "scores", row)
    w = softmax64(scores)
    idx = cset.positions if isinstance(cset, CondensateSet) else np.asarray(cset)
    mask = np.zeros(w.shape[0], dtype=bool)
    mask[idx] = True
    inside = float(w[mask].sum())
    outside = float(w[~mask].sum())
    return inside, outside


def census_regions(
    scores, n: int, window: int, dynamic=()
) -> dict[str, tuple[int, float]]:
    """Partition [0, n) into anchor/window/dynamic/middle, returning
    (position count, float64 mass) per region from a raw score row."""
    w = softmax64(scores)
    if w.shape[0] != n:
        raise ShapeError("census_regions: scores length mismatch")
    win_lo = max(n - window, 0)
    region = np.full(n, 3, dtype=np.int8)  # middle
    region[win_lo:] = 1  # window
    for p in dynamic:
        p = int(p)
        if 0 < p < win_lo:
            region[p] = 2  # dynamic
    if win_lo > 0:
        region[0] = 0  # anchor
    out = {}
    for code, name in ((0, "anchor"), (1, "window"), (2, "dynamic"), (3, "middle")):
        mask = region == code
        out[name] = (int(mask.sum()), float(w[mask].sum()))
    return out
