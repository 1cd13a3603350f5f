"""Scaling study: wall clock and op counts for dense vs. sparse per-step
attention, log-log slope fits, quadratic extrapolation, CSV emission.

The timed unit is the attention of one decode step over a pre-populated
synthetic cache: dense scores all N cached keys per head; sparse selects
the condensate (top-k over precomputed key norms, an O(N) scan) and
attends over it. Cache construction and warmup are outside the timed
region. Op counts follow the multiply-accumulate formulas in
``condensate.decode`` and exclude the selector scan, which performs no
MACs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from condensate.backend import get_backend, kernels
from condensate.decode import OPS_PER_POSITION
from condensate.errors import ConfigError
from condensate.selection import CondensateConfig, build_condensate

CSV_HEADER = "N,t_dense_ms,t_sparse_ms,ops_dense,ops_sparse,sparsity,speedup,projected"


@dataclass
class BenchRecord:
    n: int
    t_dense_ms: float | None
    t_sparse_ms: float | None
    ops_dense: int
    ops_sparse: int
    sparsity: float
    set_size: int
    projected: bool = False
    mad_dense: float | None = None
    mad_sparse: float | None = None

    @property
    def speedup(self) -> float | None:
        if self.t_dense_ms is None or self.t_sparse_ms is None:
            return None
        return self.t_dense_ms / self.t_sparse_ms

    def csv_row(self) -> str:
        def num(v, fmt="{:.6f}"):
            return "" if v is None else fmt.format(v)

        return ",".join(
            [
                str(self.n),
                num(self.t_dense_ms),
                num(self.t_sparse_ms),
                str(self.ops_dense),
                str(self.ops_sparse),
                f"{self.sparsity:.6f}",
                num(self.speedup, "{:.3f}"),
                "1" if self.projected else "0",
            ]
        )


@dataclass
class ScalingFit:
    slope_dense: float | None
    slope_sparse: float | None
    r2_dense: float | None
    r2_sparse: float | None


def _median_ms(fn, repeats: int, warmup: int = 3) -> tuple[float, float]:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        times.append((time.perf_counter_ns() - t0) / 1e6)
    med = float(np.median(times))
    mad = float(np.median(np.abs(np.array(times) - med)))
    return med, mad


def _build_cache(n: int, head_dim: int, seed: int):
    rng = np.random.default_rng(seed)
    keys = (rng.standard_normal((n, head_dim)) * 0.5).astype(np.float32)
    values = (rng.standard_normal((n, head_dim)) * 0.5).astype(np.float32)
    norms = kernels.row_norms(keys)
    q = rng.standard_normal(head_dim).astype(np.float32)
    return keys, values, norms, q


def run_scaling(
    cfg: CondensateConfig,
    n_list: list[int],
    repeats: int = 20,
    n_heads: int = 8,
    head_dim: int = 64,
    dense_max_n: int = 16384,
    seed: int = 0,
    backend: str | None = None,
) -> list[BenchRecord]:
    """One record per N: median per-step attention time, dense vs sparse.

    N above ``dense_max_n`` marks the dense side infeasible; sparse is
    still measured. The N list must ascend.
    """
    if sorted(n_list) != list(n_list):
        raise ConfigError("N list must be ascending")
    kern = kernels if backend is None else get_backend(backend)
    inv_scale = np.float32(1.0 / np.sqrt(float(head_dim)))
    records = []
    for n in n_list:
        keys, values, norms, q = _build_cache(n, head_dim, seed)
        cset = build_condensate(n, cfg, key_norms=norms)
        idx = cset.positions

        def dense_step():
            for _ in range(n_heads):
                kern.attend_row(q, keys, values, inv_scale)

        def sparse_step():
            sel = build_condensate(n, cfg, key_norms=norms)
            for _ in range(n_heads):
                kern.attend_gather(q, keys, values, sel.positions, inv_scale)

        t_dense = mad_d = None
        if n <= dense_max_n:
            t_dense, mad_d = _median_ms(dense_step, repeats)
        t_sparse, mad_s = _median_ms(sparse_step, repeats)
        records.append(
            BenchRecord(
                n=n,
                t_dense_ms=t_dense,
                t_sparse_ms=t_sparse,
                ops_dense=OPS_PER_POSITION * n_heads * n * head_dim,
                ops_sparse=OPS_PER_POSITION * n_heads * len(idx) * head_dim,
                sparsity=1.0 - len(idx) / n,
                set_size=len(idx),
                mad_dense=mad_d,
                mad_sparse=mad_s,
            )
        )
    return records


def _loglog_fit(ns, ts) -> tuple[float, float]:
    x = np.log(np.asarray(ns, dtype=np.float64))
    y = np.log(np.asarray(ts, dtype=np.float64))
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    return float(slope), r2


def fit_slopes(records: list[BenchRecord]) -> ScalingFit:
    """Least-squares log-log slopes of the measured time series."""
    dense = [(r.n, r.t_dense_ms) for r in records if r.t_dense_ms and not r.projected]
    sparse = [(r.n, r.t_sparse_ms) for r in records if r.t_sparse_ms]
    if len(dense) < 4 and len(sparse) < 4:
        raise ConfigError("need at least 4 records with times to fit slopes")
    sd = rd = ss = rs = None
    if len(dense) >= 4:
        sd, rd = _loglog_fit([n for n, _ in dense], [t for _, t in dense])
    if len(sparse) >= 4:
        ss, rs = _loglog_fit([n for n, _ in sparse], [t for _, t in sparse])
    return ScalingFit(slope_dense=sd, slope_sparse=ss, r2_dense=rd, r2_sparse=rs)


def fit_ops_slopes(records: list[BenchRecord]) -> ScalingFit:
    """Log-log slopes of the op-count series (deterministic)."""
    ns = [r.n for r in records]
    sd, rd = _loglog_fit(ns, [r.ops_dense for r in records])
    ss, rs = _loglog_fit(ns, [max(r.ops_sparse, 1) for r in records])
    return ScalingFit(slope_dense=sd, slope_sparse=ss, r2_dense=rd, r2_sparse=rs)


def extrapolate_quadratic(t_measured_ms: float, n0: int, n_target: int) -> float:
    """t(n_target) = t(n0) * (n_target / n0)^2; output must be labeled as
    projected, never mixed with measurements."""
    if n0 <= 0 or n_target < n0:
        raise ConfigError("extrapolation requires n_target >= n0 > 0")
    return t_measured_ms * (n_target / n0) ** 2


def project_records(
    records: list[BenchRecord], targets: list[int]
) -> list[BenchRecord]:
    """Projected dense rows from the largest measured dense record."""
    measured = [r for r in records if r.t_dense_ms is not None and not r.projected]
    if not measured:
        raise ConfigError("no measured dense record to project from")
    base = measured[-1]
    per_pos = base.ops_dense // base.n  # 2 * H * d
    out = []
    for n in targets:
        sp = next((r for r in records if r.n == n), None)
        out.append(
            BenchRecord(
                n=n,
                t_dense_ms=extrapolate_quadratic(base.t_dense_ms, base.n, n),
                t_sparse_ms=sp.t_sparse_ms if sp else None,
                ops_dense=per_pos * n,
                ops_sparse=sp.ops_sparse if sp else 0,
                sparsity=sp.sparsity if sp else 0.0,
                set_size=sp.set_size if sp else 0,
                projected=True,
            )
        )
    return out


def to_csv(records: list[BenchRecord]) -> str:
    return "\n".join([CSV_HEADER] + [r.csv_row() for r in records]) + "\n"


def bench_table(records: list[BenchRecord], set_size_note: bool = True) -> str:
    rows = [("N", "Dense (ms)", "Sparse (ms)", "Speedup", "Sparsity", "")]
    for r in records:
        rows.append(
            (
                f"{r.n:,}",
                "infeasible" if r.t_dense_ms is None else f"{r.t_dense_ms:.3f}",
                "" if r.t_sparse_ms is None else f"{r.t_sparse_ms:.3f}",
                "" if r.speedup is None else f"{r.speedup:.1f}x",
                f"{r.sparsity * 100:.2f}%",
                "PROJECTED" if r.projected else "",
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(6)]
    lines = [
        "  ".join(col.rjust(widths[i]) for i, col in enumerate(row)) for row in rows
    ]
    if set_size_note and records:
        sizes = sorted({r.set_size for r in records if r.set_size})
        lines.append(
            f"note: sparsity computed as 1 - |set|/N with |set| in {sizes}; "
            "tables elsewhere may assume a different |set|"
        )
    return "\n".join(lines)


def compare_backends(
    cfg: CondensateConfig, n: int, repeats: int = 10, n_heads: int = 8,
    head_dim: int = 64,
) -> dict:
    """Same per-step attention timed on every available kernel backend."""
    from condensate.backend import available_backends

    out = {}
    for name in available_backends():
        recs = run_scaling(
            cfg, [n], repeats=repeats, n_heads=n_heads, head_dim=head_dim,
            dense_max_n=n, backend=name,
        )
        out[name] = {
            "t_dense_ms": recs[0].t_dense_ms,
            "t_sparse_ms": recs[0].t_sparse_ms,
        }
    return out


def slopes_json(fit: ScalingFit, ops_fit: ScalingFit | None = None) -> str:
    d = {
        "wall_clock": {
            "slope_dense": fit.slope_dense,
            "slope_sparse": fit.slope_sparse,
            "r2_dense": fit.r2_dense,
            "r2_sparse": fit.r2_sparse,
        }
    }
    if ops_fit is not None:
        d["op_count"] = {
            "slope_dense": ops_fit.slope_dense,
            "slope_sparse": ops_fit.slope_sparse,
        }
    return json.dumps(d, sort_keys=True)
