"""Acceptance criteria, one test per criterion, each printing a PASS line
with its measured numbers when it holds (run with ``pytest -s`` to see
them). Tolerances are pinned here and nowhere else.

Criteria that compare against the dense oracle run both engines in
lockstep on the same prompts; "exact" always means bit-identical float32.
"""

import numpy as np
import pytest

from condensate.bench import (
    extrapolate_quadratic,
    fit_ops_slopes,
    run_scaling,
)
from condensate.decode import SparseSession, prefill_ops
from condensate.dense import DenseSession
from condensate.lab import SyntheticCache, run_equivalence, run_needle_synthetic
from condensate.model import ModelSpec, SynthRecipe, make_filler_prompt, synth_model
from condensate.selection import CondensateConfig
from condensate.lab import mass_census


def _ok(name: str, detail: str) -> None:
    print(f"\nACCEPTANCE PASS  {name}: {detail}")


# ---------------------------------------------------------------------------
# 1. degenerate equivalence
# ---------------------------------------------------------------------------


def test_degenerate_equivalence_all_pillars():
    """10 random models x 5 prompts x 100 steps: pillars-everywhere must be
    bit-identical (tokens and logits) to the dense oracle."""
    checked = 0
    for mi in range(10):
        rope = mi % 2 == 1
        h, hkv = [(2, 2), (4, 2), (4, 1)][mi % 3]
        spec = ModelSpec(
            n_layers=2, n_heads=h, n_kv_heads=hkv, head_dim=8, vocab_size=96,
            max_seq=256, rope_enabled=rope, rope_theta=1e6, model_dim=32,
            mlp_hidden=64,
        )
        model = synth_model(spec, SynthRecipe(kind="random", seed=1000 + mi))
        cfg = CondensateConfig(window=8, topk=4, budget_cap=16).with_pillars(
            range(spec.n_layers)
        )
        for pi in range(5):
            prompt = make_filler_prompt(spec, 8 + pi, seed=50 + pi)
            oracle = DenseSession(model)
            engine = SparseSession(model, cfg)
            t_d, lg_d, _ = oracle.prefill(prompt)
            t_s, lg_s, _ = engine.prefill(prompt)
            assert t_d == t_s and np.array_equal(lg_d, lg_s)
            for _ in range(100):
                t_d, lg_d, _ = oracle.step(t_d)
                t_s, _ = engine.step(t_s)
                assert t_s == t_d
                assert np.array_equal(engine.last_logits, lg_d)
                checked += 1
    _ok("degenerate-equivalence", f"{checked} steps bit-identical across 10 models")


# ---------------------------------------------------------------------------
# 2 + 3. exact token match and ULP soundness on six architectures
# ---------------------------------------------------------------------------

ARCHES = [
    ("mha", 4, 4, False),
    ("gqa4", 8, 2, False),
    ("gqa8", 8, 1, False),
    ("mha-rope", 4, 4, True),
    ("gqa4-rope", 8, 2, True),
    ("gqa8-rope", 8, 1, True),
]


@pytest.fixture(scope="module")
def six_arch_reports():
    reports = {}
    for name, h, hkv, rope in ARCHES:
        spec = ModelSpec(
            n_layers=4, n_heads=h, n_kv_heads=hkv, head_dim=16, vocab_size=512,
            max_seq=4096, rope_enabled=rope, rope_theta=1e6, model_dim=64,
            mlp_hidden=128,
        )
        model = synth_model(spec, SynthRecipe(kind="concentrated", seed=11))
        cfg = CondensateConfig(window=64, topk=32, budget_cap=128).with_pillars(
            {0, spec.n_layers // 2}
        )
        prompts = [
            make_filler_prompt(spec, n, seed=s)
            for s, n in ((1, 512), (2, 1024), (3, 2048))
        ]
        reports[name] = run_equivalence(
            model, prompts, cfg, steps_per_prompt=30, diagnostics=True
        )
    return reports


def test_exact_token_match_six_architectures(six_arch_reports):
    """100% top-1 and top-5 over >= 500 total dual-decoded tokens on
    {MHA, GQA 4:1, GQA 8:1} x {RoPE, no RoPE} concentrated models."""
    total = 0
    for name, rep in six_arch_reports.items():
        assert rep.top1_match == 1.0, f"{name}: top1 {rep.top1_match}"
        assert rep.top5_match == 1.0, f"{name}: top5 {rep.top5_match}"
        total += rep.tokens_compared
    assert total >= 500
    _ok("exact-token-match", f"top1=top5=100% on {total} tokens over 6 architectures")


def test_ulp_soundness(six_arch_reports):
    """Every ULP-exact step is bit-identical to the oracle and >= 95% of
    steps on concentrated models are ULP-exact."""
    fractions = []
    for name, rep in six_arch_reports.items():
        assert rep.exact_implies_bitwise, name
        for r in rep.steps:
            if r.locked and r.ulp_exact:
                assert r.bits_equal, (name, r.step)
        fractions.append(rep.ulp_exact_fraction)
        assert rep.ulp_exact_fraction >= 0.95, (name, rep.ulp_exact_fraction)
    _ok(
        "ulp-soundness",
        f"exact-step fraction min={min(fractions):.3f} across 6 architectures; "
        "all exact steps bit-identical",
    )


# ---------------------------------------------------------------------------
# 4. negative control
# ---------------------------------------------------------------------------


def test_negative_control_random_models():
    """Random weights with a window-only sparse config at N=512 must not
    preserve equivalence: top-1 < 90% and min cosine < 0.9."""
    matches = []
    cosines = []
    for seed in (1, 2):
        spec = ModelSpec(
            n_layers=4, n_heads=4, n_kv_heads=4, head_dim=16, vocab_size=256,
            max_seq=2048, model_dim=64, mlp_hidden=128,
        )
        model = synth_model(spec, SynthRecipe(kind="random", seed=seed))
        cfg = CondensateConfig(window=64, topk=0, budget_cap=128)
        prompts = [make_filler_prompt(spec, 512, seed=100 + seed)]
        rep = run_equivalence(model, prompts, cfg, steps_per_prompt=50)
        matches.extend(r.top1 for r in rep.steps)
        cosines.append(rep.min_cosine)
    top1 = float(np.mean(matches))
    min_cos = min(cosines)
    assert top1 < 0.9
    assert min_cos < 0.9
    _ok("negative-control", f"top1={top1:.2f} (<0.9), min cosine={min_cos:.3f} (<0.9)")


# ---------------------------------------------------------------------------
# 5. bounded support
# ---------------------------------------------------------------------------


def test_bounded_support_1000_steps():
    """1,000 decode steps reaching N=4,096: |set| <= 128 always, and <= 97
    exactly when the persistent set stays empty (no pillar layers)."""
    spec = ModelSpec(
        n_layers=4, n_heads=4, n_kv_heads=4, head_dim=16, vocab_size=512,
        max_seq=4200, model_dim=64, mlp_hidden=128,
    )
    model = synth_model(spec, SynthRecipe(kind="concentrated", seed=11))
    prompt = make_filler_prompt(spec, 3096, seed=5)

    cfg_pillars = CondensateConfig().with_pillars({0, 2})
    engine = SparseSession(model, cfg_pillars)
    tok, _, _ = engine.prefill(prompt)
    max_with_pillars = 0
    for _ in range(1000):
        tok, diag = engine.step(tok)
        for ld in diag.layers:
            if ld.mode == "sparse":
                max_with_pillars = max(max_with_pillars, ld.set_size)
    assert engine.cache.n == 4096
    assert max_with_pillars <= 128

    cfg_plain = CondensateConfig()
    engine2 = SparseSession(model, cfg_plain)
    tok, _, _ = engine2.prefill(prompt)
    max_plain = 0
    for _ in range(1000):
        tok, diag = engine2.step(tok)
        max_plain = max(max_plain, max(ld.set_size for ld in diag.layers))
    assert len(engine2.persistent) == 0
    assert max_plain <= 97
    _ok(
        "bounded-support",
        f"max |set| {max_with_pillars} <= 128 with pillars; "
        f"{max_plain} <= 97 with empty persistent set at N=4096",
    )


# ---------------------------------------------------------------------------
# 6. mass scaling trend
# ---------------------------------------------------------------------------


def test_mass_scaling_trend():
    """Fixed 65-position set on a concentrated model: condensate mass
    strictly increases over n in {128, 512, 2048}."""
    spec = ModelSpec(
        n_layers=4, n_heads=4, n_kv_heads=4, head_dim=16, vocab_size=512,
        max_seq=4096, model_dim=64, mlp_hidden=128,
    )
    model = synth_model(
        spec, SynthRecipe(kind="concentrated", seed=6, length_coupling=3800.0)
    )
    masses = []
    for n in (128, 512, 2048):
        prompt = make_filler_prompt(spec, n, seed=21)
        census = mass_census(model, prompt, spec.n_layers - 1, window=64)
        cond = census["anchor"][1] + census["window"][1] + census["dynamic"][1]
        assert census["anchor"][0] + census["window"][0] == 65
        masses.append(cond)
    assert masses[0] < masses[1] < masses[2]
    _ok(
        "mass-scaling-trend",
        "condensate mass strictly increasing: "
        + " < ".join(f"{m:.12f}" for m in masses),
    )


# ---------------------------------------------------------------------------
# 7. needle retrieval at scale
# ---------------------------------------------------------------------------


def test_needle_retrieval_scales():
    """Synthetic cache, 4 needles: dynamic top-k finds 4/4 at every scale
    with both selectors; static finds only in-window needles."""
    dynamic_cfg = CondensateConfig(window=64, topk=32, budget_cap=128)
    static_cfg = CondensateConfig(window=64, topk=0, budget_cap=128)
    for n in (1024, 8192, 65536, 262144):
        rng = np.random.default_rng(n)
        positions = sorted(
            int(p) for p in rng.choice(n - 70, size=3, replace=False)
        ) + [n - 10]  # three far needles, one inside the window
        cache = SyntheticCache(n, positions, seed=9)
        for sel in ("keynorm", "scores"):
            rep = run_needle_synthetic(cache, dynamic_cfg, selector=sel)
            assert rep.found == 4, (n, sel)
        static_rep = run_needle_synthetic(cache, static_cfg, selector="keynorm")
        found_static = {f.position for f in static_rep.findings if f.found_in_topk}
        assert found_static == {n - 10}
        dyn_rep = run_needle_synthetic(cache, dynamic_cfg, selector="keynorm")
        found_dyn = {f.position for f in dyn_rep.findings if f.found_in_topk}
        assert found_static < found_dyn
    _ok(
        "needle-retrieval",
        "4/4 with both selectors at N in {1K, 8K, 64K, 262K}; static finds "
        "only the in-window needle",
    )


# ---------------------------------------------------------------------------
# 8. op-count scaling and wall-clock speedup
# ---------------------------------------------------------------------------


def test_op_count_scaling_and_speedup():
    """Sparse per-step op count flat (|slope| < 0.05), dense per-step
    linear (1.0 +- 0.02), prefill quadratic (2.0 +- 0.05), and measured
    per-step speedup at N=16,384 of at least 20x."""
    cfg = CondensateConfig()
    n_list = [8192, 16384, 32768, 65536, 131072, 262144]
    records = run_scaling(cfg, n_list, repeats=3, dense_max_n=0, seed=1)
    fit = fit_ops_slopes(records)
    assert abs(fit.slope_sparse) < 0.05
    assert fit.slope_dense == pytest.approx(1.0, abs=0.02)

    pf = [prefill_ops(4, 8, n, 64) for n in n_list]
    slope_pf = np.polyfit(np.log(n_list), np.log(pf), 1)[0]
    assert slope_pf == pytest.approx(2.0, abs=0.05)

    timed = run_scaling(cfg, [16384], repeats=20, dense_max_n=16384, seed=2)[0]
    assert timed.speedup is not None and timed.speedup >= 20.0
    _ok(
        "op-count-scaling",
        f"slopes: sparse {fit.slope_sparse:+.4f}, dense {fit.slope_dense:.4f}, "
        f"prefill {slope_pf:.4f}; measured speedup at 16K = {timed.speedup:.1f}x",
    )


# ---------------------------------------------------------------------------
# 9. extrapolation formula
# ---------------------------------------------------------------------------


def test_extrapolation_formula():
    """627.58 ms at 131,072 projects to 40,165 ms +- 1 at 1,048,576."""
    got = extrapolate_quadratic(627.58, 131072, 1048576)
    assert abs(got - 40165.0) <= 1.0 + 0.12  # formula gives 40165.12 exactly
    assert got == pytest.approx(627.58 * 64, abs=1e-9)
    _ok("extrapolation-formula", f"projected {got:.2f} ms (~40,165)")


# ---------------------------------------------------------------------------
# 10. KV eviction
# ---------------------------------------------------------------------------


def test_kv_eviction_at_10k():
    """Evict mode to N=10,000: resident <= 257 + |persistent| per
    layer/kv-head, retained entries bit-equal to the full-retention cache,
    and identical token output."""
    spec = ModelSpec(
        n_layers=2, n_heads=2, n_kv_heads=1, head_dim=16, vocab_size=256,
        max_seq=12288, model_dim=64, mlp_hidden=128,
    )
    model = synth_model(spec, SynthRecipe(kind="concentrated", seed=11))
    cfg = CondensateConfig().with_pillars({0})
    prompt = make_filler_prompt(spec, 200, seed=3)
    full = SparseSession(model, cfg, retention="full")
    ev = SparseSession(model, cfg, retention="evict")
    tf, _, _ = full.prefill(prompt)
    te, _, _ = ev.prefill(prompt)
    assert tf == te
    steps = 10000 - 200
    max_resident_slack = 0
    for _ in range(steps):
        tf, _ = full.step(tf)
        te, _ = ev.step(te)
        assert te == tf
        bound = 257 + len(ev.persistent)
        assert ev.cache.resident <= bound
        max_resident_slack = max(max_resident_slack, ev.cache.resident - 257)
    assert ev.cache.n == 10000
    logical = ev.cache.logical_positions()
    for li in range(spec.n_layers):
        for kh in range(spec.n_kv_heads):
            Kf, Vf, _, _ = full.cache.view(li, kh)
            Ke, Ve, _, _ = ev.cache.view(li, kh)
            assert np.array_equal(Ke, Kf[logical])
            assert np.array_equal(Ve, Vf[logical])
    _ok(
        "kv-eviction",
        f"N=10,000: resident <= 257+|persistent| (peak slack {max_resident_slack}), "
        "retained entries bit-equal, tokens identical",
    )
