import numpy as np
import pytest

from condensate.decode import (
    SparseSession,
    amortized_per_layer,
    dense_equiv_step_ops,
    generate,
    prefill_ops,
    reduction_ratio,
    step_diag_json,
)
from condensate.dense import DenseSession
from condensate.errors import ConfigError
from condensate.model import ModelSpec, SynthRecipe, make_filler_prompt, synth_model
from condensate.selection import CondensateConfig
from conftest import equivalence_spec, small_spec


def lockstep(model, prompt, cfg, steps, **engine_kwargs):
    """Run oracle and engine side by side; returns per-step records."""
    oracle = DenseSession(model)
    engine = SparseSession(model, cfg, **engine_kwargs)
    t_d, lg_d, _ = oracle.prefill(prompt)
    t_s, lg_s, _ = engine.prefill(prompt)
    assert t_d == t_s and np.array_equal(lg_d, lg_s)
    out = []
    for _ in range(steps):
        t_d, lg_d, h_d = oracle.step(t_d)
        t_s, diag = engine.step(t_s)
        out.append(
            {
                "match": t_d == t_s,
                "bits": np.array_equal(lg_d, engine.last_logits),
                "diag": diag,
            }
        )
    return out


class TestDegenerateEquivalence:
    def test_all_pillars_is_dense(self, random_small_model):
        cfg = CondensateConfig(window=8, topk=4, budget_cap=16).with_pillars(
            range(random_small_model.spec.n_layers)
        )
        recs = lockstep(random_small_model, [4, 9, 2], cfg, 60)
        assert all(r["match"] and r["bits"] for r in recs)

    def test_short_context_any_model(self):
        # N never exceeds W+1, so sparse layers see every position
        spec = small_spec(n_kv_heads=1)
        for seed in (1, 2, 3):
            model = synth_model(spec, SynthRecipe(kind="random", seed=seed))
            cfg = CondensateConfig(window=64, topk=8, budget_cap=128)
            recs = lockstep(model, [1, 2, 3], cfg, 40)
            assert all(r["match"] and r["bits"] for r in recs)


class TestSpikeTrackingPersistence:
    def test_persistent_soundness(self, concentrated_model):
        spec = concentrated_model.spec
        cfg = CondensateConfig().with_pillars({0, spec.n_layers // 2})
        engine = SparseSession(concentrated_model, cfg)
        prompt = make_filler_prompt(spec, 300, seed=1)
        tok, _, _ = engine.prefill(prompt)
        for _ in range(20):
            tok, _ = engine.step(tok)
        tau = cfg.persist_threshold
        for p in engine.persistent.positions:
            assert engine.tracker.counts[p] >= tau
        for p, c in engine.tracker.counts.items():
            if c >= tau:
                assert p in engine.persistent.positions

    def test_sink_becomes_persistent(self, concentrated_model):
        spec = concentrated_model.spec
        cfg = CondensateConfig().with_pillars({0, spec.n_layers // 2})
        engine = SparseSession(concentrated_model, cfg)
        tok, _, _ = engine.prefill(make_filler_prompt(spec, 300, seed=2))
        for _ in range(4):
            tok, _ = engine.step(tok)
        assert 0 in engine.persistent.positions


class TestBoundedSupport:
    def test_budget_enforced_over_long_decode(self, concentrated_model):
        spec = concentrated_model.spec
        cfg = CondensateConfig().with_pillars({0, spec.n_layers // 2})
        engine = SparseSession(concentrated_model, cfg)
        tok, _, _ = engine.prefill(make_filler_prompt(spec, 600, seed=3))
        max_size = 0
        for _ in range(60):
            tok, diag = engine.step(tok)
            for ld in diag.layers:
                if ld.mode == "sparse":
                    max_size = max(max_size, ld.set_size)
        assert max_size <= cfg.budget_cap

    def test_no_pillars_exact_97(self, concentrated_model):
        spec = concentrated_model.spec
        cfg = CondensateConfig()  # no pillars -> persistent stays empty
        engine = SparseSession(concentrated_model, cfg)
        tok, _, _ = engine.prefill(make_filler_prompt(spec, 600, seed=4))
        for _ in range(30):
            tok, diag = engine.step(tok)
            for ld in diag.layers:
                assert ld.set_size <= 1 + cfg.window + cfg.topk == 97


class TestEviction:
    def test_retention_bound_and_token_identity(self, concentrated_model):
        spec = concentrated_model.spec
        cfg = CondensateConfig().with_pillars({0, spec.n_layers // 2})
        prompt = make_filler_prompt(spec, 200, seed=5)
        full = SparseSession(concentrated_model, cfg, retention="full")
        ev = SparseSession(concentrated_model, cfg, retention="evict")
        tf, _, _ = full.prefill(prompt)
        te, _, _ = ev.prefill(prompt)
        assert tf == te
        for _ in range(300):
            tf, _ = full.step(tf)
            te, _ = ev.step(te)
            assert tf == te
            bound = 1 + cfg.w_max + len(ev.persistent)
            assert ev.cache.resident <= bound

    def test_retained_entries_bit_equal(self, concentrated_model):
        spec = concentrated_model.spec
        cfg = CondensateConfig().with_pillars({0})
        prompt = make_filler_prompt(spec, 150, seed=6)
        full = SparseSession(concentrated_model, cfg, retention="full")
        ev = SparseSession(concentrated_model, cfg, retention="evict")
        tf, _, _ = full.prefill(prompt)
        te, _, _ = ev.prefill(prompt)
        for _ in range(250):
            tf, _ = full.step(tf)
            te, _ = ev.step(te)
        assert tf == te
        logical = ev.cache.logical_positions()
        for li in range(spec.n_layers):
            for kh in range(spec.n_kv_heads):
                Kf, Vf, _, _ = full.cache.view(li, kh)
                Ke, Ve, _, _ = ev.cache.view(li, kh)
                assert np.array_equal(Ke, Kf[logical])
                assert np.array_equal(Ve, Vf[logical])

    def test_nothing_evicted_short(self, concentrated_model):
        spec = concentrated_model.spec
        cfg = CondensateConfig().with_pillars({0})
        ev = SparseSession(concentrated_model, cfg, retention="evict")
        tok, _, _ = ev.prefill(make_filler_prompt(spec, 100, seed=7))
        for _ in range(20):
            tok, _ = ev.step(tok)
        # below w_max nothing can be evicted
        assert ev.cache.resident == ev.cache.n

    def test_window_anchor_never_evicted(self, concentrated_model):
        spec = concentrated_model.spec
        cfg = CondensateConfig().with_pillars({0})
        ev = SparseSession(concentrated_model, cfg, retention="evict")
        tok, _, _ = ev.prefill(make_filler_prompt(spec, 400, seed=8))
        for _ in range(80):
            tok, _ = ev.step(tok)
        logical = set(ev.cache.logical_positions().tolist())
        n = ev.cache.n
        assert 0 in logical
        assert set(range(n - cfg.w_max, n)) <= logical


class TestOpCounting:
    def test_dense_equiv_formula(self):
        assert dense_equiv_step_ops(32, 8, 1000, 64) == 2 * 32 * 8 * 1000 * 64

    def test_ratio_no_pillars(self):
        # |set| = 97, no pillar layers: per-layer reduction is N / 97
        n = 13000
        assert reduction_ratio(n, 97, 32, 0) == pytest.approx(n / 97)

    def test_amortized_per_layer_reference_point(self):
        # 32 layers, 2 pillars, N = 131072, budget 97:
        # N/16 + 97 * 30/32 = 8192 + 90.9 ~ 8283
        got = amortized_per_layer(131072, 97, 32, 2)
        assert got == pytest.approx(8283, abs=1.0)
        ratio = reduction_ratio(131072, 97, 32, 2)
        assert ratio == pytest.approx(15.8, abs=0.05)

    def test_sparse_ops_independent_of_n(self, concentrated_model):
        spec = concentrated_model.spec
        cfg = CondensateConfig()
        engine = SparseSession(concentrated_model, cfg)
        tok, _, _ = engine.prefill(make_filler_prompt(spec, 400, seed=9))
        ops_at = {}
        for i in range(40):
            tok, diag = engine.step(tok)
            if i in (10, 30):
                ops_at[i] = diag.ops_actual
        assert ops_at[10] == ops_at[30]

    def test_dense_equiv_doubles_with_n(self, concentrated_model):
        spec = concentrated_model.spec
        s1 = dense_equiv_step_ops(spec.n_layers, spec.n_heads, 500, spec.head_dim)
        s2 = dense_equiv_step_ops(spec.n_layers, spec.n_heads, 1000, spec.head_dim)
        assert s2 == 2 * s1

    def test_prefill_quadratic(self):
        a = prefill_ops(4, 4, 1000, 16)
        b = prefill_ops(4, 4, 2000, 16)
        assert b / a == pytest.approx(4.0, rel=2e-3)

    def test_pillar_ops_proportional_to_n(self, concentrated_model):
        spec = concentrated_model.spec
        cfg = CondensateConfig().with_pillars({0})
        engine = SparseSession(concentrated_model, cfg)
        tok, _, _ = engine.prefill(make_filler_prompt(spec, 300, seed=10))
        tok, d1 = engine.step(tok)
        n1, ops1 = d1.n_ctx, d1.layers[0].ops
        for _ in range(50):
            tok, d2 = engine.step(tok)
        n2, ops2 = d2.n_ctx, d2.layers[0].ops
        assert ops1 / n1 == pytest.approx(ops2 / n2)


class TestMonotoneOps:
    def test_ops_nondecreasing_in_pillars_and_budget(self, concentrated_model):
        spec = concentrated_model.spec
        prompt = make_filler_prompt(spec, 400, seed=13)

        def total_ops(cfg):
            engine = SparseSession(concentrated_model, cfg)
            tok, _, _ = engine.prefill(prompt)
            total = 0
            for _ in range(10):
                tok, diag = engine.step(tok)
                total += diag.ops_actual
            return total

        by_pillars = [
            total_ops(CondensateConfig().with_pillars(set(range(k))))
            for k in (0, 1, 2)
        ]
        assert by_pillars[0] <= by_pillars[1] <= by_pillars[2]

        small = total_ops(CondensateConfig(window=64, topk=16, budget_cap=81))
        large = total_ops(CondensateConfig(window=64, topk=32, budget_cap=128))
        assert small <= large


class TestTraceInterface:
    def test_trace_round_trip_and_summary(self, concentrated_model, tmp_path):
        import json

        from condensate.decode import read_trace, step_diag_json, trace_op_summary

        spec = concentrated_model.spec
        cfg = CondensateConfig().with_pillars({0})
        res = generate(
            concentrated_model, make_filler_prompt(spec, 200, 14), cfg, 6,
            diagnostics=True,
        )
        path = tmp_path / "trace.jsonl"
        path.write_text(
            "\n".join(step_diag_json(d, i) for i, d in enumerate(res.steps)) + "\n"
        )
        steps = read_trace(path)
        assert len(steps) == len(res.steps)
        summary = trace_op_summary(steps)
        assert summary["ops_actual"] == res.ops_actual
        assert summary["ops_dense_equiv"] == res.ops_dense_equiv
        assert summary["reduction"] > 1.0


class TestGenerate:
    def test_max_tokens_zero(self, random_small_model):
        res = generate(random_small_model, [1, 2, 3], CondensateConfig(), 0)
        assert res.tokens == []
        assert res.steps == []
        assert res.prefill_ops > 0

    def test_eos_first_token(self):
        spec = small_spec(eos_token=9)
        model = synth_model(spec, SynthRecipe(kind="random", seed=5))
        # steer the greedy head to emit EOS immediately
        model.lm_head[9] = 0.0
        model.lm_head[9, 0] = 100.0
        res = generate(model, [1, 2, 3], CondensateConfig(), 8)
        assert len(res.tokens) == 1
        assert res.stopped_on_eos

    def test_trace_json_schema(self, random_small_model):
        cfg = CondensateConfig(window=8, topk=4, budget_cap=16)
        res = generate(random_small_model, [1, 2], cfg, 4, diagnostics=True)
        import json

        for i, d in enumerate(res.steps):
            line = json.loads(step_diag_json(d, i))
            assert {"step", "token", "n_ctx", "layers", "ops_actual"} <= set(line)

    def test_decode_before_prefill_rejected(self, random_small_model):
        engine = SparseSession(random_small_model, CondensateConfig())
        with pytest.raises(ConfigError):
            engine.step(1)

    def test_bad_pillar_layer_rejected(self, random_small_model):
        with pytest.raises(ConfigError):
            SparseSession(
                random_small_model, CondensateConfig().with_pillars({99})
            )


class TestAdaptiveWindowMode:
    def test_adaptive_late_layers_stay_equivalent_on_concentrated(
        self, concentrated_model
    ):
        spec = concentrated_model.spec
        cfg = CondensateConfig(adaptive=True).with_pillars({0, spec.n_layers // 2})
        recs = lockstep(concentrated_model, make_filler_prompt(spec, 512, 11), cfg, 20)
        assert all(r["match"] for r in recs)

    def test_adaptive_window_grows_on_repetitive_context(self, concentrated_model):
        spec = concentrated_model.spec
        cfg = CondensateConfig(adaptive=True)
        engine = SparseSession(concentrated_model, cfg)
        prompt = [0] + [7, 8] * 200  # heavily repeated bigrams
        tok, _, _ = engine.prefill(prompt)
        tok, diag = engine.step(tok)
        late = diag.layers[spec.n_layers - 1]
        # late layers widen toward w_max; early layers keep the base window
        assert late.set_size > 1 + cfg.window + cfg.topk


class TestConcurrencyContract:
    def test_parallel_sessions_identical(self, concentrated_model):
        import threading

        spec = concentrated_model.spec
        cfg = CondensateConfig().with_pillars({0})
        prompt = make_filler_prompt(spec, 200, seed=12)
        results = [None, None]

        def run(slot):
            res = generate(concentrated_model, prompt, cfg, 12)
            results[slot] = res.tokens

        threads = [threading.Thread(target=run, args=(i,)) for i in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert results[0] == results[1]
        assert results[0] == generate(concentrated_model, prompt, cfg, 12).tokens
