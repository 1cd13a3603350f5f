"""Operator entry point: every experiment as a subcommand.

Config files are INI documents (sections: model, condensate, experiment,
output); command-line flags override file values. With identical config
and seed every subcommand writes byte-identical output files; timestamps
and environment notes go to a separate run_meta.json.

Exit codes: 0 success, 1 experiment-level assertion failure (--assert
mode), 2 usage or configuration errors.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
import time
from pathlib import Path

import numpy as np

from condensate import __version__
from condensate.backend import BACKEND_NAME
from condensate.errors import CondensateError
from condensate.model import (
    Model,
    ModelSpec,
    SynthRecipe,
    inspect_weight_header,
    load_weights,
    make_filler_prompt,
    synth_model,
)
from condensate.selection import CondensateConfig

EXIT_OK = 0
EXIT_EXPERIMENT = 1
EXIT_CONFIG = 2


def _read_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if path:
        done = cp.read(path)
        if not done:
            raise CondensateError(f"config: file '{path}' not found")
    for section in ("model", "condensate", "experiment", "output"):
        if not cp.has_section(section):
            cp.add_section(section)
    return cp


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.replace(" ", "").split(",") if x]


def _model_from_config(cp: configparser.ConfigParser) -> Model:
    m = cp["model"]
    source = m.get("source", "synth")
    if source == "file":
        path = m.get("weights", "")
        if not path:
            raise CondensateError("model.weights: missing path for source=file")
        if not Path(path).exists():
            raise CondensateError(f"model.weights: not found: {path}")
        return load_weights(path)
    if source != "synth":
        raise CondensateError(f"model.source: unknown value '{source}'")
    spec = ModelSpec(
        n_layers=m.getint("n_layers", 4),
        n_heads=m.getint("n_heads", 4),
        n_kv_heads=m.getint("n_kv_heads", 4),
        head_dim=m.getint("head_dim", 16),
        vocab_size=m.getint("vocab_size", 512),
        max_seq=m.getint("max_seq", 4096),
        rope_enabled=m.getboolean("rope_enabled", False),
        rope_theta=m.getfloat("rope_theta", 1e6),
        eos_token=m.getint("eos_token", -1),
        model_dim=m.getint("model_dim", 64),
        mlp_hidden=m.getint("mlp_hidden", 128),
    )
    recipe = SynthRecipe(
        kind=m.get("kind", "concentrated"),
        seed=m.getint("seed", 0),
        sink_strength=m.getfloat("sink_strength", 40.0),
        needle_positions=tuple(_ints(m.get("needle_positions", ""))),
        needle_gain=m.getfloat("needle_gain", 50.0),
        length_coupling=m.getfloat("length_coupling", 0.0),
    )
    return synth_model(spec, recipe)


def _cfg_from_config(
    cp: configparser.ConfigParser, n_layers: int, pillars_override: str | None = None
) -> CondensateConfig:
    c = cp["condensate"]
    cfg = CondensateConfig(
        window=c.getint("window", 64),
        topk=c.getint("topk", 32),
        k_spike=c.getint("k_spike", 32),
        persist_threshold=c.getint("persist_threshold", 2),
        w_min=c.getint("w_min", 64),
        w_max=c.getint("w_max", 256),
        budget_cap=c.getint("budget_cap", 128),
        selector=c.get("selector", "keynorm"),
        adaptive=c.getboolean("adaptive", False),
    )
    text = pillars_override if pillars_override is not None else c.get("pillars", "")
    text = (text or "").strip().lower()
    if text == "all":
        return cfg.with_pillars(range(n_layers))
    if text in ("", "none"):
        return cfg.with_pillars(())
    return cfg.with_pillars(_ints(text))


def _out_dir(cp: configparser.ConfigParser, override: str | None) -> Path:
    d = Path(override or cp["output"].get("dir", "out"))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _write_meta(out: Path, args: argparse.Namespace) -> None:
    meta = {
        "timestamp_unix": time.time(),
        "backend": BACKEND_NAME,
        "version": __version__,
        "command": sys.argv[1:2],
    }
    _write(out / "run_meta.json", json.dumps(meta, sort_keys=True) + "\n")


def _load_prompt_file(path: str) -> tuple[list[int], list[dict]]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, list):
        return [int(t) for t in data], []
    return [int(t) for t in data["tokens"]], list(data.get("needles", []))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    from condensate.decode import generate, step_diag_json
    from condensate.lab import run_equivalence

    cp = _read_config(args.config)
    model = _model_from_config(cp)
    cfg = _cfg_from_config(cp, model.spec.n_layers, args.pillars)
    out = _out_dir(cp, args.out_dir)
    if args.prompt_file:
        if not Path(args.prompt_file).exists():
            raise CondensateError(f"prompt-file: not found: {args.prompt_file}")
        prompt, _needles = _load_prompt_file(args.prompt_file)
    else:
        ex = cp["experiment"]
        prompt = make_filler_prompt(
            model.spec, ex.getint("prompt_len", 256), ex.getint("seed", 0)
        )

    if args.mode == "dual":
        report = run_equivalence(
            model, [prompt], cfg, steps_per_prompt=max(args.max_tokens - 1, 1)
        )
        tokens_sparse = [r.token_sparse for r in report.steps]
        tokens_dense = [r.token_dense for r in report.steps]
        _write(out / "tokens_sparse.json", json.dumps(tokens_sparse) + "\n")
        _write(out / "tokens_dense.json", json.dumps(tokens_dense) + "\n")
        _write(out / "match.json", report.to_json() + "\n")
        print(report.table())
    else:
        retention = "evict" if args.retention == "evict" else "full"
        use_cfg = (
            cfg.with_pillars(range(model.spec.n_layers))
            if args.mode == "dense"
            else cfg
        )
        res = generate(
            model,
            prompt,
            use_cfg,
            args.max_tokens,
            retention=retention,
            diagnostics=True,
        )
        _write(out / "tokens.json", json.dumps(res.tokens) + "\n")
        trace = "\n".join(
            step_diag_json(d, i) for i, d in enumerate(res.steps)
        )
        _write(out / "trace.jsonl", trace + ("\n" if trace else ""))
        print(f"generated {len(res.tokens)} tokens -> {out}")
    _write_meta(out, args)
    return EXIT_OK


def cmd_validate(args) -> int:
    from condensate.lab import run_equivalence

    cp = _read_config(args.config)
    model = _model_from_config(cp)
    cfg = _cfg_from_config(cp, model.spec.n_layers, args.pillars)
    ex = cp["experiment"]
    out = _out_dir(cp, args.out_dir)
    n_prompts = args.prompts or ex.getint("prompts", 3)
    plen = ex.getint("prompt_len", 512)
    steps = args.steps or ex.getint("steps", 40)
    seed = ex.getint("seed", 0)
    prompts = [
        make_filler_prompt(model.spec, plen, seed + i) for i in range(n_prompts)
    ]
    report = run_equivalence(model, prompts, cfg, steps_per_prompt=steps)
    _write(out / "equivalence.json", report.to_json() + "\n")
    _write(out / "equivalence.txt", report.table() + "\n")
    _write_meta(out, args)
    print(report.table())
    if args.assert_top1 is not None and report.top1_match < args.assert_top1:
        print(
            f"ASSERT: top1 {report.top1_match:.4f} < {args.assert_top1}",
            file=sys.stderr,
        )
        return EXIT_EXPERIMENT
    return EXIT_OK


def cmd_bench(args) -> int:
    from condensate.bench import (
        bench_table,
        compare_backends,
        fit_ops_slopes,
        fit_slopes,
        project_records,
        run_scaling,
        slopes_json,
        to_csv,
    )

    cp = _read_config(args.config)
    ex = cp["experiment"]
    cfg = _cfg_from_config(cp, n_layers=1, pillars_override="none")
    out = _out_dir(cp, args.out_dir)
    n_list = args.n_list or _ints(
        ex.get("n_list", "1024,2048,4096,8192,16384,32768,65536")
    )
    repeats = args.repeats or ex.getint("repeats", 20)
    dense_max = ex.getint("dense_max_n", 16384)
    records = run_scaling(
        cfg, n_list, repeats=repeats, dense_max_n=dense_max,
        seed=ex.getint("seed", 0),
    )
    if args.project:
        records = records + project_records(records, args.project)
    csv_text = to_csv(records)
    _write(out / "bench.csv", csv_text)
    fit = fit_slopes(records)
    ops_fit = fit_ops_slopes([r for r in records if not r.projected])
    _write(out / "slopes.json", slopes_json(fit, ops_fit) + "\n")
    _write(out / "bench.txt", bench_table(records) + "\n")
    if args.compare_backends:
        cmpd = compare_backends(cfg, n=min(4096, n_list[-1]), repeats=repeats)
        _write(out / "backends.json", json.dumps(cmpd, sort_keys=True) + "\n")
        print(json.dumps(cmpd, sort_keys=True))
    _write_meta(out, args)
    print(bench_table(records))
    return EXIT_OK


def cmd_needle(args) -> int:
    from condensate.lab import SyntheticCache, run_needle_synthetic

    cp = _read_config(args.config)
    ex = cp["experiment"]
    cfg = _cfg_from_config(cp, n_layers=1, pillars_override="none")
    if args.static:
        cfg = CondensateConfig(
            window=cfg.window,
            topk=0,
            k_spike=cfg.k_spike,
            persist_threshold=cfg.persist_threshold,
            w_min=cfg.w_min,
            w_max=cfg.w_max,
            budget_cap=cfg.budget_cap,
            selector=cfg.selector,
        )
    out = _out_dir(cp, args.out_dir)
    scales = args.scales or _ints(ex.get("scales", "1024,8192,65536,262144"))
    n_needles = ex.getint("needles", 4)
    seed = ex.getint("seed", 0)
    reports = []
    for n in scales:
        rng = np.random.default_rng(seed + n)
        positions = sorted(
            int(p) for p in rng.choice(n, size=n_needles, replace=False)
        )
        cache = SyntheticCache(n, positions, seed=seed)
        rep = run_needle_synthetic(cache, cfg, selector=args.selector)
        reports.append(rep)
        print(
            f"N={n:>9,}  needles {rep.found}/{rep.planted}  "
            f"sparsity {rep.sparsity * 100:.2f}%  selector={rep.selector}"
        )
    _write(
        out / "needle.json",
        "\n".join(r.to_json() for r in reports) + "\n",
    )
    _write_meta(out, args)
    if args.assert_all and any(r.found != r.planted for r in reports):
        print("ASSERT: not all needles found", file=sys.stderr)
        return EXIT_EXPERIMENT
    return EXIT_OK


def cmd_mass(args) -> int:
    from condensate.lab import census_table, mass_census

    cp = _read_config(args.config)
    model = _model_from_config(cp)
    ex = cp["experiment"]
    out = _out_dir(cp, args.out_dir)
    lengths = args.lengths or _ints(ex.get("lengths", "128,512,2048"))
    layer = args.layer if args.layer is not None else model.spec.n_layers - 1
    seed = ex.getint("seed", 21)
    results = {}
    for n in lengths:
        prompt = make_filler_prompt(model.spec, n, seed)
        census = mass_census(model, prompt, layer)
        results[str(n)] = {k: {"positions": c, "mass": m} for k, (c, m) in census.items()}
        print(f"-- n={n} (layer {layer})")
        print(census_table(census))
    _write(out / "mass.json", json.dumps(results, sort_keys=True) + "\n")
    _write_meta(out, args)
    return EXIT_OK


def cmd_convert_check(args) -> int:
    info = inspect_weight_header(args.weights)
    print(json.dumps(info, sort_keys=True, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="condensate",
        description="sparse-attention inference engine: experiments and checks",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="greedy generation with trace output")
    g.add_argument("--config", default=None)
    g.add_argument("--prompt-file", default=None, help="JSON token list or needle doc")
    g.add_argument("--mode", choices=["sparse", "dense", "dual"], default="sparse")
    g.add_argument("--max-tokens", type=int, default=32)
    g.add_argument("--retention", choices=["full", "evict"], default="full")
    g.add_argument("--pillars", default=None, help="e.g. '0,2', 'all', 'none'")
    g.add_argument("--out-dir", default=None)
    g.set_defaults(func=cmd_generate)

    v = sub.add_parser("validate", help="lockstep sparse-vs-dense equivalence")
    v.add_argument("--config", default=None)
    v.add_argument("--pillars", default=None)
    v.add_argument("--prompts", type=int, default=None)
    v.add_argument("--steps", type=int, default=None)
    v.add_argument("--assert-top1", type=float, default=None)
    v.add_argument("--out-dir", default=None)
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("bench", help="per-step attention scaling study")
    b.add_argument("--config", default=None)
    b.add_argument("--n-list", type=int, nargs="*", default=None)
    b.add_argument("--repeats", type=int, default=None)
    b.add_argument("--project", type=int, nargs="*", default=None)
    b.add_argument("--compare-backends", action="store_true")
    b.add_argument("--out-dir", default=None)
    b.set_defaults(func=cmd_bench)

    n = sub.add_parser("needle", help="synthetic-cache needle selector test")
    n.add_argument("--config", default=None)
    n.add_argument("--scales", type=int, nargs="*", default=None)
    n.add_argument("--static", action="store_true", help="anchor+window only (k=0)")
    n.add_argument("--selector", choices=["keynorm", "scores"], default=None)
    n.add_argument("--assert-all", action="store_true")
    n.add_argument("--out-dir", default=None)
    n.set_defaults(func=cmd_needle)

    m = sub.add_parser("mass", help="attention-mass census by region")
    m.add_argument("--config", default=None)
    m.add_argument("--lengths", type=int, nargs="*", default=None)
    m.add_argument("--layer", type=int, default=None)
    m.add_argument("--out-dir", default=None)
    m.set_defaults(func=cmd_mass)

    c = sub.add_parser("convert-check", help="verify a weight file header")
    c.add_argument("--weights", required=True)
    c.set_defaults(func=cmd_convert_check)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CondensateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
