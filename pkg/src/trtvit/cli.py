"""Command-line interface.

Subcommands: describe, count, bench, metrics, gradcheck, infer, compare.
Report commands accept --format {markdown,csv,jsonl} and an optional
--out directory that receives the delimited tables plus rendered figures.
"""

from __future__ import annotations

import argparse
import sys
from importlib.resources import files
from pathlib import Path

import numpy as np

from . import analysis, arch, bench, gradcheck, report
from .tensor import ConfigError, FormatError, Rng, ShapeError, Tensor

DATA_FILES = {"table1": "table1_t4.csv", "table4": "table4_t4.csv"}


def data_path(key: str) -> Path:
    return Path(str(files("trtvit").joinpath("data", DATA_FILES[key])))


def _load_spec(args) -> arch.ArchSpec:
    if getattr(args, "spec", None):
        if getattr(args, "preset", None):
            raise ConfigError("give either a preset name or --spec, not both")
        return arch.parse_arch_text(Path(args.spec).read_text())
    if not getattr(args, "preset", None):
        raise ConfigError("missing preset name (or --spec FILE)")
    return arch.preset(args.preset)


def _emit(args, columns, rows, stem: str, figures=None):
    text = report.render_table(columns, rows, args.format)
    print(text, end="")
    if getattr(args, "out", None):
        report.write_report(columns, rows, args.out, stem)
        if figures:
            for fn in figures:
                fn(args.out)


# ---------------------------------------------------------------------------


def _group_blocks(stage: arch.StageSpec) -> str:
    groups = []
    for blk in stage.blocks:
        key = (blk.kind, blk.out_channels, blk.r, blk.s, blk.k)
        if groups and groups[-1][0] == key:
            groups[-1][1] += 1
        else:
            groups.append([key, 1])
    parts = []
    for (kind, c, r, s, k), n in groups:
        if kind in ("mixa", "mixb", "mixc"):
            hp = arch.BlockSpec(kind, c, r=r, s=s, k=k).hyper()
            desc = f"{kind}(c={c}, R={hp['r']:g}, S={hp['sr']}, K={hp['kernel']})"
        elif kind == "transformer":
            hp = arch.BlockSpec(kind, c, s=s).hyper()
            desc = f"transformer(c={c}, S={hp['sr']})"
        elif kind == "conv3x3":
            kk = 3 if k is None else k
            desc = f"conv{kk}x{kk}(c={c})"
        else:
            desc = f"{kind}(c={c})"
        parts.append(f"{desc} ×{n}")
    return " + ".join(parts) if parts else "(none)"


def cmd_describe(args) -> int:
    spec = _load_spec(args)
    if args.format == "spec":
        print(arch.format_arch_text(spec), end="")
        return 0
    res = args.res
    columns = ["stage", "output_size", "blocks"]
    rows = [{"stage": "stem", "output_size": f"{res // 2}x{res // 2}",
             "blocks": _group_blocks(arch.StageSpec((spec.stem,), 2))}]
    for i, stage in enumerate(spec.stages, start=1):
        size = res // stage.divisor
        rows.append({"stage": f"stage{i}", "output_size": f"{size}x{size}",
                     "blocks": _group_blocks(stage)})
    depths = "-".join(str(d) for d in spec.stage_depths())
    _emit(args, columns, rows, f"describe_{spec.name}")
    print(f"# {spec.name}: stage depths {depths}, {spec.num_classes} classes")
    return 0


def cmd_count(args) -> int:
    spec = _load_spec(args)
    root = analysis.count_model(spec, res=args.res)
    columns = ["path", "kind", "params", "flops", "out_shape"]
    nodes = root.children if not args.per_block else [
        n for n in root.walk() if n.kind not in ("stage", "model") and "/op" not in n.path]
    rows = [{"path": n.path, "kind": n.kind, "params": n.params,
             "flops": n.flops, "out_shape": "x".join(map(str, n.out_shape))}
            for n in nodes]
    rows.append({"path": "total", "kind": "model", "params": root.params,
                 "flops": root.flops,
                 "out_shape": "x".join(map(str, root.out_shape))})
    _emit(args, columns, rows, f"count_{spec.name}",
          figures=[lambda out: report.stage_cost_figure(root, out, spec.name)])
    print(f"# {spec.name} @{args.res}: {root.params_m:.2f}M params, "
          f"{root.flops_g:.2f}G FLOPs")
    return 0


def cmd_bench(args) -> int:
    cfg = bench.BenchConfig(warmup=args.warmup, iters=args.iters,
                            batch=args.batch, stat=args.stat)
    rng = Rng(args.seed)
    if args.block:
        c_out = args.c_out or args.c
        rec = bench.bench_block(args.block, args.c, c_out, args.hw, args.hw,
                                cfg, rng, r=args.r, sr=args.sr, kernel=args.k)
    else:
        if not args.preset:
            raise ConfigError("bench needs a preset name or --block KIND")
        rec = bench.bench_model(args.preset, cfg, rng, res=args.res)
    columns = list(bench.CSV_COLUMNS)
    rows = [{c: getattr(rec, c) for c in columns}]
    _emit(args, columns, rows, "bench")
    if args.save:
        bench.export_latency_csv([rec], args.save)
        print(f"# saved to {args.save}")
    return 0


def cmd_metrics(args) -> int:
    if not args.latency:
        raise ConfigError(
            "no latency source: pass --latency FILE (import a table or "
            "produce one with `trtvit bench ... --save FILE`)")
    records = bench.import_latency_csv(args.latency)
    if args.blocks and not args.models:
        records = [r for r in records if r.kind != "model"]
    if args.models and not args.blocks:
        records = [r for r in records if r.kind == "model"]
    cost = analysis.block_cost_rows()
    block_targets = set(cost)
    cost.update(bench.model_cost_rows({r.target for r in records if r.kind == "model"}))
    rows, unmatched = bench.join_metrics(cost, records)
    columns = ["target", "fmap", "params_k", "flops_m", "latency_ms",
               "teraparams", "teraflops", "source"]
    table = [{c: getattr(r, c) for c in columns} for r in rows]
    figs = []
    block_rows = [r for r in rows if r.target in block_targets]
    if block_rows:
        figs.append(lambda out: report.metric_figures(block_rows, out))
    _emit(args, columns, table, "metrics", figures=figs)
    for rec in unmatched:
        print(f"# unmatched: {rec.target} ({rec.kind}, {rec.env})")
    print(f"# units: teraflops = FLOPs[M]/latency[ms], teraparams = Params[K]/latency[ms]")
    return 0


def cmd_gradcheck(args) -> int:
    seeds = range(args.seed, args.seed + args.seeds)
    if args.kind == "all":
        hw = 4 if args.tiny else args.hw
        reports = []
        for seed in seeds:
            for name in gradcheck.OP_NAMES:
                reports.append(gradcheck.gradcheck_op(name, seed=seed))
            for kind in gradcheck.BLOCK_NAMES:
                reports.append(gradcheck.gradcheck_block(
                    kind, c=args.c, hw=hw, seed=seed, max_coords=args.max_coords))
    elif args.kind in gradcheck.OP_NAMES:
        reports = [gradcheck.gradcheck_op(args.kind, seed=s) for s in seeds]
    else:
        reports = [gradcheck.gradcheck_block(
            args.kind, c=args.c, hw=args.hw, r=args.r, sr=args.sr, k=args.k,
            seed=s, max_coords=args.max_coords) for s in seeds]
    ok = True
    for rep in reports:
        print(rep)
        ok = ok and rep.passed
    return 0 if ok else 1


def cmd_infer(args) -> int:
    spec = _load_spec(args)
    model = arch.Model(spec)
    model.load_state(arch.load_weights(args.weights))
    raw = np.fromfile(args.input, dtype="<f4")
    want = 3 * args.res * args.res
    if raw.size != want:
        raise FormatError(
            f"input file holds {raw.size} float32 values, expected {want} "
            f"(3x{args.res}x{args.res}, little-endian float32)")
    x = Tensor(raw.reshape(1, 3, args.res, args.res))
    logits = model.forward(x).a[0]
    if args.format == "jsonl":
        import json
        print(json.dumps({"logits": [float(v) for v in logits]}))
    else:
        for i, v in enumerate(logits):
            print(f"{i}\t{v:.6f}")
    return 0


def cmd_compare(args) -> int:
    latency = args.latency
    if latency is None and args.guideline in ("g1", "g2", "g3"):
        latency = data_path("table1" if args.guideline == "g1" else "table4")
    records = bench.import_latency_csv(latency) if latency else None
    columns, rows = analysis.guideline_report(args.guideline, records)
    figs = [lambda out: report.compare_figure(columns, rows, out, args.guideline)]
    _emit(args, columns, rows, f"compare_{args.guideline}", figures=figs)
    if args.guideline == "g4":
        print("# mixc runs attention before the KxK conv; mixb the reverse; "
              "cost totals are identical")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="trtvit",
        description="Hybrid CNN/Transformer blocks: cost engine, bench, metrics")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, formats=report.FORMATS):
        sp.add_argument("--format", choices=formats, default="markdown")
        sp.add_argument("--out", help="directory for table files and figures")

    sp = sub.add_parser("describe", help="stage-by-stage architecture listing")
    sp.add_argument("preset", nargs="?", help=f"one of: {', '.join(arch.PRESET_NAMES)}")
    sp.add_argument("--spec", help="arch text file instead of a preset")
    sp.add_argument("--res", type=int, default=224)
    add_common(sp, formats=report.FORMATS + ("spec",))
    sp.set_defaults(func=cmd_describe)

    sp = sub.add_parser("count", help="parameter and FLOP totals")
    sp.add_argument("preset", nargs="?")
    sp.add_argument("--spec")
    sp.add_argument("--res", type=int, default=224)
    sp.add_argument("--per-block", action="store_true")
    add_common(sp)
    sp.set_defaults(func=cmd_count)

    sp = sub.add_parser("bench", help="measure local wall-clock latency")
    sp.add_argument("preset", nargs="?")
    sp.add_argument("--block", choices=sorted(set(gradcheck.BLOCK_NAMES) | {"conv3x3"}))
    sp.add_argument("--c", type=int, default=256)
    sp.add_argument("--c-out", type=int, default=None)
    sp.add_argument("--hw", type=int, default=14)
    sp.add_argument("--r", type=float, default=0.5)
    sp.add_argument("--sr", type=int, default=1)
    sp.add_argument("--k", type=int, default=3)
    sp.add_argument("--res", type=int, default=224)
    sp.add_argument("--batch", type=int, default=1)
    sp.add_argument("--warmup", type=int, default=10)
    sp.add_argument("--iters", type=int, default=50)
    sp.add_argument("--stat", choices=bench.VALID_STATS, default="median")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--save", help="write the record to a latency CSV")
    add_common(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("metrics", help="join costs with latencies")
    sp.add_argument("--latency", help="latency CSV (imported or locally measured)")
    sp.add_argument("--blocks", action="store_true", help="block rows only")
    sp.add_argument("--models", action="store_true", help="model rows only")
    add_common(sp)
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    sp.add_argument("kind", help="block kind, op name, or 'all'")
    sp.add_argument("--c", type=int, default=64)
    sp.add_argument("--hw", type=int, default=8)
    sp.add_argument("--r", type=float, default=0.5)
    sp.add_argument("--sr", type=int, default=1)
    sp.add_argument("--k", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--seeds", type=int, default=1, help="number of seeds to run")
    sp.add_argument("--max-coords", type=int, default=gradcheck.SUBSAMPLE)
    sp.add_argument("--tiny", action="store_true", help="smallest extents for 'all'")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("infer", help="forward a raw float32 image file")
    sp.add_argument("preset", nargs="?")
    sp.add_argument("--spec")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--res", type=int, default=224)
    sp.add_argument("--format", choices=("plain", "jsonl"), default="plain")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("compare", help="design-guideline report tables")
    sp.add_argument("guideline", choices=("g1", "g2", "g3", "g4"))
    sp.add_argument("--latency", help="latency CSV (defaults to the shipped tables)")
    add_common(sp)
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (ConfigError, FormatError, ShapeError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
