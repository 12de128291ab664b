"""Table rendering (markdown / CSV / json-lines) and figure output.

Report commands print a delimited table and, when given an output
directory, also write the table plus matplotlib figures next to it.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

FORMATS = ("markdown", "csv", "jsonl")


def _cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def render_table(columns, rows, fmt: str = "markdown") -> str:
    """Render a list of row dicts in the requested format."""
    if fmt == "markdown":
        head = "| " + " | ".join(columns) + " |"
        sep = "|" + "|".join("---" for _ in columns) + "|"
        body = ["| " + " | ".join(_cell(r.get(c)) for c in columns) + " |" for r in rows]
        return "\n".join([head, sep] + body) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_cell(r.get(c)) for c in columns])
        return buf.getvalue()
    if fmt == "jsonl":
        return "\n".join(json.dumps({c: r.get(c) for c in columns}) for r in rows) + "\n"
    raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")


def write_report(columns, rows, outdir, stem: str) -> list[Path]:
    """Write the table as CSV and markdown under outdir."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt, ext in (("csv", "csv"), ("markdown", "md")):
        p = outdir / f"{stem}.{ext}"
        p.write_text(render_table(columns, rows, fmt))
        written.append(p)
    return written


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def metric_figures(rows, outdir, stem: str = "metrics") -> list[Path]:
    """Line plots of compute and parameter density per block kind across
    feature-map sizes. Rows are MetricRow objects for block targets."""
    plt = _plt()
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    by_kind: dict[str, list] = {}
    for r in rows:
        kind = r.target.rsplit("-", 1)[0]
        by_kind.setdefault(kind, []).append(r)
    written = []
    for metric, label in (("teraflops", "FLOPs[M] / latency[ms]"),
                          ("teraparams", "Params[K] / latency[ms]")):
        fig, ax = plt.subplots(figsize=(6, 4))
        for kind, rs in sorted(by_kind.items()):
            rs = sorted(rs, key=lambda r: -int(r.fmap.split("x")[1]))
            xs = [r.fmap.split("x", 1)[1] for r in rs]
            ys = [getattr(r, metric) for r in rs]
            ax.plot(xs, ys, marker="o", label=kind)
        ax.set_xlabel("feature map size")
        ax.set_ylabel(label)
        ax.set_title(metric)
        ax.set_yscale("log")
        ax.legend()
        ax.grid(True, alpha=0.3)
        p = outdir / f"{stem}_{metric}.png"
        fig.savefig(p, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(p)
    return written


def stage_cost_figure(cost_root, outdir, stem: str = "stages") -> Path:
    """Bar chart of per-stage parameter and FLOP shares for one model."""
    plt = _plt()
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    names = [c.path for c in cost_root.children]
    params = [c.params / 1e6 for c in cost_root.children]
    flops = [c.flops / 1e9 for c in cost_root.children]
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    axes[0].bar(names, params)
    axes[0].set_ylabel("params (M)")
    axes[1].bar(names, flops)
    axes[1].set_ylabel("FLOPs (G)")
    for ax in axes:
        ax.tick_params(axis="x", rotation=45)
        ax.grid(True, axis="y", alpha=0.3)
    fig.suptitle(cost_root.path)
    p = outdir / f"{stem}_costs.png"
    fig.savefig(p, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return p


def compare_figure(columns, rows, outdir, stem: str) -> Path | None:
    """Scatter of model FLOPs vs latency when both columns are present."""
    if "flops_G" not in columns or "latency_ms" not in columns:
        return None
    pts = [(r["latency_ms"], r["flops_G"], r.get("model", r.get("block", "?")))
           for r in rows if r.get("latency_ms") is not None]
    if not pts:
        return None
    plt = _plt()
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    for x, y, label in pts:
        ax.scatter(x, y)
        ax.annotate(label, (x, y), fontsize=8, xytext=(3, 3),
                    textcoords="offset points")
    ax.set_xlabel("latency (ms)")
    ax.set_ylabel("FLOPs (G)")
    ax.grid(True, alpha=0.3)
    p = outdir / f"{stem}_cost_vs_latency.png"
    fig.savefig(p, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return p
