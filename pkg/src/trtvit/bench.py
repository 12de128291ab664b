"""Wall-clock latency measurement and imported latency tables.

Local measurements run a warmup phase then timed iterations on a fixed
synthetic input, single-threaded, with a monotonic clock; the recorded
statistic is the median by default. Externally measured latencies (for
example TensorRT/T4 tables) are ingested from CSV and carry their
provenance in the env tag; the package never claims to reproduce them.
"""

from __future__ import annotations

import csv
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from . import analysis
from . import blocks as B
from .arch import ArchSpec, instantiate, preset
from .tensor import ConfigError, FormatError, Rng, Tensor

CSV_COLUMNS = ("target", "kind", "c_in", "c_out", "h", "w", "batch",
               "latency_ms", "source", "env")

VALID_STATS = ("median", "mean", "min")


@dataclass
class LatencyRecord:
    target: str
    kind: str
    c_in: int
    c_out: int
    h: int
    w: int
    batch: int
    latency_ms: float
    source: str  # "measured-local" or "imported"
    env: str = ""

    def __post_init__(self):
        if self.latency_ms <= 0:
            raise FormatError(f"{self.target}: latency must be positive, got {self.latency_ms}")
        if self.batch < 1:
            raise FormatError(f"{self.target}: batch must be >= 1, got {self.batch}")


@dataclass
class BenchConfig:
    warmup: int = 10
    iters: int = 50
    batch: int = 1
    stat: str = "median"

    def __post_init__(self):
        if self.warmup < 1:
            raise ConfigError(f"warmup must be >= 1, got {self.warmup}")
        if self.iters < 3:
            raise ConfigError(f"iters must be >= 3, got {self.iters}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.stat not in VALID_STATS:
            raise ConfigError(f"stat must be one of {VALID_STATS}, got {self.stat!r}")


def _local_env(batch: int) -> str:
    return f"local-cpu {platform.machine()} python{platform.python_version()} batch={batch}"


def _single_thread_limiter():
    try:  # keep timing stable when a threaded BLAS is present
        from threadpoolctl import threadpool_limits
        return threadpool_limits(limits=1)
    except Exception:
        import contextlib
        return contextlib.nullcontext()


def _time_fn(fn, cfg: BenchConfig) -> tuple[float, list[float]]:
    samples = []
    with _single_thread_limiter():
        for _ in range(cfg.warmup):
            fn()
        for _ in range(cfg.iters):
            t0 = time.perf_counter()
            fn()
            samples.append((time.perf_counter() - t0) * 1e3)
    stats = {"median": float(np.median(samples)),
             "mean": float(np.mean(samples)),
             "min": float(np.min(samples))}
    return stats[cfg.stat], samples


def bench_block(kind: str, c_in: int, c_out: int, h: int, w: int,
                cfg: BenchConfig, rng: Rng, *, r=0.5, sr=1, kernel=3,
                stride=1) -> LatencyRecord:
    """Time one block forward on a synthetic input."""
    block = B.make_block(kind, c_in, c_out, r=r, sr=sr, kernel=kernel, stride=stride)
    block.init(rng)
    x = rng.normal((cfg.batch, c_in, h, w), std=1.0, dtype="float32")
    latency, _ = _time_fn(lambda: block.forward(x), cfg)
    return LatencyRecord(
        target=analysis.grid_target(kind, c_in, h, w), kind=kind,
        c_in=c_in, c_out=c_out, h=h, w=w, batch=cfg.batch,
        latency_ms=latency, source="measured-local", env=_local_env(cfg.batch))


def bench_model(spec_or_name, cfg: BenchConfig, rng: Rng, res: int = 224) -> LatencyRecord:
    """Time one full-model forward on a synthetic image batch."""
    spec = preset(spec_or_name) if isinstance(spec_or_name, str) else spec_or_name
    model = instantiate(spec, rng)
    x = Tensor(rng.normal((cfg.batch, 3, res, res), std=1.0, dtype="float32"))
    latency, _ = _time_fn(lambda: model.forward(x), cfg)
    return LatencyRecord(
        target=spec.name, kind="model", c_in=3, c_out=spec.num_classes,
        h=res, w=res, batch=cfg.batch, latency_ms=latency,
        source="measured-local", env=_local_env(cfg.batch))


def export_latency_csv(records, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([r.target, r.kind, r.c_in, r.c_out, r.h, r.w,
                             r.batch, repr(r.latency_ms), r.source, r.env])


def import_latency_csv(path) -> list[LatencyRecord]:
    records = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty latency file") from None
        if tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise FormatError(
                f"{path}: bad header {header!r}; expected {','.join(CSV_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(CSV_COLUMNS):
                raise FormatError(f"{path}: line {lineno}: expected "
                                  f"{len(CSV_COLUMNS)} fields, got {len(row)}")
            try:
                rec = LatencyRecord(
                    target=row[0].strip(), kind=row[1].strip(),
                    c_in=int(row[2]), c_out=int(row[3]), h=int(row[4]),
                    w=int(row[5]), batch=int(row[6]),
                    latency_ms=float(row[7]), source=row[8].strip(),
                    env=row[9].strip())
            except (ValueError, FormatError) as e:
                raise FormatError(f"{path}: line {lineno}: {e}") from None
            records.append(rec)
    return records


def join_metrics(cost_rows: dict[str, dict], records) -> tuple[list[analysis.MetricRow], list[LatencyRecord]]:
    """Join analytical cost rows with latency records by target id.

    Every record lands either in the metric rows or the unmatched list, so
    len(rows) + len(unmatched) == len(records).
    """
    rows, unmatched = [], []
    for rec in records:
        cost = cost_rows.get(rec.target)
        if cost is None:
            unmatched.append(rec)
            continue
        params_k = cost["params"] / 1e3
        flops_m = cost["flops"] / 1e6
        rows.append(analysis.MetricRow(
            target=rec.target, fmap=cost.get("fmap", f"{rec.c_in}x{rec.h}x{rec.w}"),
            params_k=params_k, flops_m=flops_m, latency_ms=rec.latency_ms,
            teraparams=analysis.teraparams(params_k, rec.latency_ms),
            teraflops=analysis.teraflops(flops_m, rec.latency_ms),
            source=rec.source, env=rec.env))
    return rows, unmatched


def model_cost_rows(names) -> dict[str, dict]:
    """Analytical cost rows for the named presets, keyed by preset name."""
    rows = {}
    for name in names:
        try:
            spec = preset(name)
        except ConfigError:
            continue
        node = analysis.count_model(spec)
        rows[name] = {"target": name, "kind": "model",
                      "fmap": f"3x{224}x{224}",
                      "params": node.params, "flops": node.flops}
    return rows
