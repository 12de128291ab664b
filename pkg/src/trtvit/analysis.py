"""Closed-form parameter/FLOP counting and compute-density metrics.

Counting convention: 1 MAC = 1 FLOP. Only matmul-shaped work is counted
(convolutions, linears, attention projections and score/context products);
biases, norms, activations, softmax, pooling, and elementwise adds cost
zero. Parameter counts include conv/linear weights, biases, and norm
affine pairs; running statistics are buffers, not parameters.

The TeraFLOPS/TeraParams density metrics are computed as FLOPs[M] /
latency[ms] and Params[K] / latency[ms]; reports label the units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import blocks as B
from .arch import ArchSpec, Model, preset
from .ops import HEAD_DIM, OpDesc
from .tensor import ConfigError


def count_op(d: OpDesc) -> tuple[int, int]:
    """(params, flops) for one primitive op descriptor."""
    if d.kind == "conv2d":
        params = d.c_in * d.c_out * d.k * d.k + (d.c_out if d.bias else 0)
        flops = d.batch * d.h_out * d.w_out * d.c_out * d.c_in * d.k * d.k
        return params, flops
    if d.kind == "linear":
        params = d.c_in * d.c_out + (d.c_out if d.bias else 0)
        flops = d.n_tokens * d.c_in * d.c_out
        return params, flops
    if d.kind == "attention":
        c, n, s = d.c_in, d.n_tokens, d.sr
        m = n // (s * s)
        params = 4 * c * c + 4 * c  # q/k/v/out projections with biases
        flops = n * c * c + 2 * m * c * c + n * c * c  # q, k+v, out
        if s > 1:
            params += c * c * s * s + c  # reduction conv (with bias)
            params += 2 * c  # its layernorm
            flops += m * c * c * s * s
        flops += 2 * n * m * c  # score and context products
        return params, d.batch * flops
    if d.kind in ("batchnorm", "layernorm"):
        return 2 * d.c_in, 0
    if d.kind in ("relu", "gelu", "softmax", "avgpool", "split", "concat",
                  "add", "flatten", "unflatten", "global-avgpool"):
        return 0, 0
    raise ConfigError(f"unknown op descriptor kind {d.kind!r}")


@dataclass
class CostNode:
    """One node of a cost report tree; totals are exact sums of children."""

    path: str
    kind: str
    params: int = 0
    flops: int = 0
    in_shape: tuple = ()
    out_shape: tuple = ()
    children: list["CostNode"] = field(default_factory=list)

    def add(self, child: "CostNode") -> None:
        self.children.append(child)
        self.params += child.params
        self.flops += child.flops

    @property
    def params_k(self) -> float:
        return self.params / 1e3

    @property
    def params_m(self) -> float:
        return self.params / 1e6

    @property
    def flops_m(self) -> float:
        return self.flops / 1e6

    @property
    def flops_g(self) -> float:
        return self.flops / 1e9

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()


def _block_node(path: str, block: B.Block, in_shape) -> CostNode:
    node = CostNode(path, block.kind, in_shape=in_shape)
    descs, out_shape = block.descs(in_shape)
    for i, d in enumerate(descs):
        p, f = count_op(d)
        node.add(CostNode(f"{path}/op{i}:{d.kind}", d.kind, p, f))
    node.out_shape = out_shape
    return node


def count_block(kind: str, c_in: int, c_out: int, h: int, w: int, *, batch: int = 1,
                r: float = 0.5, sr: int = 1, kernel: int = 3, stride: int = 1) -> CostNode:
    """Cost subtree for a single block at a concrete input shape."""
    block = B.make_block(kind, c_in, c_out, r=r, sr=sr, kernel=kernel, stride=stride)
    return _block_node(kind, block, (batch, c_in, h, w))


def count_model(spec: ArchSpec, res: int = 224, batch: int = 1) -> CostNode:
    """Full cost tree: model -> stages -> blocks -> primitive ops."""
    if res % 32:
        raise ConfigError(f"input resolution {res} not divisible by 32")
    model = Model(spec)
    root = CostNode(spec.name, "model", in_shape=(batch, 3, res, res))
    shape = (batch, 3, res, res)
    node = _block_node("stem", model.stem, shape)
    shape = node.out_shape
    root.add(node)
    for i, stage in enumerate(model.stages, start=1):
        stage_node = CostNode(f"stage{i}", "stage", in_shape=shape)
        for j, blk in enumerate(stage, start=1):
            child = _block_node(f"stage{i}/block{j}", blk, shape)
            shape = child.out_shape
            stage_node.add(child)
        stage_node.out_shape = shape
        root.add(stage_node)
    head_node = CostNode("head", "head", in_shape=shape)
    head_node.add(CostNode("head/global-avgpool", "global-avgpool", 0, 0))
    d, _ = model.head.desc((batch, shape[1]))
    p, f = count_op(d)
    head_node.add(CostNode("head/linear", "linear", p, f))
    head_node.out_shape = (batch, spec.num_classes)
    root.add(head_node)
    root.out_shape = (batch, spec.num_classes)
    return root


def teraflops(flops_m: float, latency_ms: float) -> float:
    """Compute density: FLOPs[M] / latency[ms]."""
    if latency_ms <= 0:
        raise ValueError(f"latency must be positive, got {latency_ms}")
    return flops_m / latency_ms


def teraparams(params_k: float, latency_ms: float) -> float:
    """Parameter density: Params[K] / latency[ms]."""
    if latency_ms <= 0:
        raise ValueError(f"latency must be positive, got {latency_ms}")
    return params_k / latency_ms


@dataclass
class MetricRow:
    """A joined cost + latency row with both density metrics."""

    target: str
    fmap: str
    params_k: float
    flops_m: float
    latency_ms: float
    teraparams: float
    teraflops: float
    source: str = ""
    env: str = ""


# ---------------------------------------------------------------------------
# Reference block grid (the single-block cost/latency comparison)
#
# Documented construction: BottleNeck with kernel 3 and mid width C/4;
# Transformer with spatial reduction 1; mix blocks with R=0.5, S=1, K=3,
# equal input and output width, stride 1. "mixbc" is the shared row for
# MixBlockB and MixBlockC, whose costs are identical by construction.

GRID_SIZES = ((256, 56), (512, 28), (1024, 14), (2048, 7))
GRID_KINDS = ("transformer", "bottleneck", "mixa", "mixbc")


def grid_target(kind: str, c: int, h: int, w: int) -> str:
    return f"{kind}-{c}x{h}x{w}"


def block_grid_cost(kind: str, c: int, h: int, w: int) -> CostNode:
    real = "mixb" if kind == "mixbc" else kind
    return count_block(real, c, c, h, w, r=0.5, sr=1, kernel=3, stride=1)


def block_cost_rows() -> dict[str, dict]:
    """Analytical cost for every (kind, size) cell of the block grid."""
    rows = {}
    for kind in GRID_KINDS:
        for c, hw in GRID_SIZES:
            node = block_grid_cost(kind, c, hw, hw)
            target = grid_target(kind, c, hw, hw)
            rows[target] = {
                "target": target, "kind": kind, "c": c, "h": hw, "w": hw,
                "fmap": f"{c}x{hw}x{hw}",
                "params": node.params, "flops": node.flops,
            }
    return rows


def _latency_lookup(records) -> dict[str, object]:
    return {rec.target: rec for rec in records} if records else {}


def guideline_report(kind: str, records=None) -> tuple[list[str], list[dict]]:
    """Tables backing the four design guidelines.

    g1: block-grid costs and densities across feature map sizes.
    g2: shallow-then-deep stage-depth comparison at model level.
    g3: final-stage block-type comparison at model level.
    g4: MixBlockB vs MixBlockC op order and cost equality.
    Accuracy columns are rendered as n/a (training out of scope).
    """
    if kind == "g1":
        return _report_g1(records)
    if kind == "g2":
        return _report_models(records, ["resnet50", "refined-resnet50",
                                        "mixnet-v", "refined-mixnet-v"], depths=True)
    if kind == "g3":
        return _report_models(records, ["resnet50", "mixnet-v", "mixnet-a",
                                        "mixnet-b", "mixnet-c"], stage_types=True)
    if kind == "g4":
        return _report_g4()
    raise ConfigError(f"unknown guideline {kind!r}; expected g1..g4")


def _report_g1(records):
    lat = _latency_lookup(records)
    cols = ["block", "fmap", "params_K", "flops_M", "latency_ms",
            "teraparams", "teraflops"]
    rows = []
    costs = block_cost_rows()
    for kind in GRID_KINDS:
        for c, hw in GRID_SIZES:
            cost = costs[grid_target(kind, c, hw, hw)]
            rec = lat.get(cost["target"])
            row = {
                "block": kind, "fmap": cost["fmap"],
                "params_K": round(cost["params"] / 1e3, 1),
                "flops_M": round(cost["flops"] / 1e6, 1),
                "latency_ms": rec.latency_ms if rec else None,
                "teraparams": round(teraparams(cost["params"] / 1e3, rec.latency_ms), 1) if rec else None,
                "teraflops": round(teraflops(cost["flops"] / 1e6, rec.latency_ms), 1) if rec else None,
            }
            rows.append(row)
    return cols, rows


def _stage_type_string(spec: ArchSpec) -> str:
    letters = []
    for stage in spec.stages[1:]:
        kinds = {b.kind for b in stage.blocks}
        if kinds & set(("mixa", "mixb", "mixc")):
            letters.append("M")
        elif "transformer" in kinds:
            letters.append("T")
        else:
            letters.append("C")
    return "-".join(letters)


def _report_models(records, names, depths=False, stage_types=False):
    lat = _latency_lookup(records)
    cols = ["model"]
    if depths:
        cols.append("stage_depth")
    if stage_types:
        cols.append("block_type")
    cols += ["flops_G", "params_M", "latency_ms", "top1_acc"]
    rows = []
    for name in names:
        spec = preset(name)
        node = count_model(spec)
        rec = lat.get(name)
        row = {"model": name,
               "flops_G": round(node.flops_g, 2),
               "params_M": round(node.params_m, 2),
               "latency_ms": rec.latency_ms if rec else None,
               "top1_acc": "n/a (training out of scope)"}
        if depths:
            row["stage_depth"] = "-".join(str(d) for d in spec.stage_depths())
        if stage_types:
            row["block_type"] = _stage_type_string(spec)
        rows.append(row)
    return cols, rows


def _trace_string(descs) -> str:
    keep = []
    for d in descs:
        if d.kind == "conv2d":
            keep.append(f"conv{d.k}x{d.k}")
        elif d.kind in ("attention", "split", "concat"):
            keep.append(d.kind)
    return " -> ".join(keep)


def _report_g4():
    c, hw = 2048, 7
    cols = ["block", "trace", "params_K", "flops_M"]
    rows = []
    for kind in ("mixb", "mixc"):
        block = B.make_block(kind, c, c, r=0.5, sr=1, kernel=3, stride=1)
        descs = B.block_trace(block, hw, hw)
        node = count_block(kind, c, c, hw, hw, r=0.5, sr=1, kernel=3, stride=1)
        rows.append({
            "block": kind,
            "trace": _trace_string(descs),
            "params_K": round(node.params / 1e3, 1),
            "flops_M": round(node.flops / 1e6, 1),
        })
    return cols, rows
