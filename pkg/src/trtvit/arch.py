"""Architecture specs, preset library, validation, models, serialization.

A network is a stem conv, five stages of blocks, and a classifier head
(global average pool + linear). Resolution divisors are fixed at
2, 2, 4, 8, 16, 32 for stem through stage 5: stage 1 keeps the stem's
half resolution, every later stage halves once via its first block's
stride (stride-2 mix/transformer blocks pool at entry).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import blocks as B
from .ops import Linear
from .tensor import ConfigError, FormatError, MacCounter, Rng, ShapeError, Tensor, as_array

STAGE_DIVISORS = (2, 4, 8, 16, 32)
STEM_DIVISOR = 2

MIX_KINDS = ("mixa", "mixb", "mixc")
ATTN_KINDS = ("transformer",) + MIX_KINDS


@dataclass(frozen=True)
class BlockSpec:
    kind: str
    out_channels: int
    stride: int = 1
    r: float | None = None  # shrinking ratio (mix blocks)
    s: int | None = None  # spatial reduction ratio (attention)
    k: int | None = None  # bottleneck kernel / conv kernel

    def hyper(self):
        return {
            "r": 0.5 if self.r is None else self.r,
            "sr": 1 if self.s is None else self.s,
            "kernel": 3 if self.k is None else self.k,
        }


@dataclass(frozen=True)
class StageSpec:
    blocks: tuple[BlockSpec, ...]
    divisor: int


@dataclass(frozen=True)
class ArchSpec:
    name: str
    stem: BlockSpec
    stages: tuple[StageSpec, ...]
    num_classes: int = 1000

    def stage_depths(self) -> list[int]:
        """Block counts of stages 2 through 5."""
        return [len(s.blocks) for s in self.stages[1:]]

    def out_channels(self) -> int:
        for stage in reversed(self.stages):
            if stage.blocks:
                return stage.blocks[-1].out_channels
        return self.stem.out_channels


def _conv(c, stride=1, k=None):
    return BlockSpec("conv3x3", c, stride, k=k)


def _bn(c, stride=1, k=3):
    return BlockSpec("bottleneck", c, stride, k=k)


def _mix(kind, c, stride=1, r=0.5, s=1, k=7):
    return BlockSpec(kind, c, stride, r=r, s=s, k=k)


def _tr(c, stride=1, s=1):
    return BlockSpec("transformer", c, stride, s=s)


def _stages(stage1, *late):
    out = [StageSpec(tuple(stage1), STAGE_DIVISORS[0])]
    for i, blks in enumerate(late):
        out.append(StageSpec(tuple(blks), STAGE_DIVISORS[i + 1]))
    return tuple(out)


def _repeat(make, c, n, k=3):
    """First block of a downsampling stage carries the stride."""
    return [make(c, 2 if i == 0 else 1, k) for i in range(n)]


def _trt_variant(name, chans, depths, stage4_mix=0):
    # stage-4 depth counts the trailing MixBlockC blocks of the larger variants
    c2, c3, c4, c5 = chans
    d2, d3, d4, d5 = depths
    stage4 = _repeat(_bn, c4, d4 - stage4_mix)
    stage4 += [_mix("mixc", c4, 1, 0.5, 2, 7) for _ in range(stage4_mix)]
    stage5 = [_mix("mixc", c5, 2 if i == 0 else 1, 0.5, 1, 7) for i in range(d5)]
    return ArchSpec(
        name=name,
        stem=_conv(32, 2),
        stages=_stages(
            [_conv(32), _conv(64)],
            _repeat(_bn, c2, d2),
            _repeat(_bn, c3, d3),
            stage4,
            stage5,
        ),
    )


def _resnet_like(name, depths, stage5=None):
    res_chans = (256, 512, 1024, 2048)
    late = [_repeat(_bn, c, d) for c, d in zip(res_chans[:3], depths[:3])]
    if stage5 is None:
        stage5 = _repeat(_bn, res_chans[3], depths[3])
    late.append(stage5)
    return ArchSpec(name=name, stem=_conv(64, 2, k=7), stages=_stages([], *late))


def _mixnet(name, stage5_kind):
    base = _trt_variant(name, (160, 320, 640, 1280), (2, 4, 5, 4))
    stage5 = tuple(replace(b, kind=stage5_kind) for b in base.stages[4].blocks)
    stages = base.stages[:4] + (StageSpec(stage5, STAGE_DIVISORS[3 + 1]),)
    return replace(base, stages=stages)


def _ratio_variant(name, r):
    base = _trt_variant(name, (160, 320, 640, 1280), (2, 4, 5, 4))
    stage5 = tuple(replace(b, r=r) for b in base.stages[4].blocks)
    return replace(base, stages=base.stages[:4] + (StageSpec(stage5, 32),))


def _ablation(name, mix_stages):
    """Swap whole BottleNeck stages of the base variant for MixBlockC."""
    base = _trt_variant(name, (160, 320, 640, 1280), (2, 4, 5, 4))
    stages = list(base.stages)
    for idx in mix_stages:  # 0-based stage index
        blks = tuple(
            _mix("mixc", b.out_channels, b.stride, 0.5, 2, 7) for b in stages[idx].blocks)
        stages[idx] = StageSpec(blks, stages[idx].divisor)
    return replace(base, stages=tuple(stages))


def _build_presets():
    presets = {}
    presets["trt-vit-a"] = _trt_variant("trt-vit-a", (160, 320, 640, 1280), (2, 4, 5, 4))
    presets["trt-vit-b"] = _trt_variant("trt-vit-b", (192, 384, 768, 1536), (3, 4, 7, 4))
    presets["trt-vit-c"] = _trt_variant("trt-vit-c", (192, 384, 768, 1536), (3, 4, 9, 6), 2)
    presets["trt-vit-d"] = _trt_variant("trt-vit-d", (256, 512, 1024, 2048), (4, 5, 9, 5), 2)
    presets["resnet50"] = _resnet_like("resnet50", (3, 4, 6, 3))
    presets["refined-resnet50"] = _resnet_like("refined-resnet50", (2, 3, 6, 5))
    # Transformer final stage at the stage-4 width (width is preserved, the
    # stage entry average-pools to the /32 grid)
    presets["mixnet-v"] = _resnet_like(
        "mixnet-v", (3, 5, 6, 0),
        stage5=[_tr(1024, 2 if i == 0 else 1) for i in range(3)])
    presets["refined-mixnet-v"] = _resnet_like(
        "refined-mixnet-v", (2, 3, 6, 0),
        stage5=[_tr(1024, 2 if i == 0 else 1) for i in range(4)])
    presets["mixnet-a"] = _mixnet("mixnet-a", "mixa")
    presets["mixnet-b"] = _mixnet("mixnet-b", "mixb")
    presets["mixnet-c"] = _mixnet("mixnet-c", "mixc")
    presets["ablation-ccmm"] = _ablation("ablation-ccmm", (3,))
    presets["ablation-cmmm"] = _ablation("ablation-cmmm", (2, 3))
    presets["ratio-r25"] = _ratio_variant("ratio-r25", 0.25)
    presets["ratio-r50"] = _ratio_variant("ratio-r50", 0.50)
    presets["ratio-r75"] = _ratio_variant("ratio-r75", 0.75)
    presets["ratio-r100"] = _ratio_variant("ratio-r100", 1.00)
    return presets


_PRESETS = _build_presets()
PRESET_NAMES = tuple(sorted(_PRESETS))


def preset(name: str) -> ArchSpec:
    try:
        return _PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}") from None


def validate(spec: ArchSpec) -> list[str]:
    """Check channel chains, stride placement, attention widths, divisors.

    Returns a list of violations; empty means the spec is well formed.
    """
    bad = []
    if spec.stem.kind != "conv3x3" or spec.stem.stride != 2:
        bad.append("stem: must be a stride-2 conv")
    if len(spec.stages) != 5:
        bad.append(f"expected 5 stages, got {len(spec.stages)}")
        return bad
    for i, (stage, want) in enumerate(zip(spec.stages, STAGE_DIVISORS), start=1):
        if stage.divisor != want:
            bad.append(f"stage{i}: divisor {stage.divisor} != {want}")
    c = spec.stem.out_channels
    for i, stage in enumerate(spec.stages, start=1):
        downsample = i >= 2
        for j, blk in enumerate(stage.blocks, start=1):
            path = f"stage{i}/block{j}"
            want_stride = 2 if (downsample and j == 1) else 1
            if blk.stride != want_stride:
                bad.append(f"{path}: stride {blk.stride}, expected {want_stride}")
            hp = blk.hyper()
            if blk.kind == "transformer":
                if blk.out_channels != c:
                    bad.append(f"{path}: transformer changes width {c} -> {blk.out_channels}")
                if blk.out_channels % B.HEAD_DIM:
                    bad.append(f"{path}: width {blk.out_channels} not divisible by {B.HEAD_DIM}")
            elif blk.kind in MIX_KINDS:
                wt = hp["r"] * blk.out_channels
                if abs(wt - round(wt)) > 1e-9 or int(round(wt)) % B.HEAD_DIM or wt <= 0:
                    bad.append(
                        f"{path}: Transformer sub-width {wt:g} not a positive multiple of {B.HEAD_DIM}")
                if blk.kind == "mixb" and abs(hp["r"] - 0.5) > 1e-9:
                    bad.append(f"{path}: mixb requires R=0.5, got {hp['r']}")
                if blk.kind != "mixc" and hp["r"] >= 1:
                    bad.append(f"{path}: {blk.kind} requires R < 1, got {hp['r']}")
            elif blk.kind == "bottleneck":
                if blk.out_channels < 4:
                    bad.append(f"{path}: bottleneck width {blk.out_channels} below 4")
            elif blk.kind != "conv3x3":
                bad.append(f"{path}: unknown block kind {blk.kind!r}")
            c = blk.out_channels
    return bad


class Model:
    """Instantiated network: stem block, five stages, classifier head."""

    def __init__(self, spec: ArchSpec, dtype=np.float32):
        violations = validate(spec)
        if violations:
            raise ConfigError("invalid arch spec: " + "; ".join(violations))
        self.spec = spec
        self.dtype = dtype
        hp = spec.stem.hyper()
        self.stem = B.ConvBlock(3, spec.stem.out_channels, hp["kernel"],
                                spec.stem.stride, dtype=dtype)
        c = spec.stem.out_channels
        self.stages: list[list[B.Block]] = []
        for stage in spec.stages:
            built = []
            for blk in stage.blocks:
                hp = blk.hyper()
                built.append(B.make_block(
                    blk.kind, c, blk.out_channels, r=hp["r"], sr=hp["sr"],
                    kernel=hp["kernel"], stride=blk.stride, dtype=dtype))
                c = blk.out_channels
            self.stages.append(built)
        self.head = Linear(c, spec.num_classes, bias=True, dtype=dtype)
        self._final_c = c

    def modules(self):
        yield "stem", self.stem
        for i, stage in enumerate(self.stages, start=1):
            for j, blk in enumerate(stage, start=1):
                yield f"stage{i}/block{j}", blk
        yield "head", self.head

    def named_params(self):
        for path, mod in self.modules():
            yield from mod.named_params(path)

    def num_params(self) -> int:
        return sum(p.v.size for _, p in self.named_params() if p.trainable)

    def init(self, rng: Rng) -> None:
        for _, mod in self.modules():
            mod.init(rng)

    def _check_input(self, x: np.ndarray) -> None:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected B x 3 x H x W input, got {x.shape}")
        if x.shape[2] % 32 or x.shape[3] % 32:
            raise ShapeError(
                f"input resolution {x.shape[2]}x{x.shape[3]} not divisible by 32")

    def forward(self, x: Tensor, counter: MacCounter | None = None) -> Tensor:
        logits, _ = self.forward_stages(x, counter)
        return logits

    def forward_stages(self, x: Tensor, counter: MacCounter | None = None):
        """Forward pass that also reports each stage's output shape."""
        a = as_array(x).astype(self.dtype, copy=False)
        self._check_input(a)
        a = self.stem.forward(a, counter)
        shapes = [("stem", a.shape)]
        for i, stage in enumerate(self.stages, start=1):
            for blk in stage:
                a = blk.forward(a, counter)
            shapes.append((f"stage{i}", a.shape))
        pooled = a.mean(axis=(2, 3))  # global average pool
        # keep a token axis so the head runs one GEMM per sample (batch
        # results are then bitwise independent of the batch size)
        logits = self.head.forward(pooled[:, None, :], counter)[:, 0, :]
        return Tensor(logits), shapes

    def weights(self) -> dict[str, Tensor]:
        """Flat ordered map of every parameter and buffer."""
        return {path: Tensor(p.v) for path, p in self.named_params()}

    def load_state(self, weights: dict[str, Tensor]) -> None:
        own = dict(self.named_params())
        for path in own:
            if path not in weights:
                raise FormatError(f"weights file missing parameter {path!r}")
        for path in weights:
            if path not in own:
                raise FormatError(f"unexpected parameter {path!r} for arch {self.spec.name!r}")
        for path, p in own.items():
            v = as_array(weights[path])
            if v.shape != p.v.shape:
                raise FormatError(
                    f"shape mismatch at {path!r}: file {v.shape}, model {p.v.shape}")
            p.v = np.ascontiguousarray(v, dtype=self.dtype)


def instantiate(spec: ArchSpec, rng: Rng, dtype=np.float32) -> Model:
    """Build a model and initialize its weights from the given stream."""
    model = Model(spec, dtype=dtype)
    model.init(rng)
    return model


# ---------------------------------------------------------------------------
# Weights file: magic MXVW, version u16 LE, manifest, raw little-endian data

_MAGIC = b"MXVW"
_VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_weights(weights: dict[str, Tensor] | Model, path) -> None:
    if isinstance(weights, Model):
        weights = weights.weights()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<HI", _VERSION, len(weights)))
        for name, t in weights.items():
            arr = as_array(t)
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for t in weights.values():
            arr = as_array(t)
            f.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def load_weights(path) -> dict[str, Tensor]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _MAGIC:
        raise FormatError(f"not a weights file: bad magic {data[:4]!r}")
    off = 4
    version, count = struct.unpack_from("<HI", data, off)
    off += 6
    if version != _VERSION:
        raise FormatError(f"unsupported weights version {version}")
    manifest = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        tag, rank = struct.unpack_from("<BB", data, off)
        off += 2
        shape = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        if tag not in _TAG_DTYPES:
            raise FormatError(f"unknown dtype tag {tag} for {name!r}")
        manifest.append((name, _TAG_DTYPES[tag], shape))
    out: dict[str, Tensor] = {}
    for name, dt, shape in manifest:
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = n * dt.itemsize
        if off + nbytes > len(data):
            raise FormatError(f"weights file truncated at {name!r}")
        arr = np.frombuffer(data[off : off + nbytes], dtype=dt).reshape(shape)
        off += nbytes
        out[name] = Tensor(arr.astype(dt.newbyteorder("=")))
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes after weight data")
    return out


# ---------------------------------------------------------------------------
# Human-readable arch text format
#
# One block per line: "<section>: <kind> key=value ...". For conv3x3 and
# bottleneck, s= is the stride; for transformer and mix kinds, s= is the
# spatial reduction ratio and stride= the stride (omitted when 1).

def format_arch_text(spec: ArchSpec) -> str:
    lines = [f"name: {spec.name}", f"classes: {spec.num_classes}"]

    def blk_line(section, blk: BlockSpec):
        parts = [f"{section}: {blk.kind} c={blk.out_channels}"]
        if blk.kind in ATTN_KINDS:
            if blk.kind in MIX_KINDS:
                parts.append(f"r={blk.hyper()['r']:g}")
            parts.append(f"s={blk.hyper()['sr']}")
            if blk.kind in MIX_KINDS:
                parts.append(f"k={blk.hyper()['kernel']}")
            if blk.stride != 1:
                parts.append(f"stride={blk.stride}")
        else:
            if blk.kind == "conv3x3" and blk.hyper()["kernel"] != 3:
                parts.append(f"k={blk.hyper()['kernel']}")
            parts.append(f"s={blk.stride}")
        return " ".join(parts)

    lines.append(blk_line("stem", spec.stem))
    for i, stage in enumerate(spec.stages, start=1):
        for blk in stage.blocks:
            lines.append(blk_line(f"stage{i}", blk))
    return "\n".join(lines) + "\n"


def parse_arch_text(text: str) -> ArchSpec:
    name = "custom"
    classes = 1000
    stem = None
    stage_blocks: dict[int, list[BlockSpec]] = {i: [] for i in range(1, 6)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise FormatError(f"line {lineno}: expected '<section>: ...'")
        section, rest = (s.strip() for s in line.split(":", 1))
        if section == "name":
            name = rest
            continue
        if section == "classes":
            classes = int(rest)
            continue
        toks = rest.split()
        if not toks:
            raise FormatError(f"line {lineno}: missing block kind")
        kind = toks[0]
        if kind not in B.BLOCK_KINDS:
            raise FormatError(f"line {lineno}: unknown block kind {kind!r}")
        kv = {}
        for tok in toks[1:]:
            if "=" not in tok:
                raise FormatError(f"line {lineno}: expected key=value, got {tok!r}")
            key, val = tok.split("=", 1)
            kv[key] = val
        try:
            c = int(kv.pop("c"))
        except KeyError:
            raise FormatError(f"line {lineno}: block needs c=<channels>") from None
        r = float(kv.pop("r")) if "r" in kv else None
        k = int(kv.pop("k")) if "k" in kv else None
        s_val = kv.pop("s", None)
        stride = int(kv.pop("stride", 1))
        sr = None
        if s_val is not None:
            if kind in ATTN_KINDS:
                sr = int(s_val)
            else:
                stride = int(s_val)
        if kv:
            raise FormatError(f"line {lineno}: unknown keys {sorted(kv)}")
        blk = BlockSpec(kind, c, stride, r=r, s=sr, k=k)
        if section == "stem":
            stem = blk
        elif section.startswith("stage") and section[5:].isdigit() and 1 <= int(section[5:]) <= 5:
            stage_blocks[int(section[5:])].append(blk)
        else:
            raise FormatError(f"line {lineno}: unknown section {section!r}")
    if stem is None:
        raise FormatError("missing stem line")
    stages = tuple(
        StageSpec(tuple(stage_blocks[i]), d)
        for i, d in zip(range(1, 6), STAGE_DIVISORS))
    return ArchSpec(name=name, stem=stem, stages=stages, num_classes=classes)
