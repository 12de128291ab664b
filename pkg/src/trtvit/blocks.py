"""Block zoo: plain conv, BottleNeck, Transformer, and the hybrid mix blocks.

MixBlockA runs a Transformer branch and a BottleNeck branch in parallel on
a channel split; MixBlockB stacks BottleNeck then Transformer (local first)
and is pinned to R=0.5 by its wiring; MixBlockC swaps the order (global
first), which frees R to any value in (0, 1]. All blocks take and return
B x C x H x W maps; Transformer-bearing blocks flatten to tokens at entry
and restore the map at exit. A stride-2 block downsamples with a 2x2
average pool at its input.
"""

from __future__ import annotations

import numpy as np

from .ops import (
    AvgPool2d,
    BatchNormInf,
    Conv2d,
    GeLU,
    LayerNorm,
    Linear,
    Module,
    OpDesc,
    ReLU,
    SRAttention,
    channel_concat,
    channel_split,
    from_tokens,
    to_tokens,
)
from .tensor import ConfigError, MacCounter, Tensor, as_array

HEAD_DIM = 32


def _check_attention_width(w: int, where: str) -> None:
    if w <= 0 or w % HEAD_DIM != 0:
        raise ConfigError(
            f"{where}: Transformer width {w} must be a positive multiple of {HEAD_DIM}")


class Block(Module):
    """Base block; concrete blocks define forward/backward/descs."""

    c_in: int
    c_out: int
    stride: int

    def out_shape(self, in_shape):
        b, c, h, w = in_shape
        return (b, self.c_out, h // self.stride, w // self.stride)

    def forward(self, x: np.ndarray, counter: MacCounter | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def descs(self, in_shape):
        raise NotImplementedError


class ConvBlock(Block):
    """3x3 (or other odd k) conv + BatchNorm + ReLU."""

    kind = "conv3x3"

    def __init__(self, c_in, c_out, kernel=3, stride=1, dtype=np.float32):
        self.c_in, self.c_out, self.kernel, self.stride = c_in, c_out, kernel, int(stride)
        self.conv = Conv2d(c_in, c_out, kernel, stride, dtype=dtype)
        self.bn = BatchNormInf(c_out, dtype=dtype)
        self.relu = ReLU()

    def children(self):
        return [("conv", self.conv), ("bn", self.bn)]

    def forward(self, x, counter=None):
        return self.relu.forward(self.bn.forward(self.conv.forward(x, counter)))

    def backward(self, dy):
        return self.conv.backward(self.bn.backward(self.relu.backward(dy)))

    def descs(self, in_shape):
        out = []
        for layer in (self.conv, self.bn, self.relu):
            d, in_shape = layer.desc(in_shape)
            out.append(d)
        return out, in_shape


class BottleNeckBlock(Block):
    """1x1 reduce, KxK spatial, 1x1 expand, each followed by BN+ReLU,
    plus a shortcut (identity, or 1x1 projection when shape changes).
    No activation after the final add. Mid width is out/4."""

    kind = "bottleneck"

    def __init__(self, c_in, c_out, kernel=3, stride=1, dtype=np.float32):
        if c_out < 4:
            raise ConfigError(f"bottleneck output width {c_out} too small for out/4 mid width")
        self.c_in, self.c_out, self.kernel, self.stride = c_in, c_out, kernel, int(stride)
        mid = c_out // 4
        self.mid = mid
        self.conv1 = Conv2d(c_in, mid, 1, 1, 0, dtype=dtype)
        self.bn1 = BatchNormInf(mid, dtype=dtype)
        self.conv2 = Conv2d(mid, mid, kernel, stride, kernel // 2, dtype=dtype)
        self.bn2 = BatchNormInf(mid, dtype=dtype)
        self.conv3 = Conv2d(mid, c_out, 1, 1, 0, dtype=dtype)
        self.bn3 = BatchNormInf(c_out, dtype=dtype)
        self.relu1, self.relu2, self.relu3 = ReLU(), ReLU(), ReLU()
        if stride != 1 or c_in != c_out:
            self.proj = Conv2d(c_in, c_out, 1, stride, 0, dtype=dtype)
            self.proj_bn = BatchNormInf(c_out, dtype=dtype)
        else:
            self.proj = None
            self.proj_bn = None

    def children(self):
        out = [("conv1", self.conv1), ("bn1", self.bn1),
               ("conv2", self.conv2), ("bn2", self.bn2),
               ("conv3", self.conv3), ("bn3", self.bn3)]
        if self.proj is not None:
            out += [("shortcut_conv", self.proj), ("shortcut_bn", self.proj_bn)]
        return out

    def forward(self, x, counter=None):
        y = self.relu1.forward(self.bn1.forward(self.conv1.forward(x, counter)))
        y = self.relu2.forward(self.bn2.forward(self.conv2.forward(y, counter)))
        y = self.relu3.forward(self.bn3.forward(self.conv3.forward(y, counter)))
        if self.proj is not None:
            s = self.proj_bn.forward(self.proj.forward(x, counter))
        else:
            s = x
        return y + s

    def backward(self, dy):
        dmain = self.relu3.backward(dy)
        dmain = self.conv3.backward(self.bn3.backward(dmain))
        dmain = self.conv2.backward(self.bn2.backward(self.relu2.backward(dmain)))
        dx = self.conv1.backward(self.bn1.backward(self.relu1.backward(dmain)))
        if self.proj is not None:
            dx = dx + self.proj.backward(self.proj_bn.backward(dy))
        else:
            dx = dx + dy
        return dx

    def descs(self, in_shape):
        out = []
        shape = in_shape
        for layer in (self.conv1, self.bn1, self.relu1,
                      self.conv2, self.bn2, self.relu2,
                      self.conv3, self.bn3, self.relu3):
            d, shape = layer.desc(shape)
            out.append(d)
        if self.proj is not None:
            d, _ = self.proj.desc(in_shape)
            out.append(d)
            d, _ = self.proj_bn.desc(shape)
            out.append(d)
        out.append(OpDesc("add"))
        return out, shape


class TransformerBlock(Block):
    """Pre-norm Transformer block on flattened spatial tokens.

    LayerNorm -> spatial-reduction attention -> residual, then LayerNorm ->
    MLP (expansion 3, GeLU) -> residual. Channel count is preserved; a
    stride-2 variant average-pools the map at entry.
    """

    kind = "transformer"
    MLP_RATIO = 3

    def __init__(self, c, sr=1, stride=1, dtype=np.float32):
        _check_attention_width(c, "transformer block")
        self.c_in = self.c_out = c
        self.sr = int(sr)
        self.stride = int(stride)
        self.pool = AvgPool2d(2, 2) if stride == 2 else None
        self.ln1 = LayerNorm(c, dtype=dtype)
        self.attn = SRAttention(c, sr, dtype=dtype)
        self.ln2 = LayerNorm(c, dtype=dtype)
        self.fc1 = Linear(c, self.MLP_RATIO * c, dtype=dtype)
        self.gelu = GeLU()
        self.fc2 = Linear(self.MLP_RATIO * c, c, dtype=dtype)

    def children(self):
        return [("ln1", self.ln1), ("attn", self.attn), ("ln2", self.ln2),
                ("fc1", self.fc1), ("fc2", self.fc2)]

    def forward(self, x, counter=None):
        if self.pool is not None:
            x = self.pool.forward(x)
        b, c, h, w = x.shape
        self._hw = (h, w)
        t = to_tokens(x)
        t = t + self.attn.forward(self.ln1.forward(t), (h, w), counter)
        t = t + self.fc2.forward(
            self.gelu.forward(self.fc1.forward(self.ln2.forward(t), counter)),
            counter)
        return from_tokens(t, h, w)

    def backward(self, dy):
        dt = to_tokens(dy)
        dt = dt + self.ln2.backward(
            self.fc1.backward(self.gelu.backward(self.fc2.backward(dt))))
        dt = dt + self.ln1.backward(self.attn.backward(dt))
        dx = from_tokens(dt, *self._hw)
        if self.pool is not None:
            dx = self.pool.backward(dx)
        return dx

    def descs(self, in_shape):
        out = []
        shape = in_shape
        if self.pool is not None:
            d, shape = self.pool.desc(shape)
            out.append(d)
        b, c, h, w = shape
        tokens = (b, h * w, c)
        out.append(OpDesc("flatten"))
        d, _ = self.ln1.desc(tokens)
        out.append(d)
        d, _ = self.attn.desc(tokens)
        out.append(d)
        out.append(OpDesc("add"))
        d, _ = self.ln2.desc(tokens)
        out.append(d)
        d, mid = self.fc1.desc(tokens)
        out.append(d)
        d, mid = self.gelu.desc(mid)
        out.append(d)
        d, _ = self.fc2.desc(mid)
        out.append(d)
        out.append(OpDesc("add"))
        out.append(OpDesc("unflatten"))
        return out, shape


class _MixBase(Block):
    """Shared plumbing for the mix blocks: entry pool, 1x1 projection with
    BN+ReLU, and a block-level residual when the shape is preserved."""

    def __init__(self, c_in, c_out, r, sr, kernel, stride, dtype):
        if not 0 < r <= 1:
            raise ConfigError(f"{self.kind}: shrinking ratio {r} outside (0, 1]")
        self.c_in, self.c_out = c_in, c_out
        self.r, self.sr, self.kernel, self.stride = float(r), int(sr), int(kernel), int(stride)
        wt = r * c_out
        if abs(wt - round(wt)) > 1e-9:
            raise ConfigError(f"{self.kind}: R*C_out = {wt} is not an integer")
        self.w_t = int(round(wt))  # Transformer sub-width
        self.w_b = c_out - self.w_t  # BottleNeck sub-width
        _check_attention_width(self.w_t, self.kind)
        self.pool = AvgPool2d(2, 2) if stride == 2 else None
        self.residual = stride == 1 and c_in == c_out
        self.dtype = dtype

    def _make_proj(self, width):
        self.proj = Conv2d(self.c_in, width, 1, 1, 0, dtype=self.dtype)
        self.proj_bn = BatchNormInf(width, dtype=self.dtype)
        self.proj_relu = ReLU()

    def _proj_forward(self, x, counter):
        return self.proj_relu.forward(self.proj_bn.forward(self.proj.forward(x, counter)))

    def _proj_backward(self, dp):
        return self.proj.backward(self.proj_bn.backward(self.proj_relu.backward(dp)))

    def _entry(self, x):
        return self.pool.forward(x) if self.pool is not None else x

    def _entry_backward(self, dx):
        return self.pool.backward(dx) if self.pool is not None else dx

    def _proj_descs(self, shape, out):
        for layer in (self.proj, self.proj_bn, self.proj_relu):
            d, shape = layer.desc(shape)
            out.append(d)
        return shape


class MixBlockA(_MixBase):
    """Parallel mix: 1x1 projection to C_out, channel split into
    (R*C_out | (1-R)*C_out), Transformer on the first part, BottleNeck on
    the second, channel concat."""

    kind = "mixa"

    def __init__(self, c_in, c_out, r=0.5, sr=1, kernel=3, stride=1, dtype=np.float32):
        super().__init__(c_in, c_out, r, sr, kernel, stride, dtype)
        if self.w_b <= 0:
            raise ConfigError(f"mixa: R={r} leaves no channels for the BottleNeck branch")
        self._make_proj(c_out)
        self.tsub = TransformerBlock(self.w_t, sr, 1, dtype=dtype)
        self.bsub = BottleNeckBlock(self.w_b, self.w_b, kernel, 1, dtype=dtype)

    def children(self):
        return [("proj", self.proj), ("proj_bn", self.proj_bn),
                ("tsub", self.tsub), ("bsub", self.bsub)]

    def forward(self, x, counter=None):
        x = self._entry(x)
        p = self._proj_forward(x, counter)
        a, b = channel_split(p, self.w_t)
        y = channel_concat(self.tsub.forward(a, counter), self.bsub.forward(b, counter))
        if self.residual:
            y = y + x
        return y

    def backward(self, dy):
        da = self.tsub.backward(np.ascontiguousarray(dy[:, : self.w_t]))
        db = self.bsub.backward(np.ascontiguousarray(dy[:, self.w_t :]))
        dx = self._proj_backward(channel_concat(da, db))
        if self.residual:
            dx = dx + dy
        return self._entry_backward(dx)

    def descs(self, in_shape):
        out = []
        shape = in_shape
        if self.pool is not None:
            d, shape = self.pool.desc(shape)
            out.append(d)
        shape = self._proj_descs(shape, out)
        b, c, h, w = shape
        out.append(OpDesc("split", c_in=c, c_out=self.w_t))
        tdescs, _ = self.tsub.descs((b, self.w_t, h, w))
        out.extend(tdescs)
        bdescs, _ = self.bsub.descs((b, self.w_b, h, w))
        out.extend(bdescs)
        out.append(OpDesc("concat", c_out=self.c_out))
        if self.residual:
            out.append(OpDesc("add"))
        return out, (b, self.c_out, h, w)


class MixBlockB(_MixBase):
    """Sequential local-then-global mix: BottleNeck then Transformer, with
    the outputs of both merged by concat. Both sub-blocks emit C_out/2, so
    R is structurally pinned to 0.5."""

    kind = "mixb"

    def __init__(self, c_in, c_out, r=0.5, sr=1, kernel=3, stride=1, dtype=np.float32):
        if abs(float(r) - 0.5) > 1e-9:
            raise ConfigError(f"mixb requires R=0.5 (sequential halves), got {r}")
        super().__init__(c_in, c_out, r, sr, kernel, stride, dtype)
        self._make_proj(self.w_t)
        self.bsub = BottleNeckBlock(self.w_t, self.w_b, kernel, 1, dtype=dtype)
        self.tsub = TransformerBlock(self.w_b, sr, 1, dtype=dtype)

    def children(self):
        return [("proj", self.proj), ("proj_bn", self.proj_bn),
                ("bsub", self.bsub), ("tsub", self.tsub)]

    def forward(self, x, counter=None):
        x = self._entry(x)
        p = self._proj_forward(x, counter)
        local = self.bsub.forward(p, counter)
        glob = self.tsub.forward(local, counter)
        y = channel_concat(local, glob)
        if self.residual:
            y = y + x
        return y

    def backward(self, dy):
        dlocal = np.ascontiguousarray(dy[:, : self.w_b])
        dglob = np.ascontiguousarray(dy[:, self.w_b :])
        dlocal = dlocal + self.tsub.backward(dglob)
        dx = self._proj_backward(self.bsub.backward(dlocal))
        if self.residual:
            dx = dx + dy
        return self._entry_backward(dx)

    def descs(self, in_shape):
        out = []
        shape = in_shape
        if self.pool is not None:
            d, shape = self.pool.desc(shape)
            out.append(d)
        shape = self._proj_descs(shape, out)
        bdescs, shape = self.bsub.descs(shape)
        out.extend(bdescs)
        tdescs, shape = self.tsub.descs(shape)
        out.extend(tdescs)
        b, c, h, w = shape
        out.append(OpDesc("concat", c_out=self.c_out))
        if self.residual:
            out.append(OpDesc("add"))
        return out, (b, self.c_out, h, w)


class MixBlockC(_MixBase):
    """Sequential global-then-local mix: Transformer first at width R*C_out,
    then a BottleNeck mapping to the remaining (1-R)*C_out, concat of both.
    R is free in (0, 1]; at R=1 the block degenerates to projection +
    Transformer (no local part)."""

    kind = "mixc"

    def __init__(self, c_in, c_out, r=0.5, sr=1, kernel=3, stride=1, dtype=np.float32):
        super().__init__(c_in, c_out, r, sr, kernel, stride, dtype)
        self._make_proj(self.w_t)
        self.tsub = TransformerBlock(self.w_t, sr, 1, dtype=dtype)
        self.bsub = (BottleNeckBlock(self.w_t, self.w_b, kernel, 1, dtype=dtype)
                     if self.w_b > 0 else None)

    def children(self):
        out = [("proj", self.proj), ("proj_bn", self.proj_bn), ("tsub", self.tsub)]
        if self.bsub is not None:
            out.append(("bsub", self.bsub))
        return out

    def forward(self, x, counter=None):
        x = self._entry(x)
        p = self._proj_forward(x, counter)
        glob = self.tsub.forward(p, counter)
        if self.bsub is not None:
            y = channel_concat(glob, self.bsub.forward(glob, counter))
        else:
            y = glob
        if self.residual:
            y = y + x
        return y

    def backward(self, dy):
        if self.bsub is not None:
            dglob = np.ascontiguousarray(dy[:, : self.w_t])
            dglob = dglob + self.bsub.backward(np.ascontiguousarray(dy[:, self.w_t :]))
        else:
            dglob = dy
        dx = self._proj_backward(self.tsub.backward(dglob))
        if self.residual:
            dx = dx + dy
        return self._entry_backward(dx)

    def descs(self, in_shape):
        out = []
        shape = in_shape
        if self.pool is not None:
            d, shape = self.pool.desc(shape)
            out.append(d)
        shape = self._proj_descs(shape, out)
        tdescs, shape = self.tsub.descs(shape)
        out.extend(tdescs)
        b, c, h, w = shape
        if self.bsub is not None:
            bdescs, _ = self.bsub.descs(shape)
            out.extend(bdescs)
            out.append(OpDesc("concat", c_out=self.c_out))
        if self.residual:
            out.append(OpDesc("add"))
        return out, (b, self.c_out, h, w)


BLOCK_KINDS = {
    "conv3x3": ConvBlock,
    "bottleneck": BottleNeckBlock,
    "transformer": TransformerBlock,
    "mixa": MixBlockA,
    "mixb": MixBlockB,
    "mixc": MixBlockC,
}


def make_block(kind: str, c_in: int, c_out: int, *, r=0.5, sr=1, kernel=3,
               stride=1, dtype=np.float32) -> Block:
    """Construct a block of the given kind; configuration errors surface here."""
    if kind not in BLOCK_KINDS:
        raise ConfigError(f"unknown block kind {kind!r}; expected one of {sorted(BLOCK_KINDS)}")
    if kind == "conv3x3":
        return ConvBlock(c_in, c_out, kernel, stride, dtype=dtype)
    if kind == "bottleneck":
        return BottleNeckBlock(c_in, c_out, kernel, stride, dtype=dtype)
    if kind == "transformer":
        if c_in != c_out:
            raise ConfigError(
                f"transformer block preserves width; got {c_in} -> {c_out}")
        return TransformerBlock(c_out, sr, stride, dtype=dtype)
    cls = BLOCK_KINDS[kind]
    return cls(c_in, c_out, r, sr, kernel, stride, dtype=dtype)


def block_forward(block: Block, x: Tensor, counter: MacCounter | None = None) -> Tensor:
    """Run a block on a B x C x H x W tensor."""
    return Tensor(block.forward(as_array(x), counter))


def block_trace(block: Block, h: int = 14, w: int = 14, batch: int = 1):
    """Ordered list of primitive op descriptors for one forward pass."""
    descs, _ = block.descs((batch, block.c_in, h, w))
    return descs
