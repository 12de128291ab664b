"""Neural-net primitives with hand-written forward and backward passes.

Layers operate on plain numpy arrays. Intermediates needed by backward are
cached only when the forward pass runs at float64 (gradients are only
defined there; float32 is the lean inference path). Every matmul-like
kernel reports its MACs to an optional :class:`~trtvit.tensor.MacCounter`;
norms, activations, softmax, pooling, bias adds, and residual adds report
nothing, matching the cost engine's convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import (
    ConfigError,
    MacCounter,
    PrecisionError,
    Rng,
    ShapeError,
    Tensor,
    as_array,
)

HEAD_DIM = 32

GELU_C0 = math.sqrt(2.0 / math.pi)
GELU_C1 = 0.044715


@dataclass
class OpDesc:
    """Structural descriptor of one primitive op at a concrete shape.

    The cost engine consumes these; blocks emit them in execution order so
    the analytical counts and the instrumented forward agree op for op.
    """

    kind: str
    batch: int = 1
    c_in: int = 0
    c_out: int = 0
    k: int = 0
    stride: int = 1
    h_out: int = 0
    w_out: int = 0
    n_tokens: int = 0
    sr: int = 1
    bias: bool = False


class Param:
    """A weight array plus its gradient slot."""

    __slots__ = ("v", "g", "trainable")

    def __init__(self, v: np.ndarray, trainable: bool = True):
        self.v = v
        self.g = None
        self.trainable = trainable

    def add_grad(self, g: np.ndarray) -> None:
        self.g = g if self.g is None else self.g + g


class Module:
    """Base for layers and blocks: named params, init, forward/backward."""

    def children(self):
        return []

    def own_params(self):
        return []

    def named_params(self, prefix: str = ""):
        for name, p in self.own_params():
            yield (f"{prefix}/{name}" if prefix else name, p)
        for name, child in self.children():
            yield from child.named_params(f"{prefix}/{name}" if prefix else name)

    def zero_grads(self) -> None:
        for _, p in self.named_params():
            p.g = None

    def init(self, rng: Rng) -> None:
        for _, child in self.children():
            child.init(rng)

    def _cacheable(self, x: np.ndarray) -> bool:
        return x.dtype == np.float64

    def _require_cache(self):
        cache = getattr(self, "_cache", None)
        if cache is None:
            raise PrecisionError(
                f"{type(self).__name__}.backward needs a preceding float64 forward "
                "(gradients are not defined for 32-bit runs)"
            )
        return cache


def _im2col(x: np.ndarray, k: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    sb, sc, sh, sw = xp.strides
    v = np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, k, k, ho, wo),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return np.ascontiguousarray(v).reshape(b, c * k * k, ho * wo)


def _col2im(dcols: np.ndarray, x_shape, k: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    b, c, h, w = x_shape
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    d = dcols.reshape(b, c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += d[:, :, i, j]
    return np.ascontiguousarray(dxp[:, :, pad : pad + h, pad : pad + w]) if pad else dxp


class Conv2d(Module):
    """Dense 2-D convolution over B x C x H x W, im2col + matmul."""

    def __init__(self, c_in, c_out, k, stride=1, pad=None, bias=False, dtype=np.float32):
        self.c_in, self.c_out, self.k = int(c_in), int(c_out), int(k)
        self.stride = int(stride)
        self.pad = self.k // 2 if pad is None else int(pad)
        self.w = Param(np.zeros((c_out, c_in, k, k), dtype))
        self.b = Param(np.zeros(c_out, dtype)) if bias else None
        self._cache = None

    def own_params(self):
        out = [("w", self.w)]
        if self.b is not None:
            out.append(("b", self.b))
        return out

    def init(self, rng: Rng) -> None:
        # fan-out scaled; the following norm absorbs any residual scale
        std = math.sqrt(2.0 / (self.c_out * self.k * self.k))
        self.w.v = rng.normal(self.w.v.shape, std=std, dtype=self.w.v.dtype)

    def out_hw(self, h: int, w: int):
        ho = (h + 2 * self.pad - self.k) // self.stride + 1
        wo = (w + 2 * self.pad - self.k) // self.stride + 1
        if ho <= 0 or wo <= 0:
            raise ShapeError(
                f"conv2d output extent non-positive for input {h}x{w} "
                f"(k={self.k}, stride={self.stride}, pad={self.pad})"
            )
        return ho, wo

    def desc(self, in_shape):
        b, c, h, w = in_shape
        ho, wo = self.out_hw(h, w)
        d = OpDesc(
            "conv2d", batch=b, c_in=self.c_in, c_out=self.c_out, k=self.k,
            stride=self.stride, h_out=ho, w_out=wo, bias=self.b is not None,
        )
        return d, (b, self.c_out, ho, wo)

    def forward(self, x: np.ndarray, counter: MacCounter | None = None) -> np.ndarray:
        b, c, h, w = x.shape
        if c != self.c_in:
            raise ShapeError(f"conv2d expects {self.c_in} input channels, got {c}")
        ho, wo = self.out_hw(h, w)
        cols = _im2col(x, self.k, self.stride, self.pad, ho, wo)
        wmat = self.w.v.reshape(self.c_out, -1)
        out = np.matmul(wmat, cols)  # (b, c_out, ho*wo)
        if counter is not None:
            counter.add(b * self.c_out * ho * wo * self.c_in * self.k * self.k)
        if self.b is not None:
            out = out + self.b.v[:, None]
        self._cache = (x.shape, cols, (ho, wo)) if self._cacheable(x) else None
        return np.ascontiguousarray(out.reshape(b, self.c_out, ho, wo))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x_shape, cols, (ho, wo) = self._require_cache()
        b = x_shape[0]
        g = dy.reshape(b, self.c_out, ho * wo)
        self.w.add_grad(np.einsum("bol,bil->oi", g, cols).reshape(self.w.v.shape))
        if self.b is not None:
            self.b.add_grad(g.sum(axis=(0, 2)))
        dcols = np.matmul(self.w.v.reshape(self.c_out, -1).T, g)
        return _col2im(dcols, x_shape, self.k, self.stride, self.pad, ho, wo)


class Linear(Module):
    """y = x @ w + b over the last axis; leading axes are batch-like.

    Token inputs (B, N, C) broadcast to one GEMM per batch element, so a
    batch-B call is bitwise identical to B stacked single-sample calls.
    """

    def __init__(self, c_in, c_out, bias=True, dtype=np.float32):
        self.c_in, self.c_out = int(c_in), int(c_out)
        self.w = Param(np.zeros((c_in, c_out), dtype))
        self.b = Param(np.zeros(c_out, dtype)) if bias else None
        self._cache = None

    def own_params(self):
        out = [("w", self.w)]
        if self.b is not None:
            out.append(("b", self.b))
        return out

    def init(self, rng: Rng) -> None:
        self.w.v = rng.trunc_normal(self.w.v.shape, std=0.02, dtype=self.w.v.dtype)

    def desc(self, in_shape):
        n = int(np.prod(in_shape[:-1]))
        d = OpDesc("linear", batch=1, c_in=self.c_in, c_out=self.c_out,
                   n_tokens=n, bias=self.b is not None)
        return d, in_shape[:-1] + (self.c_out,)

    def forward(self, x: np.ndarray, counter: MacCounter | None = None) -> np.ndarray:
        if x.shape[-1] != self.c_in:
            raise ShapeError(f"linear expects width {self.c_in}, got {x.shape[-1]}")
        y = np.matmul(x, self.w.v)
        if counter is not None:
            counter.add(int(np.prod(x.shape[:-1])) * self.c_in * self.c_out)
        if self.b is not None:
            y = y + self.b.v
        self._cache = (x,) if self._cacheable(x) else None
        return np.ascontiguousarray(y)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        (x,) = self._require_cache()
        flat_x = x.reshape(-1, self.c_in)
        flat_dy = dy.reshape(-1, self.c_out)
        self.w.add_grad(flat_x.T @ flat_dy)
        if self.b is not None:
            self.b.add_grad(flat_dy.sum(axis=0))
        return np.ascontiguousarray(np.matmul(dy, self.w.v.T))


class BatchNormInf(Module):
    """Inference-mode batch norm: per-channel affine from running stats."""

    def __init__(self, c, eps=1e-5, dtype=np.float32):
        self.c = int(c)
        self.eps = float(eps)
        self.gamma = Param(np.ones(c, dtype))
        self.beta = Param(np.zeros(c, dtype))
        self.mean = Param(np.zeros(c, dtype), trainable=False)
        self.var = Param(np.ones(c, dtype), trainable=False)
        self._cache = None

    def own_params(self):
        return [("gamma", self.gamma), ("beta", self.beta),
                ("mean", self.mean), ("var", self.var)]

    def desc(self, in_shape):
        return OpDesc("batchnorm", c_in=self.c, c_out=self.c), in_shape

    def _col(self, v: np.ndarray, ndim: int) -> np.ndarray:
        # channel axis is 1 for feature maps, last for token layouts
        if ndim == 4:
            return v[:, None, None]
        return v

    def forward(self, x: np.ndarray, counter: MacCounter | None = None) -> np.ndarray:
        axis_c = 1 if x.ndim == 4 else x.ndim - 1
        if x.shape[axis_c] != self.c:
            raise ShapeError(f"batchnorm expects {self.c} channels, got {x.shape[axis_c]}")
        inv = 1.0 / np.sqrt(self.var.v + self.eps)
        xhat = (x - self._col(self.mean.v, x.ndim)) * self._col(inv, x.ndim)
        y = xhat * self._col(self.gamma.v, x.ndim) + self._col(self.beta.v, x.ndim)
        self._cache = (xhat, inv, x.ndim) if self._cacheable(x) else None
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv, ndim = self._require_cache()
        reduce_axes = (0, 2, 3) if ndim == 4 else tuple(range(dy.ndim - 1))
        self.gamma.add_grad((dy * xhat).sum(axis=reduce_axes))
        self.beta.add_grad(dy.sum(axis=reduce_axes))
        return dy * self._col(self.gamma.v * inv, ndim)


class LayerNorm(Module):
    """Normalize over the last (channel) axis per token."""

    def __init__(self, c, eps=1e-6, dtype=np.float32):
        self.c = int(c)
        self.eps = float(eps)
        self.gamma = Param(np.ones(c, dtype))
        self.beta = Param(np.zeros(c, dtype))
        self._cache = None

    def own_params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def desc(self, in_shape):
        return OpDesc("layernorm", c_in=self.c, c_out=self.c), in_shape

    def forward(self, x: np.ndarray, counter: MacCounter | None = None) -> np.ndarray:
        if x.shape[-1] != self.c:
            raise ShapeError(f"layernorm expects width {self.c}, got {x.shape[-1]}")
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)  # eps inside the sqrt: constant tokens are safe
        xhat = (x - mu) * inv
        self._cache = (xhat, inv) if self._cacheable(x) else None
        return xhat * self.gamma.v + self.beta.v

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv = self._require_cache()
        reduce_axes = tuple(range(dy.ndim - 1))
        self.gamma.add_grad((dy * xhat).sum(axis=reduce_axes))
        self.beta.add_grad(dy.sum(axis=reduce_axes))
        g = dy * self.gamma.v
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (g - gm - xhat * gx) * inv


class ReLU(Module):
    def desc(self, in_shape):
        return OpDesc("relu"), in_shape

    def forward(self, x: np.ndarray, counter: MacCounter | None = None) -> np.ndarray:
        self._cache = (x > 0,) if self._cacheable(x) else None
        return np.maximum(x, 0)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        (mask,) = self._require_cache()
        return dy * mask


class GeLU(Module):
    """tanh-form GeLU: 0.5*x*(1 + tanh(c0*(x + c1*x^3)))."""

    def desc(self, in_shape):
        return OpDesc("gelu"), in_shape

    def forward(self, x: np.ndarray, counter: MacCounter | None = None) -> np.ndarray:
        t = np.tanh(GELU_C0 * (x + GELU_C1 * x**3))
        self._cache = (x, t) if self._cacheable(x) else None
        return 0.5 * x * (1.0 + t)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x, t = self._require_cache()
        dt = (1.0 - t * t) * GELU_C0 * (1.0 + 3.0 * GELU_C1 * x * x)
        return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


class Softmax(Module):
    """Row softmax over the last axis, max-stabilized."""

    def desc(self, in_shape):
        return OpDesc("softmax"), in_shape

    def forward(self, x: np.ndarray, counter: MacCounter | None = None) -> np.ndarray:
        z = x - x.max(axis=-1, keepdims=True)
        np.exp(z, out=z)
        z /= z.sum(axis=-1, keepdims=True)
        self._cache = (z,) if self._cacheable(x) else None
        return z

    def backward(self, dy: np.ndarray) -> np.ndarray:
        (y,) = self._require_cache()
        return (dy - (dy * y).sum(axis=-1, keepdims=True)) * y


class AvgPool2d(Module):
    """Mean over k x k windows; no padding."""

    def __init__(self, k=2, stride=2):
        self.k, self.stride = int(k), int(stride)
        self._cache = None

    def out_hw(self, h, w):
        ho = (h - self.k) // self.stride + 1
        wo = (w - self.k) // self.stride + 1
        if ho <= 0 or wo <= 0:
            raise ShapeError(f"avgpool output extent non-positive for input {h}x{w}")
        return ho, wo

    def desc(self, in_shape):
        b, c, h, w = in_shape
        ho, wo = self.out_hw(h, w)
        d = OpDesc("avgpool", batch=b, c_in=c, c_out=c, k=self.k,
                   stride=self.stride, h_out=ho, w_out=wo)
        return d, (b, c, ho, wo)

    def forward(self, x: np.ndarray, counter: MacCounter | None = None) -> np.ndarray:
        b, c, h, w = x.shape
        ho, wo = self.out_hw(h, w)
        # accumulate window taps in row-major order (defined summation order)
        acc = np.zeros((b, c, ho, wo), dtype=x.dtype)
        for i in range(self.k):
            for j in range(self.k):
                acc += x[:, :, i : i + self.stride * ho : self.stride,
                         j : j + self.stride * wo : self.stride]
        self._cache = (x.shape, (ho, wo)) if self._cacheable(x) else None
        return acc / (self.k * self.k)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x_shape, (ho, wo) = self._require_cache()
        b, c, h, w = x_shape
        dx = np.zeros(x_shape, dtype=dy.dtype)
        share = dy / (self.k * self.k)
        for i in range(self.k):
            for j in range(self.k):
                dx[:, :, i : i + self.stride * ho : self.stride,
                   j : j + self.stride * wo : self.stride] += share
        return dx


def channel_split(x, c1: int):
    """Split B x C x H x W at channel c1; concat of the parts is the input."""
    wrap = isinstance(x, Tensor)
    X = as_array(x)
    c = X.shape[1]
    if not 0 < c1 < c:
        raise ShapeError(f"channel split point {c1} outside (0, {c})")
    a_ = np.ascontiguousarray(X[:, :c1])
    b_ = np.ascontiguousarray(X[:, c1:])
    return (Tensor(a_), Tensor(b_)) if wrap else (a_, b_)


def channel_concat(a, b):
    wrap = isinstance(a, Tensor)
    A, B = as_array(a), as_array(b)
    if A.shape[0] != B.shape[0] or A.shape[2:] != B.shape[2:]:
        raise ShapeError(f"channel concat shapes differ: {A.shape} vs {B.shape}")
    y = np.concatenate([A, B], axis=1)
    return Tensor(y) if wrap else y


def to_tokens(x: np.ndarray) -> np.ndarray:
    """B x C x H x W -> B x (H*W) x C."""
    b, c, h, w = x.shape
    return np.ascontiguousarray(x.reshape(b, c, h * w).transpose(0, 2, 1))


def from_tokens(t: np.ndarray, h: int, w: int) -> np.ndarray:
    """B x N x C -> B x C x H x W (inverse of to_tokens)."""
    b, n, c = t.shape
    if n != h * w:
        raise ShapeError(f"token count {n} does not match {h}x{w}")
    return np.ascontiguousarray(t.transpose(0, 2, 1).reshape(b, c, h, w))


class SRAttention(Module):
    """Multi-head self-attention with optional spatial reduction of K/V.

    Head dim is fixed at 32 and scores are scaled by 1/sqrt(32). When
    sr > 1 the key/value tokens come from a strided conv (kernel = stride
    = sr) over the feature map followed by LayerNorm, cutting the token
    grid by sr^2. Q/K/V/output projections carry biases.
    """

    def __init__(self, c, sr=1, dtype=np.float32):
        if c % HEAD_DIM != 0:
            raise ConfigError(f"attention width {c} not divisible by head dim {HEAD_DIM}")
        if sr < 1:
            raise ConfigError(f"spatial reduction ratio must be >= 1, got {sr}")
        self.c = int(c)
        self.sr = int(sr)
        self.heads = c // HEAD_DIM
        self.scale = 1.0 / math.sqrt(HEAD_DIM)
        self.wq = Linear(c, c, bias=True, dtype=dtype)
        self.wk = Linear(c, c, bias=True, dtype=dtype)
        self.wv = Linear(c, c, bias=True, dtype=dtype)
        self.wo = Linear(c, c, bias=True, dtype=dtype)
        if self.sr > 1:
            self.sr_conv = Conv2d(c, c, k=sr, stride=sr, pad=0, bias=True, dtype=dtype)
            self.sr_norm = LayerNorm(c, dtype=dtype)
        self.softmax = Softmax()
        self._cache = None

    def children(self):
        out = [("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)]
        if self.sr > 1:
            out += [("sr_conv", self.sr_conv), ("sr_norm", self.sr_norm)]
        return out

    def init(self, rng: Rng) -> None:
        for _, child in self.children():
            if isinstance(child, Conv2d):
                child.w.v = rng.trunc_normal(child.w.v.shape, std=0.02, dtype=child.w.v.dtype)
            else:
                child.init(rng)

    def desc(self, in_shape):
        b, n, c = in_shape
        return OpDesc("attention", batch=b, c_in=c, c_out=c, n_tokens=n, sr=self.sr), in_shape

    def _split_heads(self, x: np.ndarray) -> np.ndarray:
        b, n, _ = x.shape
        return np.ascontiguousarray(
            x.reshape(b, n, self.heads, HEAD_DIM).transpose(0, 2, 1, 3))

    def _merge_heads(self, x: np.ndarray) -> np.ndarray:
        b, _, n, _ = x.shape
        return np.ascontiguousarray(x.transpose(0, 2, 1, 3).reshape(b, n, self.c))

    def forward(self, x: np.ndarray, hw, counter: MacCounter | None = None) -> np.ndarray:
        b, n, c = x.shape
        h, w = hw
        if c != self.c:
            raise ShapeError(f"attention expects width {self.c}, got {c}")
        if n != h * w:
            raise ShapeError(f"token count {n} does not match spatial {h}x{w}")
        q = self.wq.forward(x, counter)
        if self.sr > 1:
            fmap = from_tokens(x, h, w)
            red = self.sr_conv.forward(fmap, counter)
            kv_in = self.sr_norm.forward(to_tokens(red))
        else:
            kv_in = x
        k = self.wk.forward(kv_in, counter)
        v = self.wv.forward(kv_in, counter)
        qh, kh, vh = self._split_heads(q), self._split_heads(k), self._split_heads(v)
        m = kh.shape[2]
        scores = np.matmul(qh, kh.transpose(0, 1, 3, 2)) * self.scale
        if counter is not None:
            counter.add(b * self.heads * n * HEAD_DIM * m)
        attn = self.softmax.forward(scores)
        ctx = np.matmul(attn, vh)
        if counter is not None:
            counter.add(b * self.heads * n * m * HEAD_DIM)
        out = self.wo.forward(self._merge_heads(ctx), counter)
        if self._cacheable(x):
            self._cache = (qh, kh, vh, attn, hw)
        return out

    def backward(self, dy: np.ndarray) -> np.ndarray:
        qh, kh, vh, attn, hw = self._require_cache()
        dctx = self._split_heads(self.wo.backward(dy))
        dattn = np.matmul(dctx, vh.transpose(0, 1, 3, 2))
        dvh = np.matmul(attn.transpose(0, 1, 3, 2), dctx)
        dscores = self.softmax.backward(dattn) * self.scale
        dqh = np.matmul(dscores, kh)
        dkh = np.matmul(dscores.transpose(0, 1, 3, 2), qh)
        dq = self._merge_heads(dqh)
        dkv = self.wk.backward(self._merge_heads(dkh)) + self.wv.backward(self._merge_heads(dvh))
        dx = self.wq.backward(dq)
        if self.sr > 1:
            h, w = hw
            dred = from_tokens(self.sr_norm.backward(dkv), h // self.sr, w // self.sr)
            dx = dx + to_tokens(self.sr_conv.backward(dred))
        else:
            dx = dx + dkv
        return dx


# ---------------------------------------------------------------------------
# Spec-surface wrappers (Tensor in, Tensor out)


@dataclass
class ConvParams:
    """Declarative conv configuration for the functional surface."""

    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int | None = None
    weight: Tensor | None = None
    bias: Tensor | None = None


def conv2d_forward(x: Tensor, p: ConvParams, counter: MacCounter | None = None) -> Tensor:
    layer = Conv2d(p.in_channels, p.out_channels, p.kernel, p.stride,
                   p.padding, bias=p.bias is not None,
                   dtype=as_array(x).dtype)
    if p.weight is not None:
        layer.w.v = as_array(p.weight).astype(layer.w.v.dtype)
    if p.bias is not None:
        layer.b.v = as_array(p.bias).astype(layer.b.v.dtype)
    return Tensor(layer.forward(as_array(x), counter))


def linear_forward(x: Tensor, w: Tensor, b: Tensor | None = None,
                   counter: MacCounter | None = None) -> Tensor:
    W = as_array(w)
    layer = Linear(W.shape[0], W.shape[1], bias=b is not None, dtype=W.dtype)
    layer.w.v = W
    if b is not None:
        layer.b.v = as_array(b)
    return Tensor(layer.forward(as_array(x), counter))


@dataclass
class NormParams:
    """Declarative norm configuration for the functional surface."""

    kind: str  # "batchnorm" (inference form) or "layernorm"
    gamma: Tensor
    beta: Tensor
    mean: Tensor | None = None
    var: Tensor | None = None
    eps: float = 1e-5


def norm_forward(x: Tensor, p: NormParams) -> Tensor:
    gamma = as_array(p.gamma)
    if gamma.shape != as_array(p.beta).shape:
        raise ShapeError(f"norm gamma/beta lengths differ: {gamma.shape} vs {p.beta.shape}")
    c = gamma.shape[0]
    if p.kind == "batchnorm":
        layer = BatchNormInf(c, eps=p.eps, dtype=gamma.dtype)
        if p.mean is not None:
            layer.mean.v = as_array(p.mean)
        if p.var is not None:
            layer.var.v = as_array(p.var)
    elif p.kind == "layernorm":
        layer = LayerNorm(c, eps=p.eps, dtype=gamma.dtype)
    else:
        raise ValueError(f"unknown norm kind {p.kind!r}")
    layer.gamma.v = gamma
    layer.beta.v = as_array(p.beta)
    return Tensor(layer.forward(as_array(x)))


@dataclass
class AttentionParams:
    """Declarative attention configuration for the functional surface.

    Weight fields left as None stay at their zero defaults; num_heads is
    always channels / 32.
    """

    channels: int
    sr_ratio: int = 1
    wq: Tensor | None = None
    bq: Tensor | None = None
    wk: Tensor | None = None
    bk: Tensor | None = None
    wv: Tensor | None = None
    bv: Tensor | None = None
    wo: Tensor | None = None
    bo: Tensor | None = None
    sr_weight: Tensor | None = None
    sr_bias: Tensor | None = None

    @property
    def head_dim(self) -> int:
        return HEAD_DIM

    @property
    def num_heads(self) -> int:
        return self.channels // HEAD_DIM


def sra_attention_forward(x: Tensor, p: AttentionParams, hw,
                          counter: MacCounter | None = None) -> Tensor:
    X = as_array(x)
    layer = SRAttention(p.channels, p.sr_ratio, dtype=X.dtype)
    pairs = [(p.wq, layer.wq.w), (p.bq, layer.wq.b), (p.wk, layer.wk.w),
             (p.bk, layer.wk.b), (p.wv, layer.wv.w), (p.bv, layer.wv.b),
             (p.wo, layer.wo.w), (p.bo, layer.wo.b)]
    if p.sr_ratio > 1:
        pairs += [(p.sr_weight, layer.sr_conv.w), (p.sr_bias, layer.sr_conv.b)]
    for src, dst in pairs:
        if src is not None:
            dst.v = as_array(src).astype(dst.v.dtype).reshape(dst.v.shape)
    return Tensor(layer.forward(X, hw, counter))


def activation(x: Tensor, kind: str) -> Tensor:
    layers = {"relu": ReLU, "gelu": GeLU}
    if kind not in layers:
        raise ValueError(f"unknown activation {kind!r}")
    return Tensor(layers[kind]().forward(as_array(x)))


def softmax(x: Tensor) -> Tensor:
    return Tensor(Softmax().forward(as_array(x)))


def avgpool2d(x: Tensor, kernel: int, stride: int) -> Tensor:
    return Tensor(AvgPool2d(kernel, stride).forward(as_array(x)))
