import math

import numpy as np
import pytest

from trtvit import ops
from trtvit.tensor import ConfigError, MacCounter, Rng, ShapeError, Tensor


def naive_conv2d(x, w, b, stride, pad):
    """Seven explicit loops; the reference for the im2col kernel."""
    bs, ci, h, ww = x.shape
    co, _, k, _ = w.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (ww + 2 * pad - k) // stride + 1
    out = np.zeros((bs, co, ho, wo), dtype=np.float64)
    for n in range(bs):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(ci):
                        for ki in range(k):
                            for kj in range(k):
                                ii = i * stride + ki - pad
                                jj = j * stride + kj - pad
                                if 0 <= ii < h and 0 <= jj < ww:
                                    acc += x[n, c, ii, jj] * w[o, c, ki, kj]
                    out[n, o, i, j] = acc + (b[o] if b is not None else 0.0)
    return out


class TestConv2d:
    def test_one_by_one_scalar(self):
        conv = ops.Conv2d(1, 1, 1, pad=0)
        conv.w.v = np.array([[[[3.0]]]], dtype=np.float32)
        ctr = MacCounter()
        y = conv.forward(np.array([[[[2.0]]]], dtype=np.float32), ctr)
        assert y.item() == 6.0
        assert ctr.total_macs == 1

    def test_identity_kernel(self):
        conv = ops.Conv2d(2, 2, 3, stride=1, pad=1, dtype=np.float64)
        w = np.zeros((2, 2, 3, 3))
        w[0, 0, 1, 1] = 1.0
        w[1, 1, 1, 1] = 1.0
        conv.w.v = w
        x = Rng(3).normal((1, 2, 5, 5), std=1.0, dtype="float64")
        assert np.array_equal(conv.forward(x), x)

    def test_against_naive_reference(self):
        rng = Rng(7)
        x = rng.normal((1, 2, 5, 5), std=1.0, dtype="float64")
        conv = ops.Conv2d(2, 3, 3, stride=2, pad=1, bias=True, dtype=np.float64)
        conv.w.v = rng.normal((3, 2, 3, 3), std=1.0, dtype="float64")
        conv.b.v = rng.normal((3,), std=1.0, dtype="float64")
        got = conv.forward(x)
        want = naive_conv2d(x, conv.w.v, conv.b.v, 2, 1)
        assert np.max(np.abs(got - want)) < 1e-12

    @pytest.mark.parametrize("k", [1, 3, 7])
    def test_same_resolution_padding(self, k):
        conv = ops.Conv2d(2, 4, k, stride=1)  # pad defaults to k//2
        y = conv.forward(np.zeros((1, 2, 9, 9), dtype=np.float32))
        assert y.shape == (1, 4, 9, 9)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError, match="channels"):
            ops.Conv2d(3, 4, 3).forward(np.zeros((1, 2, 8, 8), dtype=np.float32))

    def test_nonpositive_output(self):
        with pytest.raises(ShapeError, match="non-positive"):
            ops.Conv2d(1, 1, 5, pad=0).forward(np.zeros((1, 1, 3, 3), dtype=np.float32))

    def test_mac_formula(self):
        conv = ops.Conv2d(3, 5, 3, stride=2, pad=1)
        ctr = MacCounter()
        y = conv.forward(np.zeros((2, 3, 8, 8), dtype=np.float32), ctr)
        b, co, ho, wo = y.shape
        assert ctr.total_macs == b * co * ho * wo * 3 * 3 * 3


class TestLinear:
    def test_identity(self):
        lin = ops.Linear(3, 3)
        lin.w.v = np.eye(3, dtype=np.float32)
        x = Rng(0).normal((4, 3), std=1.0)
        assert np.array_equal(lin.forward(x), x)

    def test_small_example(self):
        lin = ops.Linear(2, 1)
        lin.w.v = np.array([[1.0], [1.0]], dtype=np.float32)
        y = lin.forward(np.array([[3.0, 4.0]], dtype=np.float32))
        assert y.item() == 7.0

    def test_against_matmul(self):
        rng = Rng(5)
        x = rng.normal((3, 4), std=1.0, dtype="float64")
        lin = ops.Linear(4, 5, bias=False, dtype=np.float64)
        lin.w.v = rng.normal((4, 5), std=1.0, dtype="float64")
        assert np.array_equal(lin.forward(x), x @ lin.w.v)

    def test_mac_count_tokens(self):
        lin = ops.Linear(4, 5)
        ctr = MacCounter()
        lin.forward(np.zeros((2, 3, 4), dtype=np.float32), ctr)
        assert ctr.total_macs == 2 * 3 * 4 * 5


class TestNorms:
    def test_batchnorm_neutral_stats(self):
        bn = ops.BatchNormInf(3, eps=1e-12, dtype=np.float64)
        x = Rng(1).normal((2, 3, 4, 4), std=1.0, dtype="float64")
        assert np.max(np.abs(bn.forward(x) - x)) < 1e-6

    def test_layernorm_constant_token_is_beta(self):
        ln = ops.LayerNorm(4, dtype=np.float64)
        ln.beta.v = np.array([1.0, 2.0, 3.0, 4.0])
        x = np.full((2, 5, 4), 7.0)
        y = ln.forward(x)
        assert np.allclose(y, ln.beta.v, atol=1e-9)  # zero variance must not blow up

    def test_layernorm_two_pass_reference(self):
        rng = Rng(2)
        x = rng.normal((2, 3, 5), std=2.0, dtype="float64")
        ln = ops.LayerNorm(5, dtype=np.float64)
        ln.gamma.v = rng.normal((5,), std=0.3, dtype="float64") + 1.0
        ln.beta.v = rng.normal((5,), std=0.3, dtype="float64")
        want = np.empty_like(x)
        for i in range(2):
            for j in range(3):
                row = x[i, j]
                mu = sum(row) / 5
                var = sum((v - mu) ** 2 for v in row) / 5
                want[i, j] = (row - mu) / math.sqrt(var + ln.eps) * ln.gamma.v + ln.beta.v
        assert np.max(np.abs(ln.forward(x) - want)) < 1e-12

    def test_batchnorm_two_pass_reference(self):
        rng = Rng(3)
        x = rng.normal((2, 3, 4, 4), std=1.5, dtype="float64")
        bn = ops.BatchNormInf(3, dtype=np.float64)
        bn.mean.v = rng.normal((3,), std=0.5, dtype="float64")
        bn.var.v = np.abs(rng.normal((3,), std=0.5, dtype="float64")) + 0.2
        bn.gamma.v = rng.normal((3,), std=0.2, dtype="float64") + 1.0
        bn.beta.v = rng.normal((3,), std=0.2, dtype="float64")
        want = np.empty_like(x)
        for c in range(3):
            want[:, c] = ((x[:, c] - bn.mean.v[c]) / math.sqrt(bn.var.v[c] + bn.eps)
                          * bn.gamma.v[c] + bn.beta.v[c])
        assert np.max(np.abs(bn.forward(x) - want)) < 1e-12

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            ops.LayerNorm(5).forward(np.zeros((2, 4), dtype=np.float32))


class TestActivations:
    def test_relu_values(self):
        y = ops.ReLU().forward(np.array([-1.0, 2.0], dtype=np.float32))
        assert y.tolist() == [0.0, 2.0]

    def test_gelu_zero(self):
        assert ops.GeLU().forward(np.array([0.0]))[0] == 0.0

    def test_gelu_tanh_vs_erf(self):
        # erf form as the independent high-precision reference
        xs = np.linspace(-4, 4, 41)
        got = ops.GeLU().forward(xs)
        want = 0.5 * xs * (1 + np.vectorize(math.erf)(xs / math.sqrt(2)))
        assert np.max(np.abs(got - want)) < 1e-3
        assert abs(got[np.argmin(np.abs(xs - 1.0))] - 0.8412) < 1e-3


class TestSoftmax:
    def test_rows_sum_to_one_extreme_logits(self):
        x = np.array([[1e4, 0.0, -1e4], [-1e4, -1e4, -1e4]], dtype=np.float64)
        y = ops.Softmax().forward(x)
        assert np.all(y >= 0)
        assert np.max(np.abs(y.sum(axis=-1) - 1.0)) < 1e-6

    def test_random_rows_sum(self):
        y = ops.Softmax().forward(Rng(4).normal((5, 7), std=3.0))
        assert np.max(np.abs(y.sum(axis=-1) - 1.0)) < 1e-6


class TestAvgPool:
    def test_all_ones(self):
        y = ops.AvgPool2d(2, 2).forward(np.ones((1, 1, 4, 4), dtype=np.float32))
        assert np.array_equal(y, np.ones((1, 1, 2, 2), dtype=np.float32))

    def test_small_window(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32)
        assert ops.AvgPool2d(2, 2).forward(x).item() == 2.5

    def test_window_mean_reference(self):
        # explicit scalar loops in row-major window order, same as the kernel
        x = Rng(6).normal((1, 2, 4, 4), std=1.0, dtype="float64")
        y = ops.AvgPool2d(2, 2).forward(x)
        for c in range(2):
            for i in range(2):
                for j in range(2):
                    acc = 0.0
                    for ki in range(2):
                        for kj in range(2):
                            acc += x[0, c, 2 * i + ki, 2 * j + kj]
                    assert y[0, c, i, j] == acc / 4.0


class TestSplitConcat:
    def test_round_trip_bitwise(self):
        x = Rng(8).normal((2, 4, 3, 3), std=1.0)
        a, b = ops.channel_split(x, 2)
        assert ops.channel_concat(a, b).tobytes() == x.tobytes()

    def test_split_shapes(self):
        x = np.zeros((1, 4, 2, 2), dtype=np.float32)
        a, b = ops.channel_split(x, 1)
        assert a.shape[1] == 1 and b.shape[1] == 3

    def test_half_ratio_of_512(self):
        # R = 0.5 of a 512-wide map gives two 256-channel parts
        x = np.zeros((1, 512, 2, 2), dtype=np.float32)
        a, b = ops.channel_split(x, int(0.5 * 512))
        assert a.shape[1] == 256 and b.shape[1] == 256

    @pytest.mark.parametrize("c1", [0, 4, 7])
    def test_invalid_split_point(self, c1):
        with pytest.raises(ShapeError):
            ops.channel_split(np.zeros((1, 4, 2, 2), dtype=np.float32), c1)


def reference_sra_attention(x, layer, h, w):
    """Step-by-step attention with explicit loops; no fused ops."""
    b, n, c = x.shape
    heads, d = layer.heads, ops.HEAD_DIM
    sr = layer.sr

    def lin(t, ll):
        out = np.zeros(t.shape[:-1] + (ll.c_out,))
        for idx in np.ndindex(*t.shape[:-1]):
            for o in range(ll.c_out):
                acc = 0.0
                for i in range(ll.c_in):
                    acc += t[idx + (i,)] * ll.w.v[i, o]
                out[idx + (o,)] = acc + ll.b.v[o]
        return out

    q = lin(x, layer.wq)
    if sr > 1:
        fmap = np.zeros((b, c, h, w))
        for bi in range(b):
            for t in range(n):
                fmap[bi, :, t // w, t % w] = x[bi, t]
        hr, wr = h // sr, w // sr
        red = np.zeros((b, c, hr, wr))
        for bi in range(b):
            for o in range(c):
                for i in range(hr):
                    for j in range(wr):
                        acc = 0.0
                        for ci in range(c):
                            for ki in range(sr):
                                for kj in range(sr):
                                    acc += (fmap[bi, ci, i * sr + ki, j * sr + kj]
                                            * layer.sr_conv.w.v[o, ci, ki, kj])
                        red[bi, o, i, j] = acc + layer.sr_conv.b.v[o]
        m = hr * wr
        kv_in = np.zeros((b, m, c))
        for bi in range(b):
            for t in range(m):
                kv_in[bi, t] = red[bi, :, t // wr, t % wr]
        for bi in range(b):
            for t in range(m):
                row = kv_in[bi, t]
                mu = row.mean()
                var = ((row - mu) ** 2).mean()
                kv_in[bi, t] = ((row - mu) / math.sqrt(var + layer.sr_norm.eps)
                                * layer.sr_norm.gamma.v + layer.sr_norm.beta.v)
    else:
        kv_in = x
        m = n
    kk = lin(kv_in, layer.wk)
    vv = lin(kv_in, layer.wv)
    ctx = np.zeros((b, n, c))
    for bi in range(b):
        for hd in range(heads):
            sl = slice(hd * d, (hd + 1) * d)
            for t in range(n):
                logits = np.empty(m)
                for u in range(m):
                    logits[u] = float(q[bi, t, sl] @ kk[bi, u, sl]) / math.sqrt(d)
                e = np.exp(logits - logits.max())
                attn = e / e.sum()
                for u in range(m):
                    ctx[bi, t, sl] += attn[u] * vv[bi, u, sl]
    return lin(ctx, layer.wo)


class TestSRAttention:
    def test_single_token_reduces_to_value_path(self):
        # one token: the softmax over a single logit is 1, so the output is
        # x @ Wv (+bv) @ Wo (+bo) regardless of the Q/K projections
        rng = Rng(10)
        layer = ops.SRAttention(32, sr=1, dtype=np.float64)
        layer.init(rng)
        x = rng.normal((1, 1, 32), std=1.0, dtype="float64")
        got = layer.forward(x, (1, 1))
        want = ((x @ layer.wv.w.v + layer.wv.b.v) @ layer.wo.w.v) + layer.wo.b.v
        assert np.max(np.abs(got - want)) < 1e-12

    def test_equal_tokens_give_equal_outputs(self):
        rng = Rng(11)
        layer = ops.SRAttention(64, sr=1, dtype=np.float64)
        layer.init(rng)
        token = rng.normal((1, 1, 64), std=1.0, dtype="float64")
        x = np.repeat(token, 9, axis=1)
        y = layer.forward(x, (3, 3))
        assert np.max(np.abs(y - y[:, :1])) < 1e-12

    def test_against_step_by_step_reference(self):
        rng = Rng(12)
        layer = ops.SRAttention(32, sr=2, dtype=np.float64)
        layer.init(rng)
        x = rng.normal((1, 4, 32), std=1.0, dtype="float64")
        got = layer.forward(x, (2, 2))
        want = reference_sra_attention(x, layer, 2, 2)
        assert np.max(np.abs(got - want)) < 1e-10

    def test_token_count_mismatch(self):
        layer = ops.SRAttention(32)
        with pytest.raises(ShapeError, match="token count"):
            layer.forward(np.zeros((1, 5, 32), dtype=np.float32), (2, 2))

    def test_width_not_multiple_of_head_dim(self):
        with pytest.raises(ConfigError, match="head dim"):
            ops.SRAttention(48)

    def test_mac_accounting_matches_descriptor(self):
        from trtvit.analysis import count_op
        rng = Rng(13)
        for sr in (1, 2):
            layer = ops.SRAttention(64, sr=sr)
            layer.init(rng)
            x = rng.normal((2, 16, 64), std=1.0)
            ctr = MacCounter()
            layer.forward(x, (4, 4), ctr)
            desc, _ = layer.desc(x.shape)
            _, flops = count_op(desc)
            assert ctr.total_macs == flops


class TestFunctionalSurface:
    def test_conv2d_forward_wrapper(self):
        p = ops.ConvParams(1, 1, 1, padding=0, weight=Tensor([[[[2.0]]]]))
        y = ops.conv2d_forward(Tensor([[[[3.0]]]]), p)
        assert y.tolist() == [[[[6.0]]]]

    def test_linear_forward_wrapper(self):
        y = ops.linear_forward(Tensor([[3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        assert y.tolist() == [[7.0]]

    def test_norm_forward_wrapper(self):
        p = ops.NormParams("layernorm", gamma=Tensor(np.ones(4)), beta=Tensor(np.zeros(4)))
        y = ops.norm_forward(Tensor(np.full((1, 2, 4), 3.0)), p)
        assert np.allclose(y.a, 0.0, atol=1e-6)

    def test_activation_wrapper(self):
        assert ops.activation(Tensor([-1.0, 2.0]), "relu").tolist() == [0.0, 2.0]

    def test_avgpool_wrapper(self):
        y = ops.avgpool2d(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), 2, 2)
        assert y.tolist() == [[[[2.5]]]]

    def test_sra_attention_wrapper(self):
        p = ops.AttentionParams(32, sr_ratio=1)
        x = Tensor(Rng(14).normal((1, 4, 32), std=1.0))
        y = ops.sra_attention_forward(x, p, (2, 2))
        assert y.shape == (1, 4, 32)
        assert p.num_heads == 1 and p.head_dim == 32
