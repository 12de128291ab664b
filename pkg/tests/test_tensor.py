import numpy as np
import pytest

from trtvit.tensor import (
    MacCounter,
    Rng,
    ShapeError,
    Tensor,
    elementwise,
    identity,
    matmul,
    ones,
    rand_normal,
    zeros,
)


def naive_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


class TestMatmul:
    def test_scalar_product(self):
        ctr = MacCounter()
        y = matmul(Tensor([[2.0]]), Tensor([[3.0]]), ctr)
        assert y.tolist() == [[6.0]]
        assert ctr.total_macs == 1

    def test_identity(self):
        x = Tensor(np.arange(12, dtype=np.float32).reshape(3, 4))
        y = matmul(identity(3), x)
        assert y.tobytes() == x.tobytes()

    def test_against_naive_triple_loop(self):
        rng = Rng(101)
        a = rng.normal((4, 5), std=1.0, dtype="float64")
        b = rng.normal((5, 6), std=1.0, dtype="float64")
        got = matmul(Tensor(a), Tensor(b)).a
        want = naive_matmul(a, b)
        assert np.max(np.abs(got - want)) < 1e-12

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            matmul(zeros((2, 3)), zeros((4, 5)))

    @pytest.mark.parametrize("m", [1, 2, 3, 4])
    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_mac_count_exhaustive(self, m, k, n):
        ctr = MacCounter()
        matmul(ones((m, k)), ones((k, n)), ctr)
        assert ctr.total_macs == m * k * n


class TestElementwise:
    def test_add_zero(self):
        x = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
        assert elementwise("add", x, 0).tobytes() == x.tobytes()

    def test_scale_one(self):
        x = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
        assert elementwise("scale", x, 1).tobytes() == x.tobytes()

    def test_add_ones(self):
        y = elementwise("add", ones((2, 2)), ones((2, 2)))
        assert y.tolist() == [[2.0, 2.0], [2.0, 2.0]]

    def test_sub_mul_max(self):
        a = Tensor([[4.0, -1.0]])
        b = Tensor([[1.0, 2.0]])
        assert elementwise("sub", a, b).tolist() == [[3.0, -3.0]]
        assert elementwise("mul", a, b).tolist() == [[4.0, -2.0]]
        assert elementwise("max", a, b).tolist() == [[4.0, 2.0]]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            elementwise("add", ones((2, 2)), ones((2, 3)))


class TestRandNormal:
    def test_zero_std(self):
        t = rand_normal(Rng(0), (3, 4), 0.0)
        assert not t.a.any()

    def test_same_seed_bit_identical(self):
        a = rand_normal(Rng(9), (100,), 1.0)
        b = rand_normal(Rng(9), (100,), 1.0)
        assert a.tobytes() == b.tobytes()

    def test_law_of_large_numbers(self):
        t = rand_normal(Rng(42), (100000,), 1.0)
        assert abs(t.a.mean()) < 0.02
        assert abs(t.a.std() - 1.0) < 0.02

    def test_negative_std_rejected(self):
        with pytest.raises(ValueError):
            rand_normal(Rng(0), (2,), -1.0)


class TestTensor:
    def test_shape_data_invariant(self):
        t = Tensor(np.arange(12.0).reshape(3, 4))
        assert t.size == 12 and t.shape == (3, 4)
        assert t.a.flags["C_CONTIGUOUS"]

    def test_dtype_whitelist(self):
        with pytest.raises(TypeError):
            Tensor(np.zeros(3), dtype="int32")

    def test_int_input_becomes_float32(self):
        assert Tensor([1, 2, 3]).dtype == "float32"


def test_pipeline_determinism():
    def run():
        rng = Rng(1234)
        a = rand_normal(rng, (8, 8), 0.5)
        b = rand_normal(rng, (8, 8), 0.5)
        c = matmul(a, b)
        return elementwise("mul", c, c).tobytes()

    assert run() == run()
