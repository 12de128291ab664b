import numpy as np
import pytest

from trtvit import gradcheck, ops
from trtvit.tensor import PrecisionError, Rng


@pytest.mark.parametrize("name", gradcheck.OP_NAMES)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_primitive_ops(name, seed):
    rep = gradcheck.gradcheck_op(name, seed=seed)
    assert rep.passed, str(rep)


@pytest.mark.parametrize("kind", gradcheck.BLOCK_NAMES)
def test_blocks_tiny(kind):
    rep = gradcheck.gradcheck_block(kind, c=64, hw=8, seed=0)
    assert rep.passed, str(rep)


def test_block_with_spatial_reduction():
    rep = gradcheck.gradcheck_block("mixc", c=64, hw=8, sr=2, seed=3)
    assert rep.passed, str(rep)


def test_block_kernel7():
    rep = gradcheck.gradcheck_block("mixb", c=64, hw=8, k=7, seed=4)
    assert rep.passed, str(rep)


def test_identity_linear_passes_upstream_gradient():
    lin = ops.Linear(3, 3, bias=False, dtype=np.float64)
    lin.w.v = np.eye(3)
    x = Rng(0).normal((2, 3), std=1.0, dtype="float64")
    lin.forward(x)
    up = Rng(1).normal((2, 3), std=1.0, dtype="float64")
    assert np.array_equal(lin.backward(up), up)


def test_relu_gradient_zero_at_negative_input():
    relu = ops.ReLU()
    x = np.array([-2.0, -0.5, 1.0], dtype=np.float64)
    relu.forward(x)
    g = relu.backward(np.ones(3, dtype=np.float64))
    assert g.tolist() == [0.0, 0.0, 1.0]


def test_float32_backward_raises_precision_error():
    lin = ops.Linear(3, 3, dtype=np.float32)
    lin.forward(np.zeros((2, 3), dtype=np.float32))
    with pytest.raises(PrecisionError):
        lin.backward(np.zeros((2, 3), dtype=np.float32))


def test_backward_before_forward_raises():
    with pytest.raises(PrecisionError):
        ops.GeLU().backward(np.zeros(3))


def test_harness_detects_wrong_gradient():
    class Scaled(ops.GeLU):
        def backward(self, dy):
            return super().backward(dy) * 1.001

    layer = Scaled()
    x0 = Rng(0).normal((3, 4), std=1.0, dtype="float64")
    rep = gradcheck.check_function("scaled-gelu", layer.forward, layer.backward,
                                   x0, [], seed=0)
    assert not rep.passed


def test_subsampling_kicks_in_for_large_targets():
    rep = gradcheck.gradcheck_block("bottleneck", c=64, hw=8, seed=0, max_coords=200)
    assert rep.checked == 200
