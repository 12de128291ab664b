"""Central finite-difference validation of the analytic backward passes.

Runs a float64 forward, backpropagates a fixed random projection, then
perturbs input and parameter coordinates (all of them, or a deterministic
subsample of at least 200 for larger targets) and compares against central
differences with step 1e-5. A target passes when the max relative error is
at most 1e-4, with an absolute floor of 1e-7 for near-zero gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import blocks as B
from . import ops
from .tensor import ConfigError, Rng

STEP = 1e-5
TOL = 1e-4
FLOOR = 1e-7
SUBSAMPLE = 200


@dataclass
class GradCheckReport:
    target: str
    max_rel_err: float
    checked: int
    passed: bool

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.target}: max_rel_err={self.max_rel_err:.3e} "
                f"over {self.checked} coords")


def _rel_err(a: float, n: float) -> float:
    diff = abs(a - n)
    if diff <= FLOOR:
        return 0.0
    return diff / max(abs(a), abs(n), FLOOR)


def check_function(name, forward, backward, x0, params, seed=0,
                   max_coords=SUBSAMPLE, tol=TOL) -> GradCheckReport:
    """Gradcheck an arbitrary forward/backward pair.

    forward(x) -> y and backward(dy) -> dx must both run at float64;
    params is a list of (name, Param) whose .g fields backward fills.
    """
    rng = Rng(seed + 7919)
    y0 = forward(x0)
    proj = rng.normal(y0.shape, std=1.0, dtype="float64")

    def loss() -> float:
        return float((forward(x0) * proj).sum())

    for _, p in params:
        p.g = None
    forward(x0)
    dx = backward(proj)

    coords = [("input", x0, dx)]
    for pname, p in params:
        if p.trainable:
            coords.append((pname, p.v, p.g if p.g is not None else np.zeros_like(p.v)))
    flat = [(tname, arr, grad, idx)
            for tname, arr, grad in coords
            for idx in range(arr.size)]
    if len(flat) > max_coords:
        pick = rng.integers(0, len(flat), size=max_coords)
        flat = [flat[int(i)] for i in pick]

    worst = 0.0
    for tname, arr, grad, idx in flat:
        view = arr.reshape(-1)
        old = view[idx]
        view[idx] = old + STEP
        f_plus = loss()
        view[idx] = old - STEP
        f_minus = loss()
        view[idx] = old
        numeric = (f_plus - f_minus) / (2 * STEP)
        analytic = float(grad.reshape(-1)[idx])
        worst = max(worst, _rel_err(analytic, numeric))
    return GradCheckReport(name, worst, len(flat), worst <= tol)


def _block_builder(kind: str, c: int, hw: int, r: float, sr: int, k: int):
    block = B.make_block(kind, c, c, r=r, sr=sr, kernel=k, stride=1, dtype=np.float64)
    return block, (2, c, hw, hw)


def gradcheck_block(kind: str, c: int = 64, hw: int = 8, *, r: float = 0.5,
                    sr: int = 1, k: int = 3, seed: int = 0,
                    max_coords: int = SUBSAMPLE) -> GradCheckReport:
    """Gradcheck a whole block at tiny extents."""
    block, in_shape = _block_builder(kind, c, hw, r, sr, k)
    rng = Rng(seed)
    block.init(rng)
    x0 = rng.normal(in_shape, std=1.0, dtype="float64")
    return check_function(
        f"{kind}(c={c}, hw={hw})", lambda x: block.forward(x),
        block.backward, x0, list(block.named_params()), seed=seed,
        max_coords=max_coords)


def _op_cases(seed: int):
    rng = Rng(seed)

    def mk(shape):
        return rng.normal(shape, std=1.0, dtype="float64")

    conv = ops.Conv2d(2, 3, 3, stride=2, pad=1, bias=True, dtype=np.float64)
    lin = ops.Linear(4, 5, dtype=np.float64)
    bn = ops.BatchNormInf(3, dtype=np.float64)
    bn.mean.v = mk(3) * 0.3
    bn.var.v = np.abs(mk(3)) + 0.5
    ln = ops.LayerNorm(5, dtype=np.float64)
    attn = ops.SRAttention(32, sr=2, dtype=np.float64)
    pool = ops.AvgPool2d(2, 2)
    sm = ops.Softmax()

    for layer in (conv, lin, ln, attn):
        layer.init(rng)
    bn.gamma.v = mk(3) * 0.2 + 1.0
    bn.beta.v = mk(3) * 0.1
    ln.gamma.v = mk(5) * 0.2 + 1.0
    ln.beta.v = mk(5) * 0.1

    cases = [
        ("conv2d", conv, mk((2, 2, 5, 5)), None),
        ("linear", lin, mk((3, 4)), None),
        ("batchnorm", bn, mk((2, 3, 4, 4)), None),
        ("layernorm", ln, mk((2, 3, 5)), None),
        ("relu", ops.ReLU(), mk((2, 3, 4)), None),
        ("gelu", ops.GeLU(), mk((2, 3, 4)), None),
        ("softmax", sm, mk((2, 4, 5)), None),
        ("avgpool", pool, mk((2, 2, 4, 4)), None),
        ("attention", attn, mk((2, 16, 32)), (4, 4)),
    ]
    return cases


def gradcheck_op(name: str, seed: int = 0, max_coords: int = SUBSAMPLE) -> GradCheckReport:
    """Gradcheck one primitive op at tiny extents (all <= 5 where possible)."""
    for case_name, layer, x0, hw in _op_cases(seed):
        if case_name != name:
            continue
        if hw is None:
            fwd = lambda x: layer.forward(x)
        else:
            fwd = lambda x: layer.forward(x, hw)
        return check_function(case_name, fwd, layer.backward, x0,
                              list(layer.named_params()), seed=seed,
                              max_coords=max_coords)
    known = [c[0] for c in _op_cases(0)]
    raise ConfigError(f"unknown op {name!r}; expected one of {known}")


OP_NAMES = ("conv2d", "linear", "batchnorm", "layernorm", "relu", "gelu",
            "softmax", "avgpool", "attention")
BLOCK_NAMES = ("bottleneck", "transformer", "mixa", "mixb", "mixc")


def gradcheck_all(seeds=(0,), tiny: bool = True) -> list[GradCheckReport]:
    """Gradcheck every primitive op and every block kind."""
    reports = []
    for seed in seeds:
        for name in OP_NAMES:
            reports.append(gradcheck_op(name, seed=seed))
        for kind in BLOCK_NAMES:
            hw = 4 if tiny else 8
            reports.append(gradcheck_block(kind, c=64, hw=hw, seed=seed))
    return reports
