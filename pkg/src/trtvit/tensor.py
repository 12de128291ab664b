"""Dense tensor container, counter-based RNG, and MAC accounting.

Everything downstream (ops, blocks, models) stores its numbers in plain
row-major numpy buffers wrapped by :class:`Tensor`. Two precisions exist:
float32 for inference and benchmarking, float64 for gradient checking.
"""

from __future__ import annotations

import numpy as np

DTYPES = ("float32", "float64")


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class PrecisionError(RuntimeError):
    """Operation requires a 64-bit forward pass."""


class ConfigError(ValueError):
    """Invalid block or architecture configuration."""


class FormatError(ValueError):
    """Malformed serialized data (weights file or latency CSV)."""


class Tensor:
    """Row-major contiguous numeric array, float32 or float64.

    A thin wrapper over numpy that pins the layout invariants the rest of
    the stack relies on: C-contiguous data whose length equals the product
    of the shape, and one of exactly two dtypes.
    """

    __slots__ = ("a",)

    def __init__(self, data, dtype=None):
        arr = data.a if isinstance(data, Tensor) else np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
        dt = np.dtype(dtype)
        if dt.name not in DTYPES:
            raise TypeError(f"unsupported dtype {dt.name!r}; expected one of {DTYPES}")
        self.a = np.ascontiguousarray(arr, dtype=dt)

    @property
    def shape(self) -> tuple:
        return self.a.shape

    @property
    def dtype(self) -> str:
        return self.a.dtype.name

    @property
    def size(self) -> int:
        return self.a.size

    @property
    def ndim(self) -> int:
        return self.a.ndim

    def reshape(self, *shape) -> "Tensor":
        return Tensor(self.a.reshape(*shape))

    def copy(self) -> "Tensor":
        return Tensor(self.a.copy())

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.a, dtype=dtype)

    def tobytes(self) -> bytes:
        return self.a.tobytes()

    def tolist(self):
        return self.a.tolist()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


def as_array(x) -> np.ndarray:
    return x.a if isinstance(x, Tensor) else np.asarray(x)


def zeros(shape, dtype="float32") -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.dtype(dtype)))


def ones(shape, dtype="float32") -> Tensor:
    return Tensor(np.ones(shape, dtype=np.dtype(dtype)))


def identity(n: int, dtype="float32") -> Tensor:
    return Tensor(np.eye(n, dtype=np.dtype(dtype)))


class MacCounter:
    """Accumulates multiply-accumulate counts along an execution path.

    Only matmul-like kernels (matmul, conv, linear, attention score/context
    products) report MACs; elementwise math, norms, softmax, pooling, and
    bias adds cost zero by convention. One counter per execution context.
    """

    __slots__ = ("total_macs", "enabled")

    def __init__(self, enabled: bool = True):
        self.total_macs = 0
        self.enabled = enabled

    def add(self, macs: int) -> None:
        if self.enabled:
            self.total_macs += int(macs)


class Rng:
    """Deterministic counter-based generator (Philox).

    The same seed yields a bit-identical stream on every platform, which is
    what makes weight instantiation and synthetic bench inputs reproducible.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def normal(self, shape, std: float = 1.0, dtype="float32") -> np.ndarray:
        if std < 0:
            raise ValueError(f"std must be >= 0, got {std}")
        dt = np.dtype(dtype)
        x = self._gen.standard_normal(shape)
        return (x * std).astype(dt)

    def trunc_normal(self, shape, std: float = 0.02, dtype="float32") -> np.ndarray:
        # clipped at two sigmas; good enough for weight init
        x = np.clip(self._gen.standard_normal(shape), -2.0, 2.0)
        return (x * std).astype(np.dtype(dtype))

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)


def rand_normal(rng: Rng, shape, std: float) -> Tensor:
    """Deterministic pseudo-normal samples with mean 0 and the given std."""
    return Tensor(rng.normal(shape, std=std, dtype="float32"))


def matmul(a: Tensor, b: Tensor, counter: MacCounter | None = None) -> Tensor:
    """Standard 2-D matrix product; adds M*K*N MACs to the counter."""
    A, B = as_array(a), as_array(b)
    if A.ndim != 2 or B.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {A.shape} @ {B.shape}")
    if A.shape[1] != B.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {A.shape} @ {B.shape}")
    if counter is not None:
        counter.add(A.shape[0] * A.shape[1] * B.shape[1])
    return Tensor(A @ B)


_EW_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "max": np.maximum,
}


def elementwise(op: str, a: Tensor, b) -> Tensor:
    """Elementwise op between equal-shape tensors (or tensor and scalar).

    Supported ops: add, sub, mul, max, scale (scalar only). Not counted as
    MACs. No broadcasting beyond scalars.
    """
    A = as_array(a)
    if op == "scale":
        return Tensor(A * float(b))
    if op not in _EW_BINARY:
        raise ValueError(f"unknown elementwise op {op!r}")
    if isinstance(b, (Tensor, np.ndarray, list)):
        B = as_array(b)
        if B.shape != A.shape:
            raise ShapeError(f"elementwise {op}: shapes differ: {A.shape} vs {B.shape}")
        return Tensor(_EW_BINARY[op](A, B))
    return Tensor(_EW_BINARY[op](A, float(b)))
