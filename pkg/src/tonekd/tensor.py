"""Dense float64 tensors with reverse-mode automatic differentiation.

The op set is small and closed, sized exactly for the encoders and losses in
this repository: matmul, add (elementwise or bias-row broadcast), elementwise
multiply, scalar arithmetic, tanh, exp, log-softmax, depthwise temporal
convolution, slicing, transpose, sum/mean and squared norm.  There is no
general broadcasting; shape mismatches are hard errors.  Any operation whose
result contains a NaN or Inf raises NumericsError immediately instead of
letting the value propagate.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NumericsError(ArithmeticError):
    """An operation produced (or was handed) a non-finite value."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (teacher forwards, eval)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def _require_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{op} produced non-finite values")


class Tensor:
    """A float64 array plus an optional gradient slot and graph linkage."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        _require_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    # ------------------------------------------------------------------
    # basic properties

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def numel(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # ------------------------------------------------------------------
    # graph plumbing

    @staticmethod
    def _result(data: np.ndarray, op: str, parents: tuple["Tensor", ...],
                backward_fn: Callable[[np.ndarray], None]) -> "Tensor":
        _require_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward_fn = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward_fn = None
        return out

    def backward(self) -> None:
        """Populate grads of every reachable requires_grad tensor.

        Gradients accumulate (+=) across multiple uses of the same tensor;
        callers zero grads between optimization steps.
        """
        if self.data.shape != ():
            raise ShapeError("backward() requires a scalar loss")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor with no graph attached")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    # ------------------------------------------------------------------
    # operations

    def add(self, other: "Tensor") -> "Tensor":
        a, b = self, other
        if a.shape == b.shape:
            data = a.data + b.data

            def bw(g: np.ndarray) -> None:
                a._accumulate(g)
                b._accumulate(g)

        elif a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
            # bias vector broadcast over rows, the only broadcast allowed
            data = a.data + b.data

            def bw(g: np.ndarray) -> None:
                a._accumulate(g)
                b._accumulate(g.sum(axis=0))

        else:
            raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
        return Tensor._result(data, "add", (a, b), bw)

    def mul(self, other: "Tensor") -> "Tensor":
        a, b = self, other
        if a.shape != b.shape:
            raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
        data = a.data * b.data

        def bw(g: np.ndarray) -> None:
            a._accumulate(g * b.data)
            b._accumulate(g * a.data)

        return Tensor._result(data, "mul", (a, b), bw)

    def add_scalar(self, c: float) -> "Tensor":
        a = self
        c = float(c)
        data = a.data + c

        def bw(g: np.ndarray) -> None:
            a._accumulate(g)

        return Tensor._result(data, "add_scalar", (a,), bw)

    def mul_scalar(self, c: float) -> "Tensor":
        a = self
        c = float(c)
        data = a.data * c

        def bw(g: np.ndarray) -> None:
            a._accumulate(g * c)

        return Tensor._result(data, "mul_scalar", (a,), bw)

    def matmul(self, other: "Tensor") -> "Tensor":
        a, b = self, other
        if a.ndim != 2 or b.ndim != 2:
            raise ShapeError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
        data = a.data @ b.data

        def bw(g: np.ndarray) -> None:
            a._accumulate(g @ b.data.T)
            b._accumulate(a.data.T @ g)

        return Tensor._result(data, "matmul", (a, b), bw)

    def tanh(self) -> "Tensor":
        a = self
        y = np.tanh(a.data)

        def bw(g: np.ndarray) -> None:
            a._accumulate(g * (1.0 - y * y))

        return Tensor._result(y, "tanh", (a,), bw)

    def exp(self) -> "Tensor":
        a = self
        with np.errstate(over="ignore"):
            y = np.exp(a.data)

        def bw(g: np.ndarray) -> None:
            a._accumulate(g * y)

        return Tensor._result(y, "exp", (a,), bw)

    def log_softmax(self) -> "Tensor":
        """Log-softmax over the last axis, computed with max subtraction."""
        a = self
        if a.ndim == 0:
            raise ShapeError("log_softmax needs at least one axis")
        m = a.data.max(axis=-1, keepdims=True)
        shifted = a.data - m
        lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        y = shifted - lse
        soft = np.exp(y)

        def bw(g: np.ndarray) -> None:
            # a diverged upstream gradient may carry inf here; the optimizer's
            # finite check owns that failure, so compute quietly
            with np.errstate(invalid="ignore"):
                a._accumulate(g - soft * g.sum(axis=-1, keepdims=True))

        return Tensor._result(y, "log_softmax", (a,), bw)

    def temporal_conv(self, kernel: "Tensor") -> "Tensor":
        """Depthwise temporal convolution with zero padding, odd kernel only.

        x is (T, d), kernel is (K, d):
            out[t, c] = sum_j x[t + j - (K-1)/2, c] * kernel[j, c]
        """
        a, k = self, kernel
        if a.ndim != 2 or k.ndim != 2:
            raise ShapeError("temporal_conv needs 2-D input and kernel")
        if k.shape[0] % 2 == 0:
            raise ValueError(f"temporal_conv kernel length must be odd, got {k.shape[0]}")
        if a.shape[1] != k.shape[1]:
            raise ShapeError(
                f"temporal_conv channel mismatch: {a.shape} vs {k.shape}")
        data = kernels.conv_forward(a.data, k.data)

        def bw(g: np.ndarray) -> None:
            dx, dk = kernels.conv_backward(np.ascontiguousarray(g), a.data, k.data)
            a._accumulate(dx)
            k._accumulate(dk)

        return Tensor._result(data, "temporal_conv", (a, k), bw)

    def __getitem__(self, idx) -> "Tensor":
        a = self
        data = a.data[idx]
        if not isinstance(data, np.ndarray):
            data = np.asarray(data, dtype=np.float64)
        data = data.copy()

        def bw(g: np.ndarray) -> None:
            if not a.requires_grad:
                return
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accumulate(full)

        return Tensor._result(data, "getitem", (a,), bw)

    def transpose(self) -> "Tensor":
        a = self
        if a.ndim != 2:
            raise ShapeError("transpose is defined for 2-D tensors")
        data = a.data.T.copy()

        def bw(g: np.ndarray) -> None:
            a._accumulate(g.T)

        return Tensor._result(data, "transpose", (a,), bw)

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def sum(self, axis: int | None = None) -> "Tensor":
        a = self
        data = a.data.sum(axis=axis)
        data = np.asarray(data, dtype=np.float64)

        def bw(g: np.ndarray) -> None:
            if axis is None:
                a._accumulate(np.full_like(a.data, float(g)))
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

        return Tensor._result(data, "sum", (a,), bw)

    def mean(self, axis: int | None = None) -> "Tensor":
        n = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis).mul_scalar(1.0 / n)

    def sqnorm(self) -> "Tensor":
        """Sum of squared entries, as a scalar."""
        a = self
        data = np.asarray((a.data * a.data).sum(), dtype=np.float64)

        def bw(g: np.ndarray) -> None:
            a._accumulate(2.0 * float(g) * a.data)

        return Tensor._result(data, "sqnorm", (a,), bw)

    # ------------------------------------------------------------------
    # operator sugar

    def __add__(self, other):
        if isinstance(other, Tensor):
            return self.add(other)
        return self.add_scalar(other)

    def __radd__(self, other):
        return self.add_scalar(other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return self.mul(other)
        return self.mul_scalar(other)

    def __rmul__(self, other):
        return self.mul_scalar(other)

    def __neg__(self):
        return self.mul_scalar(-1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return self.add(other.mul_scalar(-1.0))
        return self.add_scalar(-float(other))

    def __matmul__(self, other):
        return self.matmul(other)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def zeros(shape: Sequence[int] | int, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)
