"""Shared test utilities: central finite differences and gradient checks."""

from __future__ import annotations

import numpy as np

from tonekd.tensor import Tensor


def finite_difference(f, x0: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of an array."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    flat = grad.ravel()
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp.ravel()[i] += h
        xm.ravel()[i] -= h
        flat[i] = (f(xp) - f(xm)) / (2.0 * h)
    return grad


def gradcheck(build, x0: np.ndarray, h: float = 1e-5) -> float:
    """Max abs difference between backward() and finite differences.

    build maps a Tensor to a scalar Tensor; it is called once with a
    requires_grad tensor and many times with constants for the numeric side.
    """
    x = Tensor(x0, requires_grad=True)
    build(x).backward()
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x0)
    numeric = finite_difference(lambda arr: build(Tensor(arr)).item(), x0, h)
    return float(np.abs(analytic - numeric).max())
