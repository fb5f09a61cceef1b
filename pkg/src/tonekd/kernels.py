"""Hot numeric kernels: CTC forward-backward and depthwise temporal conv.

Each kernel exists twice: a numba @njit build (explicit loops) and a pure
numpy fallback (vectorized over the label axis / kernel taps).  The numba
path is used when numba imports cleanly, unless the TONEKD_NUMBA environment
variable is set to 0/false/no/off, which forces the numpy path.  Both builds
compute identical math; tests assert bitwise-level agreement and
benchmarks/bench_kernels.py compares their speed.
"""

from __future__ import annotations

import math
import os

import numpy as np

_NEG_INF = -np.inf


def _env_wants_numba() -> bool:
    return os.environ.get("TONEKD_NUMBA", "1").strip().lower() not in (
        "0", "false", "no", "off")


try:
    from numba import njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via TONEKD_NUMBA=0 instead
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _env_wants_numba()


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# CTC forward-backward over the blank-extended target, log domain.
#
# ext is the blank-extended label row [0, y1, 0, y2, ..., yU, 0] of length
# S = 2U + 1.  alpha[t, s] includes the emission at frame t; beta[t, s]
# covers emissions strictly after t.  The loss is -logZ and the gradient
# with respect to the per-frame log-probabilities is
#     d(-logZ)/d lp[t, v] = -sum_{s: ext[s]=v} exp(alpha[t,s]+beta[t,s]-logZ).


def ctc_forward_backward_numpy(lp: np.ndarray, ext: np.ndarray):
    """Pure numpy path: loops over time, vectorized over ext states."""
    T = lp.shape[0]
    S = ext.shape[0]
    lp_ext = lp[:, ext]

    skip = np.zeros(S, dtype=bool)
    if S > 2:
        skip[2:] = (ext[2:] != 0) & (ext[2:] != ext[:-2])

    alpha = np.full((T, S), _NEG_INF)
    alpha[0, 0] = lp_ext[0, 0]
    if S > 1:
        alpha[0, 1] = lp_ext[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        if S > 2:
            two = np.full(S, _NEG_INF)
            two[2:] = prev[:-2]
            acc = np.where(skip, np.logaddexp(acc, two), acc)
        alpha[t] = acc + lp_ext[t]

    if S > 1:
        log_z = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    else:
        log_z = alpha[T - 1, 0]
    if not np.isfinite(log_z):
        return float(-log_z), np.zeros_like(lp)

    beta = np.full((T, S), _NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + lp_ext[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        if S > 2:
            two = np.full(S, _NEG_INF)
            two[:-2] = np.where(skip[2:], nxt[2:], _NEG_INF)
            acc = np.logaddexp(acc, two)
        beta[t] = acc

    posterior = np.exp(alpha + beta - log_z)
    grad = np.zeros_like(lp)
    rows = np.repeat(np.arange(T), S)
    cols = np.tile(ext, T)
    np.subtract.at(grad, (rows, cols), posterior.ravel())
    return float(-log_z), grad


def _ctc_forward_backward_loops(lp, ext):
    T = lp.shape[0]
    S = ext.shape[0]

    alpha = np.full((T, S), _NEG_INF)
    alpha[0, 0] = lp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            best = alpha[t - 1, s]
            if s >= 1:
                best = _logaddexp(best, alpha[t - 1, s - 1])
            if s >= 2 and ext[s] != 0 and ext[s] != ext[s - 2]:
                best = _logaddexp(best, alpha[t - 1, s - 2])
            alpha[t, s] = best + lp[t, ext[s]]

    if S > 1:
        log_z = _logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    else:
        log_z = alpha[T - 1, 0]
    grad = np.zeros_like(lp)
    if log_z == _NEG_INF or np.isnan(log_z):
        return -log_z, grad

    beta = np.full((T, S), _NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        for s in range(S):
            best = beta[t + 1, s] + lp[t + 1, ext[s]]
            if s + 1 < S:
                best = _logaddexp(best, beta[t + 1, s + 1] + lp[t + 1, ext[s + 1]])
            if s + 2 < S and ext[s + 2] != 0 and ext[s + 2] != ext[s]:
                best = _logaddexp(best, beta[t + 1, s + 2] + lp[t + 1, ext[s + 2]])
            beta[t, s] = best

    for t in range(T):
        for s in range(S):
            g = alpha[t, s] + beta[t, s] - log_z
            if g > -745.0:  # exp underflows to 0 below this anyway
                grad[t, ext[s]] -= math.exp(g)
    return -log_z, grad


def _logaddexp_py(a: float, b: float) -> float:
    if a == _NEG_INF:
        return b
    if b == _NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


# ---------------------------------------------------------------------------
# Depthwise temporal convolution, zero padded, odd K.


def conv_forward_numpy(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    T, d = x.shape
    K = k.shape[0]
    c0 = (K - 1) // 2
    xp = np.zeros((T + K - 1, d))
    xp[c0:c0 + T] = x
    out = np.zeros((T, d))
    for j in range(K):
        out += xp[j:j + T] * k[j]
    return out


def conv_backward_numpy(g: np.ndarray, x: np.ndarray, k: np.ndarray):
    T, d = x.shape
    K = k.shape[0]
    c0 = (K - 1) // 2
    gp = np.zeros((T + K - 1, d))
    gp[c0:c0 + T] = g
    dx = np.zeros_like(x)
    for j in range(K):
        dx += gp[K - 1 - j:K - 1 - j + T] * k[j]
    xp = np.zeros((T + K - 1, d))
    xp[c0:c0 + T] = x
    dk = np.zeros_like(k)
    for j in range(K):
        dk[j] = (g * xp[j:j + T]).sum(axis=0)
    return dx, dk


def _conv_forward_loops(x, k):
    T, d = x.shape
    K = k.shape[0]
    c0 = (K - 1) // 2
    out = np.zeros((T, d))
    for t in range(T):
        for j in range(K):
            src = t + j - c0
            if 0 <= src < T:
                for c in range(d):
                    out[t, c] += x[src, c] * k[j, c]
    return out


def _conv_backward_loops(g, x, k):
    T, d = x.shape
    K = k.shape[0]
    c0 = (K - 1) // 2
    dx = np.zeros_like(x)
    dk = np.zeros_like(k)
    for t in range(T):
        for j in range(K):
            src = t + j - c0
            if 0 <= src < T:
                for c in range(d):
                    dx[src, c] += g[t, c] * k[j, c]
                    dk[j, c] += g[t, c] * x[src, c]
    return dx, dk


# ---------------------------------------------------------------------------
# Backend selection.

if HAS_NUMBA:
    _logaddexp = njit(cache=True)(_logaddexp_py)
    ctc_forward_backward_numba = njit(cache=True)(_ctc_forward_backward_loops)
    conv_forward_numba = njit(cache=True)(_conv_forward_loops)
    conv_backward_numba = njit(cache=True)(_conv_backward_loops)
else:
    _logaddexp = _logaddexp_py
    ctc_forward_backward_numba = None
    conv_forward_numba = None
    conv_backward_numba = None


def ctc_forward_backward(lp: np.ndarray, ext: np.ndarray):
    """Dispatch to the selected backend.  Returns (loss, grad_wrt_lp)."""
    lp = np.ascontiguousarray(lp, dtype=np.float64)
    ext = np.ascontiguousarray(ext, dtype=np.int64)
    if USE_NUMBA:
        loss, grad = ctc_forward_backward_numba(lp, ext)
        return float(loss), grad
    return ctc_forward_backward_numpy(lp, ext)


def conv_forward(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    k = np.ascontiguousarray(k, dtype=np.float64)
    if USE_NUMBA:
        return conv_forward_numba(x, k)
    return conv_forward_numpy(x, k)


def conv_backward(g: np.ndarray, x: np.ndarray, k: np.ndarray):
    g = np.ascontiguousarray(g, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    k = np.ascontiguousarray(k, dtype=np.float64)
    if USE_NUMBA:
        return conv_backward_numba(g, x, k)
    return conv_backward_numpy(g, x, k)
