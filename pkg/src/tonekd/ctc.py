"""CTC loss, exhaustive path-enumeration oracle, and greedy decoding.

The production loss runs a log-domain forward-backward recursion over the
blank-extended target (see kernels.py).  The oracle enumerates every one of
the V^T frame-label paths, collapses each (dedupe repeats, drop blanks), and
sums the probability mass of the paths that collapse to the target.  It is
deliberately brute force so the two routes share no code.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .tensor import Tensor

BLANK = 0

_DEFAULT_GLYPHS = "abcdefgh"


class CTCInfeasibleError(ValueError):
    """The target cannot be produced by any frame-label path of length T."""


@dataclass(frozen=True)
class Vocabulary:
    """Blank at id 0; real tokens 1..size-1 carry printable glyphs."""

    size: int = 9
    glyphs: str = _DEFAULT_GLYPHS

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("vocabulary needs blank plus at least one token")
        if len(self.glyphs) != self.size - 1:
            raise ValueError("need one glyph per non-blank token")

    def render(self, tokens: Sequence[int]) -> str:
        return "".join(self.glyphs[t - 1] for t in tokens)


def _as_tokens(y: Sequence[int]) -> list[int]:
    tokens = [int(t) for t in y]
    if any(t == BLANK for t in tokens):
        raise ValueError("transcripts must not contain the blank id 0")
    if any(t < 0 for t in tokens):
        raise ValueError("token ids must be positive")
    return tokens


def extended_target(y: Sequence[int]) -> np.ndarray:
    """Blank-extended label row [0, y1, 0, y2, ..., yU, 0], length 2U+1."""
    tokens = _as_tokens(y)
    ext = np.zeros(2 * len(tokens) + 1, dtype=np.int64)
    ext[1::2] = tokens
    return ext


def min_frames(y: Sequence[int]) -> int:
    """Fewest frames that can emit y: U plus one blank per adjacent repeat."""
    tokens = _as_tokens(y)
    repeats = sum(1 for a, b in zip(tokens, tokens[1:]) if a == b)
    return len(tokens) + repeats


def is_feasible(y: Sequence[int], n_frames: int) -> bool:
    return n_frames >= min_frames(y)


def _check_log_probs(lp: np.ndarray) -> None:
    if lp.ndim != 2:
        raise ValueError("log_probs must be (T, V)")
    row_mass = np.log(np.exp(lp - lp.max(axis=1, keepdims=True)).sum(axis=1)) \
        + lp.max(axis=1)
    if np.any(np.abs(row_mass) > 1e-8):
        raise ValueError("log_probs rows are not normalized log-distributions")


def ctc_loss(log_probs: Tensor, y: Sequence[int]) -> Tensor:
    """Negative log probability of all alignments collapsing to y.

    Registers the analytic gradient with respect to log_probs, so the usual
    chain through log_softmax gives gradients on pre-softmax logits.
    """
    tokens = _as_tokens(y)
    lp = log_probs.data
    _check_log_probs(lp)
    T, V = lp.shape
    if any(t >= V for t in tokens):
        raise ValueError("token id outside vocabulary")
    if not is_feasible(tokens, T):
        raise CTCInfeasibleError(
            f"target of length {len(tokens)} needs at least {min_frames(tokens)}"
            f" frames, got {T}")

    ext = extended_target(tokens)
    loss, grad_lp = kernels.ctc_forward_backward(lp, ext)
    if not np.isfinite(loss):
        raise CTCInfeasibleError("no feasible alignment path carries mass")

    src = log_probs

    def bw(g: np.ndarray) -> None:
        src._accumulate(float(g) * grad_lp)

    return Tensor._result(np.asarray(loss), "ctc_loss", (src,), bw)


def collapse(path: Iterable[int]) -> tuple[int, ...]:
    """CTC collapse: merge adjacent repeats, then drop blanks."""
    out: list[int] = []
    prev = -1
    for t in path:
        if t != prev and t != BLANK:
            out.append(t)
        prev = t
    return tuple(out)


def ctc_oracle(log_probs, y: Sequence[int]) -> float:
    """Loss by brute-force enumeration of all V^T paths (desk scale only)."""
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    tokens = tuple(_as_tokens(y))
    T, V = lp.shape
    if V ** T > 10 ** 6:
        raise ValueError("oracle limited to V^T <= 1e6")
    matched: list[float] = []
    for path in product(range(V), repeat=T):
        if collapse(path) == tokens:
            matched.append(sum(lp[t, path[t]] for t in range(T)))
    if not matched:
        raise CTCInfeasibleError("collapsed path mass is zero")
    return float(-np.logaddexp.reduce(np.array(matched)))


def ctc_oracle_all(log_probs) -> dict[tuple[int, ...], float]:
    """One enumeration pass giving the oracle loss for every transcript.

    Returns {collapsed transcript: loss}; transcripts absent from the map are
    infeasible for this (T, V).
    """
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    T, V = lp.shape
    if V ** T > 10 ** 6:
        raise ValueError("oracle limited to V^T <= 1e6")
    mass: dict[tuple[int, ...], list[float]] = {}
    for path in product(range(V), repeat=T):
        key = collapse(path)
        mass.setdefault(key, []).append(sum(lp[t, path[t]] for t in range(T)))
    return {key: float(-np.logaddexp.reduce(np.array(vals)))
            for key, vals in mass.items()}


def greedy_decode(log_probs) -> list[int]:
    """Per-frame argmax (ties break to the lowest id), then collapse."""
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    return [int(t) for t in collapse(np.argmax(lp, axis=1))]
