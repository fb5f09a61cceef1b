"""Block-wise 4-bit weight quantization and trainable low-rank adapters.

A quantized tensor stores one 4-bit code per element (packed two per byte,
low nibble first) plus one float scale per block.  The scale is the block's
max absolute value, so the element that set it always round-trips exactly and
re-quantizing a dequantized tensor is a fixed point.  Gradients never pass
through the codes: the frozen base participates in forward passes as a plain
constant.
"""

from __future__ import annotations

import math
from statistics import NormalDist

import numpy as np

from .tensor import NumericsError, ShapeError, Tensor

CODEBOOK_SIZE = 16
DEFAULT_BLOCK_SIZE = 64
DEFAULT_RANK = 2
DEFAULT_LORA_ALPHA = 16.0


class Codebook:
    """16 dequantization levels in [-1, 1], sorted, containing 0 and +/-1.

    The default is linear-symmetric: levels k/7 for k in -7..7 fill 15 slots
    and the spare slot duplicates 0, so codes stay 4 bits wide.  A normal-
    quantile codebook is available for quantile-style fidelity.
    """

    __slots__ = ("levels", "name")

    def __init__(self, levels, name: str = "custom"):
        arr = np.array(levels, dtype=np.float64)
        if arr.shape != (CODEBOOK_SIZE,):
            raise ValueError(f"codebook needs exactly {CODEBOOK_SIZE} levels")
        if np.any(np.diff(arr) < 0):
            raise ValueError("codebook levels must be sorted ascending")
        if not np.any(arr == 0.0):
            raise ValueError("codebook must contain 0")
        if np.abs(arr).max() != 1.0:
            raise ValueError("codebook max |level| must be 1")
        self.levels = arr
        self.name = name

    @staticmethod
    def linear() -> "Codebook":
        ks = np.concatenate(([0.0], np.arange(-7, 8, dtype=np.float64) / 7.0))
        return Codebook(np.sort(ks), name="linear")

    @staticmethod
    def normal_quantile() -> "Codebook":
        # 8 negative quantiles, an exact zero, 7 positive quantiles,
        # normalized so the extremes sit at +/-1.
        nd = NormalDist()
        lo, hi = 1.0 / 32.0, 1.0 - 1.0 / 32.0
        neg = [nd.inv_cdf(p) for p in np.linspace(lo, 0.5, 9)[:-1]]
        pos = [nd.inv_cdf(p) for p in np.linspace(0.5, hi, 8)[1:]]
        levels = np.array(neg + [0.0] + pos)
        levels /= np.abs(levels).max()
        return Codebook(levels, name="normal")

    @staticmethod
    def by_name(name: str) -> "Codebook":
        if name == "linear":
            return Codebook.linear()
        if name == "normal":
            return Codebook.normal_quantile()
        raise ValueError(f"unknown codebook '{name}'")

    def max_gap(self) -> float:
        return float(np.diff(self.levels).max())

    def __eq__(self, other) -> bool:
        return isinstance(other, Codebook) and np.array_equal(self.levels, other.levels)


def pack_nibbles(codes: np.ndarray) -> np.ndarray:
    """Pack 4-bit codes two per byte, low nibble first; odd tail in low nibble."""
    codes = np.asarray(codes, dtype=np.uint8)
    if codes.size % 2:
        codes = np.concatenate([codes, np.zeros(1, dtype=np.uint8)])
    return (codes[0::2] | (codes[1::2] << 4)).astype(np.uint8)


def unpack_nibbles(packed: np.ndarray, numel: int) -> np.ndarray:
    packed = np.asarray(packed, dtype=np.uint8)
    out = np.empty(packed.size * 2, dtype=np.uint8)
    out[0::2] = packed & 0x0F
    out[1::2] = packed >> 4
    return out[:numel]


class QuantizedTensor:
    """Frozen 4-bit codes + per-block scales; immutable after construction."""

    __slots__ = ("dims", "codes", "scales", "block_size", "codebook")

    def __init__(self, dims: tuple[int, ...], codes: np.ndarray,
                 scales: np.ndarray, block_size: int, codebook: Codebook):
        numel = int(np.prod(dims))
        n_blocks = -(-numel // block_size)
        if scales.shape != (n_blocks,):
            raise ValueError("scale count must equal ceil(numel / block_size)")
        if codes.shape != (-(-numel // 2),):
            raise ValueError("packed code bytes must equal ceil(numel / 2)")
        if np.any(scales < 0):
            raise ValueError("scales must be non-negative")
        self.dims = tuple(int(d) for d in dims)
        self.codes = codes
        self.scales = scales
        self.block_size = int(block_size)
        self.codebook = codebook

    @property
    def numel(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_blocks(self) -> int:
        return self.scales.shape[0]

    def dequantize(self) -> np.ndarray:
        flat = self.codebook.levels[unpack_nibbles(self.codes, self.numel)]
        per_elem = np.repeat(self.scales, self.block_size)[:self.numel]
        # + 0.0 turns the -0.0 of zero-scale blocks into exact +0.0
        return (flat * per_elem + 0.0).reshape(self.dims)


def quantize(x, block_size: int = DEFAULT_BLOCK_SIZE,
             codebook: Codebook | None = None) -> QuantizedTensor:
    """Blockwise max-abs quantization to the nearest codebook level.

    Ties between two equidistant levels round half away from zero.  An
    all-zero block gets scale 0 and codes 0.
    """
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    if codebook is None:
        codebook = Codebook.linear()
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericsError("cannot quantize non-finite values")
    dims = arr.shape
    flat = arr.ravel()
    numel = flat.size
    n_blocks = -(-numel // block_size)
    padded = np.zeros(n_blocks * block_size)
    padded[:numel] = flat
    blocks = padded.reshape(n_blocks, block_size)

    scales = np.abs(blocks).max(axis=1)
    safe = np.where(scales > 0, scales, 1.0)
    normalized = blocks / safe[:, None]

    levels = codebook.levels
    dist = np.abs(normalized[:, :, None] - levels[None, None, :])
    min_dist = dist.min(axis=2, keepdims=True)
    # among exactly tied levels prefer the larger |level| (half away from
    # zero); remaining ties (the duplicated 0) fall to the lowest index
    pref = np.where(dist == min_dist, np.abs(levels)[None, None, :], -1.0)
    codes = pref.argmax(axis=2).astype(np.uint8)
    codes[scales == 0] = 0

    codes_flat = codes.reshape(-1)[:numel]
    return QuantizedTensor(dims, pack_nibbles(codes_flat), scales,
                           block_size, codebook)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    return q.dequantize()


def roundtrip_bound(q: QuantizedTensor) -> np.ndarray:
    """Per-block worst-case absolute error: scale * max adjacent gap / 2."""
    return q.scales * (q.codebook.max_gap() / 2.0)


class QuantizedLinear:
    """Frozen quantized weight (out, in) + frozen bias + trainable LoRA pair.

    forward(x) = x @ dequantize(base)^T + bias + (alpha/r) * x @ A^T @ B^T
    for row-major activations x of shape (T, in).  lora_B starts at zero so a
    freshly wrapped layer reproduces the frozen path exactly.
    """

    def __init__(self, base: QuantizedTensor, bias: np.ndarray,
                 lora_a: np.ndarray, lora_b: np.ndarray, lora_alpha: float):
        if len(base.dims) != 2:
            raise ShapeError("base must be a matrix")
        out_f, in_f = base.dims
        r = lora_a.shape[0]
        if lora_a.shape != (r, in_f) or lora_b.shape != (out_f, r):
            raise ShapeError("adapter factor shapes must be (r, in) and (out, r)")
        if bias.shape != (out_f,):
            raise ShapeError("bias shape must be (out,)")
        if r < 1:
            raise ValueError("rank must be positive")
        self.base = base
        self.rank = r
        self.lora_alpha = float(lora_alpha)
        # dense dequantized copy used by every forward; codes stay authoritative
        self._w_hat = Tensor(base.dequantize(), requires_grad=False)
        self.bias = Tensor(bias, requires_grad=False)
        self.lora_A = Tensor(lora_a, requires_grad=True)
        self.lora_B = Tensor(lora_b, requires_grad=True)

    @property
    def in_features(self) -> int:
        return self.base.dims[1]

    @property
    def out_features(self) -> int:
        return self.base.dims[0]

    @property
    def trainable_count(self) -> int:
        return self.rank * (self.in_features + self.out_features)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                f"expected (T, {self.in_features}) input, got {x.shape}")
        y = x.matmul(self._w_hat.T).add(self.bias)
        delta = x.matmul(self.lora_A.T).matmul(self.lora_B.T)
        return y.add(delta.mul_scalar(self.lora_alpha / self.rank))

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


def make_quantized_linear(weight: np.ndarray, bias: np.ndarray, r: int,
                          lora_alpha: float, block_size: int,
                          codebook: Codebook, rng: np.random.Generator) -> QuantizedLinear:
    """Wrap a trained dense layer: quantize, freeze, attach zero-init LoRA."""
    if r <= 0:
        raise ValueError("rank must be positive")
    out_f, in_f = weight.shape
    base = quantize(weight, block_size, codebook)
    bound = 1.0 / math.sqrt(in_f)
    lora_a = rng.uniform(-bound, bound, size=(r, in_f))
    lora_b = np.zeros((out_f, r))
    return QuantizedLinear(base, bias.copy(), lora_a, lora_b, lora_alpha)


def trainable_fraction(entries) -> float:
    """Trainable share of all weight elements; bases count at full size."""
    trainable = 0
    total = 0
    seen = False
    for entry in entries:
        seen = True
        if isinstance(entry, QuantizedLinear):
            trainable += entry.trainable_count
            total += entry.base.numel + entry.bias.numel + entry.trainable_count
        elif isinstance(entry, QuantizedTensor):
            total += entry.numel
        elif isinstance(entry, Tensor):
            total += entry.numel
            if entry.requires_grad:
                trainable += entry.numel
        else:
            raise TypeError(f"cannot account for {type(entry).__name__}")
    if not seen:
        raise ValueError("empty model")
    return trainable / total
