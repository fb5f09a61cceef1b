"""Teacher and student encoders, adapter conversion, checkpoint mapping.

An encoder is an input projection, a stack of residual blocks (depthwise
temporal conv followed by a pointwise d -> 2d -> d MLP with tanh), and a
linear output head over the CTC vocabulary.  Frame count is preserved
everywhere, which CTC requires.

Plain phase: every weight is a trainable float64 tensor.  Adapter phase:
the trunk (input projection, conv kernels, pointwise maps) is 4-bit
quantized and frozen; the pointwise maps carry trainable low-rank adapters;
the output head stays trainable in full precision.  The latent projection
maps student final-block latents into the teacher's latent space so the
trajectory losses can compare them.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .quant import (Codebook, QuantizedLinear, QuantizedTensor,
                    make_quantized_linear, quantize)
from .tensor import ShapeError, Tensor

PHASE_PLAIN = "plain"
PHASE_ADAPTER = "adapter"

# fixed input conditioning applied to raw log-energy features before the
# input projection: clamp the silence floor (log 1e-6 = -13.8 on clean audio,
# noise-dependent otherwise), then center and scale into tanh's responsive
# range; identical constants in both phases and for both roles
FEAT_FLOOR = -5.0
FEAT_CENTER = -3.0
FEAT_SCALE = 0.125

# rng stream tags so stages draw from disjoint deterministic streams
STREAM_INIT = 0
STREAM_ADAPTER = 1
STREAM_PROJECTION = 2


@dataclass(frozen=True)
class EncoderConfig:
    n_blocks: int
    d_model: int
    kernel_size: int = 5
    vocab_size: int = 9
    feature_dim: int = 16

    def __post_init__(self):
        if self.kernel_size % 2 == 0:
            raise ValueError("conv kernel length must be odd")
        if min(self.n_blocks, self.d_model) < 1:
            raise ValueError("bad encoder size")


def teacher_config(n_blocks: int = 4, d_model: int = 64) -> EncoderConfig:
    return EncoderConfig(n_blocks=n_blocks, d_model=d_model)


def student_config(n_blocks: int = 2, d_model: int = 48) -> EncoderConfig:
    # d_model is sized so the adapter-phase trainable share (roughly
    # (12r + 9) / (8d) for this architecture) stays under the 10% budget
    return EncoderConfig(n_blocks=n_blocks, d_model=d_model)


class Linear:
    """y = x @ W^T + b for row-major activations."""

    def __init__(self, weight: Tensor, bias: Tensor):
        self.weight = weight
        self.bias = bias

    def __call__(self, x: Tensor) -> Tensor:
        return x.matmul(self.weight.T).add(self.bias)


class FrozenLinear:
    """Quantized frozen projection: no adapters, no gradients."""

    def __init__(self, base: QuantizedTensor, bias: np.ndarray):
        self.base = base
        self.weight = Tensor(base.dequantize(), requires_grad=False)
        self.bias = Tensor(bias, requires_grad=False)

    def __call__(self, x: Tensor) -> Tensor:
        return x.matmul(self.weight.T).add(self.bias)


class Block:
    def __init__(self, conv, lin1, lin2):
        self.conv = conv  # Tensor (plain) or QuantizedTensor (adapter)
        self._conv_const = (Tensor(conv.dequantize(), requires_grad=False)
                            if isinstance(conv, QuantizedTensor) else None)
        self.lin1 = lin1
        self.lin2 = lin2

    def conv_tensor(self) -> Tensor:
        return self._conv_const if self._conv_const is not None else self.conv

    def forward(self, h: Tensor) -> Tensor:
        c = h.temporal_conv(self.conv_tensor())
        return h.add(self.lin2(self.lin1(c).tanh()))


class Encoder:
    def __init__(self, config: EncoderConfig, input_proj, blocks: list[Block],
                 head: Linear, phase: str):
        self.config = config
        self.input_proj = input_proj
        self.blocks = blocks
        self.head = head
        self.phase = phase

    # ------------------------------------------------------------------

    @staticmethod
    def init(config: EncoderConfig, seed: int) -> "Encoder":
        """Fresh plain-phase encoder; identical weights for identical seeds."""
        rng = np.random.default_rng([seed, STREAM_INIT])

        def uniform(shape, fan_in):
            bound = 1.0 / math.sqrt(fan_in)
            return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

        d, f, k, v = (config.d_model, config.feature_dim,
                      config.kernel_size, config.vocab_size)
        input_proj = Linear(uniform((d, f), f), Tensor(np.zeros(d), requires_grad=True))
        blocks = []
        for _ in range(config.n_blocks):
            conv = uniform((k, d), k)
            lin1 = Linear(uniform((2 * d, d), d), Tensor(np.zeros(2 * d), requires_grad=True))
            lin2 = Linear(uniform((d, 2 * d), 2 * d), Tensor(np.zeros(d), requires_grad=True))
            blocks.append(Block(conv, lin1, lin2))
        head = Linear(uniform((v, d), d), Tensor(np.zeros(v), requires_grad=True))
        return Encoder(config, input_proj, blocks, head, PHASE_PLAIN)

    # ------------------------------------------------------------------

    def forward(self, feats: np.ndarray) -> tuple[Tensor, Tensor]:
        """Returns (pre-softmax logits (T, V), final-block latents (T, d))."""
        if feats.ndim != 2 or feats.shape[1] != self.config.feature_dim:
            raise ShapeError(
                f"expected (T, {self.config.feature_dim}) features, got {feats.shape}")
        conditioned = (np.maximum(feats, FEAT_FLOOR) - FEAT_CENTER) * FEAT_SCALE
        h = self.input_proj(Tensor(conditioned))
        for block in self.blocks:
            h = block.forward(h)
        return self.head(h), h

    # ------------------------------------------------------------------
    # registries

    def named_entries(self) -> list[tuple[str, object]]:
        """Every weight, in checkpoint order.  Values are Tensor or QuantizedTensor."""
        out: list[tuple[str, object]] = []

        def linear_entries(prefix, lin):
            if isinstance(lin, QuantizedLinear):
                out.append((f"{prefix}.weight", lin.base))
                out.append((f"{prefix}.bias", lin.bias))
                out.append((f"{prefix}.lora_A", lin.lora_A))
                out.append((f"{prefix}.lora_B", lin.lora_B))
            elif isinstance(lin, FrozenLinear):
                out.append((f"{prefix}.weight", lin.base))
                out.append((f"{prefix}.bias", lin.bias))
            else:
                out.append((f"{prefix}.weight", lin.weight))
                out.append((f"{prefix}.bias", lin.bias))

        linear_entries("input_proj", self.input_proj)
        for i, block in enumerate(self.blocks):
            out.append((f"block{i}.conv", block.conv))
            linear_entries(f"block{i}.lin1", block.lin1)
            linear_entries(f"block{i}.lin2", block.lin2)
        linear_entries("head", self.head)
        return out

    def trainable_parameters(self) -> list[tuple[str, Tensor]]:
        return [(name, val) for name, val in self.named_entries()
                if isinstance(val, Tensor) and val.requires_grad]

    def weight_entries(self) -> list[object]:
        """Accounting view: QuantizedLinear layers stay whole."""
        out: list[object] = []
        if isinstance(self.input_proj, FrozenLinear):
            out += [self.input_proj.base, self.input_proj.bias]
        else:
            out += [self.input_proj.weight, self.input_proj.bias]
        for block in self.blocks:
            out.append(block.conv)
            for lin in (block.lin1, block.lin2):
                if isinstance(lin, QuantizedLinear):
                    out.append(lin)
                else:
                    out += [lin.weight, lin.bias]
        out += [self.head.weight, self.head.bias]
        return out

    def zero_grad(self) -> None:
        for _, p in self.trainable_parameters():
            p.zero_grad()

    def frozen_entries(self) -> list[tuple[str, object]]:
        return [(name, val) for name, val in self.named_entries()
                if isinstance(val, QuantizedTensor)
                or (isinstance(val, Tensor) and not val.requires_grad)]

    def frozen_digest(self) -> str:
        """Checksum of everything that must not change during training."""
        blob = checkpoint.write_entries(self.frozen_entries())
        return hashlib.sha256(blob).hexdigest()

    @property
    def lora_alpha(self) -> float | None:
        for block in self.blocks:
            if isinstance(block.lin1, QuantizedLinear):
                return block.lin1.lora_alpha
        return None


def encoder_forward(enc: Encoder, feats: np.ndarray) -> tuple[Tensor, Tensor]:
    return enc.forward(feats)


def freeze_and_quantize(base: Encoder, r: int, lora_alpha: float,
                        block_size: int, codebook: Codebook | None = None,
                        seed: int = 0) -> Encoder:
    """Convert a trained plain encoder into the frozen quantized adapter form.

    Pointwise maps gain zero-init LoRA pairs; conv kernels and the input
    projection are quantized without adapters; the head stays trainable in
    full precision.  With lora_B = 0 the converted model differs from the
    base only by quantization error.
    """
    if base.phase != PHASE_PLAIN:
        raise ValueError("base encoder is already in adapter phase")
    if r <= 0:
        raise ValueError("rank must be positive")
    if codebook is None:
        codebook = Codebook.linear()
    rng = np.random.default_rng([seed, STREAM_ADAPTER])

    input_proj = FrozenLinear(quantize(base.input_proj.weight.data, block_size, codebook),
                              base.input_proj.bias.data.copy())
    blocks = []
    for blk in base.blocks:
        conv_q = quantize(blk.conv.data, block_size, codebook)
        lin1 = make_quantized_linear(blk.lin1.weight.data, blk.lin1.bias.data,
                                     r, lora_alpha, block_size, codebook, rng)
        lin2 = make_quantized_linear(blk.lin2.weight.data, blk.lin2.bias.data,
                                     r, lora_alpha, block_size, codebook, rng)
        blocks.append(Block(conv_q, lin1, lin2))
    head = Linear(Tensor(base.head.weight.data.copy(), requires_grad=True),
                  Tensor(base.head.bias.data.copy(), requires_grad=True))
    return Encoder(base.config, input_proj, blocks, head, PHASE_ADAPTER)


def make_latent_projection(d_teacher: int, d_student: int, seed: int) -> Tensor:
    rng = np.random.default_rng([seed, STREAM_PROJECTION])
    bound = 1.0 / math.sqrt(d_student)
    return Tensor(rng.uniform(-bound, bound, size=(d_teacher, d_student)),
                  requires_grad=True)


def project_latents(projection: Tensor, h_student: Tensor) -> Tensor:
    """(T, d_student) -> (T, d_teacher)."""
    return h_student.matmul(projection.T)


# ---------------------------------------------------------------------------
# checkpoint mapping

_META_PREFIX = "meta."


def encoder_to_checkpoint(enc: Encoder,
                          extra: dict[str, np.ndarray] | None = None) -> bytes:
    entries = enc.named_entries()
    flags = 0
    if enc.phase == PHASE_ADAPTER:
        flags = checkpoint.FLAG_ADAPTER
        entries.append(("meta.lora_alpha", np.array([enc.lora_alpha])))
    for name, val in (extra or {}).items():
        entries.append((name, np.asarray(val, dtype=np.float64)))
    return checkpoint.write_entries(entries, flags)


def save_model(path: str, enc: Encoder,
               extra: dict[str, np.ndarray] | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(encoder_to_checkpoint(enc, extra))


def encoder_from_checkpoint(data: bytes) -> tuple[Encoder, dict[str, np.ndarray]]:
    flags, entries = checkpoint.read_entries(data)
    table = dict(entries)
    if len(table) != len(entries):
        raise checkpoint.CheckpointError("duplicate tensor names")
    adapter = bool(flags & checkpoint.FLAG_ADAPTER)

    def shape_of(name):
        val = table[name]
        return val.dims if isinstance(val, QuantizedTensor) else val.shape

    n_blocks = 0
    while f"block{n_blocks}.conv" in table:
        n_blocks += 1
    if n_blocks == 0 or "input_proj.weight" not in table or "head.weight" not in table:
        raise checkpoint.CheckpointError("checkpoint is not an encoder")
    d, f = shape_of("input_proj.weight")
    k = shape_of("block0.conv")[0]
    v = shape_of("head.weight")[0]
    config = EncoderConfig(n_blocks=n_blocks, d_model=d, kernel_size=k,
                           vocab_size=v, feature_dim=f)

    consumed = set()

    def pop(name):
        consumed.add(name)
        return table[name]

    if adapter:
        lora_alpha = float(np.asarray(pop("meta.lora_alpha")).reshape(-1)[0])
        input_proj = FrozenLinear(pop("input_proj.weight"), pop("input_proj.bias"))
        blocks = []
        for i in range(n_blocks):
            conv = pop(f"block{i}.conv")
            lins = []
            for tag in ("lin1", "lin2"):
                lins.append(QuantizedLinear(
                    pop(f"block{i}.{tag}.weight"),
                    pop(f"block{i}.{tag}.bias"),
                    pop(f"block{i}.{tag}.lora_A"),
                    pop(f"block{i}.{tag}.lora_B"),
                    lora_alpha))
            blocks.append(Block(conv, lins[0], lins[1]))
        head = Linear(Tensor(pop("head.weight"), requires_grad=True),
                      Tensor(pop("head.bias"), requires_grad=True))
        enc = Encoder(config, input_proj, blocks, head, PHASE_ADAPTER)
    else:
        def plain_linear(prefix):
            return Linear(Tensor(pop(f"{prefix}.weight"), requires_grad=True),
                          Tensor(pop(f"{prefix}.bias"), requires_grad=True))

        input_proj = plain_linear("input_proj")
        blocks = []
        for i in range(n_blocks):
            conv = Tensor(pop(f"block{i}.conv"), requires_grad=True)
            blocks.append(Block(conv, plain_linear(f"block{i}.lin1"),
                                plain_linear(f"block{i}.lin2")))
        enc = Encoder(config, input_proj, blocks, plain_linear("head"), PHASE_PLAIN)

    extras = {name: val for name, val in table.items()
              if name not in consumed and not name.startswith(_META_PREFIX)}
    return enc, extras


def load_model(path: str) -> tuple[Encoder, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return encoder_from_checkpoint(fh.read())
