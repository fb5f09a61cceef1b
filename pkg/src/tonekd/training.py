"""Three-stage training pipeline with a deterministic Adam optimizer.

Stage "teacher" and "student_base" train plain encoders with CTC on clean
features.  Stage "distill" converts the student base to the frozen quantized
adapter form and trains adapters, head and latent projection on noisy
features against the joint objective (CTC + lambda * KL + mu * coalescence).
The teacher is strictly frozen; because its inputs are fixed per utterance,
its logits and latents are computed once per stage up front.

Everything is seeded: weight init, adapter init, and per-epoch shuffles each
draw from their own (seed, stream) generator, so a fixed config reproduces
checkpoints bit for bit.
"""

from __future__ import annotations

import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import audio, evaluation, models
from .corpus import SPLIT_TRAIN, SPLIT_VAL, Corpus, read_corpus
from .ctc import ctc_loss, greedy_decode, is_feasible
from .losses import (CoalescenceConfig, LossBreakdown, LossWeights,
                     coalescence_loss, kl_distill, total_loss)
from .quant import Codebook
from .tensor import NumericsError, Tensor, no_grad

STAGE_TEACHER = "teacher"
STAGE_STUDENT_BASE = "student_base"
STAGE_DISTILL = "distill"

STREAM_SHUFFLE = 3

_STAGE_EPOCHS = {STAGE_TEACHER: 30, STAGE_STUDENT_BASE: 20, STAGE_DISTILL: 100}
_STAGE_LR = {STAGE_TEACHER: 1e-3, STAGE_STUDENT_BASE: 1e-3, STAGE_DISTILL: 1e-2}


class PrerequisiteError(FileNotFoundError):
    """A stage is missing an input it depends on (corpus or checkpoint)."""


class TrainingDiverged(ArithmeticError):
    """Loss went non-finite; message carries epoch and batch ids."""


class Adam:
    """Standard Adam with bias correction; eps is added after the sqrt."""

    def __init__(self, params: list[tuple[str, Tensor]], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for _, p in params]
        self.v = [np.zeros_like(p.data) for _, p in params]

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, (name, p) in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericsError(f"non-finite gradient for parameter '{name}'")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()


@dataclass
class TrainConfig:
    stage: str
    corpus_path: str
    out_dir: str
    seed: int = 0
    epochs: int = -1
    batch_size: int = 8
    learning_rate: float = -1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    coalescence: CoalescenceConfig = field(default_factory=CoalescenceConfig)
    kl_direction: str = "student_first"
    snr_db: float = 5.0
    teacher_input: str = "clean"
    teacher_ckpt: str = ""
    student_ckpt: str = ""
    teacher_cfg: models.EncoderConfig = field(default_factory=models.teacher_config)
    student_cfg: models.EncoderConfig = field(default_factory=models.student_config)
    lora_r: int = 2
    lora_alpha: float = 16.0
    block_size: int = 64
    codebook: str = "linear"

    def __post_init__(self):
        if self.stage not in _STAGE_EPOCHS:
            raise ValueError(f"unknown stage '{self.stage}'")
        if self.epochs < 0:
            self.epochs = _STAGE_EPOCHS[self.stage]
        if self.learning_rate < 0:
            self.learning_rate = _STAGE_LR[self.stage]

    @staticmethod
    def from_dict(cfg: dict) -> "TrainConfig":
        kernel = cfg["model.kernel_size"]
        return TrainConfig(
            stage=cfg["stage"],
            corpus_path=cfg["corpus"],
            out_dir=cfg["out_dir"],
            seed=cfg["seed"],
            epochs=cfg["epochs"],
            batch_size=cfg["batch_size"],
            learning_rate=cfg["learning_rate"],
            adam_beta1=cfg["adam_beta1"],
            adam_beta2=cfg["adam_beta2"],
            adam_eps=cfg["adam_eps"],
            weights=LossWeights(lam=cfg["lambda"], mu=cfg["mu"], temperature=cfg["tau"]),
            coalescence=CoalescenceConfig(alpha=cfg["alpha"],
                                          mode=cfg["coalescence_mode"],
                                          normalized=cfg["coalescence_normalized"]),
            kl_direction=cfg["kl_direction"],
            snr_db=cfg["snr_db"],
            teacher_input=cfg["teacher_input"],
            teacher_ckpt=cfg["teacher_ckpt"],
            student_ckpt=cfg["student_ckpt"],
            teacher_cfg=models.EncoderConfig(n_blocks=cfg["teacher.n_blocks"],
                                             d_model=cfg["teacher.d_model"],
                                             kernel_size=kernel),
            student_cfg=models.EncoderConfig(n_blocks=cfg["student.n_blocks"],
                                             d_model=cfg["student.d_model"],
                                             kernel_size=kernel),
            lora_r=cfg["lora.r"],
            lora_alpha=cfg["lora.alpha"],
            block_size=cfg["quant.block_size"],
            codebook=cfg["quant.codebook"],
        )


@dataclass
class EpochRecord:
    epoch: int
    l_ctc: float
    l_distill: float
    l_coal: float
    l_total: float
    val_ter: float
    seconds: float


@dataclass
class StageResult:
    stage: str
    checkpoint_path: str
    trainlog_path: str
    records: list[EpochRecord]
    best_val_ter: float
    skipped_infeasible: int


def write_trainlog(path: str, records: list[EpochRecord]) -> None:
    lines = []
    for r in records:
        lines.append("\t".join([
            str(r.epoch), repr(float(r.l_ctc)), repr(float(r.l_distill)),
            repr(float(r.l_coal)), repr(float(r.l_total)),
            repr(float(r.val_ter)), f"{r.seconds:.3f}"]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trainlog(path: str) -> list[EpochRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            cells = line.rstrip("\n").split("\t")
            records.append(EpochRecord(int(cells[0]), *[float(c) for c in cells[1:]]))
    return records


@dataclass
class _Example:
    tokens: list[int]
    feats: np.ndarray
    clean_feats: np.ndarray | None = None
    teacher_logits: np.ndarray | None = None
    teacher_latents: np.ndarray | None = None


def _prepare_clean(utterances) -> tuple[list[_Example], int]:
    examples, skipped = [], 0
    for u in utterances:
        feats = audio.featurize(u.clean)
        if not is_feasible(u.tokens, feats.shape[0]):
            skipped += 1
            continue
        examples.append(_Example(u.tokens, feats))
    return examples, skipped


def _prepare_noisy(utterances, snr_db: float,
                   keep_clean: bool = False) -> tuple[list[_Example], int]:
    examples, skipped = [], 0
    for u in utterances:
        feats = audio.featurize(u.noisy(snr_db))
        if not is_feasible(u.tokens, feats.shape[0]):
            skipped += 1
            continue
        clean_feats = audio.featurize(u.clean) if keep_clean else None
        examples.append(_Example(u.tokens, feats, clean_feats))
    return examples, skipped


def _token_error_rate(enc: models.Encoder, examples: list[_Example]) -> float:
    errors = 0
    length = 0
    with no_grad():
        for ex in examples:
            logits, _ = enc.forward(ex.feats)
            hyp = greedy_decode(logits.data)
            errors += evaluation.edit_distance(ex.tokens, hyp)
            length += len(ex.tokens)
    return errors / length


def _batches(n: int, batch_size: int, seed: int, epoch: int):
    order = np.random.default_rng([seed, STREAM_SHUFFLE, epoch]).permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def run_stage(cfg: TrainConfig) -> StageResult:
    """Train one stage, write best-validation checkpoint plus train log."""
    try:
        corpus = read_corpus(cfg.corpus_path)
    except FileNotFoundError as exc:
        raise PrerequisiteError(f"corpus not found: {cfg.corpus_path}") from exc

    os.makedirs(cfg.out_dir, exist_ok=True)
    if cfg.stage == STAGE_DISTILL:
        return _run_distill(cfg, corpus)
    return _run_ctc_stage(cfg, corpus)


def _run_ctc_stage(cfg: TrainConfig, corpus: Corpus) -> StageResult:
    enc_cfg = cfg.teacher_cfg if cfg.stage == STAGE_TEACHER else cfg.student_cfg
    enc = models.Encoder.init(enc_cfg, cfg.seed)
    train, skipped_a = _prepare_clean(corpus.split(SPLIT_TRAIN))
    val, skipped_b = _prepare_clean(corpus.split(SPLIT_VAL))
    skipped = skipped_a + skipped_b
    if skipped:
        print(f"warning: skipped {skipped} CTC-infeasible utterances",
              file=sys.stderr)
    optimizer = Adam(enc.trainable_parameters(), cfg.learning_rate,
                     cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    records: list[EpochRecord] = []
    best_ter = math.inf
    best_blob = None
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        ctc_sum = 0.0
        for batch in _batches(len(train), cfg.batch_size, cfg.seed, epoch):
            optimizer.zero_grad()
            try:
                losses = []
                for idx in batch:
                    ex = train[idx]
                    logits, _ = enc.forward(ex.feats)
                    losses.append(ctc_loss(logits.log_softmax(), ex.tokens))
                _mean(losses).backward()
                optimizer.step()
            except NumericsError as exc:
                raise TrainingDiverged(
                    f"epoch {epoch}, batch starting at {batch[0]}: {exc}") from exc
            ctc_sum += sum(l.item() for l in losses)
        l_ctc = ctc_sum / len(train)
        val_ter = _token_error_rate(enc, val)
        records.append(EpochRecord(epoch, l_ctc, 0.0, 0.0, l_ctc, val_ter,
                                   time.perf_counter() - started))
        if val_ter < best_ter:
            best_ter = val_ter
            best_blob = models.encoder_to_checkpoint(enc)

    ckpt_path = os.path.join(cfg.out_dir, f"{cfg.stage}.ckpt")
    log_path = os.path.join(cfg.out_dir, f"{cfg.stage}.trainlog.tsv")
    with open(ckpt_path, "wb") as fh:
        fh.write(best_blob)
    write_trainlog(log_path, records)
    return StageResult(cfg.stage, ckpt_path, log_path, records, best_ter, skipped)


def _run_distill(cfg: TrainConfig, corpus: Corpus) -> StageResult:
    teacher_path = cfg.teacher_ckpt or os.path.join(cfg.out_dir, "teacher.ckpt")
    student_path = cfg.student_ckpt or os.path.join(cfg.out_dir, "student_base.ckpt")
    for role, path in (("teacher", teacher_path), ("student_base", student_path)):
        if not os.path.exists(path):
            raise PrerequisiteError(
                f"distill stage needs the {role} checkpoint, missing: {path}")
    teacher, _ = models.load_model(teacher_path)
    student_base, _ = models.load_model(student_path)

    student = models.freeze_and_quantize(
        student_base, cfg.lora_r, cfg.lora_alpha, cfg.block_size,
        Codebook.by_name(cfg.codebook), cfg.seed)
    projection = models.make_latent_projection(
        teacher.config.d_model, student.config.d_model, cfg.seed)
    frozen_before = student.frozen_digest()

    want_clean = cfg.teacher_input == "clean"
    train, skipped_a = _prepare_noisy(corpus.split(SPLIT_TRAIN), cfg.snr_db, want_clean)
    val, skipped_b = _prepare_noisy(corpus.split(SPLIT_VAL), cfg.snr_db, want_clean)
    skipped = skipped_a + skipped_b
    if skipped:
        print(f"warning: skipped {skipped} CTC-infeasible utterances",
              file=sys.stderr)

    # frozen teacher + fixed per-utterance noise: precompute targets once
    with no_grad():
        for ex in train + val:
            t_in = ex.clean_feats if want_clean else ex.feats
            t_logits, t_latents = teacher.forward(t_in)
            ex.teacher_logits = t_logits.data
            ex.teacher_latents = t_latents.data

    params = student.trainable_parameters() + [("latent_projection", projection)]
    optimizer = Adam(params, cfg.learning_rate,
                     cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    records: list[EpochRecord] = []
    best_ter = math.inf
    best_blob = None
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        sums = np.zeros(3)
        for batch in _batches(len(train), cfg.batch_size, cfg.seed, epoch):
            optimizer.zero_grad()
            try:
                totals = []
                batch_sums = np.zeros(3)
                for idx in batch:
                    ex = train[idx]
                    total, breakdown = _distill_losses(student, projection, ex, cfg)
                    totals.append(total)
                    batch_sums += (breakdown.l_ctc, breakdown.l_distill,
                                   breakdown.l_coal)
                _mean(totals).backward()
                optimizer.step()
            except NumericsError as exc:
                raise TrainingDiverged(
                    f"epoch {epoch}, batch starting at {batch[0]}: {exc}") from exc
            sums += batch_sums
        l_ctc, l_kl, l_coal = sums / len(train)
        l_total = l_ctc + cfg.weights.lam * l_kl + cfg.weights.mu * l_coal
        val_ter = _token_error_rate(student, val)
        records.append(EpochRecord(epoch, l_ctc, l_kl, l_coal, l_total, val_ter,
                                   time.perf_counter() - started))
        if val_ter < best_ter:
            best_ter = val_ter
            best_blob = models.encoder_to_checkpoint(
                student, extra={"latent_projection": projection.data})

    if student.frozen_digest() != frozen_before:
        raise RuntimeError("frozen base changed during adapter training")

    ckpt_path = os.path.join(cfg.out_dir, "distill.ckpt")
    log_path = os.path.join(cfg.out_dir, "distill.trainlog.tsv")
    with open(ckpt_path, "wb") as fh:
        fh.write(best_blob)
    write_trainlog(log_path, records)
    return StageResult(cfg.stage, ckpt_path, log_path, records, best_ter, skipped)


def _distill_losses(student: models.Encoder, projection: Tensor, ex: _Example,
                    cfg: TrainConfig) -> tuple[Tensor, LossBreakdown]:
    s_logits, s_latents = student.forward(ex.feats)
    l_ctc = ctc_loss(s_logits.log_softmax(), ex.tokens)
    t_logits = Tensor(ex.teacher_logits)
    t_latents = Tensor(ex.teacher_latents)
    if cfg.weights.lam != 0.0:
        l_kl = kl_distill(s_logits, t_logits, cfg.weights.temperature,
                          cfg.kl_direction)
    else:
        with no_grad():
            l_kl = kl_distill(s_logits, t_logits, cfg.weights.temperature,
                              cfg.kl_direction)
    if cfg.weights.mu != 0.0:
        projected = models.project_latents(projection, s_latents)
        l_coal = coalescence_loss(projected, t_latents, cfg.coalescence)
    else:
        with no_grad():
            projected = models.project_latents(projection, s_latents)
            l_coal = coalescence_loss(projected, t_latents, cfg.coalescence)
    return total_loss(l_ctc, l_kl, l_coal, cfg.weights)


def _mean(parts: list[Tensor]) -> Tensor:
    acc = parts[0]
    for part in parts[1:]:
        acc = acc + part
    return acc.mul_scalar(1.0 / len(parts))
