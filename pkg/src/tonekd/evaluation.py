"""Metrics and reporting: token WER, real-time factor, memory accounting.

WER is a plain Levenshtein edit distance over toy tokens divided by the
reference length, so values above 1.0 are possible when the hypothesis
inserts tokens.  Memory is deterministic parameter accounting rather than a
process peak: quantized tensors cost numel/2 code bytes plus 8 bytes per
block scale plus a 128-byte codebook; plain tensors cost 8 bytes per
element.  The report renders the fixed six-column comparison table.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import audio
from .corpus import SPLIT_TEST, Corpus
from .ctc import greedy_decode
from .quant import QuantizedLinear, QuantizedTensor
from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class EvalMetrics:
    wer_clean: float
    wer_noisy: float
    rtf: float
    param_memory_mb: float
    trainable_params: int
    total_params: int


def edit_distance(ref, hyp) -> int:
    """Levenshtein distance with the classic two-row dynamic program."""
    ref, hyp = list(ref), list(hyp)
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(prev[j] + 1,          # deletion
                         cur[j - 1] + 1,       # insertion
                         prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def wer(ref, hyp) -> float:
    ref = list(ref)
    if not ref:
        raise ValueError("WER needs a non-empty reference")
    return edit_distance(ref, hyp) / len(ref)


def corpus_ter(pairs) -> float:
    """Corpus-level rate: total edit distance over total reference length."""
    errors = 0
    length = 0
    for ref, hyp in pairs:
        errors += edit_distance(ref, hyp)
        length += len(ref)
    if length == 0:
        raise ValueError("no reference tokens")
    return errors / length


# ---------------------------------------------------------------------------
# timing


def compute_rtf(processing_seconds: float, audio_seconds: float) -> float:
    if audio_seconds <= 0:
        raise ValueError("zero audio duration")
    return processing_seconds / audio_seconds


def measure_rtf(encoder, waveforms, repetitions: int = 3) -> float:
    """Median over repetitions of (featurize+forward+decode time) / audio time."""
    if len(waveforms) < 10:
        raise ValueError("RTF measurement needs at least 10 utterances")
    if repetitions < 1:
        raise ValueError("repetitions must be positive")
    audio_seconds = sum(len(w) for w in waveforms) / audio.SAMPLE_RATE

    def one_pass() -> float:
        started = time.perf_counter()
        with no_grad():
            for w in waveforms:
                logits, _ = encoder.forward(audio.featurize(w))
                greedy_decode(logits.data)
        return time.perf_counter() - started

    one_pass()  # warm-up, excluded from timing
    timings = [one_pass() for _ in range(repetitions)]
    return compute_rtf(float(np.median(timings)), audio_seconds)


# ---------------------------------------------------------------------------
# memory accounting

CODEBOOK_BYTES = 128
SCALE_BYTES = 8
PLAIN_BYTES = 8


def param_memory_report(entries) -> tuple[int, dict[str, int]]:
    """(total bytes, breakdown by kind) for a model's weight entries."""
    breakdown = {"plain": 0, "quantized": 0}

    def quant_cost(qt: QuantizedTensor) -> int:
        return qt.numel // 2 + qt.numel % 2 \
            + qt.n_blocks * SCALE_BYTES + CODEBOOK_BYTES

    for entry in entries:
        if isinstance(entry, QuantizedLinear):
            breakdown["quantized"] += quant_cost(entry.base)
            breakdown["plain"] += PLAIN_BYTES * (
                entry.bias.numel + entry.lora_A.numel + entry.lora_B.numel)
        elif isinstance(entry, QuantizedTensor):
            breakdown["quantized"] += quant_cost(entry)
        elif isinstance(entry, Tensor):
            breakdown["plain"] += PLAIN_BYTES * entry.numel
        else:
            raise TypeError(f"cannot account for {type(entry).__name__}")
    return sum(breakdown.values()), breakdown


def param_counts(entries) -> tuple[int, int]:
    """(total elements, trainable elements)."""
    total = 0
    trainable = 0
    for entry in entries:
        if isinstance(entry, QuantizedLinear):
            total += entry.base.numel + entry.bias.numel + entry.trainable_count
            trainable += entry.trainable_count
        elif isinstance(entry, QuantizedTensor):
            total += entry.numel
        elif isinstance(entry, Tensor):
            total += entry.numel
            if entry.requires_grad:
                trainable += entry.numel
        else:
            raise TypeError(f"cannot account for {type(entry).__name__}")
    return total, trainable


# ---------------------------------------------------------------------------
# model-level evaluation


def evaluate_model(encoder, corpus: Corpus, snr_db: float,
                   repetitions: int = 3) -> EvalMetrics:
    test = corpus.split(SPLIT_TEST)
    clean_pairs = []
    noisy_pairs = []
    with no_grad():
        for u in test:
            logits, _ = encoder.forward(audio.featurize(u.clean))
            clean_pairs.append((u.tokens, greedy_decode(logits.data)))
            logits, _ = encoder.forward(audio.featurize(u.noisy(snr_db)))
            noisy_pairs.append((u.tokens, greedy_decode(logits.data)))
    rtf = measure_rtf(encoder, [u.clean for u in test[:32]], repetitions)
    total_bytes, _ = param_memory_report(encoder.weight_entries())
    total, trainable = param_counts(encoder.weight_entries())
    return EvalMetrics(
        wer_clean=corpus_ter(clean_pairs),
        wer_noisy=corpus_ter(noisy_pairs),
        rtf=rtf,
        param_memory_mb=total_bytes / 1e6,
        trainable_params=trainable,
        total_params=total,
    )


# ---------------------------------------------------------------------------
# report table

_COLUMNS = ("Model", "Params (M)", "WER (Clean)", "WER (Noisy)", "RTF",
            "Memory (MB)")


def _format_row(row) -> tuple[str, ...]:
    name, params, wer_clean, wer_noisy, rtf, memory_mb = row
    params_text = params if isinstance(params, str) else f"{params:.3f}"
    return (str(name), params_text,
            f"{100.0 * wer_clean:.2f}%", f"{100.0 * wer_noisy:.2f}%",
            f"{rtf:.3f}", f"{memory_mb:.1f}")


def emit_report(rows) -> str:
    """Fixed-width comparison table; WER rendered as two-decimal percentages."""
    if not rows:
        raise ValueError("report needs at least one row")
    formatted = [_format_row(row) for row in rows]
    widths = [max(len(col), *(len(cells[i]) for cells in formatted))
              for i, col in enumerate(_COLUMNS)]
    header = " | ".join(col.ljust(w) for col, w in zip(_COLUMNS, widths))
    rule = "-+-".join("-" * w for w in widths)
    lines = [header, rule]
    for cells in formatted:
        lines.append(" | ".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines) + "\n"


def parse_report(text: str):
    """Inverse of emit_report at display precision."""
    lines = [line for line in text.splitlines() if line.strip()]
    if len(lines) < 3:
        raise ValueError("not a report table")
    rows = []
    for line in lines[2:]:
        cells = [c.strip() for c in line.split(" | ")]
        name, params, wc, wn, rtf, mem = cells
        rows.append((name, params,
                     float(wc.rstrip("%")) / 100.0, float(wn.rstrip("%")) / 100.0,
                     float(rtf), float(mem)))
    return rows


# ---------------------------------------------------------------------------
# machine-readable metrics files (key<TAB>value per line)


def write_metrics(path: str, values: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in values.items():
            fh.write(f"{key}\t{value}\n")


def read_metrics(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            key, value = line.rstrip("\n").split("\t", 1)
            out[key] = value
    return out
