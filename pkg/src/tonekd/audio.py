"""Synthetic tone-language waveforms, SNR-controlled noise mixing, features.

Each token id 1..8 maps to a pure tone at 400 + 250*k Hz.  An utterance is
the concatenation of one tone segment per token, each lasting a seeded
uniform-random 8..16 hops of samples with short linear fades at the segment
edges.  Features are log energies in 16 DFT bins (centers 250..4000 Hz)
over Hann-windowed 200-sample frames hopped by 80 samples, computed by
direct correlation against cached cos/sin templates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 8000
WINDOW = 200
HOP = 80
N_BINS = 16
BIN_SPACING_HZ = 250.0

N_TOKENS = 8
TONE_BASE_HZ = 400.0
TONE_STEP_HZ = 250.0
TONE_AMPLITUDE = 0.8
MIN_TOKEN_FRAMES = 8
MAX_TOKEN_FRAMES = 16
FADE_SAMPLES = 40

ENERGY_FLOOR = 1e-6


@dataclass(frozen=True)
class NoiseSpec:
    snr_db: float
    kind: str = "white-gaussian"

    def __post_init__(self):
        if self.kind != "white-gaussian":
            raise ValueError(f"unsupported noise kind '{self.kind}'")


def token_frequency(token: int) -> float:
    if not 1 <= token <= N_TOKENS:
        raise ValueError(f"token id {token} outside 1..{N_TOKENS}")
    return TONE_BASE_HZ + TONE_STEP_HZ * token


def synthesize_utterance(y, seed: int) -> np.ndarray:
    """Concatenated seeded tone segments; bit-identical for fixed (y, seed)."""
    tokens = [int(t) for t in y]
    if not tokens:
        raise ValueError("empty transcript")
    rng = np.random.default_rng(seed)
    segments = []
    for tok in tokens:
        freq = token_frequency(tok)
        n = int(rng.integers(MIN_TOKEN_FRAMES, MAX_TOKEN_FRAMES + 1)) * HOP
        t_idx = np.arange(n, dtype=np.float64)
        seg = TONE_AMPLITUDE * np.sin(2.0 * np.pi * freq * t_idx / SAMPLE_RATE)
        ramp = np.minimum(1.0, np.arange(1, n + 1, dtype=np.float64) / FADE_SAMPLES)
        seg *= ramp * ramp[::-1]
        segments.append(seg)
    return np.concatenate(segments)


def mix_at_snr(clean: np.ndarray, spec: NoiseSpec, seed: int) -> np.ndarray:
    """clean + g * noise with g chosen from empirical powers, exact in dB."""
    clean = np.asarray(clean, dtype=np.float64)
    p_clean = float(np.mean(clean * clean))
    if p_clean == 0.0:
        raise ValueError("cannot mix noise into a silent waveform")
    noise = np.random.default_rng(seed).standard_normal(clean.shape[0])
    p_noise = float(np.mean(noise * noise))
    gain = np.sqrt(p_clean / (p_noise * 10.0 ** (spec.snr_db / 10.0)))
    return clean + gain * noise


def measured_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    residual = noisy - clean
    return 10.0 * np.log10(np.sum(clean * clean) / np.sum(residual * residual))


def n_frames(n_samples: int) -> int:
    if n_samples < WINDOW:
        raise ValueError(f"waveform shorter than one {WINDOW}-sample window")
    return 1 + (n_samples - WINDOW) // HOP


_BASIS_COS: np.ndarray | None = None
_BASIS_SIN: np.ndarray | None = None


def _bases() -> tuple[np.ndarray, np.ndarray]:
    global _BASIS_COS, _BASIS_SIN
    if _BASIS_COS is None:
        window = np.hanning(WINDOW)
        t_idx = np.arange(WINDOW, dtype=np.float64)
        freqs = BIN_SPACING_HZ * np.arange(1, N_BINS + 1)
        phase = 2.0 * np.pi * np.outer(t_idx, freqs) / SAMPLE_RATE
        _BASIS_COS = np.cos(phase) * window[:, None]
        _BASIS_SIN = np.sin(phase) * window[:, None]
    return _BASIS_COS, _BASIS_SIN


def featurize(waveform: np.ndarray) -> np.ndarray:
    """Log DFT-bin energies, shape (T, 16), T = 1 + (len - 200) // 80."""
    w = np.asarray(waveform, dtype=np.float64)
    count = n_frames(w.shape[0])
    offsets = HOP * np.arange(count)
    frames = np.lib.stride_tricks.sliding_window_view(w, WINDOW)[offsets]
    cos_b, sin_b = _bases()
    energy = (frames @ cos_b) ** 2 + (frames @ sin_b) ** 2
    return np.log(energy + ENERGY_FLOOR)
