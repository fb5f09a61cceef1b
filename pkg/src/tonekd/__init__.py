"""Adapter-guided distillation for noisy tone-language CTC recognition.

Self-contained desk-scale pipeline: synthetic tone corpus, float64 autodiff
tensors, CTC with an exhaustive oracle, 4-bit quantized frozen trunks with
trainable low-rank adapters, teacher-student distillation with a latent
trajectory alignment loss, and Table-style evaluation reporting.
"""

__version__ = "0.1.0"
