"""Corpus construction and the DQL1 on-disk format.

A corpus stores clean waveforms plus per-utterance noise seeds, never
pre-mixed audio, so one file serves any SNR sweep.  Every utterance derives
its own random stream from (master_seed, utterance_id), which makes the file
bytes a pure function of the generation config.

DQL1 layout, little endian, no compression:
    magic "DQL1"
    u32 n_train, u32 n_val, u32 n_test
    per utterance, in split order:
        u32 id, u8 split (0 train / 1 val / 2 test),
        u32 U, U bytes of token ids,
        u64 noise_seed,
        u32 sample count, samples as f32
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import audio

MAGIC = b"DQL1"

SPLIT_TRAIN = 0
SPLIT_VAL = 1
SPLIT_TEST = 2
SPLIT_NAMES = ("train", "val", "test")

DEFAULT_SPLITS = (300, 100, 624)
DEFAULT_MIN_TOKENS = 3
DEFAULT_MAX_TOKENS = 8


class CorpusFormatError(ValueError):
    """The bytes are not a well-formed DQL1 corpus."""


@dataclass
class Utterance:
    uid: int
    tokens: list[int]
    clean: np.ndarray
    noise_seed: int
    split: int

    def noisy(self, snr_db: float) -> np.ndarray:
        return audio.mix_at_snr(self.clean, audio.NoiseSpec(snr_db), self.noise_seed)


@dataclass
class Corpus:
    utterances: list[Utterance] = field(default_factory=list)

    def split(self, tag: int) -> list[Utterance]:
        return [u for u in self.utterances if u.split == tag]

    @property
    def counts(self) -> tuple[int, int, int]:
        return (len(self.split(SPLIT_TRAIN)), len(self.split(SPLIT_VAL)),
                len(self.split(SPLIT_TEST)))


@dataclass(frozen=True)
class CorpusConfig:
    n_train: int = DEFAULT_SPLITS[0]
    n_val: int = DEFAULT_SPLITS[1]
    n_test: int = DEFAULT_SPLITS[2]
    min_tokens: int = DEFAULT_MIN_TOKENS
    max_tokens: int = DEFAULT_MAX_TOKENS
    master_seed: int = 1234

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test) <= 0:
            raise ValueError("all split counts must be positive")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ValueError("bad token-length range")


def build_corpus(config: CorpusConfig) -> Corpus:
    """Generate the synthetic corpus; deterministic in the master seed."""
    sizes = (config.n_train, config.n_val, config.n_test)
    utterances = []
    uid = 0
    for split, size in enumerate(sizes):
        for _ in range(size):
            rng = np.random.default_rng([config.master_seed, uid])
            length = int(rng.integers(config.min_tokens, config.max_tokens + 1))
            tokens = [int(t) for t in rng.integers(1, audio.N_TOKENS + 1, size=length)]
            synth_seed = int(rng.integers(0, 2 ** 62))
            noise_seed = int(rng.integers(0, 2 ** 62))
            clean = audio.synthesize_utterance(tokens, synth_seed)
            # round to storage precision now so memory and disk agree exactly
            clean = clean.astype(np.float32).astype(np.float64)
            frames = audio.n_frames(len(clean))
            if frames < 2 * len(tokens) + 1:
                raise AssertionError(
                    f"utterance {uid} infeasible: {frames} frames for U={len(tokens)}")
            utterances.append(Utterance(uid, tokens, clean, noise_seed, split))
            uid += 1
    return Corpus(utterances)


def write_corpus(corpus: Corpus, path: str) -> None:
    n_train, n_val, n_test = corpus.counts
    chunks = [MAGIC, struct.pack("<III", n_train, n_val, n_test)]
    for u in corpus.utterances:
        samples = np.asarray(u.clean, dtype="<f4")
        chunks.append(struct.pack("<IBI", u.uid, u.split, len(u.tokens)))
        chunks.append(bytes(u.tokens))
        chunks.append(struct.pack("<QI", u.noise_seed, samples.size))
        chunks.append(samples.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def read_corpus(path: str) -> Corpus:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CorpusFormatError("bad corpus magic")
    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CorpusFormatError("truncated corpus file")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    n_train, n_val, n_test = take("<III")
    total = n_train + n_val + n_test
    utterances = []
    for _ in range(total):
        uid, split, n_tokens = take("<IBI")
        if split not in (SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST):
            raise CorpusFormatError(f"bad split tag {split}")
        if pos + n_tokens > len(data):
            raise CorpusFormatError("truncated corpus file")
        tokens = list(data[pos:pos + n_tokens])
        pos += n_tokens
        noise_seed, n_samples = take("<QI")
        nbytes = 4 * n_samples
        if pos + nbytes > len(data):
            raise CorpusFormatError("truncated corpus file")
        samples = np.frombuffer(data, dtype="<f4", count=n_samples, offset=pos)
        pos += nbytes
        utterances.append(Utterance(uid, tokens, samples.astype(np.float64),
                                    noise_seed, split))
    if pos != len(data):
        raise CorpusFormatError("trailing bytes after last utterance")
    corpus = Corpus(utterances)
    if corpus.counts != (n_train, n_val, n_test):
        raise CorpusFormatError("split counts disagree with header")
    return corpus
