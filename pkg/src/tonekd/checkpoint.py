"""DQCK checkpoint serialization for plain and quantized tensors.

Layout, little endian:
    magic "DQCK", u16 version (=1), u16 flags
    u32 tensor count
    per tensor:
        u16 name length, UTF-8 name
        u8 kind (0 plain float64, 1 quantized)
        u8 rank, rank * u32 dims
        kind 0: numel * f64 raw values
        kind 1: u32 block_size, u32 n_blocks, n_blocks * f64 scales,
                ceil(numel/2) packed nibble bytes, 16 * f64 codebook levels

Entries are written in caller order, so identical models serialize to
identical bytes.  write -> read -> write is byte-stable.
"""

from __future__ import annotations

import struct

import numpy as np

from .quant import CODEBOOK_SIZE, Codebook, QuantizedTensor

MAGIC = b"DQCK"
VERSION = 1

KIND_PLAIN = 0
KIND_QUANT = 1

FLAG_ADAPTER = 1


class CheckpointError(ValueError):
    """Base class for malformed checkpoint bytes."""


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


Entry = "np.ndarray | QuantizedTensor"


def write_entries(entries: list[tuple[str, object]], flags: int = 0) -> bytes:
    chunks = [MAGIC, struct.pack("<HHI", VERSION, flags, len(entries))]
    for name, value in entries:
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        if isinstance(value, QuantizedTensor):
            dims = value.dims
            chunks.append(struct.pack("<BB", KIND_QUANT, len(dims)))
            chunks.append(struct.pack(f"<{len(dims)}I", *dims))
            chunks.append(struct.pack("<II", value.block_size, value.n_blocks))
            chunks.append(value.scales.astype("<f8").tobytes())
            chunks.append(value.codes.tobytes())
            chunks.append(value.codebook.levels.astype("<f8").tobytes())
        else:
            # accept bare arrays and anything with a .data array (Tensor)
            arr = np.asarray(getattr(value, "data", value), dtype=np.float64)
            dims = arr.shape
            chunks.append(struct.pack("<BB", KIND_PLAIN, len(dims)))
            chunks.append(struct.pack(f"<{len(dims)}I", *dims))
            chunks.append(arr.astype("<f8").tobytes())
    return b"".join(chunks)


def read_entries(data: bytes) -> tuple[int, list[tuple[str, object]]]:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("bad checkpoint magic")
    pos = 4

    def take(size: int) -> bytes:
        nonlocal pos
        if pos + size > len(data):
            raise TruncatedError("checkpoint ends mid-record")
        chunk = data[pos:pos + size]
        pos += size
        return chunk

    version, flags, count = struct.unpack("<HHI", take(8))
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    entries: list[tuple[str, object]] = []
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        kind, rank = struct.unpack("<BB", take(2))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        numel = int(np.prod(dims)) if rank else 1
        if kind == KIND_PLAIN:
            raw = take(8 * numel)
            arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
            entries.append((name, arr))
        elif kind == KIND_QUANT:
            block_size, n_blocks = struct.unpack("<II", take(8))
            scales = np.frombuffer(take(8 * n_blocks), dtype="<f8").astype(np.float64)
            codes = np.frombuffer(take(-(-numel // 2)), dtype=np.uint8).copy()
            levels = np.frombuffer(take(8 * CODEBOOK_SIZE), dtype="<f8")
            qt = QuantizedTensor(dims, codes, scales, block_size,
                                 Codebook(levels.astype(np.float64)))
            entries.append((name, qt))
        else:
            raise CheckpointError(f"unknown tensor kind {kind}")
    if pos != len(data):
        raise CheckpointError("trailing bytes after last tensor")
    return flags, entries


def write_file(path: str, entries, flags: int = 0) -> None:
    with open(path, "wb") as fh:
        fh.write(write_entries(entries, flags))


def read_file(path: str):
    with open(path, "rb") as fh:
        return read_entries(fh.read())
