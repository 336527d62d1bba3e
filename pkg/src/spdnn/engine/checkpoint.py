"""Checkpoint file format, magic "SPDW1".

Layout after the 5-byte magic: u32 entry count, then per entry
u16 key length + UTF-8 key, u8 dtype code (0 = f32, 1 = f64), u8 ndim,
ndim x u32 dims, then the raw little-endian values in C order.  Entries are
sorted by key.  Trainable parameters and batch-norm running statistics are
stored; velocity buffers are not.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SPDW1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(Exception):
    pass


class CheckpointMismatchError(CheckpointError):
    """Checkpoint disagrees with the network spec; names the first offender."""


def checkpoint_bytes(store) -> bytes:
    entries = dict(store.params)
    entries.update(store.running)
    chunks = [MAGIC, struct.pack("<I", len(entries))]
    for key in sorted(entries):
        arr = np.ascontiguousarray(entries[key])
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {key}")
        enc = key.encode("utf-8")
        chunks.append(struct.pack("<H", len(enc)))
        chunks.append(enc)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype(_DTYPES[code], copy=False).tobytes())
    return b"".join(chunks)


def save_checkpoint(path, store) -> None:
    data = checkpoint_bytes(store)
    from ..fileio import write_bytes_atomic

    write_bytes_atomic(path, data)


def _read(buf, offset, n, what):
    if offset + n > len(buf):
        raise CheckpointError(f"truncated checkpoint while reading {what}: "
                              f"need {offset + n} bytes, have {len(buf)}")
    return buf[offset : offset + n], offset + n


def read_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    """Decode checkpoint bytes into a key -> array mapping."""
    if data[:5] != MAGIC:
        raise CheckpointError(f"bad magic {data[:5]!r}, expected {MAGIC!r}")
    off = 5
    raw, off = _read(data, off, 4, "entry count")
    (count,) = struct.unpack("<I", raw)
    out = {}
    for _ in range(count):
        raw, off = _read(data, off, 2, "key length")
        (klen,) = struct.unpack("<H", raw)
        raw, off = _read(data, off, klen, "key")
        key = raw.decode("utf-8")
        raw, off = _read(data, off, 2, "dtype/ndim")
        code, ndim = struct.unpack("<BB", raw)
        if code not in _DTYPES:
            raise CheckpointError(f"unknown dtype code {code} for {key}")
        raw, off = _read(data, off, 4 * ndim, "dims")
        shape = struct.unpack(f"<{ndim}I", raw)
        dtype = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        raw, off = _read(data, off, nbytes, f"data of {key}")
        out[key] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    if off != len(data):
        raise CheckpointError(f"trailing bytes: expected {off}, file has {len(data)}")
    return out


def load_checkpoint(path, spec, input_channels=None):
    """Load a checkpoint and bind it to a network spec.

    Raises CheckpointMismatchError naming the first offending key when the
    stored tensors do not match the spec's expected shapes.
    """
    from .network import ParameterStore

    with open(path, "rb") as fh:
        arrays = read_checkpoint(fh.read())
    trainable, running = ParameterStore.shape_table(spec, input_channels)
    expected = dict(trainable)
    expected.update(running)
    for key in sorted(expected):
        if key not in arrays:
            raise CheckpointMismatchError(f"checkpoint is missing {key}")
        if arrays[key].shape != expected[key]:
            raise CheckpointMismatchError(
                f"shape mismatch for {key}: checkpoint {arrays[key].shape}, "
                f"network expects {expected[key]}"
            )
    for key in sorted(arrays):
        if key not in expected:
            raise CheckpointMismatchError(f"checkpoint has unexpected entry {key}")
    dtype = arrays[next(iter(sorted(expected)))].dtype if expected else np.float32
    params = {k: arrays[k] for k in trainable}
    running_vals = {k: arrays[k] for k in running}
    return ParameterStore(params, running_vals, dtype)
