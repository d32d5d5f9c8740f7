"""Binary tensor blobs and multi-tensor checkpoints.

Blob layout (little-endian)::

    b"DTSR"  magic
    u32      rank
    u64      dims[rank]
    f64      payload, row-major

A checkpoint is a ``.bin`` file of concatenated blobs plus a ``.manifest``
text file with one ``<name> <shape> <byte offset>`` line per tensor, where
shape is written as comma-separated dims (``-`` for a scalar).
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, Mapping, Union

import numpy as np

from ..errors import InvalidArgumentError

MAGIC = b"DTSR"
PathLike = Union[str, Path]


def encode(array) -> bytes:
    a = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    header = MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return header + a.tobytes(order="C")


def decode_from(stream: BinaryIO) -> np.ndarray:
    magic = stream.read(4)
    if magic != MAGIC:
        raise InvalidArgumentError(f"bad tensor blob magic {magic!r}")
    (rank,) = struct.unpack("<I", stream.read(4))
    dims = struct.unpack(f"<{rank}Q", stream.read(8 * rank))
    count = int(np.prod(dims)) if rank else 1
    payload = stream.read(8 * count)
    if len(payload) != 8 * count:
        raise InvalidArgumentError("truncated tensor blob")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)


def decode(data: bytes) -> np.ndarray:
    import io

    return decode_from(io.BytesIO(data))


def save_checkpoint(state: Mapping[str, np.ndarray], path: PathLike) -> tuple[Path, Path]:
    """Write ``<path>.bin`` and ``<path>.manifest``; names are sorted."""
    base = Path(path)
    bin_path = base.with_suffix(".bin")
    manifest_path = base.with_suffix(".manifest")
    lines = []
    offset = 0
    with open(bin_path, "wb") as fh:
        for name in sorted(state):
            if any(ch.isspace() for ch in name):
                raise InvalidArgumentError(f"tensor name contains whitespace: {name!r}")
            blob = encode(state[name])
            fh.write(blob)
            shape = np.shape(state[name])
            dims = ",".join(str(d) for d in shape) if shape else "-"
            lines.append(f"{name} {dims} {offset}\n")
            offset += len(blob)
    manifest_path.write_text("".join(lines), encoding="utf-8")
    return bin_path, manifest_path


def load_checkpoint(path: PathLike) -> dict[str, np.ndarray]:
    base = Path(path)
    bin_path = base.with_suffix(".bin")
    manifest_path = base.with_suffix(".manifest")
    state: dict[str, np.ndarray] = {}
    with open(bin_path, "rb") as fh:
        for line in manifest_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            name, dims, offset = line.split()
            fh.seek(int(offset))
            arr = decode_from(fh)
            expected = () if dims == "-" else tuple(int(d) for d in dims.split(","))
            if arr.shape != expected:
                raise InvalidArgumentError(f"{name}: manifest shape {expected} != blob {arr.shape}")
            state[name] = arr
    return state
