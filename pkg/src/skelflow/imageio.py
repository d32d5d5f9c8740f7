"""Binary PPM (P6) / PGM (P5) writers and a reader for tests and tooling."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError


def to_uint8(values: np.ndarray, scale: float = 255.0) -> np.ndarray:
    """Round-half-up ``scale * values`` into [0, 255]."""
    q = np.floor(np.asarray(values, dtype=np.float64) * scale + 0.5)
    return np.clip(q, 0, 255).astype(np.uint8)


def write_ppm(path, rgb: np.ndarray) -> None:
    """Write an (H, W, 3) image with values in [0, 1] as 8-bit P6."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise InvalidArgumentError(f"PPM needs (H, W, 3), got {rgb.shape}")
    data = rgb if rgb.dtype == np.uint8 else to_uint8(rgb)
    h, w = data.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def write_pgm(path, gray: np.ndarray) -> None:
    """Write an (H, W) uint8 image as P5."""
    gray = np.asarray(gray)
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise InvalidArgumentError(f"PGM needs a 2D uint8 array, got {gray.shape} {gray.dtype}")
    h, w = gray.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes())


def read_pnm(path) -> np.ndarray:
    """Read a P5/P6 file written by this module."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode("ascii"))
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255 or magic not in ("P5", "P6"):
        raise InvalidArgumentError(f"unsupported PNM header {tokens}")
    ch = 3 if magic == "P6" else 1
    arr = np.frombuffer(raw[pos : pos + w * h * ch], dtype=np.uint8)
    return arr.reshape((h, w, 3) if ch == 3 else (h, w))
