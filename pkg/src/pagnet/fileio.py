"""PTSR tensor files, netpbm images and checkpoint directories.

PTSR layout: ``b"PTSR"``, uint8 version (1), uint8 rank, rank little-endian
uint32 extents, then row-major little-endian float64 values.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PTSR"
VERSION = 1
MANIFEST = "manifest.txt"


class FormatError(ValueError):
    pass


def encode_ptsr(array) -> bytes:
    # asarray keeps rank 0; ascontiguousarray would promote scalars to (1,)
    a = np.asarray(array, dtype="<f8", order="C")
    if a.ndim > 255:
        raise FormatError("rank too large for PTSR")
    head = MAGIC + struct.pack("<BB", VERSION, a.ndim)
    head += struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes()


def decode_ptsr(buf: bytes) -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise FormatError("not a PTSR file")
    version, rank = struct.unpack_from("<BB", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported PTSR version {version}")
    dims = struct.unpack_from(f"<{rank}I", buf, 6)
    offset = 6 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(buf) != offset + 8 * count:
        raise FormatError(f"PTSR payload is {len(buf) - offset} bytes, expected {8 * count}")
    return np.frombuffer(buf, dtype="<f8", offset=offset).reshape(dims).astype(np.float64)


def write_ptsr(path, array) -> None:
    Path(path).write_bytes(encode_ptsr(array))


def read_ptsr(path) -> np.ndarray:
    return decode_ptsr(Path(path).read_bytes())


def write_pgm(path, image) -> None:
    """8-bit binary greyscale (P5)."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM needs a 2-d image")
    img = np.clip(img, 0, 255).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def write_ppm(path, image) -> None:
    """8-bit binary colour (P6) from an H x W x 3 array."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("PPM needs an HxWx3 image")
    img = np.clip(img, 0, 255).astype(np.uint8)
    h, w, _ = img.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + img.tobytes())


def read_pnm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos].decode())
    pos += 1
    kind, w, h = fields[0], int(fields[1]), int(fields[2])
    channels = {"P5": 1, "P6": 3}.get(kind)
    if channels is None:
        raise FormatError(f"unsupported netpbm kind {kind}")
    img = np.frombuffer(data, dtype=np.uint8, offset=pos, count=w * h * channels)
    return img.reshape(h, w) if channels == 1 else img.reshape(h, w, 3)


def ponder_image(ponder: np.ndarray, layer_count: int) -> np.ndarray:
    return np.rint(255.0 * np.asarray(ponder) / layer_count).astype(np.uint8)


def selection_image(selection: np.ndarray) -> np.ndarray:
    """Branch index per pixel scaled by ``floor(255 / (P - 1))``."""
    sel = np.asarray(selection)
    p = sel.shape[0]
    step = 255 // (p - 1) if p > 1 else 0
    return (np.argmax(sel, axis=0) * step).astype(np.uint8)


def save_checkpoint(directory, params: dict, extra_files: dict | None = None) -> None:
    """One PTSR per parameter plus ``manifest.txt`` (``name file dims``)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for name in sorted(params):
        fname = name.replace("/", "__") + ".ptsr"
        arr = np.asarray(params[name], dtype=np.float64)
        write_ptsr(d / fname, arr)
        dims = "x".join(str(n) for n in arr.shape) or "scalar"
        lines.append(f"{name} {fname} {dims}")
    (d / MANIFEST).write_text("\n".join(lines) + "\n")
    for fname, text in (extra_files or {}).items():
        (d / fname).write_text(text)


def read_manifest(directory) -> dict:
    out = {}
    for line in (Path(directory) / MANIFEST).read_text().splitlines():
        if not line.strip():
            continue
        name, fname, dims = line.split()
        shape = () if dims == "scalar" else tuple(int(n) for n in dims.split("x"))
        out[name] = (fname, shape)
    return out


def load_checkpoint(directory) -> dict:
    d = Path(directory)
    params = {}
    for name, (fname, shape) in read_manifest(d).items():
        arr = read_ptsr(d / fname)
        if arr.shape != shape:
            raise FormatError(f"{fname} holds {arr.shape}, manifest says {shape}")
        params[name] = arr
    return params


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
