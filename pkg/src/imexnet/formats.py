"""Binary tensor (TNSR) and checkpoint (CKPT) files, and 8-bit PGM export.

All multi-byte integers and payloads are little-endian.  TNSR is always
rank 4; lower-rank parameters are stored with leading unit dimensions and
reshaped on load from the network description.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .config import ConfigError, format_network, parse_network
from .layers import NetworkSpec, param_shapes
from .qtips import FormatError

TNSR_MAGIC = b"TNSR"
TNSR_VERSION = 1
CKPT_MAGIC = b"IMEX"
CKPT_VERSION = 1

_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_TNSR_HEAD = struct.Struct("<4sII4IB")
_CKPT_HEAD = struct.Struct("<4sII")


def _as_rank4(a: np.ndarray) -> np.ndarray:
    if a.ndim > 4:
        raise ValueError(f"TNSR holds rank <= 4, got shape {a.shape}")
    return a.reshape((1,) * (4 - a.ndim) + a.shape)


def tensor_bytes(a: np.ndarray) -> bytes:
    a = np.asarray(a)
    if a.dtype not in _CODES:
        raise ValueError(f"TNSR stores float32 or float64, got {a.dtype}")
    a4 = _as_rank4(a)
    head = _TNSR_HEAD.pack(TNSR_MAGIC, TNSR_VERSION, 4, *a4.shape, _CODES[a.dtype])
    return head + np.ascontiguousarray(a4, dtype=_DTYPES[_CODES[a.dtype]]).tobytes()


def read_tensor_stream(f, source="<stream>") -> np.ndarray:
    raw = f.read(_TNSR_HEAD.size)
    if len(raw) < _TNSR_HEAD.size:
        raise FormatError(f"{source}: truncated header, expected TNSR format")
    magic, version, rank, b, c, h, w, code = _TNSR_HEAD.unpack(raw)
    if magic != TNSR_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected TNSR format")
    if version != TNSR_VERSION:
        raise FormatError(f"{source}: TNSR version {version} unsupported (expected {TNSR_VERSION})")
    if rank != 4 or code not in _DTYPES:
        raise FormatError(f"{source}: TNSR rank {rank} / dtype code {code} unsupported")
    dt = _DTYPES[code]
    n = b * c * h * w
    payload = f.read(n * dt.itemsize)
    if len(payload) != n * dt.itemsize:
        raise FormatError(f"{source}: truncated TNSR payload")
    return np.frombuffer(payload, dtype=dt).astype(dt.newbyteorder("=")).reshape(b, c, h, w)


def write_tensor(a: np.ndarray, path) -> None:
    Path(path).write_bytes(tensor_bytes(a))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        out = read_tensor_stream(f, path)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after TNSR payload")
    return out


def checkpoint_bytes(net: NetworkSpec, params: dict) -> bytes:
    text = format_network(net).encode("utf-8")
    parts = [_CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, len(text)), text]
    for name, shape in param_shapes(net).items():
        a = np.asarray(params[name])
        if a.shape != shape:
            raise ValueError(f"{name}: expected shape {shape}, got {a.shape}")
        parts.append(tensor_bytes(a))
    return b"".join(parts)


def write_checkpoint(net: NetworkSpec, params: dict, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(net, params))


def read_checkpoint(path) -> tuple:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEAD.size:
        raise FormatError(f"{path}: truncated header, expected CKPT format")
    magic, version, n = _CKPT_HEAD.unpack(raw[:_CKPT_HEAD.size])
    if magic != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected CKPT format (magic 'IMEX')")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: CKPT version {version} unsupported (expected {CKPT_VERSION})")
    f = io.BytesIO(raw[_CKPT_HEAD.size:])
    try:
        net = parse_network(f.read(n).decode("utf-8"), f"{path} (embedded config)")
    except (UnicodeDecodeError, ConfigError) as exc:
        raise FormatError(f"{path}: bad embedded config: {exc}") from None
    params = {}
    for name, shape in param_shapes(net).items():
        a = read_tensor_stream(f, f"{path} [{name}]")
        if a.size != int(np.prod(shape)):
            raise FormatError(f"{path}: {name} has {a.size} values, expected shape {shape}")
        params[name] = a.reshape(shape)
    if f.read(1):
        raise FormatError(f"{path}: trailing bytes after last parameter")
    return net, params


def write_pgm(image: np.ndarray, path) -> tuple:
    """Write an 8-bit binary (P5) PGM, min-max normalized; returns ``(lo, hi)``.

    A constant image maps to 0 everywhere.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {img.shape}")
    lo, hi = float(img.min()), float(img.max())
    scaled = np.zeros(img.shape) if hi == lo else (img - lo) / (hi - lo)
    data = np.clip(np.rint(scaled * 255), 0, 255).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())
    return lo, hi


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise FormatError(f"{path}: expected binary PGM (P5)")
    w, h, maxval = (int(x) for x in fields[1:])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM supported")
    return np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8).reshape(h, w)
