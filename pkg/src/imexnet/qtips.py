"""Q-tips: synthetic rods whose class depends on the markers at both ends.

Each image holds one gray rod with a white or black square at each end.
The class is the unordered marker pair (WW, WB, BB), so labelling a pixel
in the middle of the rod needs information from both ends.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import Rng

BACKGROUND, WW, WB, BB = 0, 1, 2, 3
N_CLASSES = 4
CLASS_NAMES = ("background", "white-white", "white-black", "black-black")

INTENSITY_BACKGROUND = 0.5
INTENSITY_MIDSECTION = 0.75
INTENSITY_WHITE = 1.0
INTENSITY_BLACK = 0.0

MAX_PLACEMENT_TRIES = 1000

QTDS_MAGIC = b"QTDS"
QTDS_VERSION = 1


class FormatError(ValueError):
    """A file does not match the expected binary format."""


@dataclass(frozen=True)
class ObjectSpec:
    length: int
    width: int
    angle: int
    center: tuple
    left_marker: str
    right_marker: str

    def __post_init__(self):
        for m in (self.left_marker, self.right_marker):
            if m not in ("white", "black"):
                raise ValueError(f"marker must be 'white' or 'black', got {m!r}")
        if not self.length > 2 * self.width:
            raise ValueError("markers overlap: length must exceed twice the width")

    @property
    def class_id(self) -> int:
        whites = (self.left_marker == "white") + (self.right_marker == "white")
        return {2: WW, 1: WB, 0: BB}[whites]


@dataclass
class Sample:
    image: np.ndarray   # (1, 1, s, s) float32 in [0, 1]
    labels: np.ndarray  # (s, s) uint8


@dataclass
class Dataset:
    samples: list
    size: int
    seed: int
    n_classes: int = N_CLASSES
    specs: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def images(self, idx=None) -> np.ndarray:
        sel = self.samples if idx is None else [self.samples[i] for i in idx]
        return np.concatenate([s.image for s in sel], axis=0)

    def labels(self, idx=None) -> np.ndarray:
        sel = self.samples if idx is None else [self.samples[i] for i in idx]
        return np.stack([s.labels for s in sel])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.size == other.size and self.seed == other.seed
                and self.n_classes == other.n_classes and len(self) == len(other)
                and all(a.image.tobytes() == b.image.tobytes() and a.labels.tobytes() == b.labels.tobytes()
                        for a, b in zip(self.samples, other.samples)))


def size_ranges(s: int) -> tuple:
    """Length and width ranges for an ``s x s`` image (the 64-pixel ranges scaled by s/64)."""
    k = s / 64
    lmin, lmax = round(32 * k), round(60 * k)
    wmin, wmax = max(1, round(4 * k)), max(1, round(8 * k))
    lmin = max(lmin, 2 * wmax + 1)
    lmax = max(lmax, lmin)
    return (lmin, lmax), (wmin, wmax)


def _cos_sin(deg: int) -> tuple:
    # exact negation under deg -> deg + 180 so opposite orientations rasterize identically
    d = deg % 360
    sign = 1.0
    if d >= 180:
        d -= 180
        sign = -1.0
    r = math.radians(d)
    return sign * math.cos(r), sign * math.sin(r)


def _corners(length: float, width: float, angle: int, center: tuple) -> list:
    c, s = _cos_sin(angle)
    cy, cx = center
    out = []
    for u in (-length / 2, length / 2):
        for v in (-width / 2, width / 2):
            out.append((cy + u * s + v * c, cx + u * c - v * s))
    return out


def sample_object(rng, s: int) -> ObjectSpec:
    """Draw one rod.  Draw order: class, length, width, angle, marker bit, center."""
    (lmin, lmax), (wmin, wmax) = size_ranges(s)
    cls = rng.uniform_int(WW, BB)
    length = rng.uniform_int(lmin, lmax)
    width = rng.uniform_int(wmin, wmax)
    angle = rng.uniform_int(-180, 180)
    flip = rng.uniform_int(0, 1)
    if cls == WW:
        left, right = "white", "white"
    elif cls == BB:
        left, right = "black", "black"
    else:
        left, right = ("white", "black") if flip == 0 else ("black", "white")
    center = (s / 2, s / 2)
    for _ in range(MAX_PLACEMENT_TRIES):
        cand = (rng.uniform_unit() * s, rng.uniform_unit() * s)
        if all(0 <= y < s and 0 <= x < s for y, x in _corners(length, width, angle, cand)):
            center = cand
            break
    return ObjectSpec(length, width, angle, center, left, right)


def render(spec: ObjectSpec, s: int) -> Sample:
    """Hard-threshold rasterization of one rod at pixel centers."""
    c, sn = _cos_sin(spec.angle)
    yy, xx = np.meshgrid(np.arange(s) + 0.5, np.arange(s) + 0.5, indexing="ij")
    dy = yy - spec.center[0]
    dx = xx - spec.center[1]
    u = dx * c + dy * sn
    v = dy * c - dx * sn
    half_l, half_w = spec.length / 2, spec.width / 2
    inside = (np.abs(u) <= half_l) & (np.abs(v) <= half_w)
    right = inside & (u > half_l - spec.width)
    left = inside & (u < -half_l + spec.width)
    tone = {"white": INTENSITY_WHITE, "black": INTENSITY_BLACK}
    img = np.full((s, s), INTENSITY_BACKGROUND, dtype=np.float32)
    img[inside] = INTENSITY_MIDSECTION
    img[right] = tone[spec.right_marker]
    img[left] = tone[spec.left_marker]
    labels = np.where(inside, spec.class_id, BACKGROUND).astype(np.uint8)
    return Sample(img[None, None], labels)


def _draw(rng: Rng, n: int, seed: int, s: int) -> Dataset:
    specs, samples = [], []
    for _ in range(n):
        spec = sample_object(rng, s)
        specs.append(spec)
        samples.append(render(spec, s))
    return Dataset(samples, s, seed, N_CLASSES, specs)


def generate(n: int, seed: int, s: int = 64) -> Dataset:
    if n <= 0:
        raise ValueError("dataset needs at least one sample")
    return _draw(Rng(seed), n, seed, s)


def generate_split(n_train: int, n_val: int, seed: int, s: int = 64) -> tuple:
    """Training and validation sets drawn from one stream: train first, then val.

    The training set equals ``generate(n_train, seed, s)``.
    """
    if n_train <= 0 or n_val <= 0:
        raise ValueError("both splits need at least one sample")
    rng = Rng(seed)
    return _draw(rng, n_train, seed, s), _draw(rng, n_val, seed, s)


def class_frequencies(ds: Dataset) -> np.ndarray:
    counts = np.zeros(ds.n_classes, dtype=np.int64)
    for smp in ds.samples:
        counts += np.bincount(smp.labels.ravel(), minlength=ds.n_classes)[:ds.n_classes]
    return counts / counts.sum()


_HEADER = struct.Struct("<4sIQIIIB")


def write_qtds(ds: Dataset, path) -> None:
    s = ds.size
    with open(path, "wb") as f:
        f.write(_HEADER.pack(QTDS_MAGIC, QTDS_VERSION, ds.seed & ((1 << 64) - 1), len(ds), s, 1,
                             ds.n_classes))
        for smp in ds.samples:
            f.write(np.ascontiguousarray(smp.image, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(smp.labels, dtype=np.uint8).tobytes())


def read_qtds_header(path) -> dict:
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
    return _parse_header(raw, path)


def _parse_header(raw: bytes, path) -> dict:
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header, expected QTDS format")
    magic, version, seed, count, size, channels, n_classes = _HEADER.unpack(raw[:_HEADER.size])
    if magic != QTDS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected QTDS format")
    if version != QTDS_VERSION:
        raise FormatError(f"{path}: QTDS version {version} unsupported (expected {QTDS_VERSION})")
    if channels != 1:
        raise FormatError(f"{path}: QTDS with {channels} channels unsupported")
    return dict(seed=seed, count=count, size=size, channels=channels, n_classes=n_classes)


def read_qtds(path) -> Dataset:
    raw = Path(path).read_bytes()
    hdr = _parse_header(raw, path)
    s, n = hdr["size"], hdr["count"]
    per = 4 * s * s + s * s
    body = raw[_HEADER.size:]
    if len(body) != per * n:
        raise FormatError(f"{path}: expected {per * n} payload bytes, found {len(body)}")
    samples = []
    for i in range(n):
        chunk = body[i * per:(i + 1) * per]
        img = np.frombuffer(chunk[:4 * s * s], dtype="<f4").astype(np.float32).reshape(1, 1, s, s)
        lab = np.frombuffer(chunk[4 * s * s:], dtype=np.uint8).reshape(s, s).copy()
        samples.append(Sample(img, lab))
    return Dataset(samples, s, hdr["seed"], hdr["n_classes"])
