"""Dataset ingestion and file formats.

Formats handled here:

* IDX (MNIST-style, big-endian) image and label files, optionally gzipped.
* RLDM model archives: little-endian, ``b"RLDM"`` magic, u16 version, u32
  section count, then per section ``u16 name length, name, u8 dtype tag,
  u8 rank, u32 dims[rank], u32 payload length, payload``.
* Binary PGM (P5) for saliency maps and a two-column CSV for curves.
"""
from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numkit import DTYPE, Rng, rng_normal

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

RLDM_MAGIC = b"RLDM"
RLDM_VERSION = 1
DTYPE_F32 = 1


class DataFormatError(ValueError):
    """Base class for file parse and validation errors."""


class MagicError(DataFormatError):
    pass


class TruncatedError(DataFormatError):
    pass


class CountMismatchError(DataFormatError):
    pass


class VersionError(DataFormatError):
    pass


class LengthError(DataFormatError):
    pass


class RangeError(ValueError):
    pass


class OrderError(ValueError):
    pass


@dataclass
class ImageDataset:
    images: np.ndarray  # (N, H, W, C) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    k: int

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be N x H x W x C, got {self.images.shape}")
        if len(self.images) < 1 or len(self.images) != len(self.labels):
            raise ValueError("dataset needs matching, non-zero image and label counts")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise RangeError("pixels must lie in [0, 1]")
        if self.labels.min() < 0 or self.labels.max() >= self.k:
            raise RangeError(f"labels must lie in [0, {self.k})")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]

    @property
    def flat(self) -> np.ndarray:
        return self.images.reshape(len(self.images), -1)


# --- IDX -------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw: bytes, expected_magic: int, path) -> tuple[tuple[int, ...], bytes]:
    if len(raw) < 4:
        raise TruncatedError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise MagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    rank = magic & 0xFF
    header = 4 + 4 * rank
    if len(raw) < header:
        raise TruncatedError(f"{path}: truncated IDX dimensions")
    dims = struct.unpack(f">{rank}I", raw[4:header])
    payload = raw[header:]
    if len(payload) < math.prod(dims):
        raise TruncatedError(f"{path}: payload has {len(payload)} bytes, need {math.prod(dims)}")
    return dims, payload[: math.prod(dims)]


def load_idx(images_path, labels_path, k: int | None = None) -> ImageDataset:
    """Load an IDX image/label pair, scaling bytes to [0, 1].

    ``k`` defaults to ``max(label) + 1`` (at least 2).
    """
    dims, img = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    (nl,), lab = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path)
    n, h, w = dims
    if n != nl:
        raise CountMismatchError(f"{n} images but {nl} labels")
    images = (np.frombuffer(img, dtype=np.uint8).reshape(n, h, w, 1) / 255.0).astype(DTYPE)
    labels = np.frombuffer(lab, dtype=np.uint8).astype(np.int64)
    if k is None:
        k = max(2, int(labels.max()) + 1)
    return ImageDataset(images, labels, k)


def write_idx(dataset: ImageDataset, images_path, labels_path) -> None:
    """Write a single-channel dataset as IDX, quantizing pixels to bytes."""
    n, h, w, c = dataset.images.shape
    if c != 1:
        raise ValueError("IDX writer supports single-channel images only")
    pixels = np.floor(dataset.images[..., 0].astype(np.float64) * 255.0 + 0.5).astype(np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w) + pixels.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">II", IDX_LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    )


# --- procedural shapes -----------------------------------------------------

SHAPE_FAMILIES = ("square", "circle", "cross", "triangle", "bar")


def _render(family: int, h: int, w: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    if family == 0:
        mask = (np.abs(dy) <= r) & (np.abs(dx) <= r)
    elif family == 1:
        mask = dy * dy + dx * dx <= r * r
    elif family == 2:
        arm = max(r / 3.0, 0.75)
        mask = ((np.abs(dy) <= arm) & (np.abs(dx) <= r)) | ((np.abs(dx) <= arm) & (np.abs(dy) <= r))
    elif family == 3:
        # apex up, base at cy + r
        t = (dy + r) / (2 * r)
        mask = (t >= 0) & (t <= 1) & (np.abs(dx) <= t * r)
    else:
        half = max(r / 4.0, 0.75)
        mask = (np.abs(dy) <= r) & (np.abs(dx) <= half)
    return mask.astype(np.float64)


def synth_shapes(n: int, h: int, w: int, k: int, rng: Rng, noise: float = 0.05) -> ImageDataset:
    """Procedural shapes: class c draws family c at a random position and scale.

    Labels cycle 0..k-1 so classes are balanced up to rounding.
    """
    if not 2 <= k <= len(SHAPE_FAMILIES):
        raise ValueError(f"k must be in 2..{len(SHAPE_FAMILIES)}, got {k}")
    if h < 16 or w < 16:
        raise ValueError(f"images must be at least 16x16, got {h}x{w}")
    if n < 1:
        raise ValueError("n must be positive")
    labels = np.arange(n, dtype=np.int64) % k
    images = np.empty((n, h, w, 1), dtype=DTYPE)
    side = min(h, w)
    geom = rng.uniform(3 * n).reshape(n, 3)
    noise_field = rng_normal(rng, (n, h, w)).astype(np.float64) * noise
    for i in range(n):
        r = side * (0.15 + 0.13 * geom[i, 0])
        cy = r + geom[i, 1] * (h - 1 - 2 * r)
        cx = r + geom[i, 2] * (w - 1 - 2 * r)
        img = _render(int(labels[i]), h, w, cy, cx, r) + noise_field[i]
        images[i, :, :, 0] = np.clip(img, 0.0, 1.0)
    return ImageDataset(images, labels, k)


# --- RLDM archives ---------------------------------------------------------

@dataclass
class ModelArchive:
    sections: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = RLDM_VERSION

    def __getitem__(self, name: str) -> np.ndarray:
        return self.sections[name]

    def __contains__(self, name: str) -> bool:
        return name in self.sections


def archive_bytes(archive: ModelArchive) -> bytes:
    parts = [RLDM_MAGIC, struct.pack("<HI", archive.version, len(archive.sections))]
    for name, arr in archive.sections.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        if not np.all(np.isfinite(arr)):
            raise RangeError(f"section {name!r} holds non-finite values")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload = arr.tobytes()
        parts.append(struct.pack("<I", len(payload)) + payload)
    return b"".join(parts)


def save_model(archive: ModelArchive, path) -> None:
    Path(path).write_bytes(archive_bytes(archive))


def parse_archive(raw: bytes, source="<bytes>") -> ModelArchive:
    pos = 0

    def take(size: int) -> bytes:
        nonlocal pos
        if pos + size > len(raw):
            raise TruncatedError(f"{source}: unexpected end of archive at byte {pos}")
        chunk = raw[pos : pos + size]
        pos += size
        return chunk

    if take(4) != RLDM_MAGIC:
        raise MagicError(f"{source}: not an RLDM archive")
    version, count = struct.unpack("<HI", take(6))
    if version != RLDM_VERSION:
        raise VersionError(f"{source}: unsupported archive version {version}")
    sections: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        if name in sections:
            raise DataFormatError(f"{source}: duplicate section {name!r}")
        tag, rank = struct.unpack("<BB", take(2))
        if tag != DTYPE_F32:
            raise DataFormatError(f"{source}: section {name!r} has unknown dtype tag {tag}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        (nbytes,) = struct.unpack("<I", take(4))
        if nbytes != 4 * math.prod(dims):
            raise LengthError(
                f"{source}: section {name!r} dims {dims} need {4 * math.prod(dims)} bytes, header says {nbytes}"
            )
        payload = take(nbytes)
        sections[name] = np.frombuffer(payload, dtype="<f4").astype(DTYPE).reshape(dims)
    if pos != len(raw):
        raise LengthError(f"{source}: {len(raw) - pos} trailing bytes")
    return ModelArchive(sections, version)


def load_model(path) -> ModelArchive:
    return parse_archive(Path(path).read_bytes(), source=path)


# --- PGM and CSV -----------------------------------------------------------

def write_pgm(image: np.ndarray, path) -> None:
    """Binary P5 greymap, maxval 255, pixel = round-half-up(255 * value)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"PGM needs an H x W map, got shape {image.shape}")
    if not np.all(np.isfinite(image)) or image.min() < 0.0 or image.max() > 1.0:
        raise RangeError("PGM values must lie in [0, 1]")
    h, w = image.shape
    data = np.floor(image * 255.0 + 0.5).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, dims, maxval, rest = raw.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise MagicError(f"{path}: not an 8-bit P5 greymap")
    w, h = (int(v) for v in dims.split())
    return np.frombuffer(rest, dtype=np.uint8).reshape(h, w)


def write_curve_csv(points, path) -> None:
    fractions = [f for f, _ in points]
    if any(b < a for a, b in zip(fractions, fractions[1:])):
        raise OrderError("curve fractions must be nondecreasing")
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise RangeError("curve fractions must lie in [0, 1]")
    lines = ["fraction,probability"]
    lines += [f"{f:.6f},{p:.6f}" for f, p in points]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
