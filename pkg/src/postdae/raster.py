"""Raster containers for label masks, gray images and per-pixel class
probabilities, plus bit-exact PGM (P5) file I/O.

Arrays are stored row-major as ``(height, width)`` (or ``(height, width,
num_classes)`` for probability maps) and are marked read-only after
construction.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class RasterFormatError(ValueError):
    """Malformed PGM header or payload."""


class RasterValidationError(ValueError):
    """Raster content violates a type invariant."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LabelMask:
    """Integer-labeled raster with labels in ``[0, num_classes)``."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise RasterValidationError(f"labels must be 2-D, got shape {labels.shape}")
        if self.num_classes < 2 or self.num_classes > 256:
            raise RasterValidationError(f"num_classes must be in [2, 256], got {self.num_classes}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise RasterValidationError(
                f"labels must lie in [0, {self.num_classes}), found range "
                f"[{labels.min()}, {labels.max()}]"
            )
        object.__setattr__(self, "labels", _frozen(labels.astype(np.uint8, copy=True)))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def indicator(self, cls: int) -> np.ndarray:
        return self.labels == cls

    def __eq__(self, other):
        if not isinstance(other, LabelMask):
            return NotImplemented
        return self.num_classes == other.num_classes and np.array_equal(self.labels, other.labels)

    def __repr__(self):
        return f"LabelMask({self.width}x{self.height}, num_classes={self.num_classes})"


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Single-channel image with intensities in [0, 1]."""

    intensities: np.ndarray

    def __post_init__(self):
        img = np.asarray(self.intensities, dtype=np.float64)
        if img.ndim != 2:
            raise RasterValidationError(f"intensities must be 2-D, got shape {img.shape}")
        if img.size and (not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0):
            raise RasterValidationError("intensities must be finite and within [0, 1]")
        object.__setattr__(self, "intensities", _frozen(img.copy()))

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.intensities.shape


@dataclass(frozen=True, eq=False)
class SoftMask:
    """Per-pixel class probability vectors, array shape ``(H, W, C)``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 3 or probs.shape[2] < 2:
            raise RasterValidationError(f"probs must have shape (H, W, C>=2), got {probs.shape}")
        if probs.size:
            if not np.all(np.isfinite(probs)) or probs.min() < 0.0 or probs.max() > 1.0:
                raise RasterValidationError("probabilities must be finite and within [0, 1]")
            if np.max(np.abs(probs.sum(axis=2) - 1.0)) > 1e-6:
                raise RasterValidationError("per-pixel probabilities must sum to 1")
        object.__setattr__(self, "probs", _frozen(probs.copy()))

    @property
    def num_classes(self) -> int:
        return self.probs.shape[2]

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[:2]


def normalized_soft(probs: np.ndarray) -> SoftMask:
    """Clip to [0, 1] and renormalize so each pixel sums to one."""
    probs = np.clip(np.asarray(probs, dtype=np.float64), 0.0, 1.0)
    total = probs.sum(axis=2, keepdims=True)
    return SoftMask(probs / total)


# -- conversions -------------------------------------------------------------


def one_hot(mask: LabelMask) -> SoftMask:
    probs = np.eye(mask.num_classes, dtype=np.float64)[mask.labels]
    return SoftMask(probs)


def argmax_labels(soft: SoftMask) -> LabelMask:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class.
    return LabelMask(np.argmax(soft.probs, axis=2), soft.num_classes)


def binarize(soft: SoftMask, threshold: float = 0.5) -> LabelMask:
    if soft.num_classes != 2:
        raise ValueError(f"binarize needs a 2-class SoftMask, got {soft.num_classes} classes")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return LabelMask((soft.probs[:, :, 1] >= threshold).astype(np.uint8), 2)


# -- PGM I/O ------------------------------------------------------------------

_CLASSES_RE = re.compile(rb"#\s*classes=(\d+)")


def _parse_pgm(data: bytes):
    """Return (width, height, maxval, comments, payload) of a P5 file."""
    if not data.startswith(b"P5"):
        raise RasterFormatError("not a binary PGM (missing P5 magic)")
    pos = 2
    fields = []
    comments = []
    while len(fields) < 3:
        if pos >= len(data):
            raise RasterFormatError("truncated PGM header")
        ch = data[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise RasterFormatError("unterminated comment in PGM header")
            comments.append(data[pos:end])
            pos = end + 1
        else:
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
                pos += 1
            token = data[start:pos]
            if not token.isdigit():
                raise RasterFormatError(f"bad PGM header token {token!r}")
            fields.append(int(token))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise RasterFormatError("missing whitespace after PGM maxval")
    pos += 1
    width, height, maxval = fields
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise RasterFormatError(f"invalid PGM dimensions/maxval {width}x{height}/{maxval}")
    bpp = 1 if maxval < 256 else 2
    payload = data[pos:]
    if len(payload) != width * height * bpp:
        raise RasterFormatError(
            f"PGM payload is {len(payload)} bytes, expected {width * height * bpp}"
        )
    dtype = np.uint8 if bpp == 1 else np.dtype(">u2")
    values = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return width, height, maxval, comments, values


def _pgm_bytes(values: np.ndarray, maxval: int, comment: str | None = None) -> bytes:
    height, width = values.shape
    header = b"P5\n"
    if comment is not None:
        header += b"# " + comment.encode("ascii") + b"\n"
    header += f"{width} {height}\n{maxval}\n".encode("ascii")
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    return header + np.ascontiguousarray(values, dtype=dtype).tobytes()


def mask_to_bytes(mask: LabelMask) -> bytes:
    return _pgm_bytes(mask.labels, mask.num_classes - 1, f"classes={mask.num_classes}")


def mask_from_bytes(data: bytes) -> LabelMask:
    _, _, maxval, comments, values = _parse_pgm(data)
    declared = None
    for comment in comments:
        match = _CLASSES_RE.match(comment)
        if match:
            declared = int(match.group(1))
    if declared is None:
        raise RasterFormatError("mask PGM lacks a '# classes=<n>' comment")
    if maxval != declared - 1:
        raise RasterFormatError(f"maxval {maxval} does not match classes={declared}")
    if values.size and int(values.max()) >= declared:
        raise RasterValidationError(
            f"pixel value {int(values.max())} exceeds declared classes={declared}"
        )
    return LabelMask(values, declared)


def load_mask(path) -> LabelMask:
    return mask_from_bytes(Path(path).read_bytes())


def save_mask(mask: LabelMask, path) -> None:
    Path(path).write_bytes(mask_to_bytes(mask))


def image_to_bytes(image: GrayImage) -> bytes:
    values = np.floor(image.intensities * 255.0 + 0.5).astype(np.uint8)
    return _pgm_bytes(values, 255)


def load_image(path) -> GrayImage:
    _, _, maxval, _, values = _parse_pgm(Path(path).read_bytes())
    return GrayImage(values.astype(np.float64) / maxval)


def save_image(image: GrayImage, path) -> None:
    Path(path).write_bytes(image_to_bytes(image))


# Soft masks are stored as one 16-bit PGM per class plus a JSON index.
SOFT_MAXVAL = 65535


def save_soft(soft: SoftMask, index_path) -> list[Path]:
    index_path = Path(index_path)
    stem = index_path.stem
    files = []
    for c in range(soft.num_classes):
        values = np.floor(soft.probs[:, :, c] * SOFT_MAXVAL + 0.5).astype(np.uint16)
        target = index_path.with_name(f"{stem}_c{c}.pgm")
        target.write_bytes(_pgm_bytes(values, SOFT_MAXVAL))
        files.append(target)
    index = {
        "format": "softmask",
        "version": 1,
        "width": soft.width,
        "height": soft.height,
        "num_classes": soft.num_classes,
        "maxval": SOFT_MAXVAL,
        "files": [f.name for f in files],
    }
    index_path.write_text(json.dumps(index, indent=2) + "\n")
    return [index_path, *files]


def load_soft(index_path) -> SoftMask:
    index_path = Path(index_path)
    try:
        index = json.loads(index_path.read_text())
        names = index["files"]
        num_classes = int(index["num_classes"])
    except (ValueError, KeyError) as exc:
        raise RasterFormatError(f"bad soft-mask index {index_path}: {exc}") from exc
    if len(names) != num_classes:
        raise RasterFormatError("soft-mask index lists the wrong number of class files")
    channels = []
    for name in names:
        _, _, maxval, _, values = _parse_pgm((index_path.parent / name).read_bytes())
        channels.append(values.astype(np.float64) / maxval)
    probs = np.stack(channels, axis=2)
    total = probs.sum(axis=2, keepdims=True)
    # all-zero pixels after quantization fall back to uniform
    probs = np.where(total > 0, probs / np.where(total > 0, total, 1.0), 1.0 / num_classes)
    return SoftMask(probs)
