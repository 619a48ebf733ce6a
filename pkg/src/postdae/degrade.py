"""Random corruption of label masks.

The composite :func:`degrade` applies, in order: random shape additions and
removals, an optional morphological operation, random label swaps near class
boundaries, and a nearest-neighbour rescale about the canvas centre. Every
random draw comes from a PCG64 stream keyed on ``(cfg.seed, index)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import ndimage

from .raster import LabelMask
from .synth import ellipse_membership

SHAPE_KINDS = ("polygon", "ellipse", "line")
MORPH_OPS = ("erode", "dilate", "open", "close")


@dataclass(frozen=True)
class DegradationConfig:
    event_count: tuple = (0, 0)
    shape_kinds: tuple = SHAPE_KINDS
    add_probability: float = 0.5
    shape_size: tuple = (0.05, 0.15)  # fraction of the canvas side
    morph_probability: float = 0.0
    morph_radius: tuple = (1, 1)
    boundary_band: int = 1
    boundary_flip_probability: float = 0.0
    resize_scale: tuple = (1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        for name in ("event_count", "shape_kinds", "shape_size", "morph_radius", "resize_scale"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for name in ("add_probability", "morph_probability", "boundary_flip_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        for name in ("event_count", "shape_size", "morph_radius", "resize_scale"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range must satisfy min <= max, got {(lo, hi)}")
        if self.event_count[0] < 0 or self.shape_size[0] < 0:
            raise ValueError("event counts and shape sizes must be non-negative")
        if self.morph_radius[0] < 1:
            raise ValueError("morphology radius must be >= 1")
        if self.resize_scale[0] <= 0:
            raise ValueError("resize scale lower bound must be positive")
        if self.boundary_band < 1:
            raise ValueError("boundary band must be >= 1")
        unknown = set(self.shape_kinds) - set(SHAPE_KINDS)
        if unknown or not self.shape_kinds:
            raise ValueError(f"shape kinds must be a non-empty subset of {SHAPE_KINDS}")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationConfig":
        return cls(**d)

    def with_seed(self, seed: int) -> "DegradationConfig":
        return replace(self, seed=seed)


IDENTITY = DegradationConfig()

# Test-time severity presets. They leave the canvas scale alone so that the
# corrupted mask stays comparable to its untouched ground truth.
SEVERITY_PRESETS = {
    "light": DegradationConfig(
        event_count=(1, 2),
        add_probability=0.6,
        shape_size=(0.04, 0.10),
        morph_probability=0.3,
        morph_radius=(1, 1),
        boundary_band=1,
        boundary_flip_probability=0.15,
    ),
    "moderate": DegradationConfig(
        event_count=(2, 4),
        add_probability=0.5,
        shape_size=(0.06, 0.16),
        morph_probability=0.5,
        morph_radius=(1, 2),
        boundary_band=1,
        boundary_flip_probability=0.3,
    ),
    "heavy": DegradationConfig(
        event_count=(4, 6),
        add_probability=0.5,
        shape_size=(0.10, 0.20),
        morph_probability=0.7,
        morph_radius=(1, 2),
        boundary_band=2,
        boundary_flip_probability=0.4,
    ),
}

# Training-time corruption: spans the light-to-heavy range, sometimes leaves
# the mask clean, and adds the resize augmentation.
TRAIN_PRESET = DegradationConfig(
    event_count=(0, 6),
    add_probability=0.5,
    shape_size=(0.04, 0.24),
    morph_probability=0.25,
    morph_radius=(1, 2),
    boundary_band=1,
    boundary_flip_probability=0.1,
    resize_scale=(0.95, 1.05),
)


def preset(name: str, seed: int = 0) -> DegradationConfig:
    if name == "train":
        return TRAIN_PRESET.with_seed(seed)
    if name == "identity":
        return IDENTITY.with_seed(seed)
    try:
        return SEVERITY_PRESETS[name].with_seed(seed)
    except KeyError:
        raise ValueError(f"unknown degradation preset {name!r}") from None


def degradation_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & (2**64 - 1), int(index), 0xDE9AD])


# -- shape rasterization -------------------------------------------------------


def polygon_membership(shape, vertices) -> np.ndarray:
    """Pixel centers inside a polygon (even-odd rule); ``vertices`` are (x, y)."""
    h, w = shape
    verts = np.asarray(vertices, dtype=np.float64)
    if len(verts) < 3:
        return np.zeros(shape, dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    inside = np.zeros(shape, dtype=bool)
    x0, y0 = verts[:, 0], verts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    for xa, ya, xb, yb in zip(x0, y0, x1, y1):
        if ya == yb:
            continue
        crosses = (ya > yy) != (yb > yy)
        x_at = xa + (yy - ya) * (xb - xa) / (yb - ya)
        inside ^= crosses & (xx < x_at)
    return inside


def line_membership(shape, p0, p1, thickness: float) -> np.ndarray:
    """Pixel centers within ``thickness / 2`` of the segment p0-p1."""
    h, w = shape
    if thickness <= 0:
        return np.zeros(shape, dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    a = np.asarray(p0, dtype=np.float64)
    d = np.asarray(p1, dtype=np.float64) - a
    length2 = float(d @ d)
    if length2 == 0:
        t = np.zeros(shape)
    else:
        t = np.clip(((xx - a[0]) * d[0] + (yy - a[1]) * d[1]) / length2, 0.0, 1.0)
    dist2 = (xx - a[0] - t * d[0]) ** 2 + (yy - a[1] - t * d[1]) ** 2
    return dist2 <= (thickness / 2.0) ** 2


def paint(mask: LabelMask, region: np.ndarray, target: int, polarity: str) -> LabelMask:
    """Add ``region`` to class ``target`` or remove it from that class."""
    if not 0 <= target < mask.num_classes:
        raise ValueError(f"target class {target} outside [0, {mask.num_classes})")
    labels = mask.labels.copy()
    if polarity == "add":
        labels[region] = target
    elif polarity == "remove":
        labels[region & (labels == target)] = 0
    else:
        raise ValueError(f"polarity must be 'add' or 'remove', got {polarity!r}")
    return LabelMask(labels, mask.num_classes)


def sample_shape(kind: str, shape, center, size: float, rng: np.random.Generator) -> np.ndarray:
    """Random shape of the given kind whose extent is about ``size`` pixels."""
    cx, cy = center
    if kind == "ellipse":
        axes = size * rng.uniform(0.5, 1.0, size=2)
        return ellipse_membership(shape, (cx, cy), axes, rng.uniform(0, np.pi))
    if kind == "polygon":
        n = int(rng.integers(3, 8))
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=n))
        radii = size * rng.uniform(0.4, 1.0, size=n)
        verts = np.stack([cx + radii * np.cos(angles), cy + radii * np.sin(angles)], axis=1)
        return polygon_membership(shape, verts)
    if kind == "line":
        theta = rng.uniform(0, np.pi)
        half = size * rng.uniform(0.8, 1.6)
        dx, dy = half * np.cos(theta), half * np.sin(theta)
        thickness = max(1.0, size * rng.uniform(0.1, 0.3))
        return line_membership(shape, (cx - dx, cy - dy), (cx + dx, cy + dy), thickness)
    raise ValueError(f"unknown shape kind {kind!r}")


def add_or_remove_shape(
    mask: LabelMask,
    kind: str,
    target: int,
    polarity: str,
    rng: np.random.Generator,
    size_range=(0.05, 0.15),
) -> LabelMask:
    """Sample one shape and paint it onto (or erase it from) ``target``.

    Removal shapes are centred on a random pixel of the target class so they
    actually bite; additions are centred anywhere on the canvas.
    """
    h, w = mask.shape
    size = rng.uniform(*size_range) * max(h, w)
    if polarity == "remove":
        ys, xs = np.nonzero(mask.labels == target)
        if len(ys) == 0:
            return mask
        k = int(rng.integers(len(ys)))
        center = (xs[k] + rng.uniform(-0.5, 0.5), ys[k] + rng.uniform(-0.5, 0.5))
    else:
        center = (rng.uniform(0, w - 1), rng.uniform(0, h - 1))
    region = sample_shape(kind, mask.shape, center, size, rng)
    return paint(mask, region, target, polarity)


# -- morphology --------------------------------------------------------------------


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return xx * xx + yy * yy <= r * r


def binary_morphology(indicator: np.ndarray, op: str, radius: int) -> np.ndarray:
    """Binary morphology with a disk; pixels outside the canvas count as 0."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    se = disk(radius)
    pad = 2 * radius + 1
    x = np.pad(indicator.astype(bool), pad)
    if op == "erode":
        y = ndimage.binary_erosion(x, se)
    elif op == "dilate":
        y = ndimage.binary_dilation(x, se)
    elif op == "open":
        y = ndimage.binary_dilation(ndimage.binary_erosion(x, se), se)
    elif op == "close":
        y = ndimage.binary_erosion(ndimage.binary_dilation(x, se), se)
    else:
        raise ValueError(f"unknown morphological op {op!r}")
    return y[pad:-pad, pad:-pad]


def morph(mask: LabelMask, op: str, cls: int, radius: int) -> LabelMask:
    ind = mask.labels == cls
    new = binary_morphology(ind, op, radius)
    labels = mask.labels.copy()
    labels[ind & ~new] = 0
    labels[new & ~ind] = cls
    return LabelMask(labels, mask.num_classes)


# -- boundary noise -----------------------------------------------------------------


def boundary_band(mask: LabelMask, band: int) -> np.ndarray:
    """Pixels with a differently labelled pixel within Chebyshev distance ``band``."""
    size = 2 * band + 1
    hi = ndimage.maximum_filter(mask.labels, size=size, mode="nearest")
    lo = ndimage.minimum_filter(mask.labels, size=size, mode="nearest")
    return hi != lo


def boundary_flip(mask: LabelMask, band: int, p: float, rng: np.random.Generator) -> LabelMask:
    """Toggle pixels near class boundaries with probability ``p``.

    Foreground pixels become background; background pixels take the class of
    the nearest foreground pixel.
    """
    if band < 1:
        raise ValueError("band must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    near = boundary_band(mask, band)
    flip = near & (rng.random(mask.shape) < p)
    if not flip.any():
        return mask
    labels = mask.labels.copy()
    fg = labels != 0
    labels[flip & fg] = 0
    bg_flip = flip & ~fg
    if bg_flip.any():
        _, (iy, ix) = ndimage.distance_transform_edt(~fg, return_indices=True)
        labels[bg_flip] = mask.labels[iy[bg_flip], ix[bg_flip]]
    return LabelMask(labels, mask.num_classes)


# -- rescale ----------------------------------------------------------------------------


def random_resize(mask: LabelMask, scale: float) -> LabelMask:
    """Nearest-neighbour rescale about the canvas centre, cropped or padded
    with background back to the original size."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    if scale == 1.0:
        return mask
    h, w = mask.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    src_y = np.floor((np.arange(h) - cy) / scale + cy + 0.5).astype(np.int64)
    src_x = np.floor((np.arange(w) - cx) / scale + cx + 0.5).astype(np.int64)
    valid_y = (src_y >= 0) & (src_y < h)
    valid_x = (src_x >= 0) & (src_x < w)
    out = np.zeros_like(mask.labels)
    out[np.ix_(valid_y, valid_x)] = mask.labels[np.ix_(src_y[valid_y], src_x[valid_x])]
    return LabelMask(out, mask.num_classes)


# -- composite ----------------------------------------------------------------------------


def degrade_pair(mask: LabelMask, cfg: DegradationConfig, index: int) -> tuple[LabelMask, LabelMask]:
    """Return ``(target, corrupted)``.

    The corrupted mask runs the full pipeline. The target is the clean mask
    rescaled by the same factor, so the pair stays aligned for training.
    """
    rng = degradation_rng(cfg.seed, index)
    out = mask
    n_events = int(rng.integers(cfg.event_count[0], cfg.event_count[1] + 1))
    for _ in range(n_events):
        kind = cfg.shape_kinds[int(rng.integers(len(cfg.shape_kinds)))]
        target = int(rng.integers(1, mask.num_classes))
        polarity = "add" if rng.random() < cfg.add_probability else "remove"
        out = add_or_remove_shape(out, kind, target, polarity, rng, cfg.shape_size)
    if rng.random() < cfg.morph_probability:
        op = MORPH_OPS[int(rng.integers(len(MORPH_OPS)))]
        cls = int(rng.integers(1, mask.num_classes))
        radius = int(rng.integers(cfg.morph_radius[0], cfg.morph_radius[1] + 1))
        out = morph(out, op, cls, radius)
    if cfg.boundary_flip_probability > 0:
        out = boundary_flip(out, cfg.boundary_band, cfg.boundary_flip_probability, rng)
    lo, hi = cfg.resize_scale
    scale = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    return random_resize(mask, scale), random_resize(out, scale)


def degrade(mask: LabelMask, cfg: DegradationConfig, index: int) -> LabelMask:
    return degrade_pair(mask, cfg, index)[1]
