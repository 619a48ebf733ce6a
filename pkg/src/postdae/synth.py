"""Procedural chest-like scenes and a deliberately weak pixel classifier.

Each scene holds two mirrored, elongated ellipses ("lungs", class 1) and,
for three-class scenes, one medial ellipse ("heart", class 2) drawn on top
of the lungs. Images are piecewise-constant class intensities plus a smooth
bias field and Gaussian noise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage, special

from .raster import GrayImage, LabelMask, SoftMask

# Canonical geometry as fractions of the canvas (x, y measured from top-left).
LUNG_CENTER_DX = 0.20
LUNG_CENTER_Y = 0.47
LUNG_SEMI_AXES = (0.13, 0.30)
LUNG_TILT = 0.10  # radians; the top of each lung leans towards the midline
HEART_CENTER = (0.54, 0.68)
HEART_SEMI_AXES = (0.14, 0.11)

MAX_ATTEMPTS = 100
VARIANCE_FLOOR = 1e-6
EXPECTED_COMPONENTS = {1: 2, 2: 1}


class GenerationError(RuntimeError):
    pass


class FittingError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    width: int = 64
    height: int = 64
    num_classes: int = 2
    center_jitter: float = 0.03
    scale_jitter: float = 0.12
    rotation_jitter: float = 0.05
    class_means: tuple = (0.6, 0.25, 0.8)
    noise_sigma: float = 0.08
    bias_amplitude: float = 0.08
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "class_means", tuple(float(m) for m in self.class_means))
        if self.num_classes not in (2, 3):
            raise ValueError("num_classes must be 2 or 3")
        if len(self.class_means) < self.num_classes:
            raise ValueError("need one intensity mean per class")
        means = self.class_means[: self.num_classes]
        for i in range(len(means)):
            for j in range(i + 1, len(means)):
                if abs(means[i] - means[j]) < 0.05:
                    raise ValueError("class intensity means must differ by at least 0.05")
        if self.width < 8 or self.height < 8:
            raise ValueError("canvas must be at least 8x8")
        for name in ("center_jitter", "scale_jitter", "rotation_jitter", "noise_sigma", "bias_amplitude"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.center_jitter > 0.1 or self.scale_jitter > 0.3:
            raise ValueError("jitter amplitudes this large push shapes off the canvas")

    @property
    def means(self) -> tuple:
        return self.class_means[: self.num_classes]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        return cls(**d)


def ellipse_membership(shape, center, semi_axes, angle) -> np.ndarray:
    """Boolean raster of pixel centers inside a rotated ellipse.

    ``center`` is ``(x, y)`` in pixels, ``semi_axes`` is ``(a, b)`` along the
    rotated x and y directions, ``angle`` in radians. Degenerate axes give
    an empty region.
    """
    a, b = semi_axes
    h, w = shape
    if a <= 0 or b <= 0:
        return np.zeros(shape, dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = xx - center[0]
    dy = yy - center[1]
    c, s = np.cos(angle), np.sin(angle)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _scene_geometry(cfg: SceneConfig, rng: np.random.Generator):
    w, h = cfg.width, cfg.height
    cj, sj, rj = cfg.center_jitter, cfg.scale_jitter, cfg.rotation_jitter
    gx = rng.uniform(-cj, cj) * w
    gy = rng.uniform(-cj, cj) * h
    spread = 1.0 + rng.uniform(-sj, sj) * 0.5
    tilt = LUNG_TILT + rng.uniform(-rj, rj) * np.pi
    lungs = []
    for side in (-1, 1):
        ax = LUNG_SEMI_AXES[0] * w * (1.0 + rng.uniform(-sj, sj))
        ay = LUNG_SEMI_AXES[1] * h * (1.0 + rng.uniform(-sj, sj))
        cx = (0.5 + side * LUNG_CENTER_DX * spread) * w + gx - 0.5
        cy = LUNG_CENTER_Y * h + gy - 0.5
        lungs.append(((cx, cy), (ax, ay), side * tilt))
    heart = (
        (HEART_CENTER[0] * w + gx - 0.5 + rng.uniform(-cj, cj) * w,
         HEART_CENTER[1] * h + gy - 0.5 + rng.uniform(-cj, cj) * h),
        (HEART_SEMI_AXES[0] * w * (1.0 + rng.uniform(-sj, sj)),
         HEART_SEMI_AXES[1] * h * (1.0 + rng.uniform(-sj, sj))),
        rng.uniform(-rj, rj) * np.pi,
    )
    return lungs, heart


def _touches_border(region: np.ndarray) -> bool:
    return bool(region[0].any() or region[-1].any() or region[:, 0].any() or region[:, -1].any())


def count_components(mask: LabelMask, cls: int) -> int:
    _, n = ndimage.label(mask.labels == cls)
    return n


def _scene_labels(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray | None:
    shape = (cfg.height, cfg.width)
    lungs, heart = _scene_geometry(cfg, rng)
    labels = np.zeros(shape, dtype=np.uint8)
    regions = []
    for center, axes, angle in lungs:
        region = ellipse_membership(shape, center, axes, angle)
        regions.append(region)
        labels[region] = 1
    if regions[0].any() and regions[1].any():
        # the two lungs must stay separated by at least one background column
        if (ndimage.binary_dilation(regions[0]) & regions[1]).any():
            return None
    if cfg.num_classes == 3:
        region = ellipse_membership(shape, *heart)
        regions.append(region)
        labels[region] = 2
    if any(_touches_border(r) or not r.any() for r in regions):
        return None
    mask = LabelMask(labels, cfg.num_classes)
    for cls in range(1, cfg.num_classes):
        if count_components(mask, cls) != EXPECTED_COMPONENTS[cls]:
            return None
    return labels


def _bias_field(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    h, w = cfg.height, cfg.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    xn = xx / max(w - 1, 1) - 0.5
    yn = yy / max(h - 1, 1) - 0.5
    gx, gy = rng.uniform(-1, 1, size=2)
    phase = rng.uniform(0, 2 * np.pi)
    field = gx * xn + gy * yn + 0.5 * np.cos(np.pi * (xn + yn) + phase)
    return cfg.bias_amplitude * field


def scene_rng(seed: int, index: int) -> np.random.Generator:
    """PCG64 stream keyed on (seed, index) through numpy's SeedSequence."""
    return np.random.default_rng([int(seed) & (2**64 - 1), int(index), 0x5CE9E])


def generate_scene(cfg: SceneConfig, index: int) -> tuple[GrayImage, LabelMask]:
    rng = scene_rng(cfg.seed, index)
    labels = None
    for _ in range(MAX_ATTEMPTS):
        labels = _scene_labels(cfg, rng)
        if labels is not None:
            break
    if labels is None:
        raise GenerationError(
            f"could not place shapes inside the canvas after {MAX_ATTEMPTS} attempts"
        )
    means = np.asarray(cfg.means)
    image = means[labels] + _bias_field(cfg, rng)
    image = image + rng.normal(0.0, 1.0, size=labels.shape) * cfg.noise_sigma
    return GrayImage(np.clip(image, 0.0, 1.0)), LabelMask(labels, cfg.num_classes)


def generate_dataset(cfg: SceneConfig, indices) -> tuple[list[GrayImage], list[LabelMask]]:
    images, masks = [], []
    for i in indices:
        img, m = generate_scene(cfg, i)
        images.append(img)
        masks.append(m)
    return images, masks


# -- weak classifier ------------------------------------------------------------


@dataclass(frozen=True)
class WeakClassifierParams:
    means: tuple
    variances: tuple
    smoothing_radius: int = 1
    quality: float = 0.0
    noise_strength: float = 6.0
    noise_smoothing: float = 2.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "means", tuple(float(m) for m in self.means))
        object.__setattr__(self, "variances", tuple(float(v) for v in self.variances))
        if len(self.means) != len(self.variances) or len(self.means) < 2:
            raise ValueError("need matching per-class means and variances for >= 2 classes")
        if min(self.variances) <= 0:
            raise ValueError("variances must be positive")
        if not 0.0 <= self.quality <= 1.0:
            raise ValueError("quality knob must be in [0, 1]")
        if self.smoothing_radius < 0:
            raise ValueError("smoothing radius must be >= 0")

    @property
    def num_classes(self) -> int:
        return len(self.means)

    def with_quality(self, quality: float) -> "WeakClassifierParams":
        d = asdict(self)
        d["quality"] = quality
        return WeakClassifierParams(**d)


def fit_weak_classifier(images, masks, smoothing_radius: int = 1, seed: int = 0) -> WeakClassifierParams:
    """Maximum-likelihood Gaussian intensity model per class."""
    if len(images) == 0 or len(images) != len(masks):
        raise FittingError("need a non-empty list of images with one mask each")
    num_classes = masks[0].num_classes
    values = np.concatenate([img.intensities.ravel() for img in images])
    labels = np.concatenate([m.labels.ravel() for m in masks])
    means, variances = [], []
    for c in range(num_classes):
        v = values[labels == c]
        if v.size == 0:
            raise FittingError(f"class {c} does not occur in any training mask")
        means.append(float(v.mean()))
        variances.append(max(float(v.var()), VARIANCE_FLOOR))
    return WeakClassifierParams(tuple(means), tuple(variances), smoothing_radius, 0.0, seed=seed)


def _class_posterior(image: GrayImage, params: WeakClassifierParams) -> np.ndarray:
    x = image.intensities[:, :, None]
    mu = np.asarray(params.means)
    var = np.asarray(params.variances)
    loglik = -0.5 * (x - mu) ** 2 / var - 0.5 * np.log(2 * np.pi * var)
    return special.softmax(loglik, axis=2)


def weak_segment(image: GrayImage, params: WeakClassifierParams, index: int = 0) -> SoftMask:
    """Gaussian posterior, box smoothing, then knob-controlled noise mixing.

    The knob blends the posterior logits with a smooth, uniformly drawn noise
    field keyed on ``(params.seed, index)`` and finally mixes the result with
    the uniform distribution, so ``quality=1`` is exactly uniform.
    """
    post = _class_posterior(image, params)
    r = params.smoothing_radius
    if r > 0:
        post = ndimage.uniform_filter(post, size=(2 * r + 1, 2 * r + 1, 1), mode="nearest")
        post /= post.sum(axis=2, keepdims=True)
    q = params.quality
    if q == 0.0:
        return SoftMask(post)
    rng = np.random.default_rng([params.seed, int(index), 0x3EA4])
    noise = rng.uniform(0.0, 1.0, size=post.shape)
    if params.noise_smoothing > 0:
        s = params.noise_smoothing
        noise = ndimage.gaussian_filter(noise, sigma=(s, s, 0), mode="reflect")
    noise = (noise - noise.mean()) / (noise.std() + 1e-12)
    logits = (1.0 - q) * np.log(np.clip(post, 1e-3, 1.0)) + q * params.noise_strength * noise
    mixed = (1.0 - q) * special.softmax(logits, axis=2) + q / params.num_classes
    mixed /= mixed.sum(axis=2, keepdims=True)
    return SoftMask(mixed)
