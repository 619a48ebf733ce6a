"""Denoising autoencoder over one-hot label masks.

The encoder halves the resolution at every stage with strided 3x3
convolutions and ends in a linear bottleneck; the decoder expands the code
with a dense layer and restores the resolution through upsampling
convolutions. Training pairs a freshly corrupted mask with its clean
version; post-processing pushes any mask through the trained network.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import degrade as deg
from .autodiff import AdamState, LayerSpec, Sequential, Tensor, TrainingError, adam_step, soft_dice_loss
from .autodiff import checkpoint
from .metrics import foreground_dice
from .raster import LabelMask, SoftMask, argmax_labels, binarize

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DaeConfig:
    input_size: int = 64
    num_classes: int = 2
    encoder_channels: tuple = (16, 32, 32, 32, 32)
    decoder_channels: tuple = (16, 16, 16, 16, 16)
    latent_dim: int | None = None
    expand_units: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        object.__setattr__(self, "decoder_channels", tuple(int(c) for c in self.decoder_channels))
        if self.latent_dim is None:
            object.__setattr__(self, "latent_dim", 64 if self.num_classes == 2 else 128)
        if self.expand_units is None:
            object.__setattr__(self, "expand_units", 2 * self.latent_dim)
        n = self.input_size
        if n < 4 or n & (n - 1):
            raise ConfigError(f"input size must be a power of two >= 4, got {n}")
        if self.num_classes not in (2, 3):
            raise ConfigError("num_classes must be 2 or 3")
        if not self.encoder_channels or len(self.encoder_channels) != len(self.decoder_channels):
            raise ConfigError("encoder and decoder need the same, non-zero number of stages")
        if min(self.encoder_channels + self.decoder_channels) < 1:
            raise ConfigError("channel widths must be positive")
        if self.bottleneck_size < 2:
            raise ConfigError(
                f"{len(self.encoder_channels)} stride-2 stages shrink {n}px below 2x2"
            )
        if self.latent_dim < 1 or self.expand_units % (self.bottleneck_size**2):
            raise ConfigError("expand_units must be a multiple of the bottleneck area")

    @property
    def bottleneck_size(self) -> int:
        return self.input_size >> len(self.encoder_channels)

    @property
    def output_channels(self) -> int:
        return 1 if self.num_classes == 2 else self.num_classes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        d["decoder_channels"] = list(self.decoder_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DaeConfig":
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 8
    lr: float = 1e-4
    seed: int = 0
    checkpoint_interval: int = 0
    degradation: deg.DegradationConfig = field(default_factory=lambda: deg.TRAIN_PRESET)
    dice_eps: float = 1.0

    def __post_init__(self):
        if isinstance(self.degradation, dict):
            object.__setattr__(self, "degradation", deg.DegradationConfig.from_dict(self.degradation))
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("need epochs >= 1, batch_size >= 1 and lr > 0")
        if self.checkpoint_interval < 0:
            raise ConfigError("checkpoint interval must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["degradation"] = self.degradation.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("degradation"), str):
            d["degradation"] = deg.preset(d["degradation"])
        return cls(**d)


def build_specs(cfg: DaeConfig) -> tuple[list[LayerSpec], int]:
    """Layer list and the index where the decoder starts."""
    specs = []
    cin = cfg.num_classes
    last = len(cfg.encoder_channels) - 1
    for i, c in enumerate(cfg.encoder_channels):
        specs += [LayerSpec("conv3x3", 2, cin, c), LayerSpec("relu")]
        if i < last:
            specs += [LayerSpec("conv3x3", 1, c, c), LayerSpec("relu")]
        cin = c
    s = cfg.bottleneck_size
    specs += [LayerSpec("flatten"), LayerSpec("dense", in_channels=cin * s * s, units=cfg.latent_dim)]
    split = len(specs)
    expand_channels = cfg.expand_units // (s * s)
    specs += [
        LayerSpec("dense", in_channels=cfg.latent_dim, units=cfg.expand_units),
        LayerSpec("relu"),
        LayerSpec("unflatten", out_channels=expand_channels, units=s),
    ]
    cin = expand_channels
    last = len(cfg.decoder_channels) - 1
    for j, c in enumerate(cfg.decoder_channels):
        specs += [LayerSpec("upconv", 1, cin, c), LayerSpec("relu")]
        if j < last:
            specs += [LayerSpec("conv3x3", 1, c, c), LayerSpec("relu")]
        else:
            specs.append(LayerSpec("conv3x3", 1, c, cfg.output_channels))
            specs.append(LayerSpec("sigmoid" if cfg.output_channels == 1 else "softmax_channels"))
        cin = c
    return specs, split


class DaeModel:
    def __init__(self, config: DaeConfig, net: Sequential):
        self.config = config
        self.net = net
        self.split = build_specs(config)[1]

    def parameters(self) -> list[Tensor]:
        return self.net.parameters()

    def encode(self, x: Tensor) -> Tensor:
        self._check_input(x)
        return self.net.forward(x, stop=self.split)

    def decode(self, h: Tensor) -> Tensor:
        return self.net.forward(h, start=self.split)

    def forward(self, x: Tensor) -> Tensor:
        self._check_input(x)
        return self.net.forward(x)

    __call__ = forward

    def _check_input(self, x: Tensor):
        n = self.config.input_size
        expected = (self.config.num_classes, n, n)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ValueError(f"model expects input (N, {expected[0]}, {n}, {n}), got {x.shape}")

    def to_bytes(self, extra_meta: dict | None = None) -> bytes:
        meta = {"dae_config": self.config.to_dict()}
        if extra_meta:
            meta.update(extra_meta)
        return checkpoint.dumps(self.net.specs, self.parameters(), meta)

    def save(self, path, extra_meta: dict | None = None) -> None:
        Path(path).write_bytes(self.to_bytes(extra_meta))


def build_dae(cfg: DaeConfig, seed: int = 0) -> DaeModel:
    specs, _ = build_specs(cfg)
    return DaeModel(cfg, Sequential(specs, seed=seed))


def model_from_bytes(buf: bytes) -> DaeModel:
    specs, arrays, meta = checkpoint.loads(buf)
    cfg = DaeConfig.from_dict(meta["dae_config"])
    expected, _ = build_specs(cfg)
    if specs != expected:
        raise checkpoint.CheckpointError("layer table does not match the stored configuration")
    try:
        net = Sequential.from_flat(specs, arrays)
    except ValueError as exc:
        raise checkpoint.CheckpointError(str(exc)) from None
    return DaeModel(cfg, net)


def load_model(path) -> DaeModel:
    return model_from_bytes(Path(path).read_bytes())


# -- tensors <-> masks ----------------------------------------------------------------


def masks_to_array(masks, num_classes: int) -> np.ndarray:
    labels = np.stack([m.labels for m in masks])
    return np.eye(num_classes)[labels].transpose(0, 3, 1, 2)


def target_array(masks, cfg: DaeConfig) -> np.ndarray:
    onehot = masks_to_array(masks, cfg.num_classes)
    return onehot[:, 1:2] if cfg.output_channels == 1 else onehot


def output_to_soft(out: np.ndarray) -> list[SoftMask]:
    if out.shape[1] == 1:
        p = out[:, 0]
        probs = np.stack([1.0 - p, p], axis=-1)
    else:
        probs = out.transpose(0, 2, 3, 1)
    return [SoftMask(p) for p in probs]


def discretize(soft: SoftMask) -> LabelMask:
    return binarize(soft, 0.5) if soft.num_classes == 2 else argmax_labels(soft)


# -- training ----------------------------------------------------------------------------


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) & (2**64 - 1) for p in parts]).generate_state(1, np.uint64)[0])


def _loss_on(model: DaeModel, inputs, targets, eps: float) -> Tensor:
    cfg = model.config
    x = Tensor(masks_to_array(inputs, cfg.num_classes))
    return soft_dice_loss(model(x), target_array(targets, cfg), eps)


def train(
    data,
    train_cfg: TrainConfig,
    dae_cfg: DaeConfig,
    checkpoint_dir=None,
    validation=None,
    model: DaeModel | None = None,
    on_epoch=None,
):
    """Fit a DAE on clean masks, corrupting each sample afresh every epoch.

    Returns ``(model, history)``. ``validation`` is an optional list of clean
    masks; they are corrupted once, up front, so the validation curve is
    comparable across epochs. With ``checkpoint_dir`` set, a checkpoint is
    written every ``checkpoint_interval`` epochs plus ``model_final.ckpt``.
    """
    data = list(data)
    if not data:
        raise ValueError("training needs at least one mask")
    n = dae_cfg.input_size
    for m in data:
        if m.shape != (n, n) or m.num_classes != dae_cfg.num_classes:
            raise ValueError(
                f"training masks must be {n}x{n} with {dae_cfg.num_classes} classes, got {m!r}"
            )
    if model is None:
        model = build_dae(dae_cfg, seed=train_cfg.seed)
    params = model.parameters()
    state = AdamState(lr=train_cfg.lr)
    deg_cfg = train_cfg.degradation.with_seed(_derived_seed(train_cfg.seed, train_cfg.degradation.seed))
    history = TrainHistory()

    val_pairs = None
    if validation:
        val_cfg = deg_cfg.with_seed(_derived_seed(train_cfg.seed, 0x7A1))
        val_pairs = [deg.degrade_pair(m, val_cfg, i) for i, m in enumerate(validation)]

    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    count = len(data)
    bs = train_cfg.batch_size
    for epoch in range(train_cfg.epochs):
        order = np.random.default_rng([train_cfg.seed, epoch, 0xBA7C]).permutation(count)
        total = 0.0
        for step, start in enumerate(range(0, count, bs)):
            idx = order[start : start + bs]
            pairs = [deg.degrade_pair(data[i], deg_cfg, epoch * count + int(i)) for i in idx]
            loss = _loss_on(model, [p[1] for p in pairs], [p[0] for p in pairs], train_cfg.dice_eps)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
            model.net.zero_grad()
            loss.backward()
            adam_step(params, [p.grad for p in params], state)
            total += value * len(idx)
        history.loss.append(total / count)
        if val_pairs:
            vl = _loss_on(model, [p[1] for p in val_pairs], [p[0] for p in val_pairs], train_cfg.dice_eps)
            history.val_loss.append(vl.item())
        log.info("epoch %d loss %.5f", epoch, history.loss[-1])
        if on_epoch is not None:
            on_epoch(epoch, history)
        interval = train_cfg.checkpoint_interval
        if checkpoint_dir is not None and interval and (epoch + 1) % interval == 0:
            model.save(checkpoint_dir / f"model_epoch_{epoch + 1:04d}.ckpt")
    model.net.zero_grad()
    if checkpoint_dir is not None:
        model.save(checkpoint_dir / "model_final.ckpt")
    return model, history


# -- post-processing -----------------------------------------------------------------------


def _as_label_mask(item) -> LabelMask:
    return discretize(item) if isinstance(item, SoftMask) else item


def postprocess_batch(model: DaeModel, inputs, batch_size: int = 16) -> list[LabelMask]:
    cfg = model.config
    masks = [_as_label_mask(m) for m in inputs]
    for m in masks:
        if m.num_classes != cfg.num_classes:
            raise ValueError(f"model handles {cfg.num_classes} classes, mask has {m.num_classes}")
        if m.shape != (cfg.input_size, cfg.input_size):
            raise ValueError(
                f"mask is {m.width}x{m.height}, model expects {cfg.input_size}x{cfg.input_size}; "
                "rescale it first"
            )
    out = []
    for start in range(0, len(masks), batch_size):
        chunk = masks[start : start + batch_size]
        y = model(Tensor(masks_to_array(chunk, cfg.num_classes))).data
        out += [discretize(s) for s in output_to_soft(y)]
    return out


def postprocess(model: DaeModel, mask) -> LabelMask:
    """Project a (possibly soft) mask through the autoencoder."""
    return postprocess_batch(model, [mask])[0]


def plausibility_score(model: DaeModel, mask: LabelMask, projected: LabelMask | None = None) -> float:
    """1 - Dice(mask, postprocess(mask)); 0 means the mask is a fixed point."""
    if projected is None:
        projected = postprocess(model, mask)
    return 1.0 - foreground_dice(mask, projected)
