"""Layer descriptions and a minimal sequential network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor

PARAM_KINDS = ("conv3x3", "upconv", "dense")
KINDS = PARAM_KINDS + ("maxpool2x2", "relu", "sigmoid", "softmax_channels", "flatten", "unflatten")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    stride: int = 1
    in_channels: int = 0
    out_channels: int = 0
    units: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        if self.stride == 2 and self.kind not in ("conv3x3", "maxpool2x2"):
            raise ValueError(f"stride 2 is only valid for conv and pooling, not {self.kind}")
        if self.kind in ("conv3x3", "upconv") and (self.in_channels < 1 or self.out_channels < 1):
            raise ValueError("conv layers need positive channel counts")
        if self.kind == "dense" and (self.in_channels < 1 or self.units < 1):
            raise ValueError("dense layers need positive input size and units")
        if self.kind == "unflatten" and (self.out_channels < 1 or self.units < 1):
            raise ValueError("unflatten needs channels (out_channels) and side length (units)")

    @property
    def has_params(self) -> bool:
        return self.kind in PARAM_KINDS

    def param_shapes(self) -> list[tuple]:
        if self.kind in ("conv3x3", "upconv"):
            return [(self.out_channels, self.in_channels, 3, 3), (self.out_channels,)]
        if self.kind == "dense":
            return [(self.in_channels, self.units), (self.units,)]
        return []

    def fan_in(self) -> int:
        if self.kind in ("conv3x3", "upconv"):
            return self.in_channels * 9
        return self.in_channels


def init_params(spec: LayerSpec, rng: np.random.Generator) -> list[Tensor]:
    """He-style uniform init scaled by fan-in; biases start at zero."""
    if not spec.has_params:
        return []
    wshape, bshape = spec.param_shapes()
    bound = np.sqrt(6.0 / spec.fan_in())
    w = Tensor(rng.uniform(-bound, bound, size=wshape), requires_grad=True)
    b = Tensor(np.zeros(bshape), requires_grad=True)
    return [w, b]


def apply_layer(spec: LayerSpec, params: list[Tensor], x: Tensor) -> Tensor:
    k = spec.kind
    if k == "conv3x3":
        return ops.conv2d(x, params[0], params[1], stride=spec.stride)
    if k == "upconv":
        return ops.upconv(x, params[0], params[1])
    if k == "dense":
        return ops.dense(x, params[0], params[1])
    if k == "maxpool2x2":
        return ops.maxpool2x2(x)
    if k == "relu":
        return ops.relu(x)
    if k == "sigmoid":
        return ops.sigmoid(x)
    if k == "softmax_channels":
        return ops.softmax_channels(x)
    if k == "flatten":
        return ops.flatten(x)
    if k == "unflatten":
        return ops.unflatten(x, spec.out_channels, spec.units, spec.units)
    raise ValueError(k)


class Sequential:
    """Ordered layers with their parameter tensors."""

    def __init__(self, specs, params=None, seed: int = 0):
        self.specs = list(specs)
        if params is None:
            params = [
                init_params(spec, np.random.default_rng([int(seed), i, 0x1A7E]))
                for i, spec in enumerate(self.specs)
            ]
        if len(params) != len(self.specs):
            raise ValueError("need one parameter list per layer")
        for spec, ps in zip(self.specs, params):
            if [p.shape for p in ps] != spec.param_shapes():
                raise ValueError(f"parameter shapes do not match layer {spec}")
        self.layer_params = [list(ps) for ps in params]

    @classmethod
    def from_flat(cls, specs, arrays) -> "Sequential":
        """Rebuild from the flat, declaration-ordered parameter arrays."""
        it = iter(arrays)
        try:
            params = [[Tensor(next(it), requires_grad=True) for _ in s.param_shapes()] for s in specs]
        except StopIteration:
            raise ValueError("too few parameter arrays for the layer table") from None
        if next(it, None) is not None:
            raise ValueError("too many parameter arrays for the layer table")
        return cls(specs, params)

    def parameters(self) -> list[Tensor]:
        return [p for ps in self.layer_params for p in ps]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def forward(self, x: Tensor, start: int = 0, stop: int | None = None) -> Tensor:
        stop = len(self.specs) if stop is None else stop
        for spec, ps in zip(self.specs[start:stop], self.layer_params[start:stop]):
            x = apply_layer(spec, ps, x)
        return x

    __call__ = forward
