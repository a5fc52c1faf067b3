"""PraNet graph: conv encoder, parallel partial decoder, reverse-attention branches.

Parameters are a flat ``dict[str, Tensor]`` keyed by stable dotted paths, so
checkpoints and optimizers never need to know the module structure.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import ops
from .autograd import Tensor
from .errors import InvalidArgument

STANDARDIZE_EPS = 1e-4


@dataclass
class ModelConfig:
    input_size: int = 352
    level_channels: tuple = (8, 16, 24, 32, 40)
    reduced_channels: int = 16
    refine_depth: int = 3
    enable_ppd: bool = True
    enable_ra: bool = True

    def __post_init__(self):
        self.level_channels = tuple(int(c) for c in self.level_channels)
        if len(self.level_channels) != 5 or min(self.level_channels) <= 0:
            raise InvalidArgument(f"level_channels must be 5 positive ints, got {self.level_channels}")
        if self.input_size <= 0 or self.input_size % 16:
            raise InvalidArgument(f"input_size must be a positive multiple of 16, got {self.input_size}")
        if self.reduced_channels <= 0 or self.refine_depth <= 0:
            raise InvalidArgument("reduced_channels and refine_depth must be positive")

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        return cls(**{"input_size": 64, **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["level_channels"] = list(self.level_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class FeaturePyramid(NamedTuple):
    f1: Tensor
    f2: Tensor
    f3: Tensor
    f4: Tensor
    f5: Tensor


class SideOutputs(NamedTuple):
    s_g: Tensor
    s5: Tensor
    s4: Tensor
    s3: Tensor


@dataclass(frozen=True)
class ConvSpec:
    cin: int
    cout: int
    k: int
    stride: int = 1

    @property
    def padding(self) -> int:
        return self.k // 2


def layer_specs(config: ModelConfig) -> dict:
    """Ordered ``{prefix: ConvSpec}`` for every conv layer the config enables."""
    c = config.level_channels
    cr = config.reduced_channels
    specs = {}
    prev = 3
    for k in range(5):
        specs[f"backbone.stage{k + 1}.conv1"] = ConvSpec(prev, c[k], 3, 1 if k == 0 else 2)
        specs[f"backbone.stage{k + 1}.conv2"] = ConvSpec(c[k], c[k], 3)
        prev = c[k]
    if config.enable_ppd:
        for lvl in (3, 4, 5):
            specs[f"ppd.reduce{lvl}.conv3"] = ConvSpec(c[lvl - 1], cr, 3)
            specs[f"ppd.reduce{lvl}.conv1"] = ConvSpec(cr, cr, 1)
        specs["ppd.fuse"] = ConvSpec(3 * cr, cr, 3)
        specs["ppd.head"] = ConvSpec(cr, 1, 1)
    else:
        specs["plain_head"] = ConvSpec(c[4], 1, 1)
    if config.enable_ra:
        for lvl in (5, 4, 3):
            cin = c[lvl - 1]
            for j in range(config.refine_depth):
                last = j == config.refine_depth - 1
                specs[f"ra{lvl}.conv{j + 1}"] = ConvSpec(cin, 1 if last else cr, 3)
                cin = cr
    return specs


def param_count(config: ModelConfig) -> int:
    return sum(s.cout * s.cin * s.k * s.k + s.cout for s in layer_specs(config).values())


def init_params(config: ModelConfig, seed: int) -> dict:
    """Fan-in uniform initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), weights then bias."""
    rng = np.random.default_rng(seed)
    params = {}
    for prefix, s in layer_specs(config).items():
        bound = 1.0 / np.sqrt(s.cin * s.k * s.k)
        w = rng.uniform(-bound, bound, size=(s.cout, s.cin, s.k, s.k))
        b = rng.uniform(-bound, bound, size=(s.cout,))
        params[f"{prefix}.weight"] = Tensor(w.astype(np.float32), requires_grad=True)
        params[f"{prefix}.bias"] = Tensor(b.astype(np.float32), requires_grad=True)
    return params


def zero_params(config: ModelConfig) -> dict:
    return {
        k: Tensor(np.zeros(v.shape, dtype=np.float32), requires_grad=True)
        for k, v in init_params(config, 0).items()
    }


def _conv(x: Tensor, params: dict, prefix: str, stride: int = 1) -> Tensor:
    w = params[f"{prefix}.weight"]
    return ops.conv2d(x, w, params[f"{prefix}.bias"], stride=stride, padding=w.shape[2] // 2)


def _resize_to(x: Tensor, ref: Tensor) -> Tensor:
    return ops.bilinear_resize(x, ref.shape[2], ref.shape[3])


def standardize(image: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance per image and channel. Not differentiated."""
    mu = image.mean(axis=(2, 3), keepdims=True)
    var = image.var(axis=(2, 3), keepdims=True)
    return ((image - mu) / np.sqrt(var + STANDARDIZE_EPS)).astype(image.dtype)


def backbone_forward(image: Tensor, params: dict, config: ModelConfig) -> FeaturePyramid:
    if image.ndim != 4 or image.shape[1] != 3:
        raise InvalidArgument(f"expected an [N,3,H,W] image, got {image.shape}")
    h, w = image.shape[2:]
    if h != w or h % 16:
        raise InvalidArgument(f"image extent {h}x{w} must be square and divisible by 16")
    feats = []
    x = Tensor(standardize(image.data), dtype=image.dtype)
    for k in range(1, 6):
        x = ops.relu(_conv(x, params, f"backbone.stage{k}.conv1", stride=1 if k == 1 else 2))
        x = ops.relu(_conv(x, params, f"backbone.stage{k}.conv2"))
        feats.append(x)
    return FeaturePyramid(*feats)


def partial_decoder(f3: Tensor, f4: Tensor, f5: Tensor, params: dict, config: ModelConfig):
    """Aggregate the three deepest levels into ``(PD, S_g)`` at the stride of ``f3``."""
    if not f3.shape[0] == f4.shape[0] == f5.shape[0]:
        raise InvalidArgument("partial_decoder inputs disagree on batch extent")
    r = {}
    for lvl, f in ((3, f3), (4, f4), (5, f5)):
        y = ops.relu(_conv(f, params, f"ppd.reduce{lvl}.conv3"))
        r[lvl] = _conv(y, params, f"ppd.reduce{lvl}.conv1")
    h5 = r[5]
    h4 = ops.mul(r[4], _resize_to(h5, r[4]))
    h5_at3 = _resize_to(h5, r[3])
    h4_at3 = _resize_to(h4, r[3])
    h3 = ops.mul(ops.mul(r[3], h4_at3), h5_at3)
    pd = _conv(ops.concat_channels([h3, h4_at3, h5_at3]), params, "ppd.fuse")
    s_g = _conv(pd, params, "ppd.head")
    return pd, s_g


def reverse_attention_branch(f: Tensor, s_next: Tensor, params: dict, config: ModelConfig,
                             level: int, return_parts: bool = False):
    """Erase what the coarser map already predicts and refine the residual.

    With ``return_parts`` the intermediate ``(u, A, R, y)`` are returned too.
    """
    if s_next.ndim != 4 or s_next.shape[1] != 1:
        raise InvalidArgument(f"coarse map must have one channel, got {s_next.shape}")
    if s_next.shape[0] != f.shape[0]:
        raise InvalidArgument("feature and coarse map disagree on batch extent")
    u = _resize_to(s_next, f)
    a = ops.reverse_sigmoid(u)
    r = ops.mul(f, a)
    y = r
    for j in range(1, config.refine_depth + 1):
        y = _conv(y, params, f"ra{level}.conv{j}")
        if j < config.refine_depth:
            y = ops.relu(y)
    s = ops.add(y, u)
    if return_parts:
        return s, (u, a, r, y)
    return s


def forward(image: Tensor, params: dict, config: ModelConfig) -> SideOutputs:
    f = backbone_forward(image, params, config)
    if config.enable_ppd:
        _, s_g = partial_decoder(f.f3, f.f4, f.f5, params, config)
    else:
        s_g = _resize_to(_conv(f.f5, params, "plain_head"), f.f3)
    if config.enable_ra:
        s5 = reverse_attention_branch(f.f5, s_g, params, config, 5)
        s4 = reverse_attention_branch(f.f4, s5, params, config, 4)
        s3 = reverse_attention_branch(f.f3, s4, params, config, 3)
    else:
        s5 = _resize_to(s_g, f.f5)
        s4 = _resize_to(s_g, f.f4)
        s3 = _resize_to(s_g, f.f3)
    return SideOutputs(s_g, s5, s4, s3)


def predict_from_logits(s3: Tensor, h: int, w: int) -> Tensor:
    return ops.sigmoid(ops.bilinear_resize(s3, h, w))


def predict(image: Tensor, params: dict, config: ModelConfig) -> Tensor:
    """Foreground probability map at the input resolution."""
    outs = forward(image, params, config)
    return predict_from_logits(outs.s3, image.shape[2], image.shape[3])


def cast_params(params: dict, dtype) -> dict:
    return {k: Tensor(v.data.astype(dtype), requires_grad=True, dtype=dtype)
            for k, v in params.items()}
