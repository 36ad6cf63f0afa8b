"""Model assembly: stacked tracker blocks with stride-2 downsampling,
the motion-regression head, and the training loss.

Stage s runs at (grid / 2^s) resolution with channels * 2^s features;
after the final stage only the current-frame feature reaches the head.
The head applies three 3x3 stride-2 convolutions (valid padding, falling
back to same padding once the grid is smaller than the kernel), which
must land exactly on 1x1, then a shared MLP trunk and three independent
subtask heads for (dx, dy), dz, and dtheta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .blocks import BlockParams, FramePair, block_forward
from .exceptions import ConfigError, NumericError, ShapeError
from .geometry import Motion4, PointCloud
from .params import ParamStore
from .pillars import CropSpec, crop, pillarize
from .tensor import Tensor

HEAD_CONVS = 3
HEAD_MAX_CHANNELS = 512


def _head_step(h: int) -> int:
    pad = 0 if h >= 3 else 1
    return (h + 2 * pad - 3) // 2 + 1


@dataclass
class ModelConfig:
    grid: int = 32
    channels: int = 8
    heads: int = 1
    stages: int = 3
    head_trunk: int = 256
    head_widths: Optional[tuple[int, ...]] = None
    ffn_expand: int = 2
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    huber_delta: float = 1.0
    imm: bool = True
    dwc: bool = True
    linear: bool = True
    shared: bool = True

    def validate(self):
        if self.grid < 8 or self.grid & (self.grid - 1):
            raise ConfigError(f"grid must be a power of two >= 8, got {self.grid}")
        if self.stages < 1:
            raise ConfigError("need at least one stage")
        if self.grid >> (self.stages - 1) < 1:
            raise ConfigError(f"grid {self.grid} too small for {self.stages} stages")
        if self.channels % self.heads:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.head_widths is not None and len(self.head_widths) != HEAD_CONVS:
            raise ConfigError(f"head_widths needs {HEAD_CONVS} entries")
        h = self.final_grid
        for _ in range(HEAD_CONVS):
            h = _head_step(h)
        if h != 1:
            raise ConfigError(
                f"final grid {self.final_grid}x{self.final_grid} is not reducible to 1x1 "
                f"by the {HEAD_CONVS} head convolutions")

    # -- bookkeeping -------------------------------------------------------

    @property
    def final_grid(self) -> int:
        return self.grid >> self.stages

    @property
    def final_channels(self) -> int:
        return self.channels << self.stages

    def stage_dims(self) -> list[tuple[int, int]]:
        """(resolution, channels) at the input of each stage."""
        return [(self.grid >> s, self.channels << s) for s in range(self.stages)]

    def head_channel_widths(self) -> tuple[int, ...]:
        if self.head_widths is not None:
            return tuple(self.head_widths)
        c = self.final_channels
        return tuple(min(HEAD_MAX_CHANNELS, c << (i + 1)) for i in range(HEAD_CONVS))

    def shape_chain(self) -> list[tuple[int, int, int]]:
        """(H, W, C) through pillars, stages, and head convs; ends at the
        flattened head input (1, 1, C)."""
        chain = [(self.grid, self.grid, self.channels)]
        for s in range(1, self.stages + 1):
            chain.append((self.grid >> s, self.grid >> s, self.channels << s))
        h = self.final_grid
        for c in self.head_channel_widths():
            h = _head_step(h)
            chain.append((h, h, c))
        return chain


@dataclass
class HeadParams:
    conv_w: list[Tensor]
    conv_b: list[Tensor]
    conv_ln: list[tuple[Tensor, Tensor]]
    trunk_w: Tensor
    trunk_b: Tensor
    xy_w: Tensor
    xy_b: Tensor
    z_w: Tensor
    z_b: Tensor
    th_w: Tensor
    th_b: Tensor


def _kaiming(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class TrackerModel:
    """Owns the ParamStore and wires pillar encoder, blocks, and head."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.store = ParamStore()
        self._build(np.random.default_rng(seed))

    def _build(self, rng):
        cfg = self.config
        new = self.store.create
        self.pillar_w = new("pillar.w", _kaiming(rng, (8, cfg.channels), 8))
        self.pillar_b = new("pillar.b", np.zeros(cfg.channels))

        self.blocks: list[BlockParams] = []
        self.downs: list[tuple[Tensor, Tensor]] = []
        for s, (H, C) in enumerate(cfg.stage_dims(), start=1):
            p = f"stage{s}."
            N, d = H * H, C // cfg.heads
            bp = BlockParams(
                H=H, W=H, C=C, heads=cfg.heads,
                cnn_w=new(p + "cnn.w", _kaiming(rng, (3, 3, C, C), 9 * C)),
                cnn_b=new(p + "cnn.b", np.zeros(C)),
                pos=new(p + "pos", rng.uniform(-0.02, 0.02, size=(N, C))),
                ln1_g=new(p + "ln1.g", np.ones(C)),
                ln1_b=new(p + "ln1.b", np.zeros(C)),
                wq=new(p + "wq", _kaiming(rng, (C, C), C)),
                wk=new(p + "wk", _kaiming(rng, (C, C), C)),
                wv=new(p + "wv", _kaiming(rng, (C, C), C)),
                lo_w=new(p + "lo.w", _kaiming(rng, (C, C), C)),
                lo_b=new(p + "lo.b", np.zeros(C)),
                ln2_g=new(p + "ln2.g", np.ones(C)),
                ln2_b=new(p + "ln2.b", np.zeros(C)),
                ffn1_w=new(p + "ffn1.w", _kaiming(rng, (C, cfg.ffn_expand * C), C)),
                ffn1_b=new(p + "ffn1.b", np.zeros(cfg.ffn_expand * C)),
                ffn2_w=new(p + "ffn2.w", _kaiming(rng, (cfg.ffn_expand * C, C),
                                                  cfg.ffn_expand * C)),
                ffn2_b=new(p + "ffn2.b", np.zeros(C)),
            )
            if cfg.dwc:
                bp.dwc_w = new(p + "dwc.w", _kaiming(rng, (3, 3, C), 9))
            if cfg.linear:
                bp.lin_w = new(p + "lin.w", _kaiming(rng, (C, C), C))
                bp.lin_b = new(p + "lin.b", np.zeros(C))
            if cfg.imm:
                bp.alpha = new(p + "alpha", np.asarray(0.5))
                bp.gate_w = new(p + "gate.w", _kaiming(rng, (cfg.heads, N, d), N))
                bp.gate_b = new(p + "gate.b", np.zeros((cfg.heads, d)))
            if not cfg.shared:
                bp.cnn_prev_w = new(p + "cnn_prev.w", _kaiming(rng, (3, 3, C, C), 9 * C))
                bp.cnn_prev_b = new(p + "cnn_prev.b", np.zeros(C))
                if cfg.dwc:
                    bp.dwc_prev_w = new(p + "dwc_prev.w", _kaiming(rng, (3, 3, C), 9))
                if cfg.linear:
                    bp.lin_prev_w = new(p + "lin_prev.w", _kaiming(rng, (C, C), C))
                    bp.lin_prev_b = new(p + "lin_prev.b", np.zeros(C))
            self.blocks.append(bp)
            self.downs.append((
                new(f"down{s}.w", _kaiming(rng, (3, 3, C, 2 * C), 9 * C)),
                new(f"down{s}.b", np.zeros(2 * C)),
            ))

        cin = cfg.final_channels
        conv_w, conv_b, conv_ln = [], [], []
        for i, cout in enumerate(cfg.head_channel_widths(), start=1):
            conv_w.append(new(f"head.conv{i}.w", _kaiming(rng, (3, 3, cin, cout), 9 * cin)))
            conv_b.append(new(f"head.conv{i}.b", np.zeros(cout)))
            conv_ln.append((new(f"head.conv{i}.ln.g", np.ones(cout)),
                            new(f"head.conv{i}.ln.b", np.zeros(cout))))
            cin = cout
        trunk = cfg.head_trunk
        self.head = HeadParams(
            conv_w=conv_w, conv_b=conv_b, conv_ln=conv_ln,
            trunk_w=new("head.trunk.w", _kaiming(rng, (cin, trunk), cin)),
            trunk_b=new("head.trunk.b", np.zeros(trunk)),
            # subtask outputs start at zero so the untrained model predicts
            # exactly zero motion
            xy_w=new("head.xy.w", np.zeros((trunk, 2))),
            xy_b=new("head.xy.b", np.zeros(2)),
            z_w=new("head.z.w", np.zeros((trunk, 1))),
            z_b=new("head.z.b", np.zeros(1)),
            th_w=new("head.th.w", np.zeros((trunk, 1))),
            th_b=new("head.th.b", np.zeros(1)),
        )

    def randomize_all(self, rng):
        """Re-draw every parameter with nonzero values (gradient checking
        needs the zero-initialized subtask heads off their saddle)."""
        for name, t in self.store.items():
            parts = name.split(".")
            if parts[-1] == "g" and parts[-2].startswith("ln"):
                t.data = rng.uniform(0.9, 1.1, size=t.data.shape)
            elif name.endswith("alpha"):
                t.data = np.asarray(rng.uniform(0.3, 0.7))
            else:
                fan = t.data.shape[0] if t.data.ndim else 1
                t.data = rng.uniform(-0.3, 0.3, size=t.data.shape) / math.sqrt(fan)

    def alphas(self) -> list[float]:
        return [bp.alpha.item() for bp in self.blocks if bp.alpha is not None]

    # -- forward -----------------------------------------------------------

    def encode(self, cloud: PointCloud, spec: CropSpec) -> Tensor:
        if spec.grid != (self.config.grid, self.config.grid):
            raise ConfigError(f"crop grid {spec.grid} does not match model grid "
                              f"{self.config.grid}")
        # idempotent for already-cropped clouds; augmentation can push
        # points past the window
        return pillarize(crop(cloud, spec), spec, self.pillar_w, self.pillar_b)

    def backbone_forward(self, pair: FramePair) -> Tensor:
        cfg = self.config
        prev, curr = pair.prev, pair.curr
        for bp, (dw, db) in zip(self.blocks, self.downs):
            tokens = block_forward(FramePair(prev, curr), bp)
            curr = T.conv2d(T.reshape(tokens, (bp.H, bp.W, bp.C)), dw, db, stride=2)
            # the previous-frame stream advances through the same stride-2
            # conv so the next stage sees a pair at matching resolution;
            # with the motion module off it is never read
            prev = T.conv2d(prev, dw, db, stride=2) if cfg.imm else curr
        return curr

    def head_forward(self, feat: Tensor) -> Tensor:
        cfg = self.config
        expected = (cfg.final_grid, cfg.final_grid, cfg.final_channels)
        if feat.shape != expected:
            raise ShapeError(f"head input {feat.shape} does not match {expected}")
        x = feat
        for w, b, (g, beta) in zip(self.head.conv_w, self.head.conv_b, self.head.conv_ln):
            pad = 0 if x.shape[0] >= 3 else 1
            x = T.silu(T.layernorm(T.conv2d(x, w, b, stride=2, padding=pad), g, beta))
        x = T.reshape(x, (1, x.shape[2]))
        trunk = T.silu(T.linear(x, self.head.trunk_w, self.head.trunk_b))
        xy = T.linear(trunk, self.head.xy_w, self.head.xy_b)
        z = T.linear(trunk, self.head.z_w, self.head.z_b)
        th = T.wrap_angle(T.linear(trunk, self.head.th_w, self.head.th_b))
        return T.reshape(T.concat([xy, z, th], axis=-1), (4,))

    def forward_grids(self, prev_grid: Tensor, curr_grid: Tensor) -> Tensor:
        return self.head_forward(self.backbone_forward(FramePair(prev_grid, curr_grid)))

    def forward_clouds(self, prev_cloud: PointCloud, curr_cloud: PointCloud,
                       spec: CropSpec) -> Tensor:
        curr_grid = self.encode(curr_cloud, spec)
        prev_grid = self.encode(prev_cloud, spec) if self.config.imm else curr_grid
        return self.forward_grids(prev_grid, curr_grid)


def motion_loss(pred4: Tensor, target: Motion4, config: ModelConfig) -> Tensor:
    """Weighted Huber losses over (dx, dy), dz, and the wrapped angular
    residual. Zero iff prediction equals target after angle wrap."""
    t = target.as_array()
    if not np.isfinite(t).all():
        raise NumericError(f"non-finite motion target {t}")
    diff = T.sub(pred4, Tensor(t))
    delta = config.huber_delta
    l_xy = T.sum_all(T.huber(T.slice_cols(diff, 0, 2), delta))
    l_z = T.sum_all(T.huber(T.slice_cols(diff, 2, 3), delta))
    l_th = T.sum_all(T.huber(T.wrap_angle(T.slice_cols(diff, 3, 4)), delta))
    return T.add(T.add(T.scale(l_xy, config.lambda1), T.scale(l_z, config.lambda2)),
                 T.scale(l_th, config.lambda3))
