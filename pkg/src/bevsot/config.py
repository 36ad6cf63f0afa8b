"""Run configuration: a flat key=value schema shared by the config file
format and the CLI flags. Unknown keys are hard errors so ablation typos
cannot pass silently; a run's resolved config is echoed into its output
directory and reproduces the run bit-identically together with the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .exceptions import ConfigError
from .model import ModelConfig
from .pillars import CropSpec, ratio_crop_spec
from .scene import SceneConfig
from .train import TrainSettings


@dataclass
class RunConfig:
    # model
    grid: int = 32
    channels: int = 8
    heads: int = 1
    stages: int = 3
    head_trunk: int = 256
    ffn_expand: int = 2
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    huber_delta: float = 1.0
    imm: bool = True
    dwc: bool = True
    linear: bool = True
    shared: bool = True
    # crop window: fixed symmetric ranges (default) or a window proportional
    # to the target box size (crop_mode=ratio)
    crop_mode: str = "fixed"
    crop_xy: float = 4.8
    crop_z: float = 1.5
    crop_ratio: float = 2.0
    # training
    lr: float = 5e-4
    weight_decay: float = 0.01
    batch: int = 4
    epochs: int = 5
    decay_factor: float = 5.0
    decay_interval: int = 20
    max_steps: int = 0
    augment: bool = True
    flip_axis: str = "x"
    max_rot_deg: float = 5.0
    # scene generation
    sequences: int = 48
    scene_length: int = 16
    speed_min: float = 0.10
    speed_max: float = 0.35
    yaw_rate_max: float = 0.04
    points_per_m2: float = 40.0
    clutter_density: float = 0.6
    clutter_extent: float = 10.0
    occlusion_dropout: float = 0.1
    surface_noise: float = 0.01
    size_w: float = 1.8
    size_h: float = 1.6
    size_l: float = 4.2
    size_jitter: float = 0.1
    static_fraction: float = 0.25
    # general
    seed: int = 0

    # -- derived views ------------------------------------------------------

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            grid=self.grid, channels=self.channels, heads=self.heads,
            stages=self.stages, head_trunk=self.head_trunk,
            ffn_expand=self.ffn_expand, lambda1=self.lambda1,
            lambda2=self.lambda2, lambda3=self.lambda3,
            huber_delta=self.huber_delta, imm=self.imm, dwc=self.dwc,
            linear=self.linear, shared=self.shared)

    def crop_spec(self, target_box=None) -> CropSpec:
        """The crop window; pass the sequence's target box for ratio mode."""
        if self.crop_mode == "ratio":
            if target_box is None:
                raise ConfigError("crop_mode=ratio needs the sequence's target box")
            return ratio_crop_spec(target_box, ratio=self.crop_ratio,
                                   grid=(self.grid, self.grid),
                                   z_range=(-self.crop_z, self.crop_z))
        if self.crop_mode != "fixed":
            raise ConfigError(f"crop_mode must be 'fixed' or 'ratio', got "
                              f"'{self.crop_mode}'")
        return CropSpec(x_range=(-self.crop_xy, self.crop_xy),
                        y_range=(-self.crop_xy, self.crop_xy),
                        z_range=(-self.crop_z, self.crop_z),
                        grid=(self.grid, self.grid))

    def scene_config(self, seed: int, static: bool = False) -> SceneConfig:
        return SceneConfig(
            size_mean=(self.size_w, self.size_h, self.size_l),
            size_jitter=self.size_jitter,
            speed_range=(self.speed_min, self.speed_max),
            yaw_rate_max=self.yaw_rate_max,
            points_per_m2=self.points_per_m2,
            clutter_density=self.clutter_density,
            clutter_extent=self.clutter_extent,
            occlusion_dropout=self.occlusion_dropout,
            surface_noise=self.surface_noise,
            length=self.scene_length, static=static, seed=seed)

    def train_settings(self) -> TrainSettings:
        return TrainSettings(
            lr=self.lr, weight_decay=self.weight_decay, batch=self.batch,
            epochs=self.epochs, decay_factor=self.decay_factor,
            decay_interval=self.decay_interval, max_steps=self.max_steps,
            augment=self.augment, flip_axis=self.flip_axis,
            max_rot_deg=self.max_rot_deg, seed=self.seed)


_FIELDS = {f.name: f.type for f in fields(RunConfig)}
_PARSERS = {"int": int, "float": float, "str": str}


def _parse_value(key: str, raw: str):
    ftype = _FIELDS[key]
    if ftype == "bool":
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"key '{key}': expected a boolean, got '{raw}'")
    try:
        return _PARSERS[ftype](raw.strip())
    except ValueError as exc:
        raise ConfigError(f"key '{key}': {exc}") from exc


def from_items(items: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for key, raw in items.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key '{key}'")
        setattr(cfg, key, _parse_value(key, raw))
    return cfg


def load_config(path: str, base: RunConfig | None = None) -> RunConfig:
    items: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}: line {lineno}: expected key=value")
            key, raw = stripped.split("=", 1)
            items[key.strip()] = raw
    return from_items(items, base)


def config_text(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path: str):
    with open(path, "w") as fh:
        fh.write(config_text(cfg))


FULL_SCALE_OVERRIDES = {
    # the expensive full-scale preset: 128x128 pillars with 16 channels,
    # batch 128, lr 1e-4 with factor-5 decay every 20 epochs
    "grid": "128", "channels": "16", "batch": "128", "lr": "1e-4",
    "head_trunk": "512",
}
