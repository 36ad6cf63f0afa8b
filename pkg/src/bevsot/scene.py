"""Procedural LiDAR-like sequences for desk-scale training and evaluation,
plus the training-time flip/rotate augmentation.

A rigid box target moves with piecewise-constant random velocity and yaw
rate through static clutter; surface points are sampled on the faces
visible from the sensor with range-dependent density and bounded uniform
noise, and per-frame dropout stands in for occlusion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError
from .geometry import Box3D, Motion4, PointCloud, relative_motion, rot2d
from .tensor import wrap_angle_value

SENSOR = np.array([0.0, 0.0, 1.8])


@dataclass
class SceneConfig:
    size_mean: tuple[float, float, float] = (1.8, 1.6, 4.2)  # (w, h, l)
    size_jitter: float = 0.1  # relative, uniform
    speed_range: tuple[float, float] = (0.08, 0.25)  # m/frame along heading
    yaw_rate_max: float = 0.04  # rad/frame, uniform in [-max, max]
    lateral_drift: float = 0.02  # m/frame sideways, uniform in [-d, d]
    vertical_drift: float = 0.01
    points_per_m2: float = 40.0  # face density at ref_range
    ref_range: float = 10.0
    surface_noise: float = 0.01  # uniform bound, all axes
    clutter_density: float = 0.6  # points per m^2 of ground footprint
    clutter_extent: float = 10.0  # half-size of the clutter slab
    occlusion_dropout: float = 0.1
    segment_frames: int = 4  # frames per constant-velocity segment
    static: bool = False  # near-static target (drifts only)
    length: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.length < 2:
            raise ConfigError("sequence length must be >= 2")
        for name in ("points_per_m2", "clutter_density", "occlusion_dropout",
                     "surface_noise", "size_jitter"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


@dataclass
class LabeledSequence:
    frames: list[PointCloud]
    gt: list[Box3D]
    motions: list[Motion4] = field(default_factory=list)  # derived, length T-1

    def __post_init__(self):
        if len(self.frames) != len(self.gt):
            raise ConfigError(f"{len(self.frames)} frames vs {len(self.gt)} labels")
        if not self.motions:
            self.motions = [relative_motion(a, b) for a, b in zip(self.gt, self.gt[1:])]


def _sample_faces(box: Box3D, cfg: SceneConfig, rng) -> np.ndarray:
    """Points on the faces visible from the sensor, in world coordinates."""
    hw, hh, hl = box.w / 2.0, box.h / 2.0, box.l / 2.0
    # faces in the box frame: (normal axis, sign, spans of the two free axes)
    faces = [
        (0, +1, (1, hw), (2, hh)), (0, -1, (1, hw), (2, hh)),   # front/back
        (1, +1, (0, hl), (2, hh)), (1, -1, (0, hl), (2, hh)),   # left/right
        (2, +1, (0, hl), (1, hw)),                              # top
    ]
    half = {0: hl, 1: hw, 2: hh}
    rot = rot2d(box.theta)
    center = box.center
    to_sensor = SENSOR - center
    rng_dist = max(1.0, float(np.linalg.norm(to_sensor)))
    density = cfg.points_per_m2 * min(4.0, (cfg.ref_range / rng_dist) ** 2)
    pts = []
    for axis, sign, (ua, ulim), (va, vlim) in faces:
        normal = np.zeros(3)
        normal[axis] = sign
        normal[:2] = rot @ normal[:2]
        if float(normal @ to_sensor) <= 0.0:
            continue
        n = rng.poisson(density * (2 * ulim) * (2 * vlim))
        if n == 0:
            continue
        local = np.zeros((n, 3))
        local[:, axis] = sign * half[axis]
        local[:, ua] = rng.uniform(-ulim, ulim, n)
        local[:, va] = rng.uniform(-vlim, vlim, n)
        pts.append(local)
    if not pts:
        return np.zeros((0, 3))
    local = np.concatenate(pts, axis=0)
    # noise in the box frame keeps every point inside the box inflated by
    # exactly the noise bound
    local += rng.uniform(-cfg.surface_noise, cfg.surface_noise, local.shape)
    world = local.copy()
    world[:, :2] = local[:, :2] @ rot.T
    return world + center


def generate(cfg: SceneConfig) -> LabeledSequence:
    """Deterministic under cfg.seed, bit-identical across runs."""
    rng = np.random.default_rng(cfg.seed)
    w, h, l = (s * (1.0 + rng.uniform(-cfg.size_jitter, cfg.size_jitter))
               for s in cfg.size_mean)
    x0, y0 = rng.uniform(3.0, 9.0) * rot2d(rng.uniform(-math.pi, math.pi))[:, 0]
    box = Box3D(x0, y0, h / 2.0, w, h, l, rng.uniform(-math.pi, math.pi))

    boxes = [box]
    speed = yaw_rate = lat = vz = 0.0
    for t in range(1, cfg.length):
        if (t - 1) % cfg.segment_frames == 0:
            speed = 0.0 if cfg.static else rng.uniform(*cfg.speed_range)
            yaw_rate = rng.uniform(-cfg.yaw_rate_max, cfg.yaw_rate_max)
            lat = rng.uniform(-cfg.lateral_drift, cfg.lateral_drift)
            vz = rng.uniform(-cfg.vertical_drift, cfg.vertical_drift)
        prev = boxes[-1]
        theta = wrap_angle_value(prev.theta + yaw_rate)
        heading = np.array([math.cos(theta), math.sin(theta)])
        side = np.array([-heading[1], heading[0]])
        dxy = speed * heading + lat * side
        boxes.append(prev.with_pose(prev.x + dxy[0], prev.y + dxy[1],
                                    prev.z + vz, theta))

    mid = np.mean([b.center for b in boxes], axis=0)
    ext = cfg.clutter_extent
    n_clutter = rng.poisson(cfg.clutter_density * (2 * ext) ** 2)
    clutter = np.column_stack([
        rng.uniform(mid[0] - ext, mid[0] + ext, n_clutter),
        rng.uniform(mid[1] - ext, mid[1] + ext, n_clutter),
        rng.uniform(0.0, 2.2, n_clutter),
    ])

    frames = []
    for b in boxes:
        target = _sample_faces(b, cfg, rng)
        pts = np.concatenate([target, clutter], axis=0)
        keep = rng.random(pts.shape[0]) >= cfg.occlusion_dropout
        frames.append(PointCloud(pts[keep]))
    return LabeledSequence(frames=frames, gt=boxes)


# ---------------------------------------------------------------------------
# training samples and augmentation


@dataclass
class TrainingSample:
    """A consecutive frame pair in the previous gt box's canonical frame,
    cropped; the regression target is the exact relative motion of the
    two (possibly augmented) boxes. Carries the crop window it was built
    with (windows differ per sequence in ratio-crop mode)."""

    prev_pts: PointCloud
    curr_pts: PointCloud
    box_prev: Box3D
    box_curr: Box3D
    target: Motion4
    spec: object = None


# membership margin when selecting "target points": surface sampling noise
# puts points just outside the exact box faces
TARGET_MARGIN = 0.05


def _membership_box(b: Box3D) -> Box3D:
    return Box3D(b.x, b.y, b.z, b.w + 2 * TARGET_MARGIN, b.h + 2 * TARGET_MARGIN,
                 b.l + 2 * TARGET_MARGIN, b.theta)


def _flip_points(pts: np.ndarray, axis: str) -> np.ndarray:
    out = pts.copy()
    out[:, 1 if axis == "x" else 0] *= -1.0
    return out


def _flip_box(b: Box3D, axis: str) -> Box3D:
    if axis == "x":  # mirror across the x axis: y -> -y
        return b.with_pose(b.x, -b.y, b.z, -b.theta)
    return b.with_pose(-b.x, b.y, b.z, wrap_angle_value(math.pi - b.theta))


def flip_sample(s: TrainingSample, axis: str = "x") -> TrainingSample:
    """Mirror the target points and boxes of both frames; an involution."""
    if axis not in ("x", "y"):
        raise ConfigError(f"flip axis must be 'x' or 'y', got '{axis}'")
    out_pts = []
    for pts, box in ((s.prev_pts, s.box_prev), (s.curr_pts, s.box_curr)):
        p = pts.xyz.copy()
        inside = _membership_box(box).contains(p)
        p[inside] = _flip_points(p[inside], axis)
        out_pts.append(PointCloud(p))
    bp, bc = _flip_box(s.box_prev, axis), _flip_box(s.box_curr, axis)
    return TrainingSample(out_pts[0], out_pts[1], bp, bc,
                          relative_motion(bp, bc), s.spec)


def rotate_sample(s: TrainingSample, delta: float) -> TrainingSample:
    """Rotate the target (points and boxes, both frames) by delta about the
    up-axis through the crop origin, i.e. the previous box center."""
    rot = rot2d(delta)
    out_pts = []
    for pts, box in ((s.prev_pts, s.box_prev), (s.curr_pts, s.box_curr)):
        p = pts.xyz.copy()
        inside = _membership_box(box).contains(p)
        p[inside, :2] = p[inside, :2] @ rot.T
        out_pts.append(PointCloud(p))
    boxes = []
    for b in (s.box_prev, s.box_curr):
        cxy = rot @ np.array([b.x, b.y])
        boxes.append(b.with_pose(cxy[0], cxy[1], b.z, wrap_angle_value(b.theta + delta)))
    return TrainingSample(out_pts[0], out_pts[1], boxes[0], boxes[1],
                          relative_motion(boxes[0], boxes[1]), s.spec)


def augment(s: TrainingSample, rng, flip_axis: str = "x",
            max_rot_deg: float = 5.0) -> TrainingSample:
    """Random horizontal flip (prob 0.5) and uniform yaw perturbation.

    The label is always recomputed from the augmented boxes, so training
    targets stay exactly consistent with the geometry the network sees.
    """
    if rng.random() < 0.5:
        s = flip_sample(s, flip_axis)
    delta = math.radians(rng.uniform(-max_rot_deg, max_rot_deg))
    return rotate_sample(s, delta)
