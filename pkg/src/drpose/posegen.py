"""Synthetic 3D pose sampling and 2D detector-noise simulation.

Each bone direction is the canonical (rest) direction rotated by a bounded
random angle around a random perpendicular axis, and each bone length is
uniform within its configured range, so every sample is kinematically
plausible by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import RngStream
from .skeleton import MAX_COORD_MM, PARENTS, make_skeleton

# (child joint, canonical direction, (min, max) length in mm), one row per bone
_BONE_TABLE = [
    (1, (-1.0, 0.10, 0.0), (110.0, 150.0)),
    (2, (0.0, 1.0, 0.10), (380.0, 470.0)),
    (3, (0.0, 1.0, -0.10), (360.0, 450.0)),
    (4, (1.0, 0.10, 0.0), (110.0, 150.0)),
    (5, (0.0, 1.0, 0.10), (380.0, 470.0)),
    (6, (0.0, 1.0, -0.10), (360.0, 450.0)),
    (7, (0.0, -1.0, 0.0), (200.0, 260.0)),
    (8, (0.0, -1.0, 0.05), (200.0, 260.0)),
    (9, (0.0, -1.0, 0.0), (100.0, 140.0)),
    (10, (0.0, -1.0, 0.05), (100.0, 140.0)),
    (11, (1.0, 0.15, 0.0), (130.0, 180.0)),
    (12, (0.35, 1.0, 0.0), (250.0, 310.0)),
    (13, (0.10, 1.0, 0.20), (220.0, 280.0)),
    (14, (-1.0, 0.15, 0.0), (130.0, 180.0)),
    (15, (-0.35, 1.0, 0.0), (250.0, 310.0)),
    (16, (-0.10, 1.0, 0.20), (220.0, 280.0)),
]


@dataclass(frozen=True)
class PoseGenConfig:
    """Bounds for the synthetic pose sampler."""

    max_angle_deg: float = 35.0
    bone_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.max_angle_deg <= 90.0:
            raise ConfigError("max_angle_deg must lie in [0, 90]")
        if self.bone_scale <= 0.0:
            raise ConfigError("bone_scale must be positive")
        for _, _, (lo, hi) in _BONE_TABLE:
            if not 0.0 < lo <= hi:
                raise ConfigError("bone length ranges must be positive and ordered")
        if self.max_extent_mm() >= MAX_COORD_MM:
            raise ConfigError(
                f"bone_scale {self.bone_scale} allows poses beyond {MAX_COORD_MM} mm"
            )

    def bone_range(self, child: int) -> tuple[float, float]:
        for j, _, (lo, hi) in _BONE_TABLE:
            if j == child:
                return lo * self.bone_scale, hi * self.bone_scale
        raise ConfigError(f"joint {child} has no bone entry")

    def max_extent_mm(self) -> float:
        """Largest possible root-to-joint distance (sum of max lengths on a path)."""
        reach = {0: 0.0}
        for child, _, (_, hi) in _BONE_TABLE:
            reach[child] = reach[PARENTS[child]] + hi * self.bone_scale
        return max(reach.values())


def _rotate_bounded(direction: np.ndarray, axis_seed: np.ndarray, angle: float) -> np.ndarray:
    """Rotate a unit vector by `angle` around a random perpendicular axis."""
    a = axis_seed - (axis_seed @ direction) * direction
    norm = np.linalg.norm(a)
    if norm < 1e-12:
        # degenerate draw: fall back to any perpendicular axis
        k = int(np.argmin(np.abs(direction)))
        a = np.zeros(3)
        a[k] = 1.0
        a = a - (a @ direction) * direction
        norm = np.linalg.norm(a)
    a = a / norm
    return direction * np.cos(angle) + np.cross(a, direction) * np.sin(angle)


def generate_pose(stream: RngStream, config: PoseGenConfig = PoseGenConfig()) -> np.ndarray:
    """One root-relative 3D pose (17 x 3, mm) drawn from the stream."""
    lengths_u = stream.uniform(shape=(len(_BONE_TABLE),))
    angles_u = stream.uniform(shape=(len(_BONE_TABLE),))
    axes = stream.gaussian((len(_BONE_TABLE), 3))

    max_angle = np.deg2rad(config.max_angle_deg)
    pose = np.zeros((len(PARENTS), 3))
    for i, (child, canon, (lo, hi)) in enumerate(_BONE_TABLE):
        direction = np.asarray(canon) / np.linalg.norm(canon)
        direction = _rotate_bounded(direction, axes[i], max_angle * angles_u[i])
        lo_s, hi_s = lo * config.bone_scale, hi * config.bone_scale
        length = lo_s + (hi_s - lo_s) * lengths_u[i]
        pose[child] = pose[PARENTS[child]] + direction * length
    return pose


def bone_lengths(pose: np.ndarray) -> np.ndarray:
    """Lengths of the 16 bones in bone-table order."""
    skel = make_skeleton()
    return np.array(
        [np.linalg.norm(pose[child] - pose[int(skel.parent[child])]) for child, _, _ in _BONE_TABLE]
    )


def perturb2d(pose2d: np.ndarray, sigma: float, stream: RngStream) -> np.ndarray:
    """Add i.i.d. Gaussian pixel noise of standard deviation `sigma`."""
    if sigma < 0:
        raise ConfigError("detector noise sigma must be non-negative")
    pose2d = np.asarray(pose2d, dtype=np.float64)
    return pose2d + sigma * stream.gaussian(pose2d.shape)
