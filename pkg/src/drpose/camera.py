"""Pinhole camera model used to render and re-project synthetic poses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ProjectionError, ShapeError


@dataclass(frozen=True)
class Camera:
    """Intrinsics plus the depth of the pose root along the optical axis.

    Poses are root-relative, so the camera places the pelvis `root_depth`
    millimeters in front of the image plane and projects joint j from
    (x_j, y_j, z_j + root_depth).
    """

    fx: float = 1150.0
    fy: float = 1150.0
    cx: float = 500.0
    cy: float = 500.0
    root_depth: float = 5000.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ShapeError("camera focal lengths must be positive")
        if self.root_depth <= 0:
            raise ShapeError("camera root depth must be positive")

    @property
    def image_size(self) -> tuple[float, float]:
        return 2.0 * self.cx, 2.0 * self.cy

    def to_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy, self.root_depth])

    @classmethod
    def from_array(cls, a: np.ndarray) -> "Camera":
        fx, fy, cx, cy, d = (float(v) for v in np.asarray(a).ravel())
        return cls(fx, fy, cx, cy, d)


def project(pose: np.ndarray, camera: Camera) -> np.ndarray:
    """Pinhole projection of a root-relative 3D pose to pixels.

    Accepts (..., N, 3) and returns (..., N, 2).  Raises if any joint lands
    at or behind the camera plane.
    """
    pose = np.asarray(pose, dtype=np.float64)
    z = pose[..., 2] + camera.root_depth
    if np.any(z <= 0.0):
        bad = np.argwhere(z <= 0.0)[0]
        raise ProjectionError(f"joint {tuple(int(i) for i in bad)} is at or behind the camera plane")
    u = camera.fx * pose[..., 0] / z + camera.cx
    v = camera.fy * pose[..., 1] / z + camera.cy
    return np.stack([u, v], axis=-1)
