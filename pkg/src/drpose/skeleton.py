"""The 17-joint human skeleton tree and pose array helpers.

Poses are plain float64 numpy arrays: (N, 3) millimeters root-relative for
3D, (N, 2) pixels for 2D.  The root (pelvis) is joint 0 and sits exactly at
the origin for every valid 3D pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

ROOT = 0

JOINT_NAMES = [
    "pelvis",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "spine",
    "thorax",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
]

# parent[j] for the fixed tree; the root's parent is -1
PARENTS = [-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15]

MAX_COORD_MM = 2000.0


@dataclass(frozen=True)
class SkeletonGraph:
    """Joint tree plus its symmetric adjacency matrix."""

    n_joints: int
    parent: np.ndarray
    adjacency: np.ndarray
    joint_names: list[str] = field(default_factory=list)

    def edges(self) -> list[tuple[int, int]]:
        return [(int(p), j) for j, p in enumerate(self.parent) if p >= 0]


def make_skeleton() -> SkeletonGraph:
    """The fixed 17-joint tree (pelvis root, limbs and spine chains)."""
    n = len(PARENTS)
    parent = np.array(PARENTS, dtype=np.int64)
    adj = np.zeros((n, n), dtype=np.float64)
    for child, p in enumerate(PARENTS):
        if p >= 0:
            adj[child, p] = 1.0
            adj[p, child] = 1.0
    return SkeletonGraph(n, parent, adj, list(JOINT_NAMES))


def normalized_adjacency(skel: SkeletonGraph) -> np.ndarray:
    """Symmetric degree-normalized adjacency with self loops, D^-1/2 (A+I) D^-1/2."""
    a = skel.adjacency + np.eye(skel.n_joints)
    d = np.sum(a, axis=1)
    inv = 1.0 / np.sqrt(d)
    return a * inv[:, None] * inv[None, :]


def re_root(pose: np.ndarray) -> np.ndarray:
    """Shift so the root joint sits exactly at the origin (last-2 axes N x 3)."""
    pose = np.asarray(pose, dtype=np.float64)
    return pose - pose[..., ROOT : ROOT + 1, :]


def validate_pose3d(pose: np.ndarray, n_joints: int = 17) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (n_joints, 3):
        raise ShapeError(f"expected ({n_joints}, 3) 3D pose, got {pose.shape}")
    if not np.all(np.isfinite(pose)):
        raise ShapeError("3D pose contains non-finite coordinates")
    if np.any(pose[ROOT] != 0.0):
        raise ShapeError("3D pose root joint must sit at the origin")
    if np.max(np.abs(pose)) >= MAX_COORD_MM:
        raise ShapeError(f"3D pose exceeds the {MAX_COORD_MM} mm bound")
    return pose


def validate_pose2d(pose: np.ndarray, image_size: tuple[float, float], n_joints: int = 17) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (n_joints, 2):
        raise ShapeError(f"expected ({n_joints}, 2) 2D pose, got {pose.shape}")
    if not np.all(np.isfinite(pose)):
        raise ShapeError("2D pose contains non-finite coordinates")
    w, h = image_size
    bound = 4.0 * max(w, h)
    if np.max(np.abs(pose)) > bound:
        raise ShapeError(f"2D pose leaves 4x image bounds ({bound} px)")
    return pose
