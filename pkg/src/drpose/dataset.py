"""Binary dataset container for synthetic pose samples.

Layout (little-endian): magic "DRPZ", u32 version, u32 N, u64 sample count,
camera as 5 x f64 (fx, fy, cx, cy, root_depth), u64 generator seed, then per
sample contiguous f64 arrays: N x 3 ground truth, N x 2 clean projection,
N x 2 noisy detection.  Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import Camera
from .errors import DataFormatError

MAGIC = b"DRPZ"
VERSION = 1
_HEADER = struct.Struct("<4sII Q 5d Q")


@dataclass
class DatasetFile:
    """In-memory dataset: stacked sample arrays plus header metadata."""

    n_joints: int
    camera: Camera
    seed: int
    gt: np.ndarray  # (S, N, 3) mm, root-relative
    clean: np.ndarray  # (S, N, 2) px
    noisy: np.ndarray  # (S, N, 2) px

    @property
    def sample_count(self) -> int:
        return self.gt.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, DatasetFile):
            return NotImplemented
        return (
            self.n_joints == other.n_joints
            and self.camera == other.camera
            and self.seed == other.seed
            and np.array_equal(self.gt, other.gt)
            and np.array_equal(self.clean, other.clean)
            and np.array_equal(self.noisy, other.noisy)
        )


def dataset_write(path: str | Path, data: DatasetFile) -> None:
    s, n = data.sample_count, data.n_joints
    if data.gt.shape != (s, n, 3) or data.clean.shape != (s, n, 2) or data.noisy.shape != (s, n, 2):
        raise DataFormatError("dataset arrays have inconsistent shapes")
    header = _HEADER.pack(
        MAGIC, VERSION, n, s, *data.camera.to_array().tolist(), data.seed
    )
    body = np.concatenate(
        [
            data.gt.reshape(s, -1),
            data.clean.reshape(s, -1),
            data.noisy.reshape(s, -1),
        ],
        axis=1,
    ) if s else np.zeros((0,))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(body, dtype="<f8").tobytes())


def dataset_read(path: str | Path) -> DatasetFile:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, n, s, fx, fy, cx, cy, depth, seed = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic bytes {magic!r}")
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    per_sample = n * 7  # 3 + 2 + 2 columns of n joints
    expected = _HEADER.size + s * per_sample * 8
    if len(raw) != expected:
        raise DataFormatError(
            f"{path}: size mismatch (header promises {expected} bytes, file has {len(raw)})"
        )
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(s, per_sample)
    if not np.all(np.isfinite(body)):
        raise DataFormatError(f"{path}: non-finite sample data")
    gt = body[:, : n * 3].reshape(s, n, 3).astype(np.float64)
    clean = body[:, n * 3 : n * 5].reshape(s, n, 2).astype(np.float64)
    noisy = body[:, n * 5 :].reshape(s, n, 2).astype(np.float64)
    return DatasetFile(n, Camera(fx, fy, cx, cy, depth), seed, gt, clean, noisy)


def dataset_to_json(data: DatasetFile) -> str:
    """Debug export mirroring the binary structure with the same field names."""
    doc = {
        "magic": MAGIC.decode("ascii"),
        "version": VERSION,
        "n": data.n_joints,
        "sample_count": data.sample_count,
        "camera": {
            "fx": data.camera.fx,
            "fy": data.camera.fy,
            "cx": data.camera.cx,
            "cy": data.camera.cy,
            "root_depth": data.camera.root_depth,
        },
        "seed": data.seed,
        "samples": [
            {
                "gt": data.gt[i].tolist(),
                "clean": data.clean[i].tolist(),
                "noisy": data.noisy[i].tolist(),
            }
            for i in range(data.sample_count)
        ],
    }
    return json.dumps(doc, indent=1)
