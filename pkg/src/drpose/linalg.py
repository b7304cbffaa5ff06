"""3x3 singular value decomposition via Jacobi rotations.

Only the 3x3 case is ever needed (Procrustes alignment of pose covariance
matrices), so the routine eigendecomposes M^T M with cyclic Jacobi sweeps,
recovers singular values as the column norms of M V, and completes U to an
orthonormal basis for rank-deficient inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

_JACOBI_SWEEPS = 60


def _jacobi_eigvec(a: np.ndarray) -> np.ndarray:
    """Orthogonal V diagonalizing the symmetric 3x3 `a` (modified in place)."""
    v = np.eye(3)
    scale = max(np.max(np.abs(a)), 1.0)
    for _ in range(_JACOBI_SWEEPS):
        off = max(abs(a[0, 1]), abs(a[0, 2]), abs(a[1, 2]))
        if off <= 1e-30 * scale:
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = a[p, q]
            if abs(apq) <= 1e-300:
                continue
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
            if theta == 0.0:
                t = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            j = np.eye(3)
            j[p, p] = c
            j[q, q] = c
            j[p, q] = s
            j[q, p] = -s
            a[:] = j.T @ a @ j
            v[:] = v @ j
    return v


def _complete_column(existing: list[np.ndarray]) -> np.ndarray:
    """A unit vector orthogonal to the (0..2) unit vectors in `existing`."""
    if len(existing) == 0:
        return np.array([1.0, 0.0, 0.0])
    if len(existing) == 2:
        w = np.cross(existing[0], existing[1])
        return w / np.linalg.norm(w)
    u = existing[0]
    k = int(np.argmin(np.abs(u)))
    w = np.zeros(3)
    w[k] = 1.0
    w = w - (w @ u) * u
    return w / np.linalg.norm(w)


def svd3(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decompose a 3x3 matrix as U @ diag(S) @ V.T.

    U and V are orthonormal, S is descending and non-negative.  Degenerate
    and rank-deficient inputs still satisfy the reconstruction bound: the
    near-null directions of U are completed to an orthonormal basis.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ShapeError(f"svd3 expects a 3x3 matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ShapeError("svd3 requires finite entries")

    v = _jacobi_eigvec(m.T @ m)
    b = m @ v
    s = np.linalg.norm(b, axis=0)
    order = np.argsort(-s)
    s = s[order]
    v = v[:, order]
    b = b[:, order]

    u_cols: list[np.ndarray] = []
    for i in range(3):
        if s[i] > 0.0:
            u = b[:, i] / s[i]
            # re-orthogonalize: near-null columns of b carry noisy directions
            for prev in u_cols:
                u = u - (prev @ u) * prev
            norm = np.linalg.norm(u)
            if norm > 0.5:
                u_cols.append(u / norm)
                continue
        u_cols.append(_complete_column(u_cols))
    u = np.column_stack(u_cols)
    return u, s, v
