"""Rotation representations and rigid transforms.

Rotations travel through the pipeline as 6 numbers: the first two
columns of the rotation matrix, concatenated (a[:3] = column 0,
a[3:] = column 1).  Decoding runs Gram-Schmidt on the two columns and
completes the frame with a cross product, so any pair of sufficiently
independent vectors maps to a proper rotation.  All functions accept
arbitrary leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRotation, InvalidRotation

# Below this, the Gram-Schmidt columns are considered collinear/null.
DEGENERACY_EPS = 1e-8


def rot6d_to_matrix(a):
    """Decode a 6D rotation representation into a rotation matrix.

    Args:
        a: array (..., 6), two stacked 3-vectors.

    Returns:
        array (..., 3, 3) with orthonormal columns, det +1.

    Raises:
        DegenerateRotation: if either Gram-Schmidt step collapses.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != 6:
        raise DegenerateRotation(f"expected trailing dim 6, got {a.shape}")
    a1 = a[..., :3]
    a2 = a[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1)
    if np.any(n1 < DEGENERACY_EPS):
        raise DegenerateRotation("first 6D column has near-zero norm")
    b1 = a1 / n1[..., None]
    w = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(w, axis=-1)
    if np.any(n2 < DEGENERACY_EPS):
        raise DegenerateRotation("6D columns are collinear")
    b2 = w / n2[..., None]
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def rot6d_valid_mask(a):
    """True where decoding would not hit the degeneracy guard.

    Vectorized over leading axes and raise-free, for callers that need
    to skip bad rows instead of failing (e.g. mid-sampling states).
    """
    a = np.asarray(a, dtype=np.float64)
    a1 = a[..., :3]
    a2 = a[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1)
    ok = ~(n1 < DEGENERACY_EPS)
    b1 = a1 / np.where(ok, n1, 1.0)[..., None]
    w = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    return ok & ~(np.linalg.norm(w, axis=-1) < DEGENERACY_EPS)


def matrix_to_rot6d(R):
    """Encode a rotation matrix as its first two columns (..., 6)."""
    R = np.asarray(R, dtype=np.float64)
    _check_rotation(R)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def _check_rotation(R, tol=1e-6):
    if R.shape[-2:] != (3, 3):
        raise InvalidRotation(f"expected (..., 3, 3), got {R.shape}")
    ident = np.eye(3)
    err = np.abs(np.swapaxes(R, -1, -2) @ R - ident).max()
    if err > tol:
        raise InvalidRotation(f"matrix is not orthonormal (residual {err:.2e})")
    if np.any(np.linalg.det(R) < 0.0):
        raise InvalidRotation("matrix has negative determinant")


def rot6d_jacobian(a):
    """Derivative of rot6d_to_matrix.

    Returns J with J[..., i, j, c] = d R[i, j] / d a[c].  Used by the
    contact-steering gradient, which chains it through forward
    kinematics; validated against central differences in the tests.
    """
    a = np.asarray(a, dtype=np.float64)
    a1 = a[..., :3]
    a2 = a[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1)
    if np.any(n1 < DEGENERACY_EPS):
        raise DegenerateRotation("first 6D column has near-zero norm")
    b1 = a1 / n1[..., None]
    d = np.sum(b1 * a2, axis=-1)
    w = a2 - d[..., None] * b1
    n2 = np.linalg.norm(w, axis=-1)
    if np.any(n2 < DEGENERACY_EPS):
        raise DegenerateRotation("6D columns are collinear")
    b2 = w / n2[..., None]
    b3 = np.cross(b1, b2)

    ident = np.broadcast_to(np.eye(3), a1.shape + (3,))
    outer11 = b1[..., :, None] * b1[..., None, :]
    db1da1 = (ident - outer11) / n1[..., None, None]
    dwda1 = -(d[..., None, None] * ident
              + b1[..., :, None] * a2[..., None, :]) @ db1da1
    dwda2 = ident - outer11
    db2dw = (ident - b2[..., :, None] * b2[..., None, :]) / n2[..., None, None]
    db2da1 = db2dw @ dwda1
    db2da2 = db2dw @ dwda2
    sk1 = _skew(b1)
    sk2 = _skew(b2)
    db3da1 = -sk2 @ db1da1 + sk1 @ db2da1
    db3da2 = sk1 @ db2da2

    J = np.zeros(a.shape[:-1] + (3, 3, 6))
    J[..., :, 0, 0:3] = db1da1
    J[..., :, 1, 0:3] = db2da1
    J[..., :, 1, 3:6] = db2da2
    J[..., :, 2, 0:3] = db3da1
    J[..., :, 2, 3:6] = db3da2
    return J


def _skew(v):
    """Cross-product matrix: _skew(v) @ u == cross(v, u)."""
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def random_rotation(rng, shape=()):
    """Uniform random rotation matrices via QR of a Gaussian sample."""
    shape = tuple(shape) if not np.isscalar(shape) else (shape,)
    g = rng.standard_normal(shape + (3, 3))
    q, r = np.linalg.qr(g)
    # Fix the signs so the distribution is Haar and det is +1.
    sign = np.sign(np.einsum("...ii->...i", r))
    sign = np.where(sign == 0.0, 1.0, sign)
    q = q * sign[..., None, :]
    det = np.linalg.det(q)
    q[..., :, 0] *= np.where(det < 0, -1.0, 1.0)[..., None]
    return q if shape else q.reshape(3, 3)


def rotation_angle(Ra, Rb):
    """Geodesic angle in radians between two rotations (batched)."""
    Ra = np.asarray(Ra, dtype=np.float64)
    Rb = np.asarray(Rb, dtype=np.float64)
    tr = np.einsum("...ij,...ij->...", Ra, Rb)
    c = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    return np.arccos(c)


@dataclass
class RigidTransform:
    """Proper rigid motion p -> R @ p + t."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.R.T + self.t

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self.compose(other)).apply(p) == self.apply(other.apply(p))."""
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self) -> "RigidTransform":
        Rt = self.R.T
        return RigidTransform(Rt, -Rt @ self.t)
