"""Quaternions, rigid+scale part poses, and primitive fitting.

Conventions:
  - 3D points are float64 numpy arrays of shape (3,) or (..., 3).
  - Quaternions are float64 arrays (w, x, y, z), kept unit-norm.
  - A pose maps canonical part space into the scene:
        x = R(q) @ (s * xhat) + t
    and its inverse canonicalizes a scene point:
        xhat = (1/s) * R(q)^T @ (x - t)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MIN_SCALE = 1e-6


# ---------------------------------------------------------------------------
# quaternions


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n


def quat_canonical(q):
    """Unit quaternion with w >= 0 (q and -q encode the same rotation)."""
    q = quat_normalize(q)
    if q[..., 0] < 0:
        q = -q
    return q


def quat_conj(q):
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_to_matrix(q):
    """Rotation matrix of q = (w, x, y, z).

    The algebraic form below is only a rotation for unit q, but it is kept
    un-normalized so that its derivative w.r.t. the raw components
    (quat_to_matrix_jac) is exact.
    """
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_to_matrix_jac(q):
    """d R / d q as a (3, 3, 4) tensor, same algebraic form as quat_to_matrix."""
    w, x, y, z = np.asarray(q, dtype=np.float64)
    J = np.zeros((3, 3, 4))
    # row 0
    J[0, 0] = [0, 0, -4 * y, -4 * z]
    J[0, 1] = [-2 * z, 2 * y, 2 * x, -2 * w]
    J[0, 2] = [2 * y, 2 * z, 2 * w, 2 * x]
    # row 1
    J[1, 0] = [2 * z, 2 * y, 2 * x, 2 * w]
    J[1, 1] = [0, -4 * x, 0, -4 * z]
    J[1, 2] = [-2 * x, -2 * w, 2 * z, 2 * y]
    # row 2
    J[2, 0] = [-2 * y, 2 * z, -2 * w, 2 * x]
    J[2, 1] = [2 * x, 2 * w, 2 * z, 2 * y]
    J[2, 2] = [0, -4 * x, -4 * y, 0]
    return J


def slerp(q0, q1, u):
    """Spherical linear interpolation along the shortest arc.

    u=0 returns q0 and u=1 returns q1 (up to sign); nearly antipodal pairs
    fall back to normalized linear interpolation.
    """
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    d = float(np.dot(q0, q1))
    if d < 0.0:
        q1 = -q1
        d = -d
    d = min(d, 1.0)
    if d > 1.0 - 1e-6:
        out = (1.0 - u) * q0 + u * q1
        return out / np.linalg.norm(out)
    theta = np.arccos(d)
    st = np.sin(theta)
    out = (np.sin((1.0 - u) * theta) / st) * q0 + (np.sin(u * theta) / st) * q1
    return out / np.linalg.norm(out)


# ---------------------------------------------------------------------------
# poses


@dataclass
class Pose:
    """Per-part similarity transform: rotation q, translation t, scale s."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    s: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        self.q = quat_canonical(np.asarray(self.q, dtype=np.float64))
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3).copy()
        self.s = np.asarray(self.s, dtype=np.float64).reshape(3).copy()
        if not (np.all(np.isfinite(self.t)) and np.all(np.isfinite(self.s))):
            raise ValueError("non-finite pose")
        if np.min(self.s) <= MIN_SCALE:
            raise ValueError(f"pose scale must exceed {MIN_SCALE}")

    @staticmethod
    def identity():
        return Pose()

    def as_array(self):
        return np.concatenate([self.q, self.t, self.s])

    @staticmethod
    def from_array(a):
        a = np.asarray(a, dtype=np.float64).reshape(10)
        return Pose(q=a[:4], t=a[4:7], s=a[7:10])

    def copy(self):
        return Pose(q=self.q.copy(), t=self.t.copy(), s=self.s.copy())


def transform(xhat, pose):
    """Map canonical points into the scene: x = R (s * xhat) + t."""
    xhat = np.asarray(xhat, dtype=np.float64)
    if not np.all(np.isfinite(xhat)):
        raise ValueError("non-finite input point")
    R = quat_to_matrix(pose.q)
    return (pose.s * xhat) @ R.T + pose.t


def inverse_transform(x, pose):
    """Map scene points into canonical part space: xhat = S^-1 R^T (x - t)."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input point")
    R = quat_to_matrix(pose.q)
    return ((x - pose.t) @ R) / pose.s


# ---------------------------------------------------------------------------
# primitive fitting


@dataclass
class PrimitiveFit:
    kind: str  # "cuboid" | "cylinder"
    pose: Pose
    fit_residual: float


def _pca_rotation(points):
    """Right-handed PCA basis with eigenvectors by descending eigenvalue.

    Signs are fixed deterministically: each axis is flipped so its largest
    component is positive, then the last axis is flipped if det < 0.
    """
    centered = points - points.mean(axis=0)
    cov = centered.T @ centered / len(points)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    if evals[0] <= 0 or evals[1] / evals[0] < 1e-12:
        raise ValueError("rank-deficient point set (collinear points)")
    for k in range(3):
        i = np.argmax(np.abs(evecs[:, k]))
        if evecs[i, k] < 0:
            evecs[:, k] = -evecs[:, k]
    if np.linalg.det(evecs) < 0:
        evecs[:, 2] = -evecs[:, 2]
    return evecs, evals


def _box_sdf_local(p, half):
    d = np.abs(p) - half
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
    inside = np.minimum(np.max(d, axis=-1), 0.0)
    return outside + inside


def fit_primitive(points, kind):
    """Fit a cuboid or cylinder to points; the fit's pose initializes a part.

    Scale is the half-extent of the fitted primitive. Cylinders are
    canonicalized with their axis along local z, s = (r, r, half_length).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) < 8:
        raise ValueError("primitive fitting needs at least 8 points")
    if not np.all(np.isfinite(points)):
        raise ValueError("non-finite input points")
    centroid = points.mean(axis=0)

    if kind == "cuboid":
        R, _ = _pca_rotation(points)
        local = (points - centroid) @ R
        lo, hi = local.min(axis=0), local.max(axis=0)
        half = np.maximum((hi - lo) / 2.0, 10 * MIN_SCALE)
        pose = Pose(q=_matrix_to_quat(R), t=centroid, s=half)
        residual = float(np.mean(_box_sdf_local(local, half) ** 2))
        return PrimitiveFit("cuboid", pose, residual)

    if kind == "cylinder":
        R, evals = _pca_rotation(points)
        axis = R[:, 0]
        local = (points - centroid) @ R
        radial = np.linalg.norm(local[:, 1:], axis=1)
        r = max(float(radial.mean()), 10 * MIN_SCALE)
        half_len = max(float(local[:, 0].max() - local[:, 0].min()) / 2.0, 10 * MIN_SCALE)
        # canonical axis along local z: columns (e1, e2, axis)
        Rc = np.column_stack([R[:, 1], R[:, 2], axis])
        if np.linalg.det(Rc) < 0:
            Rc[:, 0] = -Rc[:, 0]
        pose = Pose(q=_matrix_to_quat(Rc), t=centroid, s=np.array([r, r, half_len]))
        residual = float(np.mean((radial - r) ** 2))
        return PrimitiveFit("cylinder", pose, residual)

    raise ValueError(f"unknown primitive kind: {kind!r}")


def _matrix_to_quat(R):
    """Unit quaternion (w, x, y, z) of a proper rotation matrix."""
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    return quat_canonical(np.array([w, x, y, z]))
