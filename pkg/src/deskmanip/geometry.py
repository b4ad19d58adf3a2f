"""Axis-triple spatial representation and oriented-box math.

Orientation is carried by three orthogonal unit vectors: the longitudinal
axis (direction of largest point-cloud variance), the normal axis (smallest
variance, orthogonal to dominant surfaces) and the binormal axis defined as
longitudinal x normal.  Note the handedness that definition implies:
longitudinal x binormal == -normal.

All functions accept any 3-vector array-likes and return float64 numpy
arrays.  Everything here is pure and safe to call from multiple threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateCloud,
    NonOrthonormalFrame,
    ParallelAxes,
    ZeroAxis,
)

UNIT_TOL = 1e-9          # |norm - 1| tolerance for unit vectors
ORTHO_TOL = 1e-6         # pairwise dot tolerance for axis triples
PARALLEL_ANGLE_TOL = 1e-4  # radians; below this two axes count as parallel
GIMBAL_TOL = 1e-6        # |pitch -/+ pi/2| tolerance for the gimbal flag

# Reference frame for Euler conversions: the axis triple of an "unrotated"
# body.  longitudinal along +x, normal along +z, binormal = long x normal.
_REF_LONGITUDINAL = np.array([1.0, 0.0, 0.0])
_REF_NORMAL = np.array([0.0, 0.0, 1.0])
_REF_BINORMAL = np.cross(_REF_LONGITUDINAL, _REF_NORMAL)  # (0, -1, 0)


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ZeroAxis(f"non-finite vector components: {a!r}")
    return a


def normalize(v) -> np.ndarray:
    a = _as_vec3(v)
    n = float(np.linalg.norm(a))
    if n <= 1e-6:
        raise ZeroAxis(f"cannot normalize near-zero vector {a!r}")
    return a / n


@dataclass(frozen=True)
class AxisTriple:
    """Orthonormal (longitudinal, binormal, normal) with binormal = long x normal."""

    longitudinal: np.ndarray
    binormal: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        for name in ("longitudinal", "binormal", "normal"):
            v = _as_vec3(getattr(self, name))
            object.__setattr__(self, name, v)
            if abs(np.linalg.norm(v) - 1.0) > 1e-6:
                raise NonOrthonormalFrame(f"{name} is not unit length: {v!r}")
        if abs(float(self.longitudinal @ self.normal)) > ORTHO_TOL:
            raise NonOrthonormalFrame("longitudinal and normal are not orthogonal")
        expected_b = np.cross(self.longitudinal, self.normal)
        if np.max(np.abs(expected_b - self.binormal)) > ORTHO_TOL:
            raise NonOrthonormalFrame("binormal != longitudinal x normal")

    @staticmethod
    def from_longitudinal_normal(longitudinal, normal) -> "AxisTriple":
        lon = normalize(longitudinal)
        nor = normalize(normal)
        return AxisTriple(lon, np.cross(lon, nor), nor)

    @staticmethod
    def identity() -> "AxisTriple":
        return AxisTriple(_REF_LONGITUDINAL.copy(), _REF_BINORMAL.copy(), _REF_NORMAL.copy())

    def rotated(self, rot: np.ndarray) -> "AxisTriple":
        """Apply a rotation matrix to all three axes."""
        return AxisTriple(rot @ self.longitudinal, rot @ self.binormal, rot @ self.normal)

    def as_matrix(self) -> np.ndarray:
        """Columns (longitudinal, binormal, normal); orthogonal with det -1."""
        return np.column_stack([self.longitudinal, self.binormal, self.normal])

    def rotation(self) -> np.ndarray:
        """Proper rotation taking the identity triple onto this one."""
        ref = AxisTriple.identity()
        return self.as_matrix() @ ref.as_matrix().T


@dataclass(frozen=True)
class EulerAngles:
    """Intrinsic Z-Y-X (yaw, pitch, roll), radians.

    gimbal_lock marks |pitch| within GIMBAL_TOL of pi/2; in that case a
    canonical roll = 0 decomposition is returned.
    """

    roll: float
    pitch: float
    yaw: float
    gimbal_lock: bool = False


@dataclass(frozen=True)
class Obb:
    """Oriented box: center, strictly positive half extents, axis triple.

    half_extents are measured along (longitudinal, binormal, normal)
    in that order.
    """

    center: np.ndarray
    half_extents: np.ndarray
    axes: AxisTriple

    def __post_init__(self):
        object.__setattr__(self, "center", _as_vec3(self.center))
        he = np.asarray(self.half_extents, dtype=float).reshape(3)
        if not np.all(he > 0):
            raise ValueError(f"half_extents must be strictly positive, got {he!r}")
        object.__setattr__(self, "half_extents", he)

    def axis_matrix(self) -> np.ndarray:
        return self.axes.as_matrix()

    def corners(self) -> np.ndarray:
        """(8, 3) world-space corner positions."""
        m = self.axis_matrix()
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=float,
        )
        return self.center + (signs * self.half_extents) @ m.T

    def contains(self, points: np.ndarray, pad: float = 0.0) -> np.ndarray:
        """Boolean mask of points inside the (optionally padded) box."""
        local = (np.atleast_2d(points) - self.center) @ self.axis_matrix()
        return np.all(np.abs(local) <= self.half_extents + pad, axis=1)

    def extent_along(self, direction) -> float:
        """Full width of the box projected on a unit direction."""
        d = _as_vec3(direction)
        return float(2.0 * np.sum(self.half_extents * np.abs(self.axis_matrix().T @ d)))


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    """Flip v so the component with largest |value| is positive (ties: x, y, z)."""
    idx = int(np.argmax(np.abs(v)))  # argmax takes the first maximum: x, then y, then z
    return -v if v[idx] < 0 else v


def principal_axes(points) -> AxisTriple:
    """PCA axis extraction over a point cloud.

    longitudinal = eigenvector of the largest covariance eigenvalue,
    normal = eigenvector of the smallest, binormal = long x normal.
    The covariance divides by N (population normalization) and signs are
    canonicalized so serialization is frame-stable.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] < 4:
        raise DegenerateCloud(f"need at least 4 points, got {pts.shape[0]}")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / pts.shape[0]
    evals, evecs = np.linalg.eigh(cov)  # ascending eigenvalues
    # rank: eigenvalues relative to the dominant one
    if evals[2] <= 0 or evals[1] / evals[2] < 1e-12:
        raise DegenerateCloud("covariance rank < 2 (collinear or coincident points)")
    longitudinal = _canonical_sign(evecs[:, 2])
    nor = _canonical_sign(evecs[:, 0])
    return AxisTriple(longitudinal, np.cross(longitudinal, nor), nor)


def orthonormalize(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Gram-Schmidt repair of an (a, b) axis pair emitted by a model.

    Returns unit a and unit b with the component of b along a removed.
    """
    a_hat = normalize(a)
    b_arr = _as_vec3(b)
    b_norm = float(np.linalg.norm(b_arr))
    if b_norm <= 1e-6:
        raise ZeroAxis(f"cannot orthonormalize near-zero axis {b_arr!r}")
    residual = b_arr - (b_arr @ a_hat) * a_hat
    # sin(angle between a and b) == |residual| / |b|
    if np.linalg.norm(residual) / b_norm < PARALLEL_ANGLE_TOL:
        raise ParallelAxes(f"axes are parallel within {PARALLEL_ANGLE_TOL} rad")
    return a_hat, residual / np.linalg.norm(residual)


def _require_orthonormal_pair(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if abs(np.linalg.norm(a) - 1.0) > ORTHO_TOL or abs(np.linalg.norm(b) - 1.0) > ORTHO_TOL:
        raise NonOrthonormalFrame(f"{what}: axes are not unit length")
    if abs(float(a @ b)) > ORTHO_TOL:
        raise NonOrthonormalFrame(f"{what}: axes are not orthogonal")


def rotation_from_axis_goal(a, b, a0, b0) -> np.ndarray:
    """Rotation taking the initial gripper frame (a0, b0) onto the goal (a, b).

    R = a a0^T + b b0^T + (a x b)(a0 x b0)^T, which satisfies R a0 = a and
    R b0 = b exactly when both pairs are orthonormal.
    """
    a = _as_vec3(a)
    b = _as_vec3(b)
    a0 = _as_vec3(a0)
    b0 = _as_vec3(b0)
    _require_orthonormal_pair(a, b, "goal frame")
    _require_orthonormal_pair(a0, b0, "initial frame")
    rot = (
        np.outer(a, a0)
        + np.outer(b, b0)
        + np.outer(np.cross(a, b), np.cross(a0, b0))
    )
    return rot


def frame_matrix(longitudinal, binormal) -> np.ndarray:
    """Right-handed rotation matrix with columns (a, b, a x b)."""
    a = _as_vec3(longitudinal)
    b = _as_vec3(binormal)
    _require_orthonormal_pair(a, b, "frame")
    return np.column_stack([a, b, np.cross(a, b)])


def axes_to_euler(triple: AxisTriple) -> EulerAngles:
    """Decompose the triple's rotation as intrinsic Z-Y-X (yaw, pitch, roll)."""
    r = triple.rotation()
    sin_pitch = -r[2, 0]
    sin_pitch = min(1.0, max(-1.0, float(sin_pitch)))
    pitch = math.asin(sin_pitch)
    if abs(abs(pitch) - math.pi / 2) <= GIMBAL_TOL:
        # Singular: roll and yaw are coupled; return the roll = 0 member.
        yaw = math.atan2(-r[0, 1], r[1, 1])
        return EulerAngles(0.0, pitch, yaw, gimbal_lock=True)
    roll = math.atan2(r[2, 1], r[2, 2])
    yaw = math.atan2(r[1, 0], r[0, 0])
    return EulerAngles(roll, pitch, yaw)


def euler_to_axes(euler: EulerAngles) -> AxisTriple:
    """Rebuild the axis triple from intrinsic Z-Y-X angles."""
    cr, sr = math.cos(euler.roll), math.sin(euler.roll)
    cp, sp = math.cos(euler.pitch), math.sin(euler.pitch)
    cy, sy = math.cos(euler.yaw), math.sin(euler.yaw)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return AxisTriple.identity().rotated(rz @ ry @ rx)


# --- separating axis test ---------------------------------------------------

def _sat_axes(p: Obb, q: Obb) -> np.ndarray:
    ap = p.axis_matrix().T  # rows are p's axes
    aq = q.axis_matrix().T
    crosses = np.cross(ap[:, None, :], aq[None, :, :]).reshape(-1, 3)
    axes = np.vstack([ap, aq, crosses])
    norms = np.linalg.norm(axes, axis=1)
    keep = norms > 1e-9  # near-parallel axis pairs produce ~zero crosses
    return axes[keep] / norms[keep, None]


def obb_overlap_depths(p: Obb, q: Obb) -> np.ndarray:
    """Projection overlap on each candidate separating axis.

    Positive everywhere iff the boxes intersect; the minimum positive value
    is the usual SAT penetration-depth estimate.
    """
    axes = _sat_axes(p, q)
    rp = np.sum(np.abs(axes @ p.axis_matrix()) * p.half_extents, axis=1)
    rq = np.sum(np.abs(axes @ q.axis_matrix()) * q.half_extents, axis=1)
    dist = np.abs(axes @ (q.center - p.center))
    return rp + rq - dist


def obb_intersects(p: Obb, q: Obb) -> bool:
    """Separating-axis test over the 15 candidate axes."""
    return bool(np.all(obb_overlap_depths(p, q) >= 0.0))


def obb_penetration(p: Obb, q: Obb) -> float:
    """Penetration depth if intersecting, else 0."""
    depths = obb_overlap_depths(p, q)
    if np.all(depths >= 0.0):
        return float(np.min(depths))
    return 0.0


def random_orthonormal_pair(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """A uniformly random (a, b) orthonormal pair, for tests and fixtures."""
    while True:
        a = rng.normal(size=3)
        if np.linalg.norm(a) > 1e-6:
            break
    a = a / np.linalg.norm(a)
    while True:
        raw = rng.normal(size=3)
        b = raw - (raw @ a) * a
        n = np.linalg.norm(b)
        if n > 1e-6:
            return a, b / n
