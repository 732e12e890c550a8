"""Rigid and similarity transforms in 3D.

All types are immutable. Arrays stored on them are flagged read-only, so a
value can be shared freely between threads or cached without copies.

Poses use the camera-to-world convention throughout: ``Pose.translation`` is
the camera center in world coordinates and ``Pose.rotation`` maps camera-frame
directions into the world frame. Sources that store world-to-camera
extrinsics convert through :meth:`Pose.from_world_to_camera`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.transform import Rotation as _ScipyRotation

from .errors import ValidationError

ALGEBRA_TOL = 1e-9
EXTERNAL_ROTATION_TOL = 1e-6


def _frozen(a: ArrayLike, shape: tuple[int, ...], name: str) -> NDArray[np.float64]:
    arr = np.array(a, dtype=np.float64)
    if arr.shape != shape:
        raise ValidationError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


def as_vec3(p: ArrayLike, name: str = "point") -> NDArray[np.float64]:
    """Coerce to a finite float64 vector of length 3 (writable copy)."""
    arr = np.array(p, dtype=np.float64)
    if arr.shape != (3,):
        raise ValidationError(f"{name} must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite")
    return arr


def orthogonality_residual(m: NDArray[np.float64]) -> float:
    return float(np.max(np.abs(m.T @ m - np.eye(3))))


@dataclass(frozen=True, eq=False)
class Rotation3:
    """Proper rotation stored as a 3x3 orthonormal matrix.

    The constructor accepts matrices whose orthogonality residual and
    determinant error are within ``tol`` (default 1e-6, the tolerance for
    externally supplied rotations). Inputs that are valid but further than
    1e-9 from SO(3) are projected onto it with an SVD so that every stored
    rotation satisfies the tight invariants.
    """

    matrix: NDArray[np.float64]
    tol: float = field(default=EXTERNAL_ROTATION_TOL, repr=False)

    def __post_init__(self) -> None:
        m = _frozen(self.matrix, (3, 3), "rotation matrix")
        ortho = orthogonality_residual(m)
        det = float(np.linalg.det(m))
        if ortho > self.tol or abs(det - 1.0) > self.tol:
            raise ValidationError(
                f"not a proper rotation: orthogonality residual {ortho:.3g}, det {det:.12g}"
            )
        if ortho > ALGEBRA_TOL or abs(det - 1.0) > ALGEBRA_TOL:
            u, _, vt = np.linalg.svd(m)
            d = np.sign(np.linalg.det(u @ vt))
            m = u @ np.diag([1.0, 1.0, d]) @ vt
            m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> Rotation3:
        return cls(np.eye(3))

    @classmethod
    def from_quaternion(cls, wxyz: ArrayLike, tol: float = 1e-3) -> Rotation3:
        """Build from a Hamilton quaternion ``(w, x, y, z)``.

        The quaternion is normalized; a norm further than ``tol`` from one is
        rejected.
        """
        q = np.asarray(wxyz, dtype=np.float64)
        if q.shape != (4,) or not np.all(np.isfinite(q)):
            raise ValidationError("quaternion must be 4 finite numbers")
        n = float(np.linalg.norm(q))
        if abs(n - 1.0) > tol:
            raise ValidationError(f"quaternion norm {n:.6g} deviates from 1 by more than {tol}")
        w, x, y, z = q / n
        m = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
        return cls(m)

    @classmethod
    def from_rotvec(cls, rotvec: ArrayLike) -> Rotation3:
        return cls(_ScipyRotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix())

    @classmethod
    def random(cls, rng: np.random.Generator) -> Rotation3:
        """Uniformly distributed rotation drawn from ``rng``."""
        q = rng.normal(size=4)
        return cls.from_quaternion(q / np.linalg.norm(q))

    def as_quaternion(self) -> NDArray[np.float64]:
        """Unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""
        x, y, z, w = _ScipyRotation.from_matrix(self.matrix).as_quat()
        q = np.array([w, x, y, z])
        if q[0] < 0:
            q = -q
        return q

    def as_rotvec(self) -> NDArray[np.float64]:
        return _ScipyRotation.from_matrix(self.matrix).as_rotvec()

    @property
    def T(self) -> Rotation3:
        return Rotation3(self.matrix.T)

    def __matmul__(self, other: Rotation3) -> Rotation3:
        return Rotation3(self.matrix @ other.matrix)

    def apply(self, v: ArrayLike) -> NDArray[np.float64]:
        """Rotate a vector ``(3,)`` or a stack of row vectors ``(n, 3)``."""
        v = np.asarray(v, dtype=np.float64)
        return v @ self.matrix.T

    def angle_to(self, other: Rotation3) -> float:
        """Geodesic angle in radians between two rotations.

        Uses ``atan2(sin, cos)`` of the relative rotation so that small
        angles keep full precision.
        """
        r = self.matrix.T @ other.matrix
        c = (np.trace(r) - 1.0) / 2.0
        s = np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / 2.0
        return float(np.arctan2(s, c))

    def allclose(self, other: Rotation3, atol: float = ALGEBRA_TOL) -> bool:
        return bool(np.allclose(self.matrix, other.matrix, rtol=0.0, atol=atol))


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera-to-world pose. ``translation`` is the camera center."""

    rotation: Rotation3
    translation: NDArray[np.float64]

    def __post_init__(self) -> None:
        if not isinstance(self.rotation, Rotation3):
            object.__setattr__(self, "rotation", Rotation3(self.rotation))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,), "translation"))

    @classmethod
    def identity(cls) -> Pose:
        return cls(Rotation3.identity(), np.zeros(3))

    @classmethod
    def from_world_to_camera(cls, rotation: Rotation3 | ArrayLike, translation: ArrayLike) -> Pose:
        """Convert extrinsics ``x_cam = R x_world + t`` to camera-to-world form."""
        r = rotation if isinstance(rotation, Rotation3) else Rotation3(rotation)
        t = as_vec3(translation, "translation")
        return cls(r.T, -(r.matrix.T @ t))

    def to_world_to_camera(self) -> tuple[Rotation3, NDArray[np.float64]]:
        r_wc = self.rotation.T
        return r_wc, -(r_wc.matrix @ self.translation)

    @property
    def center(self) -> NDArray[np.float64]:
        return self.translation

    def world_to_camera_points(self, points: ArrayLike) -> NDArray[np.float64]:
        """Express world points ``(n, 3)`` in this camera's frame."""
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.translation) @ self.rotation.matrix

    def allclose(self, other: Pose, atol: float = ALGEBRA_TOL) -> bool:
        return self.rotation.allclose(other.rotation, atol) and bool(
            np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )


@dataclass(frozen=True, eq=False)
class Sim3Transform:
    """Similarity transform ``p -> scale * R p + translation``."""

    scale: float
    rotation: Rotation3
    translation: NDArray[np.float64]

    def __post_init__(self) -> None:
        s = float(self.scale)
        if not np.isfinite(s) or s <= 0.0:
            raise ValidationError(f"scale must be positive and finite, got {self.scale!r}")
        object.__setattr__(self, "scale", s)
        if not isinstance(self.rotation, Rotation3):
            object.__setattr__(self, "rotation", Rotation3(self.rotation))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,), "translation"))

    @classmethod
    def identity(cls) -> Sim3Transform:
        return cls(1.0, Rotation3.identity(), np.zeros(3))

    @classmethod
    def random(
        cls,
        rng: np.random.Generator,
        scale_range: tuple[float, float] = (0.2, 5.0),
        translation_sigma: float = 5.0,
    ) -> Sim3Transform:
        lo, hi = scale_range
        scale = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        return cls(scale, Rotation3.random(rng), rng.normal(scale=translation_sigma, size=3))

    def as_matrix(self) -> NDArray[np.float64]:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation.matrix
        m[:3, 3] = self.translation
        return m

    def apply(self, points: ArrayLike) -> NDArray[np.float64]:
        """Transform a point ``(3,)`` or row-stacked points ``(n, 3)``."""
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * (pts @ self.rotation.matrix.T) + self.translation

    def apply_to_pose(self, pose: Pose) -> Pose:
        """Map a camera-to-world pose through the transform; scale leaves rotation alone."""
        return Pose(self.rotation @ pose.rotation, self.apply(pose.translation))

    def inverse(self) -> Sim3Transform:
        r_inv = self.rotation.T
        inv_s = 1.0 / self.scale
        return Sim3Transform(inv_s, r_inv, -inv_s * (r_inv.matrix @ self.translation))

    def __matmul__(self, other: Sim3Transform) -> Sim3Transform:
        """``(a @ b).apply(p) == a.apply(b.apply(p))``."""
        return Sim3Transform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * (self.rotation.matrix @ other.translation) + self.translation,
        )

    def allclose(self, other: Sim3Transform, atol: float = ALGEBRA_TOL) -> bool:
        return (
            abs(self.scale - other.scale) <= atol
            and self.rotation.allclose(other.rotation, atol)
            and bool(np.allclose(self.translation, other.translation, rtol=0.0, atol=atol))
        )


@dataclass(frozen=True, eq=False)
class Box3:
    """Box with center, non-negative half-extents and an orientation."""

    center: NDArray[np.float64]
    half_extents: NDArray[np.float64]
    rotation: Rotation3 = field(default_factory=Rotation3.identity)

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _frozen(self.center, (3,), "center"))
        he = _frozen(self.half_extents, (3,), "half_extents")
        if np.any(he < 0):
            raise ValidationError("half_extents must be non-negative")
        object.__setattr__(self, "half_extents", he)
        if not isinstance(self.rotation, Rotation3):
            object.__setattr__(self, "rotation", Rotation3(self.rotation))

    @classmethod
    def from_bounds(cls, lo: ArrayLike, hi: ArrayLike) -> Box3:
        lo = as_vec3(lo, "lower bound")
        hi = as_vec3(hi, "upper bound")
        if np.any(hi < lo):
            raise ValidationError("upper bound below lower bound")
        return cls((lo + hi) / 2.0, (hi - lo) / 2.0)

    @classmethod
    def cube(cls, center: ArrayLike, side: float) -> Box3:
        return cls(center, np.full(3, side / 2.0))

    @property
    def is_axis_aligned(self) -> bool:
        return self.rotation.allclose(Rotation3.identity())

    @property
    def volume(self) -> float:
        return float(8.0 * np.prod(self.half_extents))

    def corners(self) -> NDArray[np.float64]:
        signs = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], float)
        return self.center + (signs * self.half_extents) @ self.rotation.matrix.T

    def aabb(self) -> Box3:
        """World-frame axis-aligned box enclosing this (possibly oriented) box."""
        if self.is_axis_aligned:
            return Box3(self.center, self.half_extents)
        he = np.abs(self.rotation.matrix) @ self.half_extents
        return Box3(self.center, he)

    @property
    def lo(self) -> NDArray[np.float64]:
        return self.aabb_bounds()[0]

    @property
    def hi(self) -> NDArray[np.float64]:
        return self.aabb_bounds()[1]

    def aabb_bounds(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        box = self.aabb()
        return box.center - box.half_extents, box.center + box.half_extents

    def contains(self, points: ArrayLike, margin: float = 0.0) -> NDArray[np.bool_]:
        """Inside test against the AABB inflated by ``margin``; boundary counts as inside."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        lo, hi = self.aabb_bounds()
        return np.all((pts >= lo - margin) & (pts <= hi + margin), axis=1)

    def hull(self, other: Box3) -> Box3:
        """Smallest axis-aligned box enclosing both boxes."""
        a_lo, a_hi = self.aabb_bounds()
        b_lo, b_hi = other.aabb_bounds()
        return Box3.from_bounds(np.minimum(a_lo, b_lo), np.maximum(a_hi, b_hi))


def transform_point(t: Sim3Transform, p: ArrayLike) -> NDArray[np.float64]:
    return t.apply(as_vec3(p))


def compose(a: Sim3Transform, b: Sim3Transform) -> Sim3Transform:
    """Transform equivalent to applying ``b`` first, then ``a``."""
    return a @ b


def invert(t: Sim3Transform) -> Sim3Transform:
    return t.inverse()


def camera_center(p: Pose) -> NDArray[np.float64]:
    return p.translation.copy()
