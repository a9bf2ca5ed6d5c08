"""Pinhole camera, SE(3) tangent parameterization and the 3D-2D warp.

Tangent vectors are ordered ``(rho_x, rho_y, rho_z, phi_x, phi_y, phi_z)``:
translation-like part first, rotation vector second. ``exp_map`` is the
standard SE(3) exponential, so the translation of ``exp_map(theta)`` equals
``V(phi) @ rho``.

Frames are written as ``T_ab``: the transform taking coordinates in frame
``b`` to frame ``a``. A template's ``reference_pose`` is ``T_rw`` and the
tracked parameters describe ``T_cr``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DomainError, ParseError

SMALL_ANGLE = 1e-8


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise DomainError("principal point must lie inside the sensor")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def resolution(self) -> tuple[int, int]:
        return self.width, self.height

    @classmethod
    def from_file(cls, path: str | Path) -> "CameraIntrinsics":
        """Read a calibration file holding ``fx fy cx cy width height``."""
        lines = [
            ln.strip()
            for ln in Path(path).read_text().splitlines()
            if ln.strip() and not ln.lstrip().startswith("#")
        ]
        if len(lines) != 1:
            raise ParseError(f"expected one calibration line, found {len(lines)}")
        parts = lines[0].split()
        if len(parts) != 6:
            raise ParseError("calibration needs 'fx fy cx cy width height'", line=1)
        try:
            fx, fy, cx, cy = (float(v) for v in parts[:4])
            width, height = int(parts[4]), int(parts[5])
        except ValueError as exc:
            raise ParseError(str(exc), line=1) from None
        return cls(fx, fy, cx, cy, width, height)

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text(
            f"{self.fx:.17g} {self.fy:.17g} {self.cx:.17g} {self.cy:.17g} {self.width} {self.height}\n"
        )


def hat(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def _so3_exp_and_v(phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    angle = float(np.linalg.norm(phi))
    K = hat(phi)
    K2 = K @ K
    eye = np.eye(3)
    if angle < SMALL_ANGLE:
        return eye + K + 0.5 * K2, eye + 0.5 * K + K2 / 6.0
    s = math.sin(angle)
    a2 = angle * angle
    one_minus_c = 2.0 * math.sin(0.5 * angle) ** 2  # 1 - cos without cancellation
    R = eye + (s / angle) * K + (one_minus_c / a2) * K2
    V = eye + (one_minus_c / a2) * K + ((angle - s) / (a2 * angle)) * K2
    return R, V


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix, valid over the full range [0, pi]."""
    cos_angle = float(np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0))
    skew = vee(R - R.T)
    # atan2 keeps full precision at small angles where acos of the trace does not
    angle = math.atan2(0.5 * float(np.linalg.norm(skew)), cos_angle)
    if angle < SMALL_ANGLE:
        return 0.5 * skew
    if angle < math.pi - 1e-6:
        return (angle / (2.0 * math.sin(angle))) * skew
    # Near pi the skew part vanishes; recover the axis from the symmetric part.
    nnT = (0.5 * (R + R.T) - cos_angle * np.eye(3)) / (1.0 - cos_angle)
    k = int(np.argmax(np.diag(nnT)))
    axis = nnT[:, k] / math.sqrt(max(nnT[k, k], 1e-300))
    if axis @ skew < 0.0:
        axis = -axis
    return angle * axis


def _v_inverse(phi: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(phi))
    K = hat(phi)
    K2 = K @ K
    if angle < SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + K2 / 12.0
    s = math.sin(angle)
    one_minus_c = 2.0 * math.sin(0.5 * angle) ** 2
    coeff = (1.0 - angle * s / (2.0 * one_minus_c)) / (angle * angle)
    return np.eye(3) - 0.5 * K + coeff * K2


@dataclass(frozen=True, eq=False)
class PoseSE3:
    """Rigid transform stored as a 4x4 homogeneous matrix."""

    matrix: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (4, 4):
            raise DomainError("pose matrix must be 4x4")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.eye(4))

    @classmethod
    def from_rt(cls, R: np.ndarray, t: np.ndarray) -> "PoseSE3":
        m = np.eye(4)
        m[:3, :3] = R
        m[:3, 3] = t
        return cls(m)

    @classmethod
    def exp(cls, theta) -> "PoseSE3":
        return exp_map(theta)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    @cached_property
    def theta(self) -> np.ndarray:
        return log_map(self)

    def inverse(self) -> "PoseSE3":
        R = self.rotation
        return PoseSE3.from_rt(R.T, -R.T @ self.translation)

    def __matmul__(self, other):
        if isinstance(other, PoseSE3):
            return PoseSE3(self.matrix @ other.matrix)
        pts = np.asarray(other, dtype=float)
        return pts @ self.rotation.T + self.translation

    def __repr__(self) -> str:
        return f"PoseSE3(theta={np.array2string(self.theta, precision=6)})"


def exp_map(theta) -> PoseSE3:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (6,) or not np.all(np.isfinite(theta)):
        raise DomainError("theta must be a finite 6-vector")
    R, V = _so3_exp_and_v(theta[3:])
    return PoseSE3.from_rt(R, V @ theta[:3])


def log_map(pose: PoseSE3 | np.ndarray) -> np.ndarray:
    m = pose.matrix if isinstance(pose, PoseSE3) else np.asarray(pose, dtype=float)
    phi = so3_log(m[:3, :3])
    rho = _v_inverse(phi) @ m[:3, 3]
    return np.concatenate([rho, phi])


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    return bool(
        np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) < tol
    )


def project(P, K: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of one camera-frame point."""
    X, Y, Z = (float(v) for v in P)
    if not Z > 0:
        raise DomainError(f"point behind camera (z={Z})")
    return np.array([K.fx * X / Z + K.cx, K.fy * Y / Z + K.cy])


def back_project(x, d: float, K: CameraIntrinsics) -> np.ndarray:
    if not d > 0:
        raise DomainError(f"depth must be positive (d={d})")
    u, v = (float(c) for c in x)
    return np.array([(u - K.cx) / K.fx * d, (v - K.cy) / K.fy * d, float(d)])


def project_points(P: np.ndarray, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection; returns ``(pixels, valid)`` where valid means z > 0."""
    P = np.asarray(P, dtype=float)
    z = P[:, 2]
    valid = z > 0
    zs = np.where(valid, z, 1.0)
    uv = np.empty((len(P), 2))
    uv[:, 0] = K.fx * P[:, 0] / zs + K.cx
    uv[:, 1] = K.fy * P[:, 1] / zs + K.cy
    return uv, valid


def back_project_points(pixels: np.ndarray, depths: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=float)
    depths = np.asarray(depths, dtype=float)
    if np.any(depths <= 0):
        raise DomainError("depths must be positive")
    out = np.empty((len(pixels), 3))
    out[:, 0] = (pixels[:, 0] - K.cx) / K.fx * depths
    out[:, 1] = (pixels[:, 1] - K.cy) / K.fy * depths
    out[:, 2] = depths
    return out


def in_bounds(pixels: np.ndarray, K: CameraIntrinsics, margin: float = 0.0) -> np.ndarray:
    u, v = pixels[:, 0], pixels[:, 1]
    return (
        (u >= margin) & (u <= K.width - 1 - margin) & (v >= margin) & (v <= K.height - 1 - margin)
    )


@dataclass(frozen=True, eq=False)
class TemplateView:
    """Semi-dense map seen from a reference camera as (pixel, depth) pairs."""

    reference_pose: PoseSE3  # T_rw
    pixels: np.ndarray
    depths: np.ndarray
    camera: CameraIntrinsics | None = None

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        depths = np.asarray(self.depths, dtype=float).reshape(-1)
        if len(pixels) != len(depths):
            raise DomainError("pixels and depths differ in length")
        if np.any(depths <= 0):
            raise DomainError("template depths must be positive")
        if self.camera is not None and np.any(~in_bounds(pixels, self.camera)):
            raise DomainError("template pixel outside reference image")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "depths", depths)

    def __len__(self) -> int:
        return len(self.depths)

    def points(self, K: CameraIntrinsics | None = None) -> np.ndarray:
        """Template entries back-projected into the reference frame."""
        K = K or self.camera
        if K is None:
            raise DomainError("no camera attached to template")
        return back_project_points(self.pixels, self.depths, K)

    @classmethod
    def from_map(
        cls,
        map_points: np.ndarray,
        reference_pose: PoseSE3,
        K: CameraIntrinsics,
        max_points: int | None = None,
        margin: float = 1.0,
    ) -> "TemplateView":
        """Project world map points into the reference camera (``reference_pose`` is T_rw).

        Points behind the camera or within ``margin`` pixels of the border are
        dropped. When more than ``max_points`` survive, an evenly strided subset
        is kept so the selection is deterministic.
        """
        P = reference_pose @ np.asarray(map_points, dtype=float).reshape(-1, 3)
        uv, front = project_points(P, K)
        keep = front & in_bounds(uv, K, margin)
        idx = np.flatnonzero(keep)
        if max_points is not None and len(idx) > max_points:
            idx = idx[np.linspace(0, len(idx) - 1, max_points).round().astype(int)]
        return cls(reference_pose, uv[idx], P[idx, 2], K)


def point_jacobian(P: np.ndarray) -> np.ndarray:
    """d(exp(dtheta) @ P)/d dtheta at zero, shape (N, 3, 6): ``[I | -[P]x]``."""
    P = np.atleast_2d(P)
    n = len(P)
    B = np.zeros((n, 3, 6))
    B[:, 0, 0] = B[:, 1, 1] = B[:, 2, 2] = 1.0
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    B[:, 0, 4], B[:, 0, 5] = z, -y
    B[:, 1, 3], B[:, 1, 5] = -z, x
    B[:, 2, 3], B[:, 2, 4] = y, -x
    return B


def projection_jacobian(P: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """d(pi(P))/dP, shape (N, 2, 3)."""
    P = np.atleast_2d(P)
    inv_z = 1.0 / P[:, 2]
    out = np.zeros((len(P), 2, 3))
    out[:, 0, 0] = K.fx * inv_z
    out[:, 0, 2] = -K.fx * P[:, 0] * inv_z * inv_z
    out[:, 1, 1] = K.fy * inv_z
    out[:, 1, 2] = -K.fy * P[:, 1] * inv_z * inv_z
    return out


def warp(x, d: float, theta, K: CameraIntrinsics) -> tuple[np.ndarray, bool]:
    """Map template pixel ``x`` with depth ``d`` into the current frame under T(theta).

    Returns ``(pixel, valid)``; ``valid`` is False when the transformed point is
    not in front of the camera, in which case the pixel is NaN.
    """
    theta = np.asarray(theta, dtype=float)
    if not np.any(theta):
        return np.array(x, dtype=float), True
    P = exp_map(theta) @ back_project(x, d, K)
    if not P[2] > 0:
        return np.full(2, np.nan), False
    return project(P, K), True


def warp_jacobian(x, d: float, K: CameraIntrinsics) -> np.ndarray:
    """2x6 Jacobian of the warp with respect to the increment, at zero increment."""
    P = back_project(x, d, K)[None]
    return (projection_jacobian(P, K) @ point_jacobian(P))[0]
