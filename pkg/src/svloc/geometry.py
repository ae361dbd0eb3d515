"""Rigid poses, pinhole bearings and plate-carree panorama projections.

Frame conventions used throughout the package:

* Camera frame: x right, y down, z along the optical axis.
* A ``Pose`` maps local coordinates to its parent frame,
  ``p_parent = R @ p_local + t``.
* The trajectory frame is the frame of the first camera; the camera is level,
  so "up" in that frame is ``TRAJ_UP = (0, -1, 0)``.
* Panorama frame: x forward (image center column), y left, z up. Panorama yaw
  grows clockwise seen from above, so it increases with the image column.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import BadFov, DegeneratePoint

TRAJ_UP = np.array([0.0, -1.0, 0.0])

# Panorama frame (forward, left, up) expressed in the trajectory frame of a
# level rig at yaw 0: forward -> +z, left -> -x, up -> -y.
LEVEL_PANO_TO_TRAJ = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


def skew(v):
    v = np.asarray(v, dtype=float)
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def so3_exp(w):
    """Rodrigues' formula; accepts (3,) or (n, 3)."""
    w = np.asarray(w, dtype=float)
    single = w.ndim == 1
    w = np.atleast_2d(w)
    th = np.linalg.norm(w, axis=1)
    small = th < 1e-8
    ths = np.where(small, 1.0, th)
    a = np.where(small, 1.0 - th**2 / 6.0, np.sin(ths) / ths)
    b = np.where(small, 0.5 - th**2 / 24.0, (1.0 - np.cos(ths)) / ths**2)
    K = np.zeros((w.shape[0], 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -w[:, 2], w[:, 1]
    K[:, 1, 0], K[:, 1, 2] = w[:, 2], -w[:, 0]
    K[:, 2, 0], K[:, 2, 1] = -w[:, 1], w[:, 0]
    R = np.eye(3) + a[:, None, None] * K + b[:, None, None] * (K @ K)
    return R[0] if single else R


def quat_from_matrix(R):
    """Unit quaternion (w, x, y, z) with w >= 0; accepts (3,3) or (n,3,3)."""
    R = np.asarray(R, dtype=float)
    single = R.ndim == 2
    R = R.reshape(-1, 3, 3)
    n = R.shape[0]
    q = np.empty((n, 4))
    tr = np.trace(R, axis1=1, axis2=2)
    diag = np.stack([R[:, 0, 0], R[:, 1, 1], R[:, 2, 2]], axis=1)
    choice = np.argmax(np.column_stack([tr, diag]), axis=1)
    for i in range(n):
        m = R[i]
        c = choice[i]
        if c == 0:
            s = 2.0 * np.sqrt(1.0 + tr[i])
            q[i] = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif c == 1:
            s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q[i] = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif c == 2:
            s = 2.0 * np.sqrt(1.0 - m[0, 0] + m[1, 1] - m[2, 2])
            q[i] = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 - m[0, 0] - m[1, 1] + m[2, 2])
            q[i] = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q[q[:, 0] < 0] *= -1.0
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q[0] if single else q


def matrix_from_quat(q):
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def so3_log(R):
    """Rotation vector of R; accepts (3,3) or (n,3,3). Stable up to pi."""
    R = np.asarray(R, dtype=float)
    single = R.ndim == 2
    q = np.atleast_2d(quat_from_matrix(R))
    v = q[:, 1:]
    s = np.linalg.norm(v, axis=1)
    angle = 2.0 * np.arctan2(s, q[:, 0])
    small = s < 1e-12
    factor = np.where(small, 2.0 / np.where(small, q[:, 0], 1.0), angle / np.where(small, 1.0, s))
    out = v * factor[:, None]
    return out[0] if single else out


def right_jacobian_inv(phi):
    """Inverse right Jacobian of SO(3); accepts (3,) or (n, 3)."""
    phi = np.asarray(phi, dtype=float)
    single = phi.ndim == 1
    phi = np.atleast_2d(phi)
    th = np.linalg.norm(phi, axis=1)
    K = np.zeros((phi.shape[0], 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -phi[:, 2], phi[:, 1]
    K[:, 1, 0], K[:, 1, 2] = phi[:, 2], -phi[:, 0]
    K[:, 2, 0], K[:, 2, 1] = -phi[:, 1], phi[:, 0]
    small = th < 1e-5
    ths = np.where(small, 1.0, th)
    c = np.where(small, 1.0 / 12.0, 1.0 / ths**2 - (1.0 + np.cos(ths)) / (2.0 * ths * np.sin(ths)))
    J = np.eye(3) + 0.5 * K + c[:, None, None] * (K @ K)
    return J[0] if single else J


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform stored as a unit quaternion (w, x, y, z) and translation."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        q = q / np.linalg.norm(q)
        if q[0] < 0:
            q = -q
        object.__setattr__(self, "q", _frozen(q))
        object.__setattr__(self, "t", _frozen(np.asarray(self.t, dtype=float).reshape(3)))

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, R, t=(0.0, 0.0, 0.0)):
        return cls(quat_from_matrix(R), t)

    @classmethod
    def from_rotvec(cls, w, t=(0.0, 0.0, 0.0)):
        return cls.from_matrix(so3_exp(w), t)

    @property
    def R(self):
        return matrix_from_quat(self.q)

    def compose(self, other: "Pose") -> "Pose":
        return Pose(quat_multiply(self.q, other.q), self.R @ other.t + self.t)

    __matmul__ = compose

    def inverse(self) -> "Pose":
        qi = self.q * np.array([1.0, -1.0, -1.0, -1.0])
        return Pose(qi, -(self.R.T @ self.t))

    def transform(self, pts):
        """Map local points (3,) or (n, 3) into the parent frame."""
        return np.asarray(pts, dtype=float) @ self.R.T + self.t

    def boxplus(self, delta):
        """Right-perturb by the 6-vector ``(rotvec, translation)``."""
        delta = np.asarray(delta, dtype=float)
        return self.compose(Pose.from_rotvec(delta[:3], delta[3:]))

    def rotation_angle(self):
        return float(np.linalg.norm(so3_log(self.R)))

    def to_dict(self):
        return {"q": [float(v) for v in self.q], "t": [float(v) for v in self.t]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["q"], dtype=float), np.asarray(d["t"], dtype=float))

    def __repr__(self):
        return f"Pose(q={np.round(self.q, 6).tolist()}, t={np.round(self.t, 6).tolist()})"


def pose_distance(a: Pose, b: Pose):
    """(rotation angle, translation distance) between two poses."""
    d = a.inverse() @ b
    return d.rotation_angle(), float(np.linalg.norm(a.t - b.t))


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def from_fov(cls, hfov, width, height):
        """Pinhole with square pixels and centered principal point."""
        f = (width / 2.0) / np.tan(hfov / 2.0)
        return cls(f, f, width / 2.0, height / 2.0, int(width), int(height))

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self):
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


class Bearing(NamedTuple):
    theta: float  # elevation from the optical axis, [0, pi]
    phi: float  # azimuth around the optical axis, (-pi, pi]


def bearings_of_directions(d):
    """(n, 3) directions -> (n, 2) array of (theta, phi)."""
    d = np.atleast_2d(np.asarray(d, dtype=float))
    rho = np.hypot(d[:, 0], d[:, 1])
    theta = np.arctan2(rho, d[:, 2])
    phi = np.where(rho > 0.0, np.arctan2(d[:, 1], d[:, 0]), 0.0)
    phi = np.where(phi == -np.pi, np.pi, phi)
    return np.column_stack([theta, phi])


def pixel_directions(k: Intrinsics, uv):
    uv = np.atleast_2d(np.asarray(uv, dtype=float))
    return np.column_stack([(uv[:, 0] - k.cx) / k.fx, (uv[:, 1] - k.cy) / k.fy, np.ones(len(uv))])


def bearings_of_pixels(k: Intrinsics, uv):
    return bearings_of_directions(pixel_directions(k, uv))


def bearing_of_pixel(k: Intrinsics, u: float, v: float) -> Bearing:
    """Elevation/azimuth of the ray through pixel (u, v).

    The azimuth uses the two-argument arctangent, and is 0 on the optical axis.
    """
    th, ph = bearings_of_pixels(k, [[u, v]])[0]
    return Bearing(float(th), float(ph))


def direction_of_bearing(theta, phi):
    """Unit direction(s) for bearing angles (scalar or arrays)."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    s = np.sin(theta)
    return np.stack([s * np.cos(phi), s * np.sin(phi), np.cos(theta)], axis=-1)


def pixel_of_direction(k: Intrinsics, d):
    d = np.atleast_2d(np.asarray(d, dtype=float))
    return np.column_stack([k.fx * d[:, 0] / d[:, 2] + k.cx, k.fy * d[:, 1] / d[:, 2] + k.cy])


def predict_bearings(R, t, points):
    """Vectorized bearing prediction for cameras (n,3,3),(n,3) and points (n,3)."""
    zeros = np.zeros((np.shape(points)[0], 2))
    r = _kernels.bearing_residuals(R, t, points, zeros)
    r[:, 1] = np.where(r[:, 1] == -np.pi, np.pi, r[:, 1])
    return r


def predict_bearing(camera: Pose, point) -> Bearing:
    """Bearing of a world point seen from ``camera`` (camera-to-world pose)."""
    point = np.asarray(point, dtype=float)
    if np.linalg.norm(point - camera.t) <= 1e-12:
        raise DegeneratePoint("point coincides with the camera center")
    d = camera.R.T @ (point - camera.t)
    th, ph = bearings_of_directions(d)[0]
    return Bearing(float(th), float(ph))


# ---------------------------------------------------------------- panoramas


@dataclass(frozen=True, eq=False)
class PanoImage:
    """Plate-carree image, shape (H, W) or (H, W, C) with W = 2H."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim not in (2, 3) or px.shape[1] != 2 * px.shape[0]:
            raise ValueError(f"plate carree needs W == 2H, got shape {px.shape}")

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


def pano_pixel_of_direction(d, W, H):
    """Panorama-frame unit direction(s) -> real pixel (u, v).

    Pixel centers sit at integer coordinates; column W wraps onto column 0.
    """
    d = np.asarray(d, dtype=float)
    yaw = np.arctan2(-d[..., 1], d[..., 0])
    pitch = np.arcsin(np.clip(d[..., 2], -1.0, 1.0))
    u = (yaw + np.pi) / (2.0 * np.pi) * W
    v = (np.pi / 2.0 - pitch) / np.pi * H
    return np.stack([u, v], axis=-1)


def direction_of_pano_pixel(uv, W, H):
    uv = np.asarray(uv, dtype=float)
    yaw = uv[..., 0] / W * 2.0 * np.pi - np.pi
    pitch = np.pi / 2.0 - uv[..., 1] / H * np.pi
    c = np.cos(pitch)
    return np.stack([c * np.cos(yaw), -c * np.sin(yaw), np.sin(pitch)], axis=-1)


def view_rotation(yaw, pitch=0.0):
    """Rotation taking camera-frame vectors of a view into the panorama frame."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    f = np.array([cp * cy, -cp * sy, sp])
    r = np.array([-sy, -cy, 0.0])
    d = np.cross(f, r)
    return np.column_stack([r, d, f])


def level_rig_rotation(yaw):
    """Orientation of a level panorama rig in the trajectory frame.

    ``yaw`` turns the rig clockwise seen from above, like panorama yaw.
    """
    c, s = np.cos(yaw), np.sin(yaw)
    rz = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    return LEVEL_PANO_TO_TRAJ @ rz


@dataclass(frozen=True, eq=False)
class RectilinearView:
    yaw: float
    pitch: float
    fov: float
    intrinsics: Intrinsics
    rotation: np.ndarray  # camera frame -> panorama frame
    image: np.ndarray | None = None


def view_sampling_map(yaw, pitch, fov, out_size, W, H):
    """Panorama pixel sampled by each view pixel; returns (map_u, map_v, K)."""
    if not (0.0 < fov < np.pi):
        raise BadFov(f"fov must lie in (0, pi), got {fov}")
    k = Intrinsics.from_fov(fov, out_size, out_size)
    jj, ii = np.meshgrid(np.arange(out_size, dtype=float), np.arange(out_size, dtype=float))
    rays = np.stack([(jj - k.cx) / k.fx, (ii - k.cy) / k.fy, np.ones_like(jj)], axis=-1)
    rays /= np.linalg.norm(rays, axis=-1, keepdims=True)
    dirs = rays @ view_rotation(yaw, pitch).T
    uv = pano_pixel_of_direction(dirs, W, H)
    return uv[..., 0], uv[..., 1], k


def extract_rectilinear(pano: PanoImage, yaw, pitch, fov, out_size=512):
    """Render a pinhole view of the panorama with bilinear sampling.

    Returns ``(image, intrinsics)``.
    """
    mu, mv, k = view_sampling_map(yaw, pitch, fov, out_size, pano.width, pano.height)
    return _kernels.bilinear_sample(pano.pixels, mu, mv), k


def standard_view_yaws(n=8):
    return [2.0 * np.pi * i / n for i in range(n)]


def standard_views(pano: PanoImage | None, out_size=512, fov=np.pi / 2, n=8):
    """The eight horizontal 90 degree views at 45 degree spacing.

    Top and bottom views are never produced. With ``pano=None`` only the view
    geometry is returned (no raster).
    """
    views = []
    for yaw in standard_view_yaws(n):
        if pano is None:
            img, k = None, Intrinsics.from_fov(fov, out_size, out_size)
        else:
            img, k = extract_rectilinear(pano, yaw, 0.0, fov, out_size)
        views.append(RectilinearView(yaw, 0.0, fov, k, view_rotation(yaw, 0.0), img))
    return views
