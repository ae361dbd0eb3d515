"""Bearing and relative-pose factors with analytic Jacobians."""

import numpy as np

from . import _kernels
from .geometry import Pose, matrix_from_quat, right_jacobian_inv, so3_log
from .nlls import POINT, POSE, FactorGroup

SIN2_FLOOR = 1e-12


def bearing_information(theta, sigma):
    """Per-observation information for (theta, phi) residuals.

    The azimuth error spans an arc of ``sin(theta) * dphi`` on the unit
    sphere, so its weight is scaled by ``sin(theta)**2``. This fades the
    azimuth out near the optical axis where it is undefined.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    info = np.zeros((len(theta), 2, 2))
    info[:, 0, 0] = 1.0 / sigma**2
    info[:, 1, 1] = np.maximum(np.sin(theta) ** 2, SIN2_FLOOR) / sigma**2
    return info


class BearingFactors(FactorGroup):
    """Residual ``(theta_hat - theta, wrap(phi_hat - phi))`` per observation."""

    kinds = (POSE, POINT)
    dim = 2
    name = "bearing"

    def __init__(self, pose_ids, point_ids, measured, information, kernel=None):
        super().__init__(list(zip(pose_ids, point_ids)), information, kernel)
        self.measured = np.ascontiguousarray(np.asarray(measured, dtype=float).reshape(-1, 2))

    def residuals(self, values):
        (R, t), y = values
        return _kernels.bearing_residuals(R, t, y, self.measured)

    def linearize(self, values, eps=None):
        (R, t), y = values
        r, jp, jy = _kernels.bearing_linearize(R, t, y, self.measured)
        return r, [jp, jy]

    def measurement_rows(self):
        return self.measured.tolist()


def _stack_poses(poses):
    R = np.array([matrix_from_quat(p.q) for p in poses]).reshape(-1, 3, 3)
    t = np.array([p.t for p in poses]).reshape(-1, 3)
    return R, t


class RelativePoseFactors(FactorGroup):
    """Error between a measured and a predicted relative pose ``a^-1 b``.

    With ``E = Z^-1 (a^-1 b)`` the residual is ``(Log(R_E), t_E)``.
    """

    kinds = (POSE, POSE)
    dim = 6
    name = "relpose"

    def __init__(self, a_ids, b_ids, measured, information, kernel=None):
        super().__init__(list(zip(a_ids, b_ids)), information, kernel)
        self.measured = list(measured)
        self.Rz, self.tz = _stack_poses(self.measured)

    def _error(self, values):
        (Ra, ta), (Rb, tb) = values
        RaT = np.transpose(Ra, (0, 2, 1))
        RzT = np.transpose(self.Rz, (0, 2, 1))
        RM = RaT @ Rb
        tM = np.einsum("nij,nj->ni", RaT, tb - ta)
        RE = RzT @ RM
        tE = np.einsum("nij,nj->ni", RzT, tM - self.tz)
        return RM, tM, RE, tE

    def residuals(self, values):
        _, _, RE, tE = self._error(values)
        return np.concatenate([so3_log(RE).reshape(-1, 3), tE], axis=1)

    def linearize(self, values, eps=None):
        RM, tM, RE, tE = self._error(values)
        n = len(RE)
        rot = so3_log(RE).reshape(-1, 3)
        Jinv = right_jacobian_inv(rot).reshape(-1, 3, 3)
        RzT = np.transpose(self.Rz, (0, 2, 1))
        skew_tM = np.zeros((n, 3, 3))
        skew_tM[:, 0, 1], skew_tM[:, 0, 2] = -tM[:, 2], tM[:, 1]
        skew_tM[:, 1, 0], skew_tM[:, 1, 2] = tM[:, 2], -tM[:, 0]
        skew_tM[:, 2, 0], skew_tM[:, 2, 1] = -tM[:, 1], tM[:, 0]

        Ja = np.zeros((n, 6, 6))
        Ja[:, :3, :3] = -Jinv @ np.transpose(RM, (0, 2, 1))
        Ja[:, 3:, :3] = RzT @ skew_tM
        Ja[:, 3:, 3:] = -RzT
        Jb = np.zeros((n, 6, 6))
        Jb[:, :3, :3] = Jinv
        Jb[:, 3:, 3:] = RE
        return np.concatenate([rot, tE], axis=1), [Ja, Jb]

    def measurement_rows(self):
        return [list(p.q) + list(p.t) for p in self.measured]


def odometry_information(steps, sigma_t_frac, sigma_r, sigma_t_min=1e-3):
    """Diagonal information for relative-pose residuals ``(rot, trans)``.

    Translation noise is ``sigma_t_frac`` of each step's length per axis,
    floored at ``sigma_t_min`` meters; rotation noise ``sigma_r`` rad/step.
    """
    steps = list(steps)
    info = np.zeros((len(steps), 6, 6))
    for i, z in enumerate(steps):
        st = max(sigma_t_frac * float(np.linalg.norm(z.t)), sigma_t_min)
        info[i, [0, 1, 2], [0, 1, 2]] = 1.0 / sigma_r**2
        info[i, [3, 4, 5], [3, 4, 5]] = 1.0 / st**2
    return info


def relative_pose(a: Pose, b: Pose) -> Pose:
    return a.inverse() @ b
