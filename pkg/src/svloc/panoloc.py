"""Phase 2: localize panorama views against the landmark map and
georeference the trajectory.

Each panorama is solved on its own. In independent mode every matched view
is a free 6-dof pose; in connected mode the views are chained by stiff
relative-pose factors that hold them at one position with the fixed rig
yaw offsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from . import _kernels
from .errors import NoAcceptedPanoramas, NoCorrespondences, UnderConstrained
from .factors import BearingFactors, RelativePoseFactors, bearing_information
from .geo import GeoPoint, enu_to_gps, gps_to_enu
from .geometry import Pose, bearings_of_pixels, direction_of_bearing, level_rig_rotation, quat_from_matrix
from .nlls import DCS, Problem, SolveReport, SolverConfig, solve
from .tracks import match_descriptors

RIG_INFORMATION = 1e8


# ------------------------------------------------------------ appearance


@dataclass
class TrackAppearance:
    """Track descriptors grouped by physical appearance.

    Tracks that break and restart on the same landmark carry almost the
    same descriptor; they would defeat each other in a ratio test. Tracks
    are grouped when they never share a frame and their mean descriptors are
    closer than ``group_ratio`` times the median distance to all other
    tracks (single linkage).
    """

    descriptors: np.ndarray  # (g, D) one per group
    members: list  # per group: list of track ids

    @classmethod
    def build(cls, tracks, group_ratio=0.7):
        tracks = [t for t in tracks if len(t)]
        if not tracks:
            return cls(np.zeros((0, 0)), [])
        M = np.array([t.mean_descriptor() for t in tracks])
        L = np.array([len(t) for t in tracks], dtype=float)
        first = np.array([t.frames[0] for t in tracks])
        last = np.array([t.frames[-1] for t in tracks])
        n = len(tracks)
        parent = list(range(n))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        if n > 2:
            d2 = np.maximum((M * M).sum(1)[:, None] + (M * M).sum(1)[None, :] - 2.0 * M @ M.T, 0.0)
            d = np.sqrt(d2)
            np.fill_diagonal(d, np.nan)
            med = np.nanmedian(d, axis=1)
            disjoint = (last[:, None] < first[None, :]) | (last[None, :] < first[:, None])
            close = (d < group_ratio * np.minimum(med[:, None], med[None, :])) & disjoint
            for i, j in zip(*np.nonzero(np.triu(close, 1))):
                a, b = find(int(i)), find(int(j))
                if a != b:
                    parent[max(a, b)] = min(a, b)
        groups = {}
        for i in range(n):
            groups.setdefault(find(i), []).append(i)
        keys = sorted(groups)
        desc = np.array([np.average(M[groups[k]], axis=0, weights=L[groups[k]]) for k in keys])
        members = [[tracks[i].id for i in groups[k]] for k in keys]
        return cls(desc, members)


def select_landmarks(appearance: TrackAppearance, trajectory, policy="longest", min_support=0):
    """Choose which solved landmarks stand in for each appearance group.

    With ``policy="longest"`` each group keeps only its solved member with
    the most observations (a broken track's fragments are the same physical
    point, and the longest one is the best triangulated). Landmarks seen in
    fewer than ``min_support`` frames are then dropped.

    Returns:
        (appearance with filtered members, track id -> landmark position)
    """
    solved = trajectory.landmarks
    support = getattr(trajectory, "support", {}) or {}
    members = []
    for m in appearance.members:
        s = [t for t in m if t in solved]
        if policy == "longest" and s:
            s = [max(s, key=lambda t: (support.get(t, 0), -t))]
        members.append(s)
    keep = {t for m in members for t in m if support.get(t, min_support) >= min_support}
    members = [[t for t in m if t in keep] for m in members]
    return TrackAppearance(appearance.descriptors, members), {t: solved[t] for t in sorted(keep)}


@dataclass
class CorrespondenceSet:
    pano_id: str
    view_ids: np.ndarray  # (n,) view index within the panorama
    keypoints: np.ndarray  # (n, 2) view pixels
    landmark_ids: np.ndarray  # (n,) track ids of solved landmarks
    bearings: np.ndarray  # (n, 2)
    view_rotations: dict  # view index -> view camera to panorama rotation
    view_yaws: dict  # view index -> yaw (rad)

    def __len__(self):
        return len(self.landmark_ids)

    def counts(self):
        return {int(k): int((self.view_ids == k).sum()) for k in sorted(self.view_rotations)}

    def subset(self, mask):
        mask = np.asarray(mask, dtype=bool)
        views = sorted(set(self.view_ids[mask].tolist()))
        return CorrespondenceSet(self.pano_id, self.view_ids[mask], self.keypoints[mask],
                                 self.landmark_ids[mask], self.bearings[mask],
                                 {k: self.view_rotations[k] for k in views},
                                 {k: self.view_yaws[k] for k in views})

    def rotations(self):
        return np.array([self.view_rotations[int(k)] for k in self.view_ids]).reshape(-1, 3, 3)


def build_correspondences(pano, view_ids, trajectory, tracks, ratio=0.7, min_corr=12, metric="l2",
                          group_ratio=0.7):
    """Match the descriptors of selected panorama views to solved tracks.

    Args:
        pano: a panorama record with ``views`` (yaw, intrinsics, features,
            rotation).
        view_ids: indices of the views to use (e.g. retrieval-accepted).
        trajectory: ``TrajectoryEstimate``; only its landmarks are used.
        tracks: the track list, or a prebuilt ``TrackAppearance``.

    Raises:
        NoCorrespondences: fewer than ``min_corr`` correspondences overall.
    """
    app = tracks if isinstance(tracks, TrackAppearance) else TrackAppearance.build(tracks, group_ratio)
    solved = trajectory.landmarks
    vid, kps, lms, rots, yaws = [], [], [], {}, {}
    for k in sorted(set(int(v) for v in view_ids)):
        view = pano.views[k]
        if len(view.features) == 0 or len(app.members) < 2:
            continue
        pairs = match_descriptors(view.features.descriptors, app.descriptors, ratio, metric)
        for i, g in pairs:
            for tid in app.members[g]:
                if tid in solved:
                    vid.append(k)
                    kps.append(view.features.keypoints[i])
                    lms.append(tid)
                    rots[k] = np.asarray(view.rotation, dtype=float)
                    yaws[k] = float(view.yaw)
    if len(lms) < min_corr:
        raise NoCorrespondences(f"panorama {pano.id}: {len(lms)} correspondences < {min_corr}")
    vid = np.array(vid, dtype=int)
    kps = np.array(kps, dtype=float).reshape(-1, 2)
    bearings = np.empty((len(vid), 2))
    for k in rots:
        m = vid == k
        bearings[m] = bearings_of_pixels(pano.views[k].intrinsics, kps[m])
    return CorrespondenceSet(str(pano.id), vid, kps, np.array(lms, dtype=int), bearings, rots, yaws)


# ------------------------------------------------------------ estimation


@dataclass
class PanoPoseEstimate:
    pano_id: str
    mode: str  # independent | connected
    rig: Pose
    views: dict  # view index -> Pose
    counts: dict  # view index -> correspondences
    reports: dict = field(default_factory=dict)  # view index or "rig" -> SolveReport

    @property
    def position(self):
        return self.rig.t

    @property
    def n_matched(self):
        return int(sum(self.counts.values()))

    def to_dict(self):
        return {
            "pano_id": self.pano_id,
            "mode": self.mode,
            "rig": self.rig.to_dict(),
            "views": {str(k): p.to_dict() for k, p in sorted(self.views.items())},
            "counts": {str(k): int(v) for k, v in sorted(self.counts.items())},
            "matched": self.n_matched,
            "reports": {str(k): r.to_dict() for k, r in self.reports.items()},
        }


def chordal_mean(rotations):
    """Rotation closest (Frobenius) to the mean of the inputs."""
    U, _, Vt = np.linalg.svd(np.sum(rotations, axis=0))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rig_from_views(views: dict, rotations: dict) -> Pose:
    """Rig pose implied by view poses: mean translation, chordal mean rotation."""
    ks = sorted(views)
    R = [views[k].R @ rotations[k].T for k in ks]
    t = np.mean([views[k].t for k in ks], axis=0)
    return Pose.from_matrix(chordal_mean(R), t)


def _ray_position(Y, rays):
    """Point minimizing the summed squared distance to lines through ``Y`` along ``rays``."""
    P = np.eye(3)[None] - rays[:, :, None] * rays[:, None, :]
    A = P.sum(0)
    b = np.einsum("nij,nj->i", P, Y)
    return np.linalg.lstsq(A, b, rcond=None)[0]


def _weights(bearings, sigma):
    info = bearing_information(bearings[:, 0], sigma)
    return np.ascontiguousarray(np.stack([info[:, 0, 0], info[:, 1, 1]], axis=1))


def initial_rig(Y, bearings, V, sigma=0.005, yaw_steps=12, kernel=None):
    """Best level rig over a yaw grid, each with its least-squares position.

    Args:
        Y: (n, 3) landmark positions.
        bearings: (n, 2) measured bearings in the observing views.
        V: (n, 3, 3) rotation of each observing view into the rig frame.

    Returns:
        (rig rotation, position)
    """
    d = direction_of_bearing(bearings[:, 0], bearings[:, 1])
    local = np.einsum("nij,nj->ni", V, d)
    w = _weights(bearings, sigma)
    best = (np.inf, None, None)
    for k in range(yaw_steps):
        R = level_rig_rotation(2.0 * np.pi * k / yaw_steps)
        c = _ray_position(Y, local @ R.T)
        chi = _kernels.grid_pose_cost(c[None], R[None], V, Y, bearings, w)[0, 0]
        if kernel is not None:
            r = _kernels.bearing_residuals(np.einsum("ij,njk->nik", R, V), np.tile(c, (len(Y), 1)), Y, bearings)
            chi = float(kernel.rho(r[:, 0] ** 2 * w[:, 0] + r[:, 1] ** 2 * w[:, 1]).sum())
        if chi < best[0]:
            best = (chi, R, c)
    return best[1], best[2]


def _landmarks(corr: CorrespondenceSet, landmarks):
    return np.array([landmarks[int(i)] for i in corr.landmark_ids], dtype=float).reshape(-1, 3)


def localize_view(Y, bearings, init: Pose, sigma=0.005, kernel=None, solver: SolverConfig | None = None,
                  min_corr=6):
    """Refine one view pose against fixed landmarks; returns (Pose, SolveReport)."""
    if len(Y) < min_corr:
        raise UnderConstrained(f"{len(Y)} correspondences < {min_corr} for a view")
    problem = Problem()
    problem.add_pose("v", init)
    ids = []
    for j, y in enumerate(Y):
        problem.add_point(("y", j), y, fixed=True)
        ids.append(("y", j))
    problem.add(BearingFactors(["v"] * len(Y), ids, bearings, bearing_information(bearings[:, 0], sigma), kernel))
    rep = solve(problem, solver)
    return problem.value("v"), rep


def localize_independent(corr: CorrespondenceSet, landmarks, sigma=0.005, dcs_phi: float | None = None,
                         min_view_corr=6, yaw_steps=12, solver: SolverConfig | None = None):
    """Optimize every view with enough correspondences on its own.

    Views below ``min_view_corr`` are left out; if none qualifies the
    panorama raises ``UnderConstrained``.
    """
    kernel = DCS(dcs_phi) if dcs_phi is not None else None
    Yall = _landmarks(corr, landmarks)
    counts = corr.counts()
    views, reports = {}, {}
    for k, n in counts.items():
        if n < min_view_corr:
            continue
        m = corr.view_ids == k
        Y, b = Yall[m], corr.bearings[m]
        V = np.repeat(corr.view_rotations[k][None], len(Y), axis=0)
        R, c = initial_rig(Y, b, V, sigma, yaw_steps, kernel)
        views[k], reports[k] = localize_view(Y, b, Pose.from_matrix(R @ corr.view_rotations[k], c), sigma,
                                             kernel, solver, min_view_corr)
    if not views:
        raise UnderConstrained(f"panorama {corr.pano_id}: no view has {min_view_corr} correspondences")
    rig = rig_from_views(views, corr.view_rotations)
    return PanoPoseEstimate(corr.pano_id, "independent", rig, views, {k: counts[k] for k in views}, reports)


def localize_connected(corr: CorrespondenceSet, landmarks, sigma=0.005, dcs_phi: float | None = None,
                       yaw_steps=12, rig_information=RIG_INFORMATION, solver: SolverConfig | None = None,
                       min_corr=6):
    """Solve all matched views of a panorama under rig constraints.

    Consecutive matched views are tied by relative-pose factors whose
    measurement is the nominal rig offset (same position, fixed yaw step,
    no relative pitch or roll) with information ``rig_information``. The
    returned views are re-derived from the solved rig so their translations
    coincide exactly.
    """
    if len(corr) < min_corr:
        raise UnderConstrained(f"panorama {corr.pano_id}: {len(corr)} correspondences < {min_corr}")
    kernel = DCS(dcs_phi) if dcs_phi is not None else None
    Y = _landmarks(corr, landmarks)
    V = corr.rotations()
    R0, c0 = initial_rig(Y, corr.bearings, V, sigma, yaw_steps, kernel)
    rig0 = Pose.from_matrix(R0, c0)
    ks = sorted(corr.view_rotations)
    problem = Problem()
    for k in ks:
        problem.add_pose(("v", k), rig0 @ Pose.from_matrix(corr.view_rotations[k]))
    pt = []
    for j, y in enumerate(Y):
        problem.add_point(("y", j), y, fixed=True)
        pt.append(("y", j))
    problem.add(BearingFactors([("v", int(k)) for k in corr.view_ids], pt, corr.bearings,
                               bearing_information(corr.bearings[:, 0], sigma), kernel))
    if len(ks) > 1:
        meas = [Pose.from_matrix(corr.view_rotations[a].T @ corr.view_rotations[b]) for a, b in zip(ks, ks[1:])]
        problem.add(RelativePoseFactors([("v", a) for a in ks[:-1]], [("v", b) for b in ks[1:]], meas,
                                        np.tile(np.eye(6) * rig_information, (len(meas), 1, 1))))
    rep = solve(problem, solver)
    solved = {k: problem.value(("v", k)) for k in ks}
    rig = rig_from_views(solved, corr.view_rotations)
    views = {k: rig @ Pose.from_matrix(corr.view_rotations[k]) for k in ks}
    return PanoPoseEstimate(corr.pano_id, "connected", rig, views, corr.counts(), {"rig": rep})


def reject_far_estimate(estimate: PanoPoseEstimate, trajectory, max_dist=100.0):
    """True if the rig lies farther than ``max_dist`` from every trajectory pose."""
    poses = trajectory.poses if hasattr(trajectory, "poses") else trajectory
    t = np.array([p.t for p in poses]).reshape(-1, 3)
    return bool(np.min(np.linalg.norm(t - estimate.rig.t, axis=1)) > max_dist)


# -------------------------------------------------------- georeference

# Level trajectory frame (x right, y down, z forward) to (east, north, up)
# before the yaw correction: x -> east, z -> north, -y -> up.
LEVEL_TRAJ_TO_ENU = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])


def _rz(psi):
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _align(a, b):
    """Smallest rotation taking unit vector ``a`` onto unit vector ``b``."""
    v = np.cross(a, b)
    c = float(np.dot(a, b))
    if c < -1.0 + 1e-12:
        axis = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-6:
            axis = np.cross(a, [0.0, 1.0, 0.0])
        axis /= np.linalg.norm(axis)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    K = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + K + K @ K / (1.0 + c)


def _wrap(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


@dataclass
class Georeference:
    ref: GeoPoint
    enu_from_traj: Pose
    pano_ids: list
    residual_m: dict  # pano id -> position disagreement (m)
    residual_heading_deg: dict

    def camera_gps(self, poses):
        out = []
        for p in poses:
            e, n, u = self.enu_from_traj.transform(p.t)
            g = enu_to_gps(self.ref, e, n)
            out.append((g.lat_deg, g.lon_deg, float(u)))
        return out

    def to_dict(self):
        return {
            "ref": {"lat_deg": self.ref.lat_deg, "lon_deg": self.ref.lon_deg},
            "enu_from_traj": self.enu_from_traj.to_dict(),
            "pano_ids": list(self.pano_ids),
            "residual_m": {k: float(v) for k, v in self.residual_m.items()},
            "residual_heading_deg": {k: float(v) for k, v in self.residual_heading_deg.items()},
        }


def georeference(estimates, records, heading_weight_m=10.0):
    """Trajectory-to-ENU transform from localized, geotagged panoramas.

    The up direction comes from the mean up axis of the estimated rigs, so
    the result does not depend on how the trajectory frame is oriented.
    Each panorama's GPS and heading then fixes the remaining (x, y, z, yaw);
    with several panoramas these four parameters are fit by least squares,
    heading errors weighted by ``heading_weight_m`` meters per radian.
    The ENU origin is the first panorama's GPS position; heights are
    relative to the panorama centers.

    Args:
        estimates: ``PanoPoseEstimate`` list.
        records: mapping pano id -> record with ``lat_deg``, ``lon_deg``,
            ``heading_deg``.
    """
    estimates = [e for e in estimates if e is not None]
    if not estimates:
        raise NoAcceptedPanoramas("no panorama was localized")
    estimates = sorted(estimates, key=lambda e: str(e.pano_id))
    recs = [records[e.pano_id] for e in estimates]
    ref = GeoPoint(recs[0].lat_deg, recs[0].lon_deg)
    up = np.mean([e.rig.R[:, 2] for e in estimates], axis=0)
    up /= np.linalg.norm(up)
    A = _align(LEVEL_TRAJ_TO_ENU @ up, np.array([0.0, 0.0, 1.0])) @ LEVEL_TRAJ_TO_ENU

    C = np.array([A @ e.rig.t for e in estimates])
    F = np.array([A @ e.rig.R[:, 0] for e in estimates])
    h_est = np.arctan2(F[:, 0], F[:, 1])
    H = np.radians([r.heading_deg for r in recs])
    P = np.array([list(gps_to_enu(ref, GeoPoint(r.lat_deg, r.lon_deg))) + [0.0] for r in recs])
    psi_i = _wrap(h_est - H)
    psi0 = math.atan2(np.sin(psi_i).mean(), np.cos(psi_i).mean())

    def residual(x):
        psi, b = x[0], x[1:]
        pos = (C @ _rz(psi).T + b - P).ravel()
        head = heading_weight_m * _wrap(h_est - psi - H)
        return np.concatenate([pos, head])

    x0 = np.concatenate([[psi0], (P - C @ _rz(psi0).T).mean(0)])
    if len(estimates) == 1:
        x = x0
    else:
        x = scipy.optimize.least_squares(residual, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15).x
    psi, b = float(x[0]), x[1:]
    Rt = _rz(psi) @ A
    pos_res = np.linalg.norm(C @ _rz(psi).T + b - P, axis=1)
    head_res = np.degrees(np.abs(_wrap(h_est - psi - H)))
    ids = [e.pano_id for e in estimates]
    return Georeference(ref, Pose(quat_from_matrix(Rt), b), ids, dict(zip(ids, pos_res)), dict(zip(ids, head_res)))
