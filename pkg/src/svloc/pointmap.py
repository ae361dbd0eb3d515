"""Phase 1: landmark map and trajectory from tracks and odometry.

Poses are initialized by chaining odometry, landmarks by multi-ray
triangulation. The problem is then solved twice: points only with the poses
held fixed, then jointly with only the first (anchor) pose fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import EmptyProblem
from .factors import BearingFactors, RelativePoseFactors, bearing_information, odometry_information
from .geometry import Intrinsics, Pose, bearings_of_pixels, direction_of_bearing
from .nlls import DCS, Problem, SolveReport, SolverConfig, solve


class Rejected(NamedTuple):
    reason: str


@dataclass
class TrackBearings:
    """A track's frames and measured bearings."""

    id: int
    frames: np.ndarray
    bearings: np.ndarray  # (n, 2)


def track_bearings(track, k: Intrinsics) -> TrackBearings:
    return TrackBearings(track.id, np.asarray(track.frames, dtype=int),
                         bearings_of_pixels(k, np.asarray(track.keypoints, dtype=float)))


def integrate_odometry(rel):
    """Chain relative poses; ``rel[0]`` is ignored so that x_0 is the identity."""
    rel = list(rel)
    if not rel:
        raise ValueError("odometry stream is empty")
    poses = [Pose.identity()]
    for r in rel[1:]:
        poses.append(poses[-1] @ r)
    return poses


def world_rays(poses, frames, bearings):
    """Camera centers and unit ray directions of a track in the trajectory frame."""
    d = direction_of_bearing(bearings[:, 0], bearings[:, 1])
    R = np.array([poses[f].R for f in frames])
    c = np.array([poses[f].t for f in frames])
    return c, np.einsum("nij,nj->ni", R, d)


def triangulate_initial(poses, frames, bearings, min_track_len=3, parallax_min=math.radians(1.0),
                        depth_max=200.0):
    """Least-squares midpoint of all observation rays, or ``Rejected``."""
    frames = np.asarray(frames, dtype=int)
    bearings = np.asarray(bearings, dtype=float).reshape(-1, 2)
    if len(frames) < min_track_len:
        return Rejected("short")
    c, d = world_rays(poses, frames, bearings)
    cosang = np.clip(d @ d.T, -1.0, 1.0)
    if math.acos(cosang.min()) < parallax_min:
        return Rejected("parallax")
    P = np.eye(3)[None] - d[:, :, None] * d[:, None, :]
    A = P.sum(0)
    b = np.einsum("nij,nj->i", P, c)
    try:
        y = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        return Rejected("parallax")
    depth = np.einsum("ni,ni->n", y - c, d)
    if depth.min() <= 0.0:
        return Rejected("behind")
    if depth.max() > depth_max:
        return Rejected("far")
    return y


def pose_id(i):
    return ("x", int(i))


def point_id(track_id):
    return ("y", int(track_id))


@dataclass
class Phase1Problem:
    problem: Problem
    n_poses: int
    bindings: dict  # track id -> landmark variable id
    rejected: dict  # track id -> reason
    bearing_group: BearingFactors
    odometry_group: RelativePoseFactors | None


def build_problem(poses, tracks, odometry, sigma_b=0.005, sigma_t_frac=0.01, sigma_r=math.radians(0.2),
                  dcs_phi: float | None = 1.0, min_track_len=3, parallax_min=math.radians(1.0),
                  depth_max=200.0, initial_points=None):
    """Bearing factors for every accepted track plus odometry factors.

    Args:
        poses: initial camera poses; pose 0 becomes the fixed anchor.
        tracks: iterable of ``TrackBearings``.
        odometry: relative poses, ``odometry[k]`` from frame k-1 to k.
        dcs_phi: DCS parameter for the bearing factors, None for plain
            least squares.
        initial_points: optional track id -> 3-vector used instead of
            triangulation (the track is still length-checked).
    """
    problem = Problem()
    n = len(poses)
    for i, p in enumerate(poses):
        problem.add_pose(pose_id(i), p, fixed=(i == 0))
    bindings, rejected = {}, {}
    pids, yids, meas = [], [], []
    for tb in tracks:
        if initial_points is not None and tb.id in initial_points:
            y = initial_points[tb.id] if len(tb.frames) >= min_track_len else Rejected("short")
        else:
            y = triangulate_initial(poses, tb.frames, tb.bearings, min_track_len, parallax_min, depth_max)
        if isinstance(y, Rejected):
            rejected[tb.id] = y.reason
            continue
        vid = point_id(tb.id)
        problem.add_point(vid, y)
        bindings[tb.id] = vid
        pids.extend(pose_id(f) for f in tb.frames)
        yids.extend([vid] * len(tb.frames))
        meas.append(tb.bearings)
    if not bindings:
        raise EmptyProblem("no track survived triangulation")
    meas = np.vstack(meas)
    kernel = DCS(dcs_phi) if dcs_phi is not None else None
    bearing_group = problem.add(BearingFactors(pids, yids, meas, bearing_information(meas[:, 0], sigma_b), kernel))
    odo = None
    if n > 1:
        steps = list(odometry[1:n])
        odo = problem.add(RelativePoseFactors(
            [pose_id(i) for i in range(n - 1)], [pose_id(i + 1) for i in range(n - 1)], steps,
            odometry_information(steps, sigma_t_frac, sigma_r)))
    return Phase1Problem(problem, n, bindings, rejected, bearing_group, odo)


def _pose_ids(p1: Phase1Problem):
    return [pose_id(i) for i in range(p1.n_poses)]


def solve_points_fixed(p1: Phase1Problem, config: SolverConfig | None = None) -> SolveReport:
    """Optimize landmarks with every pose held fixed."""
    p1.problem.fix(_pose_ids(p1), True)
    return solve(p1.problem, config)


def solve_joint(p1: Phase1Problem, config: SolverConfig | None = None) -> SolveReport:
    """Optimize all non-anchor poses and all landmarks."""
    ids = _pose_ids(p1)
    p1.problem.fix(ids[1:], False)
    p1.problem.fix(ids[:1], True)
    return solve(p1.problem, config)


@dataclass
class TrajectoryEstimate:
    poses: list
    landmarks: dict  # track id -> 3-vector
    bindings: dict  # track id -> landmark variable id
    reports: dict = field(default_factory=dict)  # "points" / "joint" -> SolveReport
    rejected: dict = field(default_factory=dict)
    support: dict = field(default_factory=dict)  # track id -> number of observations

    @classmethod
    def from_problem(cls, p1: Phase1Problem, reports, support):
        prob = p1.problem
        poses = [prob.value(pose_id(i)) for i in range(p1.n_poses)]
        landmarks = {tid: np.array(prob.value(vid)) for tid, vid in p1.bindings.items()}
        return cls(poses, landmarks, dict(p1.bindings), reports, dict(p1.rejected), support)

    def landmark_array(self, ids):
        return np.array([self.landmarks[i] for i in ids]).reshape(-1, 3)

    def to_dict(self):
        return {
            "poses": [p.to_dict() for p in self.poses],
            "landmarks": {str(k): [float(x) for x in v] for k, v in sorted(self.landmarks.items())},
            "bindings": {str(k): f"y{v[1]}" for k, v in sorted(self.bindings.items())},
            "support": {str(k): int(v) for k, v in sorted(self.support.items())},
            "rejected": {str(k): v for k, v in sorted(self.rejected.items())},
            "reports": {k: r.to_dict() for k, r in self.reports.items()},
        }

    @classmethod
    def from_dict(cls, d):
        reports = {k: SolveReport(r["initial_cost"], r["final_cost"], r["iterations"], r["termination"],
                                  tuple(r["cost_trace"])) for k, r in d.get("reports", {}).items()}
        return cls(
            [Pose.from_dict(p) for p in d["poses"]],
            {int(k): np.array(v, dtype=float) for k, v in d["landmarks"].items()},
            {int(k): point_id(int(k)) for k in d["landmarks"]},
            reports,
            {int(k): v for k, v in d.get("rejected", {}).items()},
            {int(k): int(v) for k, v in d.get("support", {}).items()},
        )


def estimate_trajectory(tracks, odometry, sigma_b=0.005, sigma_t_frac=0.01, sigma_r=math.radians(0.2),
                        dcs_phi: float | None = 1.0, dcs_points=True, dcs_joint=True, min_track_len=3,
                        parallax_min=math.radians(1.0), depth_max=200.0,
                        solver: SolverConfig | None = None, initial_poses=None):
    """Run the two-step Phase-1 solve; returns a ``TrajectoryEstimate``."""
    poses = list(initial_poses) if initial_poses is not None else integrate_odometry(odometry)
    tracks = [t for t in tracks if len(t.frames) and t.frames[-1] < len(poses)]
    p1 = build_problem(poses, tracks, odometry, sigma_b, sigma_t_frac, sigma_r, dcs_phi, min_track_len,
                       parallax_min, depth_max)
    kernel = p1.bearing_group.kernel
    p1.bearing_group.kernel = kernel if dcs_points else None
    rep_points = solve_points_fixed(p1, solver)
    p1.bearing_group.kernel = kernel if dcs_joint else None
    rep_joint = solve_joint(p1, solver)
    p1.bearing_group.kernel = kernel
    support = {t.id: len(t.frames) for t in tracks if t.id in p1.bindings}
    est = TrajectoryEstimate.from_problem(p1, {"points": rep_points, "joint": rep_joint}, support)
    gate_landmarks(est, tracks, parallax_min, depth_max)
    return est


def landmark_geometry(poses, tb: TrackBearings, y):
    """Depths along the observation rays and the parallax subtended at ``y``."""
    c, d = world_rays(poses, tb.frames, tb.bearings)
    depth = np.einsum("ni,ni->n", y - c, d)
    v = y - c
    v = v / np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-300)
    parallax = math.acos(float(np.clip(v @ v.T, -1.0, 1.0).min()))
    return depth, parallax


def gate_landmarks(est: TrajectoryEstimate, tracks, parallax_min=math.radians(1.0), depth_max=200.0):
    """Drop solved landmarks that ended behind a camera, beyond ``depth_max``
    or with less than ``parallax_min`` of parallax; returns dropped ids."""
    dropped = []
    for tb in tracks:
        y = est.landmarks.get(tb.id)
        if y is None:
            continue
        depth, parallax = landmark_geometry(est.poses, tb, y)
        reason = None
        if depth.min() <= 0.0:
            reason = "behind-after-solve"
        elif depth.max() > depth_max:
            reason = "far-after-solve"
        elif parallax < parallax_min:
            reason = "parallax-after-solve"
        if reason:
            del est.landmarks[tb.id]
            del est.bindings[tb.id]
            est.support.pop(tb.id, None)
            est.rejected[tb.id] = reason
            dropped.append(tb.id)
    return dropped
