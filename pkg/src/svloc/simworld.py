"""Synthetic worlds with ground truth, plus brute-force grid oracles.

A world is laid out in a local ENU frame (x east, y north, z up). A level,
forward-looking camera drives along a waypoint polyline; landmarks sit in
a distance band around the route; panoramas are level rigs of eight 90
degree views. Everything handed to the pipeline is expressed in the
trajectory frame, i.e. the frame of the first camera.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .errors import DegenerateGeometry, InfeasibleSpec
from .geo import GeoPoint, enu_to_gps
from .geometry import (
    Intrinsics,
    PanoImage,
    Pose,
    level_rig_rotation,
    pano_pixel_of_direction,
    standard_view_yaws,
    view_rotation,
)
from .tracks import FeatureSet


@dataclass
class WorldSpec:
    seed: int = 0
    n_landmarks: int = 120
    landmark_band: tuple = (15.0, 50.0)
    landmark_height: tuple = (0.0, 6.0)
    waypoints: list = field(default_factory=lambda: [[0.0, 0.0], [20.0, 0.0], [20.0, 12.0], [8.0, 12.0]])
    step_m: float = 0.5
    camera_height: float = 1.2
    odom_sigma_t_frac: float = 0.01
    odom_sigma_r_deg: float = 0.2
    pixel_sigma: float = 1.0
    outlier_fraction: float = 0.0
    hfov_deg: float = 100.0
    image_width: int = 640
    image_height: int = 480
    depth_max: float = 80.0
    descriptor_dim: int = 128
    descriptor_sigma: float = 0.05
    panoramas: list = field(default_factory=list)  # [{"id", "at": [x, y], "heading_deg"}]
    n_panoramas: int = 9
    pano_offset_m: float = 0.3
    pano_view_size: int = 512
    pano_view_fov_deg: float = 90.0
    pano_raster_width: int = 0  # 0 disables raster panoramas
    ref_lat_deg: float = 48.0
    ref_lon_deg: float = 7.85

    def __post_init__(self):
        self.landmark_band = tuple(float(x) for x in self.landmark_band)
        self.landmark_height = tuple(float(x) for x in self.landmark_height)
        for name in ("odom_sigma_t_frac", "odom_sigma_r_deg", "pixel_sigma", "descriptor_sigma"):
            if getattr(self, name) < 0:
                raise InfeasibleSpec(f"{name} must be >= 0")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise InfeasibleSpec("outlier_fraction must lie in [0, 1)")
        lo, hi = self.landmark_band
        if not 0 <= lo < hi:
            raise InfeasibleSpec(f"bad landmark_band {self.landmark_band}")
        if len(self.waypoints) < 2:
            raise InfeasibleSpec("waypoints needs at least two points")
        if self.step_m <= 0:
            raise InfeasibleSpec("step_m must be positive")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise InfeasibleSpec(f"unknown spec field(s): {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise InfeasibleSpec(str(exc)) from None

    def to_dict(self):
        d = asdict(self)
        d["landmark_band"] = list(self.landmark_band)
        d["landmark_height"] = list(self.landmark_height)
        return d

    @property
    def intrinsics(self):
        return Intrinsics.from_fov(math.radians(self.hfov_deg), self.image_width, self.image_height)


@dataclass
class PanoView:
    yaw: float
    intrinsics: Intrinsics
    features: FeatureSet
    rotation: np.ndarray  # view camera -> panorama frame

    @property
    def pitch(self):
        return 0.0


@dataclass
class PanoRecord:
    id: str
    lat_deg: float
    lon_deg: float
    heading_deg: float
    views: list = field(default_factory=list)
    image: PanoImage | None = None

    @property
    def geopoint(self):
        return GeoPoint(self.lat_deg, self.lon_deg)


@dataclass
class Frame:
    frame_id: int
    timestamp_s: float
    features: FeatureSet


@dataclass
class GroundTruth:
    poses: list  # camera poses, trajectory frame
    landmarks: np.ndarray  # (n, 3), trajectory frame
    pano_rigs: dict  # pano id -> rig Pose in trajectory frame
    visibility: list  # per frame: sorted landmark ids visible
    feature_landmark: list  # per frame: landmark id per feature (-1 = outlier)
    pano_feature_landmark: dict  # pano id -> per view list of landmark ids
    camera_gps: list  # per frame (lat, lon)
    enu_from_traj: Pose
    ref: GeoPoint


@dataclass
class Dataset:
    frames: list
    odometry: list  # relative pose from the previous frame; identity for frame 0
    intrinsics: Intrinsics
    panoramas: list
    spec: WorldSpec | None = None


# ------------------------------------------------------------------ helpers


def camera_rotation_enu(heading):
    """Level camera looking along math angle ``heading`` (CCW from east)."""
    f = np.array([math.cos(heading), math.sin(heading), 0.0])
    r = np.array([math.sin(heading), -math.cos(heading), 0.0])
    d = np.array([0.0, 0.0, -1.0])
    return np.column_stack([r, d, f])


def pano_rotation_enu(heading_deg):
    """Panorama frame (forward, left, up) in ENU for a compass heading."""
    h = math.radians(heading_deg)
    fwd = np.array([math.sin(h), math.cos(h), 0.0])
    left = np.array([-math.cos(h), math.sin(h), 0.0])
    return np.column_stack([fwd, left, [0.0, 0.0, 1.0]])


def sample_route(waypoints, step, smooth=1.0):
    """Positions every ``step`` meters along a polyline, with smoothed headings."""
    wp = np.asarray(waypoints, dtype=float)
    seg = np.diff(wp, axis=0)
    seglen = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    total = cum[-1]

    def at(s):
        s = np.clip(s, 0.0, total)
        k = np.minimum(np.searchsorted(cum, s, side="right") - 1, len(seg) - 1)
        return wp[k] + seg[k] * ((s - cum[k]) / seglen[k])[..., None]

    s = np.arange(0.0, total + 1e-9, step)
    pos = at(s)
    ahead = at(s + smooth) - at(s - smooth)
    heading = np.arctan2(ahead[:, 1], ahead[:, 0])
    return pos, heading, s


def observe(pose: Pose, points, k: Intrinsics, depth_max=np.inf):
    """Project world points into a camera; returns (visible mask, pixels)."""
    pc = (np.asarray(points) - pose.t) @ pose.R
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * pc[:, 0] / z + k.cx
        v = k.fy * pc[:, 1] / z + k.cy
    dist = np.linalg.norm(pc, axis=1)
    vis = (z > 0.1) & (dist <= depth_max) & (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    return vis, np.column_stack([u, v])


def _unit_rows(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _noisy_rel(rng, Z: Pose, sigma_t_frac, sigma_r):
    st = sigma_t_frac * float(np.linalg.norm(Z.t))
    noise = Pose.from_rotvec(rng.normal(0.0, sigma_r, 3), rng.normal(0.0, st, 3))
    return Z @ noise


def render_pano(rig_enu: Pose, landmarks_enu, width, depth_max=np.inf, radius=2):
    """Raster plate-carree image with one bright square per landmark."""
    H = width // 2
    img = np.zeros((H, width))
    d = (landmarks_enu - rig_enu.t) @ rig_enu.R
    dist = np.linalg.norm(d, axis=1)
    keep = (dist > 1e-9) & (dist <= depth_max)
    uv = pano_pixel_of_direction(d[keep] / dist[keep, None], width, H)
    for u, v in np.rint(uv).astype(int):
        rows = np.clip(np.arange(v - radius, v + radius + 1), 0, H - 1)
        cols = np.arange(u - radius, u + radius + 1) % width
        img[np.ix_(rows, cols)] = 1.0
    return PanoImage(img)


# --------------------------------------------------------------- generation


def generate(spec: WorldSpec):
    """Build a dataset and its ground truth; deterministic for ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    k = spec.intrinsics
    pos2, heading, _ = sample_route(spec.waypoints, spec.step_m)
    F = len(pos2)
    if F < 2:
        raise InfeasibleSpec("route shorter than one step")
    cams_enu = [Pose.from_matrix(camera_rotation_enu(h), [p[0], p[1], spec.camera_height])
                for p, h in zip(pos2, heading)]
    enu_from_traj = cams_enu[0]
    traj_from_enu = enu_from_traj.inverse()
    poses = [traj_from_enu @ c for c in cams_enu]

    # landmarks in the distance band around the route
    lo, hi = spec.landmark_band
    box_lo = pos2.min(0) - hi
    box_hi = pos2.max(0) + hi
    lm = []
    tries = 0
    while len(lm) < spec.n_landmarks:
        tries += 1
        if tries > 1000:
            raise InfeasibleSpec("could not place landmarks in the distance band")
        cand = rng.uniform(box_lo, box_hi, size=(4 * spec.n_landmarks, 2))
        dmin = np.min(np.linalg.norm(cand[:, None, :] - pos2[None, :, :], axis=2), axis=1)
        ok = cand[(dmin >= lo) & (dmin <= hi)]
        lm.extend(ok[: spec.n_landmarks - len(lm)].tolist())
    lm = np.asarray(lm)
    z = rng.uniform(*spec.landmark_height, size=len(lm))
    landmarks_enu = np.column_stack([lm, z])
    landmarks = traj_from_enu.transform(landmarks_enu)

    D = spec.descriptor_dim
    basis = _unit_rows(rng.normal(size=(len(landmarks), D)))

    def describe(ids):
        return basis[ids] + rng.normal(0.0, spec.descriptor_sigma, size=(len(ids), D))

    frames, visibility, feat_lm = [], [], []
    for f, pose in enumerate(poses):
        vis, uv = observe(pose, landmarks, k, spec.depth_max)
        ids = np.flatnonzero(vis)
        px = uv[ids] + rng.normal(0.0, spec.pixel_sigma, size=(len(ids), 2))
        desc = describe(ids)
        lab = ids.copy()
        if spec.outlier_fraction > 0 and len(ids):
            out = rng.random(len(ids)) < spec.outlier_fraction
            n_out = int(out.sum())
            px[out] = rng.uniform([0, 0], [k.width, k.height], size=(n_out, 2))
            desc[out] = _unit_rows(rng.normal(size=(n_out, D))) + rng.normal(
                0.0, spec.descriptor_sigma, size=(n_out, D))
            lab[out] = -1
        order = rng.permutation(len(ids))
        frames.append(Frame(f, f * 0.1, FeatureSet(px[order], desc[order])))
        visibility.append(ids.tolist())
        feat_lm.append(lab[order].tolist())
    if not any(visibility) or sum(len(v) for v in visibility) == 0:
        raise InfeasibleSpec("no landmark is visible from any pose")

    odometry = [Pose.identity()]
    sr = math.radians(spec.odom_sigma_r_deg)
    for f in range(1, F):
        Z = poses[f - 1].inverse() @ poses[f]
        odometry.append(_noisy_rel(rng, Z, spec.odom_sigma_t_frac, sr))

    ref = GeoPoint(spec.ref_lat_deg, spec.ref_lon_deg)
    camera_gps = []
    for c in cams_enu:
        g = enu_to_gps(ref, c.t[0], c.t[1])
        camera_gps.append((g.lat_deg, g.lon_deg))

    # panoramas
    pano_specs = list(spec.panoramas)
    if not pano_specs and spec.n_panoramas > 0:
        total = (F - 1) * spec.step_m
        for i in range(spec.n_panoramas):
            s = total * (i + 1) / (spec.n_panoramas + 1)
            fi = int(round(s / spec.step_m))
            h = heading[fi]
            off = rng.uniform(-spec.pano_offset_m, spec.pano_offset_m)
            at = pos2[fi] + off * np.array([math.sin(h), -math.cos(h)])
            pano_specs.append({"id": f"p{i:02d}", "at": at.tolist(),
                               "heading_deg": float(rng.uniform(0.0, 360.0))})
    vk = Intrinsics.from_fov(math.radians(spec.pano_view_fov_deg), spec.pano_view_size, spec.pano_view_size)
    panoramas, pano_rigs, pano_lm = [], {}, {}
    for ps in pano_specs:
        pid = str(ps["id"])
        at = np.asarray(ps["at"], dtype=float)
        rig_enu = Pose.from_matrix(pano_rotation_enu(ps["heading_deg"]), [at[0], at[1], spec.camera_height])
        pano_rigs[pid] = traj_from_enu @ rig_enu
        views, view_lm = [], []
        for yaw in standard_view_yaws(8):
            vrot = view_rotation(yaw, 0.0)
            vpose = rig_enu @ Pose.from_matrix(vrot)
            vis, uv = observe(vpose, landmarks_enu, vk, spec.depth_max)
            ids = np.flatnonzero(vis)
            order = rng.permutation(len(ids))
            ids = ids[order]
            px = uv[ids] + rng.normal(0.0, spec.pixel_sigma, size=(len(ids), 2))
            views.append(PanoView(yaw, vk, FeatureSet(px, describe(ids)), vrot))
            view_lm.append(ids.tolist())
        g = enu_to_gps(ref, at[0], at[1])
        image = None
        if spec.pano_raster_width:
            image = render_pano(rig_enu, landmarks_enu, spec.pano_raster_width, spec.depth_max)
        panoramas.append(PanoRecord(pid, g.lat_deg, g.lon_deg, float(ps["heading_deg"]) % 360.0, views, image))
        pano_lm[pid] = view_lm

    truth = GroundTruth(poses, landmarks, pano_rigs, visibility, feat_lm, pano_lm, camera_gps,
                        enu_from_traj, ref)
    return Dataset(frames, odometry, k, panoramas, spec), truth


# ------------------------------------------------------------------ oracles


def _oracle_weights(theta, sigma):
    return np.column_stack([np.full(len(theta), 1.0 / sigma**2),
                            np.maximum(np.sin(theta) ** 2, 1e-12) / sigma**2])


def _grid(center, half, step):
    n = int(round(half / step))
    ax = [c + step * np.arange(-n, n + 1) for c in center]
    g = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)
    return g.reshape(-1, len(center))


def oracle_triangulate(poses, bearings, sigma=0.005, box=None, coarse=1.0, levels=2, window=5):
    """Grid-search minimizer of the bearing cost for a single point.

    Args:
        poses: camera poses (trajectory frame) of the observations.
        bearings: (n, 2) measured (theta, phi).
        box: (center, half_extent) of the coarse search cube; defaults to a
            30 m cube around the mean camera center.
        coarse: coarse grid step (m); each refinement level divides it by 10
            and searches +-``window`` previous steps around the incumbent.

    Returns:
        3-vector; final resolution is ``coarse / 10**levels``.
    """
    bearings = np.asarray(bearings, dtype=float).reshape(-1, 2)
    if len(bearings) < 2:
        raise DegenerateGeometry("need at least two observations")
    R = np.array([p.R for p in poses])
    t = np.array([p.t for p in poses])
    s = np.sin(bearings[:, 0])
    rays_cam = np.column_stack([s * np.cos(bearings[:, 1]), s * np.sin(bearings[:, 1]), np.cos(bearings[:, 0])])
    rays = np.einsum("nij,nj->ni", R, rays_cam)
    cosmin = np.clip(rays @ rays.T, -1, 1).min()
    if math.acos(cosmin) < 1e-6:
        raise DegenerateGeometry("observation rays are parallel")
    w = _oracle_weights(bearings[:, 0], sigma)
    if box is None:
        center, half = t.mean(0), 30.0
    else:
        center, half = np.asarray(box[0], dtype=float), float(box[1])
    grid = _grid(center, half, coarse)
    cost = _kernels.grid_point_cost(grid, R, t, bearings, w)
    best = grid[np.argmin(cost)]
    step = coarse
    for _ in range(levels):
        half = window * step
        step /= 10.0
        grid = _grid(best, half, step)
        cost = _kernels.grid_point_cost(grid, R, t, bearings, w)
        best = grid[np.argmin(cost)]
    return best


def oracle_pose(landmarks, bearings, view_rotations, sigma=0.005, box=None, coarse=1.0, levels=2,
                yaw_steps=360, window=1.5):
    """Grid search over level rig poses (x, y, z, yaw) in the trajectory frame.

    Each correspondence ``j`` is seen by a view whose camera frame maps into
    the rig frame by ``view_rotations[j]``; the rig orientation is
    ``level_rig_rotation(yaw)``. Position steps go 1 m -> 0.1 m -> 0.01 m,
    the yaw step shrinks by 10 with them.

    Returns:
        (position 3-vector, yaw radians)
    """
    landmarks = np.asarray(landmarks, dtype=float).reshape(-1, 3)
    bearings = np.asarray(bearings, dtype=float).reshape(-1, 2)
    V = np.asarray(view_rotations, dtype=float).reshape(-1, 3, 3)
    if len(landmarks) < 3:
        raise DegenerateGeometry("need at least three correspondences")
    centered = landmarks - landmarks.mean(0)
    if np.linalg.svd(centered, compute_uv=False)[1] < 1e-6 * max(1.0, np.abs(centered).max()):
        raise DegenerateGeometry("landmarks are collinear")
    w = _oracle_weights(bearings[:, 0], sigma)
    if box is None:
        center, half = landmarks.mean(0), 30.0
    else:
        center, half = np.asarray(box[0], dtype=float), float(box[1])
    positions = _grid(center, half, coarse)
    yaws = 2.0 * np.pi * np.arange(yaw_steps) / yaw_steps
    rots = np.array([level_rig_rotation(a) for a in yaws])
    cost = _kernels.grid_pose_cost(positions, rots, V, landmarks, bearings, w)
    ki, gi = np.unravel_index(np.argmin(cost), cost.shape)
    best_p, best_yaw = positions[gi], yaws[ki]
    step, ystep = coarse, 2.0 * np.pi / yaw_steps
    for _ in range(levels):
        half, yhalf = window * step, window * ystep
        step, ystep = step / 10.0, ystep / 10.0
        positions = _grid(best_p, half, step)
        yaws = best_yaw + ystep * np.arange(-round(yhalf / ystep), round(yhalf / ystep) + 1)
        rots = np.array([level_rig_rotation(a) for a in yaws])
        cost = _kernels.grid_pose_cost(positions, rots, V, landmarks, bearings, w)
        ki, gi = np.unravel_index(np.argmin(cost), cost.shape)
        best_p, best_yaw = positions[gi], yaws[ki]
    return best_p, float(np.mod(best_yaw, 2.0 * np.pi))


# --------------------------------------------------------- retrieval corpus


def retrieval_corpus(seed=0, n_views=72, features_per_view=40, dim=128, descriptor_sigma=0.05,
                     n_queries=200, keep_fraction=0.6, clutter=10):
    """Views of disjoint synthetic scenes and noisy re-observations of them.

    Returns ``(view_descriptors, queries, truth)`` where ``truth[i]`` is the
    view index that query ``i`` re-observes.
    """
    rng = np.random.default_rng(seed)
    basis = _unit_rows(rng.normal(size=(n_views * features_per_view, dim)))
    views = []
    for v in range(n_views):
        b = basis[v * features_per_view:(v + 1) * features_per_view]
        views.append(b + rng.normal(0.0, descriptor_sigma, size=b.shape))
    queries, truth = [], []
    for _ in range(n_queries):
        v = int(rng.integers(n_views))
        ids = rng.choice(features_per_view, int(keep_fraction * features_per_view), replace=False)
        q = basis[v * features_per_view + ids] + rng.normal(0.0, descriptor_sigma, size=(len(ids), dim))
        junk = _unit_rows(rng.normal(size=(clutter, dim)))
        queries.append(np.vstack([q, junk]))
        truth.append(v)
    return views, queries, truth
