"""End-to-end localization and evaluation.

``run_localize`` chains tracking, the Phase-1 map, retrieval, panorama
localization in both modes and georeferencing. ``evaluate`` compares the
results against simulator ground truth.
"""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .errors import NoAcceptedPanoramas, NoCorrespondences, TooFewDescriptors, UnderConstrained
from .geo import GeoPoint, enu_to_gps, haversine_m
from .panoloc import (
    TrackAppearance,
    build_correspondences,
    georeference,
    localize_connected,
    localize_independent,
    reject_far_estimate,
    select_landmarks,
)
from .pointmap import TrajectoryEstimate, estimate_trajectory, track_bearings
from .retrieval import BowIndex, build_codebook, query_top_k, verify_candidates
from .tracks import TrackStore

log = logging.getLogger("svloc")

MODES = ("independent", "connected")
THRESHOLDS = tuple(0.25 * i for i in range(1, 21))


@contextmanager
def _stage(name, timings):
    t0 = time.perf_counter()
    yield
    timings[name] = time.perf_counter() - t0
    log.info("stage %-12s %.3f s", name, timings[name])


def doc_id(pano_id, view):
    return f"{pano_id}/{view}"


@dataclass
class RetrievalResult:
    accepted: dict  # pano id -> sorted accepted view indices
    queries: int
    verified: int

    def to_dict(self):
        return {"accepted_views": {k: list(v) for k, v in sorted(self.accepted.items())},
                "queries": self.queries, "verified_matches": self.verified}


def retrieve_panoramas(frames, panoramas, cfg: PipelineConfig):
    """Query a bag-of-words index of all panorama views with every
    ``query_stride``-th frame and keep geometrically verified views."""
    docs, feats, meta = {}, {}, {}
    for p in panoramas:
        for k, v in enumerate(p.views):
            if len(v.features):
                d = doc_id(p.id, k)
                docs[d], feats[d] = v.features.descriptors, v.features
                meta[d] = {"pano_id": p.id, "view": k, "lat_deg": p.lat_deg, "lon_deg": p.lon_deg}
    if not docs:
        return RetrievalResult({}, 0, 0)
    allv = np.vstack(list(docs.values()))
    k = min(cfg.vocab_k, len(allv))
    try:
        cb = build_codebook(allv, k, seed=cfg.seed, max_iters=cfg.codebook_max_iters)
    except TooFewDescriptors:
        return RetrievalResult({}, 0, 0)
    index = BowIndex.build(cb, docs, meta)
    accepted, n_q, n_v = {}, 0, 0
    for f in frames[::cfg.query_stride]:
        if len(f.features) == 0:
            continue
        n_q += 1
        top = query_top_k(index.histogram(f.features.descriptors), index, cfg.top_k)
        ver = verify_candidates(f.features, [(d, feats[d]) for d, _ in top], cfg.ratio, cfg.ransac_tol,
                                cfg.ransac_iters, seed=cfg.seed + 7919 * f.frame_id, min_inliers=cfg.min_inliers,
                                metric=cfg.descriptor_metric, confidence=cfg.ransac_confidence)
        for v in ver:
            n_v += 1
            m = index.metadata[v.doc_id]
            accepted.setdefault(m["pano_id"], set()).add(m["view"])
    return RetrievalResult({p: sorted(v) for p, v in accepted.items()}, n_q, n_v)


@dataclass
class LocalizationResult:
    trajectory: TrajectoryEstimate
    retrieval: RetrievalResult
    estimates: dict  # mode -> {pano id: PanoPoseEstimate}
    skipped: dict  # pano id -> reason
    georef: object  # Georeference
    frame_ids: list
    timings: dict = field(default_factory=dict)
    n_tracks: int = 0
    georef_mode: str = "connected"

    def camera_records(self):
        sources = sorted(self.georef.pano_ids)
        out = []
        for fid, (lat, lon, h) in zip(self.frame_ids, self.georef.camera_gps(self.trajectory.poses)):
            out.append({"frame_id": int(fid), "lat_deg": lat, "lon_deg": lon, "rel_height_m": h,
                        "source_pano_ids": sources})
        return out

    def pano_gps(self, mode):
        g = self.georef
        out = {}
        for pid, e in sorted(self.estimates[mode].items()):
            east, north, up = g.enu_from_traj.transform(e.rig.t)
            p = enu_to_gps(g.ref, east, north)
            out[pid] = {"lat_deg": p.lat_deg, "lon_deg": p.lon_deg, "rel_height_m": float(up)}
        return out

    def to_dict(self):
        return {
            "georef_mode": self.georef_mode,
            "georeference": self.georef.to_dict(),
            "panoramas": {
                mode: {pid: {**e.to_dict(), "gps": self.pano_gps(mode)[pid]}
                       for pid, e in sorted(self.estimates[mode].items())}
                for mode in MODES
            },
            "skipped_panoramas": dict(sorted(self.skipped.items())),
            "retrieval": self.retrieval.to_dict(),
            "cameras": self.camera_records(),
        }


class _Landmarks:
    def __init__(self, landmarks):
        self.landmarks = landmarks


def localize_panoramas(panoramas, accepted, tracks, trajectory, cfg: PipelineConfig):
    """Both localization modes for every retrieval-accepted panorama."""
    app = TrackAppearance.build(tracks, cfg.group_ratio)
    policy = "longest" if cfg.pano_landmarks == "longest" else "all"
    app, landmarks = select_landmarks(app, trajectory, policy, cfg.pano_min_support)
    lm_view = _Landmarks(landmarks)
    estimates = {m: {} for m in MODES}
    skipped = {}
    solver = cfg.solver()
    by_id = {p.id: p for p in panoramas}
    for pid in sorted(accepted):
        pano = by_id[pid]
        views = range(len(pano.views)) if cfg.pano_views == "all" else accepted[pid]
        try:
            corr = build_correspondences(pano, views, lm_view, app, cfg.ratio, cfg.min_corr, cfg.descriptor_metric)
            ind = localize_independent(corr, landmarks, cfg.pano_sigma_b, cfg.pano_dcs_phi, cfg.min_view_corr,
                                       cfg.yaw_steps, solver)
            con = localize_connected(corr, landmarks, cfg.pano_sigma_b, cfg.pano_dcs_phi, cfg.yaw_steps,
                                     cfg.rig_information, solver, cfg.min_view_corr)
        except (NoCorrespondences, UnderConstrained) as exc:
            skipped[pid] = f"{type(exc).__name__}: {exc}"
            continue
        if reject_far_estimate(con, trajectory, cfg.max_dist):
            skipped[pid] = f"far: connected estimate more than {cfg.max_dist} m from the trajectory"
            continue
        estimates["connected"][pid] = con
        if not reject_far_estimate(ind, trajectory, cfg.max_dist):
            estimates["independent"][pid] = ind
    return estimates, skipped


def build_tracks(frames, cfg: PipelineConfig):
    store = TrackStore(cfg.ratio, cfg.ransac_tol, cfg.ransac_iters, cfg.min_consensus, cfg.seed,
                       cfg.track_window, cfg.descriptor_metric, cfg.ransac_confidence)
    for f in frames:
        store.update(f.features)
    return store.finish()


def run_localize(dataset, cfg: PipelineConfig | None = None) -> LocalizationResult:
    """Full pipeline on a loaded dataset.

    Raises:
        NoAcceptedPanoramas: no panorama was retrieved, matched and kept.
        EmptyProblem: no track could be triangulated.
    """
    cfg = cfg or PipelineConfig()
    timings = {}
    with _stage("tracks", timings):
        tracks = build_tracks(dataset.frames, cfg)
    with _stage("phase1", timings):
        tb = [track_bearings(t, dataset.intrinsics) for t in tracks if len(t) >= cfg.min_track_len]
        traj = estimate_trajectory(tb, dataset.odometry, cfg.sigma_b, cfg.odom_sigma_t_frac, cfg.odom_sigma_r,
                                   cfg.dcs_phi, cfg.dcs_points, cfg.dcs_joint, cfg.min_track_len,
                                   cfg.parallax_min, cfg.depth_max, cfg.solver())
    with _stage("retrieval", timings):
        ret = retrieve_panoramas(dataset.frames, dataset.panoramas, cfg)
    if not ret.accepted:
        raise NoAcceptedPanoramas("retrieval verified no panorama view")
    with _stage("phase2", timings):
        estimates, skipped = localize_panoramas(dataset.panoramas, ret.accepted, tracks, traj, cfg)
    chosen = estimates[cfg.georef_mode]
    if not chosen:
        raise NoAcceptedPanoramas(f"no panorama localized in {cfg.georef_mode} mode ({len(skipped)} skipped)")
    records = {p.id: p for p in dataset.panoramas}
    with _stage("georef", timings):
        geo = georeference(list(chosen.values()), records, cfg.georef_heading_weight_m)
    frame_ids = [f.frame_id for f in dataset.frames]
    return LocalizationResult(traj, ret, estimates, skipped, geo, frame_ids, timings, len(tracks),
                              cfg.georef_mode)


# ------------------------------------------------------------ evaluation


def pano_errors(estimates, truth_rigs, mode):
    """Position error (m) of each panorama in the trajectory frame.

    Connected mode measures the rig center; independent mode averages the
    errors of the individually solved views.
    """
    out = {}
    for pid, e in sorted(estimates.items()):
        t = np.asarray(truth_rigs[pid].t)
        if mode == "independent":
            out[pid] = float(np.mean([np.linalg.norm(v.t - t) for v in e.views.values()]))
        else:
            out[pid] = float(np.linalg.norm(e.rig.t - t))
    return out


def cumulative(errors, thresholds=THRESHOLDS):
    e = np.asarray(list(errors), dtype=float)
    if not len(e):
        return {f"{t:.2f}": 0.0 for t in thresholds}
    return {f"{t:.2f}": float((e <= t).mean()) for t in thresholds}


def summarize(errors):
    e = np.asarray(list(errors), dtype=float)
    if not len(e):
        return {"n": 0, "median_m": None, "mean_m": None, "max_m": None, "within_1m": 0.0, "within_1.5m": 0.0,
                "cumulative": cumulative([])}
    return {"n": int(len(e)), "median_m": float(np.median(e)), "mean_m": float(e.mean()), "max_m": float(e.max()),
            "within_1m": float((e <= 1.0).mean()), "within_1.5m": float((e <= 1.5).mean()),
            "cumulative": cumulative(e)}


def evaluate(localization: dict, truth, n_panoramas=None):
    """Metrics from a ``localization.json`` dict and ground truth.

    Panorama errors are taken in the trajectory frame (the first camera is
    the anchor in both estimate and truth); camera errors compare the
    georeferenced GPS with the true GPS track.
    """
    from .geometry import Pose

    class _E:
        def __init__(self, d):
            self.rig = Pose.from_dict(d["rig"])
            self.views = {k: Pose.from_dict(v) for k, v in d["views"].items()}

    out = {"panoramas": {}, "summary": {}}
    for mode in MODES:
        est = {pid: _E(d) for pid, d in localization["panoramas"][mode].items()}
        errs = pano_errors(est, truth.pano_rigs, mode)
        out["panoramas"][mode] = errs
        out["summary"][mode] = summarize(errs.values())
    cam = []
    for rec, (lat, lon) in zip(localization["cameras"], truth.camera_gps):
        cam.append(haversine_m(GeoPoint(rec["lat_deg"], rec["lon_deg"]), GeoPoint(lat, lon)))
    cam = np.asarray(cam)
    out["cameras"] = {"n": int(len(cam)), "median_m": float(np.median(cam)) if len(cam) else None,
                      "max_m": float(cam.max()) if len(cam) else None}
    n_total = n_panoramas if n_panoramas is not None else len(truth.pano_rigs)
    out["localized_fraction"] = {m: len(out["panoramas"][m]) / n_total if n_total else 0.0 for m in MODES}
    out["thresholds_m"] = [float(t) for t in THRESHOLDS]
    return out


def format_table(metrics):
    """Cumulative-error table as aligned text."""
    lines = [f"{'threshold_m':>11}  {'independent':>11}  {'connected':>9}"]
    ind = metrics["summary"]["independent"]["cumulative"]
    con = metrics["summary"]["connected"]["cumulative"]
    for key in ind:
        lines.append(f"{key:>11}  {ind[key]:>11.3f}  {con[key]:>9.3f}")
    med = [metrics["summary"][m]["median_m"] for m in MODES]
    lines.append(f"{'median_m':>11}  " + "  ".join(
        f"{('n/a' if v is None else f'{v:.3f}'):>{w}}" for v, w in zip(med, (11, 9))))
    return "\n".join(lines)
