"""Dataset and result files.

Layout of a dataset directory::

    frames.jsonl        {frame_id, timestamp_s, features: [{u, v, desc}]}
    odometry.jsonl      {frame_id, rel_pose: {q: [w, x, y, z], t: [x, y, z]}}
    camera.json         camera intrinsics
    panos/pano_<id>.json        {id, lat_deg, lon_deg, heading_deg}
    panos/pano_<id>_views.json  analytic view features (optional)
    panos/pano_<id>.pgm|.ppm    plate carree raster (optional)
    ground_truth.json   simulator truth (optional)
    spec.json           world spec that produced the dataset (optional)

Every file is written atomically (temporary file then rename).
"""

from __future__ import annotations

import glob
import hashlib
import json
import math
import os

import numpy as np

from .errors import ConfigError, MissingGroundTruth
from .geo import GeoPoint
from .geometry import Intrinsics, PanoImage, Pose, view_rotation
from .simworld import Dataset, Frame, PanoRecord, PanoView, WorldSpec
from .tracks import FeatureSet

DESC_DECIMALS = 6


class DatasetError(ConfigError):
    """Malformed or missing dataset input."""


# ------------------------------------------------------------------ writing


def atomic_write(path, data):
    """Write ``data`` (str or bytes) to ``path`` via a temporary file."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = f"{path}.tmp{os.getpid()}"
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_json(path, obj):
    atomic_write(path, dumps(obj))


def _features_json(fs: FeatureSet):
    desc = np.round(fs.descriptors, DESC_DECIMALS)
    return [{"u": float(u), "v": float(v), "desc": [float(x) for x in d]}
            for (u, v), d in zip(fs.keypoints, desc)]


def _features_from_json(items, dim=None):
    if not items:
        return FeatureSet.empty(dim or 0)
    kp = np.array([[f["u"], f["v"]] for f in items], dtype=float)
    desc = np.array([f["desc"] for f in items], dtype=float)
    return FeatureSet(kp, desc)


def write_pnm(path, image):
    """8-bit binary PGM (2-D) or PPM (H, W, 3) from values in [0, 1]."""
    img = np.clip(np.rint(np.asarray(image, dtype=float) * 255.0), 0, 255).astype(np.uint8)
    if img.ndim == 2:
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n"
    else:
        header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n"
    atomic_write(path, header.encode() + img.tobytes())


def read_pnm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode())
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in ("P5", "P6") or maxval > 255:
        raise DatasetError(f"{path}: unsupported image format {magic}")
    ch = 1 if magic == "P5" else 3
    img = np.frombuffer(data[pos:pos + w * h * ch], dtype=np.uint8).astype(float) / maxval
    return img.reshape(h, w) if ch == 1 else img.reshape(h, w, 3)


def write_dataset(directory, ds: Dataset, truth=None):
    os.makedirs(os.path.join(directory, "panos"), exist_ok=True)
    lines = [json.dumps({"frame_id": f.frame_id, "timestamp_s": f.timestamp_s, "features": _features_json(f.features)},
                        sort_keys=True) for f in ds.frames]
    atomic_write(os.path.join(directory, "frames.jsonl"), "\n".join(lines) + "\n")
    lines = [json.dumps({"frame_id": i, "rel_pose": p.to_dict()}, sort_keys=True) for i, p in enumerate(ds.odometry)]
    atomic_write(os.path.join(directory, "odometry.jsonl"), "\n".join(lines) + "\n")
    write_json(os.path.join(directory, "camera.json"), ds.intrinsics.to_dict())
    for p in ds.panoramas:
        base = os.path.join(directory, "panos", f"pano_{p.id}")
        write_json(base + ".json", {"id": p.id, "lat_deg": p.lat_deg, "lon_deg": p.lon_deg,
                                    "heading_deg": p.heading_deg})
        if p.views:
            write_json(base + "_views.json", {"id": p.id, "views": [
                {"index": k, "yaw_deg": math.degrees(v.yaw), "pitch_deg": 0.0,
                 "intrinsics": v.intrinsics.to_dict(), "features": _features_json(v.features)}
                for k, v in enumerate(p.views)]})
        if p.image is not None:
            write_pnm(base + (".pgm" if np.ndim(p.image.pixels) == 2 else ".ppm"), p.image.pixels)
    if ds.spec is not None:
        write_json(os.path.join(directory, "spec.json"), ds.spec.to_dict())
    if truth is not None:
        write_json(os.path.join(directory, "ground_truth.json"), truth_to_dict(truth))


def truth_to_dict(gt):
    return {
        "poses": [p.to_dict() for p in gt.poses],
        "landmarks": [[float(x) for x in y] for y in gt.landmarks],
        "pano_rigs": {k: p.to_dict() for k, p in sorted(gt.pano_rigs.items())},
        "visibility": gt.visibility,
        "feature_landmark": gt.feature_landmark,
        "pano_feature_landmark": {k: v for k, v in sorted(gt.pano_feature_landmark.items())},
        "camera_gps": [[float(a), float(b)] for a, b in gt.camera_gps],
        "enu_from_traj": gt.enu_from_traj.to_dict(),
        "ref": {"lat_deg": gt.ref.lat_deg, "lon_deg": gt.ref.lon_deg},
    }


# ------------------------------------------------------------------ reading


def _read_jsonl(path):
    out = []
    try:
        with open(path) as fh:
            for n, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        out.append(json.loads(line))
                    except json.JSONDecodeError as exc:
                        raise DatasetError(f"{path}:{n}: {exc}") from None
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from None
    return out


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: {exc}") from None


def _views_from_raster(image, n_views, fov, size, detector):
    from .geometry import standard_views
    views = []
    for v in standard_views(image, size, fov, n_views):
        views.append(PanoView(v.yaw, v.intrinsics, detector.detect(v.image), v.rotation))
    return views


def read_dataset(directory, rig_spacing_deg=45.0, view_fov_deg=90.0, view_size=512, detector=None) -> Dataset:
    """Load a dataset directory.

    Panoramas with a ``_views.json`` use its analytic view features; a
    raster-only panorama is cut into rectilinear views and run through
    ``detector`` (default: ``GridDetector``).
    """
    if not os.path.isdir(directory):
        raise DatasetError(f"dataset directory {directory} does not exist")
    try:
        frames = []
        for rec in _read_jsonl(os.path.join(directory, "frames.jsonl")):
            frames.append(Frame(int(rec["frame_id"]), float(rec.get("timestamp_s", 0.0)),
                                _features_from_json(rec["features"])))
        frames.sort(key=lambda f: f.frame_id)
        odo = {}
        for rec in _read_jsonl(os.path.join(directory, "odometry.jsonl")):
            odo[int(rec["frame_id"])] = Pose.from_dict(rec["rel_pose"])
        odometry = [odo.get(f.frame_id, Pose.identity()) for f in frames]
        if frames and frames[0].frame_id not in odo:
            odometry[0] = Pose.identity()
        missing = [f.frame_id for f in frames[1:] if f.frame_id not in odo]
        if missing:
            raise DatasetError(f"odometry missing for frames {missing[:5]}")
        intr = Intrinsics.from_dict(read_json(os.path.join(directory, "camera.json")))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DatasetError):
            raise
        raise DatasetError(f"malformed dataset record: {exc!r}") from None

    spacing = math.radians(rig_spacing_deg)
    panoramas = []
    for path in sorted(glob.glob(os.path.join(directory, "panos", "pano_*.json"))):
        if path.endswith("_views.json"):
            continue
        meta = read_json(path)
        try:
            rec = PanoRecord(str(meta["id"]), float(meta["lat_deg"]), float(meta["lon_deg"]),
                             float(meta["heading_deg"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: bad panorama record ({exc!r})") from None
        base = path[:-5]
        if os.path.exists(base + "_views.json"):
            vd = read_json(base + "_views.json")
            for v in sorted(vd["views"], key=lambda v: v["index"]):
                k = int(v["index"])
                yaw = k * spacing
                if abs(math.radians(v["yaw_deg"]) - yaw) > 1e-9:
                    raise DatasetError(f"{base}_views.json: view {k} yaw {v['yaw_deg']} deg does not match the "
                                       f"rig spacing {rig_spacing_deg} deg")
                rec.views.append(PanoView(yaw, Intrinsics.from_dict(v["intrinsics"]),
                                          _features_from_json(v["features"]), view_rotation(yaw, 0.0)))
        for ext in (".pgm", ".ppm"):
            if os.path.exists(base + ext):
                rec.image = PanoImage(read_pnm(base + ext))
        if not rec.views and rec.image is not None:
            if detector is None:
                from .detect import GridDetector
                detector = GridDetector()
            rec.views = _views_from_raster(rec.image, int(round(360.0 / rig_spacing_deg)),
                                           math.radians(view_fov_deg), view_size, detector)
        panoramas.append(rec)
    spec = None
    if os.path.exists(os.path.join(directory, "spec.json")):
        spec = WorldSpec.from_dict(read_json(os.path.join(directory, "spec.json")))
    return Dataset(frames, odometry, intr, panoramas, spec)


class Truth:
    """Ground truth as loaded from ``ground_truth.json``."""

    def __init__(self, d):
        self.poses = [Pose.from_dict(p) for p in d["poses"]]
        self.landmarks = np.array(d["landmarks"], dtype=float).reshape(-1, 3)
        self.pano_rigs = {k: Pose.from_dict(p) for k, p in d["pano_rigs"].items()}
        self.visibility = d["visibility"]
        self.feature_landmark = d["feature_landmark"]
        self.pano_feature_landmark = d["pano_feature_landmark"]
        self.camera_gps = [tuple(x) for x in d["camera_gps"]]
        self.enu_from_traj = Pose.from_dict(d["enu_from_traj"])
        self.ref = GeoPoint(d["ref"]["lat_deg"], d["ref"]["lon_deg"])


def read_truth(path) -> Truth:
    if not os.path.exists(path):
        raise MissingGroundTruth(f"no ground truth at {path}")
    return Truth(read_json(path))


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_digest(directory, exclude=()):
    """Sorted (relative path, sha256) pairs of all files under ``directory``."""
    out = []
    for root, _, files in os.walk(directory):
        for name in files:
            path = os.path.join(root, name)
            rel = os.path.relpath(path, directory)
            if rel not in exclude:
                out.append((rel, file_digest(path)))
    return sorted(out)
