"""Frame-to-frame feature tracking: ratio-test matching, homography RANSAC,
and the track store.

Only consecutive frames are ever matched; tracks are never merged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DegenerateConfiguration, DimensionMismatch, NoConsensus


@dataclass
class FeatureSet:
    keypoints: np.ndarray  # (n, 2) pixels
    descriptors: np.ndarray  # (n, D)

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=float).reshape(-1, 2)
        d = np.asarray(self.descriptors, dtype=float)
        self.descriptors = d.reshape(len(self.keypoints), -1) if d.size else d.reshape(len(self.keypoints), 0)

    def __len__(self):
        return len(self.keypoints)

    @classmethod
    def empty(cls, dim=128):
        return cls(np.zeros((0, 2)), np.zeros((0, dim)))


def _pairwise_sq(a, b):
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d2, 0.0)


def match_descriptors(a, b, ratio=0.7, metric="l2"):
    """Lowe ratio-test matching of descriptor sets ``a`` against ``b``.

    Args:
        a, b: descriptor arrays (n, D) / (m, D), or ``FeatureSet`` objects.
        ratio: best distance must be strictly below ``ratio`` times the
            second best.
        metric: ``"l2"`` or ``"sqeuclidean"``. With squared distances the
            test compares ``d1 < ratio**2 * d2`` so both metrics accept the
            same pairs.

    Returns:
        (k, 2) int array of (index in a, index in b), one-to-one, sorted by
        index in a.
    """
    a = getattr(a, "descriptors", a)
    b = getattr(b, "descriptors", b)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"descriptor shapes {a.shape} vs {b.shape}")
    if len(a) == 0 or len(b) < 2:
        return np.zeros((0, 2), dtype=int)

    d2 = _pairwise_sq(a, b)
    two = np.argpartition(d2, 1, axis=1)[:, :2]
    rows = np.arange(len(a))
    first = d2[rows, two[:, 0]]
    second = d2[rows, two[:, 1]]
    swap = second < first
    best = np.where(swap, two[:, 1], two[:, 0])
    d_best = np.where(swap, second, first)
    d_second = np.where(swap, first, second)
    if metric == "l2":
        ok = np.sqrt(d_best) < ratio * np.sqrt(d_second)
    elif metric == "sqeuclidean":
        ok = d_best < ratio * ratio * d_second
    else:
        raise ValueError(f"unknown metric {metric!r}")

    cand = np.flatnonzero(ok)
    # keep the closest a-feature for every claimed b-feature
    order = cand[np.lexsort((cand, d_best[cand]))]
    seen = set()
    keep = []
    for i in order:
        j = int(best[i])
        if j not in seen:
            seen.add(j)
            keep.append((int(i), j))
    keep.sort()
    return np.array(keep, dtype=int).reshape(-1, 2)


# ------------------------------------------------------------- homography


def _normalizer(pts):
    c = pts.mean(axis=-2, keepdims=True)
    rms = np.sqrt(((pts - c) ** 2).sum(-1).mean(-1))
    s = np.sqrt(2.0) / np.maximum(rms, 1e-300)
    T = np.zeros(pts.shape[:-2] + (3, 3))
    T[..., 0, 0] = s
    T[..., 1, 1] = s
    T[..., 0, 2] = -s * c[..., 0, 0]
    T[..., 1, 2] = -s * c[..., 0, 1]
    T[..., 2, 2] = 1.0
    return T


def _apply(T, pts):
    h = pts @ np.swapaxes(T[..., :2, :2], -1, -2) + T[..., None, :2, 2]
    w = pts @ T[..., 2, :2][..., :, None] + T[..., None, 2:3, 2]
    return h / w


def _dlt_batch(src, dst):
    """Normalized DLT for stacked correspondence sets (..., n, 2)."""
    Ts, Td = _normalizer(src), _normalizer(dst)
    s = _apply(Ts, src)
    d = _apply(Td, dst)
    n = src.shape[-2]
    A = np.zeros(src.shape[:-2] + (2 * n, 9))
    x, y = s[..., 0], s[..., 1]
    u, v = d[..., 0], d[..., 1]
    one = np.ones_like(x)
    A[..., 0::2, 0] = -x
    A[..., 0::2, 1] = -y
    A[..., 0::2, 2] = -one
    A[..., 0::2, 6] = u * x
    A[..., 0::2, 7] = u * y
    A[..., 0::2, 8] = u
    A[..., 1::2, 3] = -x
    A[..., 1::2, 4] = -y
    A[..., 1::2, 5] = -one
    A[..., 1::2, 6] = v * x
    A[..., 1::2, 7] = v * y
    A[..., 1::2, 8] = v
    _, sv, vt = np.linalg.svd(A)
    Hn = vt[..., -1, :].reshape(src.shape[:-2] + (3, 3))
    H = np.linalg.inv(Td) @ Hn @ Ts
    return H, sv


def _normalize_h(H):
    s = H[..., 2:3, 2:3]
    s = np.where(np.abs(s) > 1e-12, s, 1.0)
    return H / s


def _collinear_any(pts4, tol=1e-9):
    """True where any 3 of the 4 points are (nearly) collinear."""
    scale = np.ptp(pts4, axis=-2).max(-1) + 1e-300
    bad = np.zeros(pts4.shape[:-2], dtype=bool)
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        a = pts4[..., j, :] - pts4[..., i, :]
        b = pts4[..., k, :] - pts4[..., i, :]
        area = np.abs(a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0])
        bad |= area < tol * scale**2
    return bad


def estimate_homography(src, dst):
    """Homography ``H`` with ``dst ~ H @ src`` from >= 4 correspondences.

    Hartley-normalized DLT; the result is scaled so ``H[2, 2] == 1`` when
    that entry is nonzero.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if len(src) < 4 or len(src) != len(dst):
        raise DegenerateConfiguration("need at least 4 correspondences")
    if len(src) == 4 and _collinear_any(src):
        raise DegenerateConfiguration("three source points are collinear")
    H, sv = _dlt_batch(src, dst)
    # a second null direction means the points do not pin down H
    if len(sv) >= 9 and sv[-2] < 1e-10 * sv[0]:
        raise DegenerateConfiguration("correspondences are degenerate")
    H = _normalize_h(H)
    if abs(np.linalg.det(H)) <= 1e-12:
        raise DegenerateConfiguration("singular homography")
    return H


def transfer_errors(H, src, dst):
    """Symmetric transfer error per correspondence (RMS of both directions).

    ``H`` may be a stack (m, 3, 3); the result then has shape (m, n).
    """
    H = np.asarray(H, dtype=float)
    stack = H.reshape(-1, 3, 3)
    with np.errstate(all="ignore"):
        Hi = np.linalg.inv(stack)
    err = _kernels.transfer_errors(stack, Hi, np.asarray(src, dtype=float).reshape(-1, 2),
                                   np.asarray(dst, dtype=float).reshape(-1, 2))
    return err if H.ndim == 3 else err[0]


def ransac_homography(src, dst, inlier_tol=3.0, iters=1000, seed=0, min_consensus=8,
                      confidence=None, batch=256):
    """RANSAC over 4-point samples with a final refit on all inliers.

    Hypotheses are drawn in batches from ``np.random.default_rng(seed)``, so
    the result is deterministic for a given seed. All ``iters`` hypotheses
    are drawn unless every match is already an inlier, or, when
    ``confidence`` is given, once the standard adaptive bound is met.

    The consensus floor is ``min(min_consensus, len(src))``: a set in which
    every match agrees is always accepted.

    Returns:
        (H, inlier mask)
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    n = len(src)
    if n < 4:
        raise NoConsensus(f"{n} matches, need at least 4")
    rng = np.random.default_rng(seed)
    floor = min(min_consensus, n)
    best_count, best_err = -1, np.inf
    best_mask = None
    needed = iters
    drawn = 0
    while drawn < min(needed, iters):
        c = min(batch, iters - drawn)
        drawn += c
        idx = np.argpartition(rng.random((c, n)), 3, axis=1)[:, :4] if n > 4 else np.tile(np.arange(4), (c, 1))
        H, counts, score, valid = _kernels.ransac_score(src, dst, idx, inlier_tol)
        if not valid.any():
            continue
        counts = np.where(valid, counts, -1)
        k = int(np.lexsort((score, -counts))[0])
        if counts[k] > best_count or (counts[k] == best_count and score[k] < best_err):
            best_count, best_err = int(counts[k]), float(score[k])
            best_mask = transfer_errors(H[k], src, dst) < inlier_tol
            w = best_count / n
            if w >= 1.0:
                needed = 0
            elif w > 0.0 and confidence is not None:
                needed = math.ceil(math.log(1.0 - confidence) / math.log(1.0 - w**4))
    if best_mask is None or best_count < floor:
        raise NoConsensus(f"best consensus {max(best_count, 0)} < {floor}")

    mask = best_mask
    for _ in range(3):
        try:
            H = estimate_homography(src[mask], dst[mask])
        except DegenerateConfiguration:
            break
        new = transfer_errors(H, src, dst) < inlier_tol
        if new.sum() < floor:
            break
        if np.array_equal(new, mask):
            return H, mask
        mask = new
    H = estimate_homography(src[mask], dst[mask])
    return H, transfer_errors(H, src, dst) < inlier_tol


# ----------------------------------------------------------------- tracks


@dataclass
class Track:
    id: int
    frames: list = field(default_factory=list)
    keypoints: list = field(default_factory=list)
    descriptors: list = field(default_factory=list)
    live: bool = True

    def __len__(self):
        return len(self.frames)

    def append(self, frame, kp, desc):
        if self.frames and frame != self.frames[-1] + 1:
            raise ValueError("track observations must come from consecutive frames")
        self.frames.append(int(frame))
        self.keypoints.append(np.asarray(kp, dtype=float))
        self.descriptors.append(np.asarray(desc, dtype=float))

    @property
    def status(self):
        return "live" if self.live else "terminated"

    def mean_descriptor(self):
        return np.mean(self.descriptors, axis=0)


class TrackStore:
    """Single-writer track bookkeeping over an ordered frame stream.

    ``window`` bounds how many frames a terminated track is kept in
    ``recent``; every track ever created stays reachable via ``tracks``.
    """

    def __init__(self, ratio=0.7, inlier_tol=3.0, iters=1000, min_consensus=8, seed=0,
                 window=300, metric="l2", confidence=None):
        self.ratio = ratio
        self.inlier_tol = inlier_tol
        self.iters = iters
        self.min_consensus = min_consensus
        self.seed = seed
        self.window = window
        self.metric = metric
        self.confidence = confidence
        self.tracks: list[Track] = []
        self._live_by_feature: dict[int, Track] = {}
        self._prev: FeatureSet | None = None
        self.frame = -1
        self.consensus_failures = 0

    @property
    def live(self):
        return [t for t in self.tracks if t.live]

    @property
    def recent(self):
        return [t for t in self.tracks if t.live or t.frames[-1] > self.frame - self.window]

    def _start(self, feats, idx):
        t = Track(len(self.tracks))
        t.append(self.frame, feats.keypoints[idx], feats.descriptors[idx])
        self.tracks.append(t)
        return t

    def update(self, current: FeatureSet):
        """Consume the next frame's features.

        Returns the list of (track id, feature index) extended this frame.
        """
        self.frame += 1
        prev, self._prev = self._prev, current
        extended = {}
        if prev is not None and len(prev) and len(current):
            pairs = match_descriptors(prev, current, self.ratio, self.metric)
            if len(pairs) >= 4:
                try:
                    _, mask = ransac_homography(
                        prev.keypoints[pairs[:, 0]], current.keypoints[pairs[:, 1]],
                        self.inlier_tol, self.iters, seed=self.seed + self.frame,
                        min_consensus=self.min_consensus, confidence=self.confidence,
                    )
                    extended = {int(i): int(j) for i, j in pairs[mask]}
                except NoConsensus:
                    self.consensus_failures += 1

        new_live = {}
        for fi, track in self._live_by_feature.items():
            j = extended.get(fi)
            if j is None:
                track.live = False
            else:
                track.append(self.frame, current.keypoints[j], current.descriptors[j])
                new_live[j] = track
        for j in range(len(current)):
            if j not in new_live:
                new_live[j] = self._start(current, j)
        self._live_by_feature = new_live
        return sorted((t.id, j) for j, t in new_live.items() if len(t) > 1)

    def finish(self):
        for t in self._live_by_feature.values():
            t.live = False
        self._live_by_feature = {}
        return self.tracks


def update_tracks(store: TrackStore, current: FeatureSet):
    """Functional alias for ``store.update``."""
    return store.update(current)
