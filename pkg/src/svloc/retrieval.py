"""Bag-of-visual-words retrieval of panorama views.

Descriptors are quantized with a k-means codebook, each view becomes a
TF-IDF weighted, L2-normalized word histogram, and queries are ranked by
cosine similarity. Candidates are then checked with the same ratio-test and
homography RANSAC used for frame-to-frame tracking.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyIndex, NoConsensus, TooFewDescriptors
from .geo import GeoPoint, haversine_m
from .tracks import FeatureSet, _pairwise_sq, match_descriptors, ransac_homography


@dataclass(frozen=True, eq=False)
class Codebook:
    centers: np.ndarray  # (k, D)

    @property
    def k(self):
        return self.centers.shape[0]

    @property
    def dim(self):
        return self.centers.shape[1]

    def assign(self, descriptors):
        """Index of the nearest center for each descriptor (lowest index on ties)."""
        d = np.asarray(descriptors, dtype=float).reshape(-1, self.dim)
        if not len(d):
            return np.zeros(0, dtype=int)
        return np.argmin(_pairwise_sq(d, self.centers), axis=1)

    def save(self, path):
        """Flat little-endian float64 binary plus a ``{k, D}`` JSON sidecar."""
        _atomic_bytes(path, np.ascontiguousarray(self.centers, dtype="<f8").tobytes())
        _atomic_bytes(str(path) + ".json", json.dumps({"k": self.k, "D": self.dim}).encode())

    @classmethod
    def load(cls, path):
        with open(str(path) + ".json") as fh:
            meta = json.load(fh)
        data = np.fromfile(path, dtype="<f8")
        return cls(data.reshape(meta["k"], meta["D"]).astype(float))


def _atomic_bytes(path, data: bytes):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _kmeanspp(X, k, rng):
    n = len(X)
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            i = int(rng.integers(n))
        else:
            i = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            i = min(i, n - 1)
        centers[c] = X[i]
        d2 = np.minimum(d2, ((X - centers[c]) ** 2).sum(1))
    return centers


def build_codebook(descriptors, k, seed=0, max_iters=50):
    """Lloyd's k-means with k-means++ seeding.

    Stops at an assignment fixpoint or after ``max_iters`` updates. A
    cluster that ends up empty is re-seeded with the descriptor farthest
    from its current center.
    """
    X = np.asarray(descriptors, dtype=float)
    X = X.reshape(len(X), -1)
    if k < 1 or len(X) < k:
        raise TooFewDescriptors(f"{len(X)} descriptors for k={k}")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(X, k, rng)
    labels = None
    for _ in range(max_iters):
        d2 = _pairwise_sq(X, centers)
        new = np.argmin(d2, axis=1)
        counts = np.bincount(new, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if len(empty):
            # move the farthest points out of clusters that can spare them
            far = iter(np.argsort(-d2[np.arange(len(X)), new], kind="stable"))
            for c in empty:
                for i in far:
                    if counts[new[i]] > 1:
                        counts[new[i]] -= 1
                        new[i] = c
                        counts[c] = 1
                        break
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, X)
        centers = sums / counts[:, None]
    return Codebook(centers)


def document_frequency(word_lists, k):
    """Number of documents containing each word."""
    df = np.zeros(k)
    for w in word_lists:
        df[np.unique(w)] += 1.0
    return df


def idf_from_counts(n_docs, df):
    df = np.asarray(df, dtype=float)
    if n_docs == 0:
        return np.zeros_like(df)
    return np.log(n_docs / (1.0 + df))


def histogram_from_words(words, k, idf):
    h = np.zeros(k)
    if len(words):
        h = np.bincount(words, minlength=k) / float(len(words)) * idf
    norm = np.linalg.norm(h)
    return h / norm if norm > 0 else h


def bow_histogram(descriptors, codebook: Codebook, idf):
    """Unit-norm TF-IDF histogram; zero vector for an empty descriptor set."""
    return histogram_from_words(codebook.assign(descriptors), codebook.k, idf)


@dataclass
class BowIndex:
    codebook: Codebook
    idf: np.ndarray
    doc_ids: list
    histograms: np.ndarray  # (N, k)
    metadata: dict = field(default_factory=dict)  # doc id -> {pano_id, yaw_deg, lat_deg, lon_deg}

    @classmethod
    def build(cls, codebook: Codebook, documents, metadata=None):
        """Index ``documents``: mapping doc id -> descriptor array."""
        ids = sorted(documents)
        words = [codebook.assign(documents[i]) for i in ids]
        idf = idf_from_counts(len(ids), document_frequency(words, codebook.k))
        H = np.array([histogram_from_words(w, codebook.k, idf) for w in words]).reshape(len(ids), codebook.k)
        return cls(codebook, idf, ids, H, dict(metadata or {}))

    def __len__(self):
        return len(self.doc_ids)

    def histogram(self, descriptors):
        return bow_histogram(descriptors, self.codebook, self.idf)

    def to_dict(self):
        docs = {}
        for i, h in zip(self.doc_ids, self.histograms):
            nz = np.flatnonzero(h)
            docs[i] = {str(w): float(h[w]) for w in nz}
        return {"k": self.codebook.k, "idf": [float(x) for x in self.idf], "documents": docs,
                "metadata": {i: self.metadata[i] for i in self.doc_ids if i in self.metadata}}

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        self.codebook.save(os.path.join(directory, "codebook.bin"))
        _atomic_bytes(os.path.join(directory, "bow_index.json"),
                      json.dumps(self.to_dict(), sort_keys=True).encode())

    @classmethod
    def load(cls, directory):
        cb = Codebook.load(os.path.join(directory, "codebook.bin"))
        with open(os.path.join(directory, "bow_index.json")) as fh:
            d = json.load(fh)
        ids = sorted(d["documents"])
        H = np.zeros((len(ids), d["k"]))
        for r, i in enumerate(ids):
            for w, v in d["documents"][i].items():
                H[r, int(w)] = v
        return cls(cb, np.array(d["idf"], dtype=float), ids, H, d.get("metadata", {}))


def query_top_k(query, index: BowIndex, K=10, near: GeoPoint | None = None, radius_m=None):
    """Rank documents by cosine similarity to ``query``.

    Args:
        query: unit histogram (or any vector; it is normalized here).
        near, radius_m: optional GPS pre-filter; documents whose metadata
            lies farther than ``radius_m`` from ``near`` are skipped.

    Returns:
        Up to ``K`` (doc id, score) pairs sorted by score descending, then id.
    """
    if len(index) == 0:
        raise EmptyIndex("index holds no documents")
    q = np.asarray(query, dtype=float)
    qn = np.linalg.norm(q)
    keep = np.ones(len(index), dtype=bool)
    if near is not None and radius_m is not None:
        for r, i in enumerate(index.doc_ids):
            m = index.metadata.get(i)
            if m is not None:
                keep[r] = haversine_m(near, GeoPoint(m["lat_deg"], m["lon_deg"])) <= radius_m
    dn = np.linalg.norm(index.histograms, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = np.where((dn > 0) & (qn > 0), index.histograms @ q / np.maximum(dn * qn, 1e-300), 0.0)
    rows = [r for r in range(len(index)) if keep[r]]
    rows.sort(key=lambda r: (-scores[r], index.doc_ids[r]))
    return [(index.doc_ids[r], float(scores[r])) for r in rows[:K]]


@dataclass
class Verified:
    doc_id: str
    pairs: np.ndarray  # (n, 2) inlier (query feature, view feature) indices
    homography: np.ndarray

    @property
    def n_inliers(self):
        return len(self.pairs)


def verify_candidates(features: FeatureSet, candidates, ratio=0.7, tol=3.0, iters=1000, seed=0,
                      min_inliers=20, metric="l2", confidence=None):
    """Keep candidate views that share a homography-consistent match set.

    Args:
        features: the camera frame's features.
        candidates: iterable of (doc id, FeatureSet).

    Returns:
        list of ``Verified`` in candidate order.
    """
    accepted = []
    for n, (doc_id, view) in enumerate(candidates):
        if len(features) == 0 or len(view) < 2:
            continue
        pairs = match_descriptors(features, view, ratio, metric)
        if len(pairs) < max(4, min_inliers):
            continue
        try:
            H, mask = ransac_homography(features.keypoints[pairs[:, 0]], view.keypoints[pairs[:, 1]],
                                        tol, iters, seed=seed + n, min_consensus=min_inliers,
                                        confidence=confidence)
        except NoConsensus:
            continue
        if mask.sum() >= min_inliers:
            accepted.append(Verified(doc_id, pairs[mask], H))
    return accepted


def top1_accuracy(index: BowIndex, queries, truth):
    hits = 0
    for q, t in zip(queries, truth):
        top = query_top_k(index.histogram(q), index, K=1)
        hits += int(bool(top) and top[0][0] == t)
    return hits / max(len(truth), 1)
