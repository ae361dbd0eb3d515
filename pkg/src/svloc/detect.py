"""Keypoint detection for raster views.

Detection and description proper are pluggable: anything with a
``detect(image) -> FeatureSet`` method works. The built-in detector is a
plain Harris corner picker with normalized patch descriptors, enough to
exercise the raster panorama path; it is not meant to compete with SIFT.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np
from scipy import ndimage

from .tracks import FeatureSet


class Detector(Protocol):
    def detect(self, image) -> FeatureSet: ...


class GridDetector:
    """Strongest Harris corner per grid cell, described by its image patch.

    Args:
        cell: grid cell size in pixels; at most one keypoint per cell.
        patch: side of the square descriptor patch (descriptor dim patch**2).
        min_response: corners weaker than this fraction of the image's
            strongest response are dropped.
    """

    def __init__(self, cell=32, patch=8, min_response=0.01, k=0.04, sigma=1.5):
        self.cell = int(cell)
        self.patch = int(patch)
        self.min_response = float(min_response)
        self.k = float(k)
        self.sigma = float(sigma)

    @property
    def dim(self):
        return self.patch * self.patch

    def response(self, gray):
        gy, gx = np.gradient(gray)
        sxx = ndimage.gaussian_filter(gx * gx, self.sigma)
        syy = ndimage.gaussian_filter(gy * gy, self.sigma)
        sxy = ndimage.gaussian_filter(gx * gy, self.sigma)
        return sxx * syy - sxy * sxy - self.k * (sxx + syy) ** 2

    def detect(self, image) -> FeatureSet:
        img = np.asarray(image, dtype=float)
        gray = img.mean(axis=2) if img.ndim == 3 else img
        r = self.response(gray)
        h, w = gray.shape
        half = self.patch // 2
        thresh = self.min_response * max(r.max(), 0.0)
        kps, descs = [], []
        for y0 in range(0, h, self.cell):
            for x0 in range(0, w, self.cell):
                block = r[y0:y0 + self.cell, x0:x0 + self.cell]
                iy, ix = np.unravel_index(np.argmax(block), block.shape)
                y, x = y0 + iy, x0 + ix
                if block[iy, ix] <= thresh or thresh <= 0.0:
                    continue
                if not (half <= y < h - half and half <= x < w - half):
                    continue
                p = gray[y - half:y - half + self.patch, x - half:x - half + self.patch].ravel()
                p = p - p.mean()
                n = np.linalg.norm(p)
                if n < 1e-9:
                    continue
                kps.append((float(x), float(y)))
                descs.append(p / n)
        if not kps:
            return FeatureSet.empty(self.dim)
        return FeatureSet(np.array(kps), np.array(descs))
