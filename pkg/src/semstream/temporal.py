"""Temporal filtering over batches of frames.

Each frame is summarized by the encoder features of its grid regions. A
batch is partitioned greedily left to right: a frame joins the current
partition only while its feature difference to every frame already inside
stays below the threshold, so partitions are runs of consecutive,
mutually-similar frames. One representative per partition (the member
closest to all others) is all that gets transmitted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .scene import REGION_SIDE, grid_split


@dataclass(frozen=True)
class FeatureMap:
    """Per-region encoder features for one frame: (L, L, 128)."""

    features: np.ndarray
    frame_index: int

    @property
    def L(self):
        return self.features.shape[0]


@dataclass(frozen=True)
class Partition:
    """Consecutive frame-index range [lo, hi] with its representative."""

    lo: int
    hi: int
    representative: int

    def __post_init__(self):
        if not self.lo <= self.representative <= self.hi:
            raise ShapeError("representative outside partition range")

    @property
    def size(self):
        return self.hi - self.lo + 1

    def indices(self):
        return range(self.lo, self.hi + 1)


def frame_features(frame, student, L=None):
    """Encode every region of a frame: returns a FeatureMap of (L, L, 128)."""
    pixels = frame.pixels if hasattr(frame, "pixels") else np.asarray(frame)
    index = getattr(frame, "index", -1)
    if L is None:
        side = pixels.shape[0]
        if side % REGION_SIDE:
            raise ShapeError(f"frame side {side} not a multiple of {REGION_SIDE}")
        L = side // REGION_SIDE
    grid = grid_split(pixels, L)
    feats = student.encode(grid.reshape(-1, REGION_SIDE, REGION_SIDE, 3))
    return FeatureMap(features=feats.reshape(L, L, -1), frame_index=index)


def frame_difference(a: FeatureMap, b: FeatureMap) -> float:
    """Summed squared feature distance over aligned regions; 0 on identity."""
    fa, fb = a.features, b.features
    if fa.shape != fb.shape:
        raise ShapeError(f"feature grids differ: {fa.shape} vs {fb.shape}")
    d = fa.astype(np.float64) - fb.astype(np.float64)
    return float(np.sum(d * d))


def _difference_matrix(features):
    n = len(features)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = frame_difference(features[i], features[j])
    return d


def partition_batch(features, th):
    """Greedy consecutive partitioning under a max-linkage threshold.

    A frame extends the current partition iff its difference to every frame
    already in it is < th; otherwise it starts a new partition. Returns
    Partitions carrying positions 0..N-1 within the batch, each with its
    representative chosen by `representative`.
    """
    if th <= 0:
        raise ShapeError("threshold must be positive")
    n = len(features)
    if n < 1:
        raise ShapeError("need at least one frame")
    d = _difference_matrix(features)
    bounds = []
    lo = 0
    for i in range(1, n):
        if max(d[i, lo:i]) >= th:
            bounds.append((lo, i - 1))
            lo = i
    bounds.append((lo, n - 1))
    return [Partition(lo=a, hi=b, representative=a + _argmin_total(d[a:b + 1, a:b + 1]))
            for a, b in bounds]


def _argmin_total(d):
    """Index minimizing the row sum of a symmetric difference matrix."""
    totals = d.sum(axis=1)
    return int(np.argmin(totals))


def representative(features) -> int:
    """Position of the frame minimizing total difference to the others.

    Ties break to the lowest position, which np.argmin already guarantees.
    """
    if len(features) == 0:
        raise ShapeError("empty partition")
    return _argmin_total(_difference_matrix(features))


def feature_compare(frames, student, kinds=("encoder", "raw-pixel", "edge-count")):
    """Consecutive-frame difference series per feature kind.

    Returns {kind: array of length N-1}. `encoder` is the partitioning
    feature; `raw-pixel` sums squared pixel deltas; `edge-count` compares
    counts of strong horizontal/vertical gradients.
    """
    known = ("encoder", "raw-pixel", "edge-count")
    for kind in kinds:
        if kind not in known:
            raise ValueError(f"unknown feature kind {kind!r}")
    pixel_stack = [f.pixels if hasattr(f, "pixels") else np.asarray(f) for f in frames]
    series = {}
    if "encoder" in kinds:
        maps = [frame_features(f, student) for f in frames]
        series["encoder"] = np.array([
            frame_difference(maps[i], maps[i + 1]) for i in range(len(maps) - 1)])
    if "raw-pixel" in kinds:
        series["raw-pixel"] = np.array([
            float(np.sum((pixel_stack[i + 1].astype(np.float64)
                          - pixel_stack[i].astype(np.float64)) ** 2))
            for i in range(len(pixel_stack) - 1)])
    if "edge-count" in kinds:
        counts = []
        for px in pixel_stack:
            gray = px.mean(axis=2)
            gx = np.abs(np.diff(gray, axis=1))
            gy = np.abs(np.diff(gray, axis=0))
            counts.append(int((gx > 0.2).sum() + (gy > 0.2).sum()))
        series["edge-count"] = np.array([
            float(abs(counts[i + 1] - counts[i])) for i in range(len(counts) - 1)])
    return series
