"""Region labels from ground-truth boxes, and the distillation loss.

Labels are binary per grid cell: 1 when the cell overlaps an object box
strongly enough. Two overlap rules are provided. `iou` demands
IoU(cell, box) > 0.5, which a box larger than two cells can never satisfy
(the cell area caps the ratio), so the default `coverage` rule instead asks
what fraction of the cell the box covers. Labels depend only on geometry,
never on pixel content.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .nn import EPS
from .scene import REGION_SIDE, BoundingBox, iou

OVERLAP_MODES = ("iou", "coverage")


def region_box(i, j):
    """The bounding box of grid cell (i, j): row band i, column band j."""
    return BoundingBox(x=REGION_SIDE * j, y=REGION_SIDE * i,
                       w=REGION_SIDE, h=REGION_SIDE)


def _cell_coverage(i, j, box):
    """Fraction of cell (i, j) covered by `box`."""
    x0, y0 = REGION_SIDE * j, REGION_SIDE * i
    ix = min(x0 + REGION_SIDE, box.x + box.w) - max(x0, box.x)
    iy = min(y0 + REGION_SIDE, box.y + box.h) - max(y0, box.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    return (ix * iy) / (REGION_SIDE * REGION_SIDE)


def label_regions(truth_boxes, L, overlap_mode="coverage"):
    """Binary (L, L) label grid: cell (i, j) is 1 iff some box overlaps it.

    `iou` mode: max_k IoU(cell, box_k) > 0.5.
    `coverage` mode: max_k area(cell ∩ box_k) / area(cell) > 0.5.
    """
    if overlap_mode not in OVERLAP_MODES:
        raise ValueError(f"unknown overlap mode {overlap_mode!r}")
    labels = np.zeros((L, L), dtype=np.int8)
    for box in truth_boxes:
        # Only cells the box touches can be positive; scan just those.
        j0 = max(box.x // REGION_SIDE, 0)
        j1 = min((box.x + box.w - 1) // REGION_SIDE, L - 1)
        i0 = max(box.y // REGION_SIDE, 0)
        i1 = min((box.y + box.h - 1) // REGION_SIDE, L - 1)
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                if labels[i, j]:
                    continue
                if overlap_mode == "iou":
                    hit = iou(region_box(i, j), box) > 0.5
                else:
                    hit = _cell_coverage(i, j, box) > 0.5
                if hit:
                    labels[i, j] = 1
    return labels


def distill_loss(labels, posteriors, verbatim=False):
    """Summed binary cross-entropy between hard labels and posteriors.

    Posteriors are clamped to [eps, 1-eps] first. With `verbatim` set, only
    the positive term -sum(t * log p) is counted; that variant admits the
    degenerate always-positive minimizer and exists for fidelity testing
    only.
    """
    t = np.asarray(labels, dtype=np.float64).reshape(-1)
    p = np.asarray(posteriors, dtype=np.float64).reshape(-1)
    if t.shape != p.shape:
        raise ShapeError(f"labels {t.shape} vs posteriors {p.shape}")
    p = np.clip(p, EPS, 1.0 - EPS)
    pos = t * np.log(p)
    if verbatim:
        return float(-pos.sum())
    neg = (1.0 - t) * np.log(1.0 - p)
    return float(-(pos + neg).sum())


def distill_loss_grad(labels, posteriors, verbatim=False):
    """d(distill_loss)/d(posterior), evaluated on the clamped posterior.

    On the clamp plateau this continues the unclamped derivative instead of
    going flat, so a saturated-but-wrong posterior still produces a restoring
    gradient; combined with the matching clamp in the sigmoid layer the
    effective pre-activation gradient is (clamped p - label).
    """
    t = np.asarray(labels, dtype=np.float64).reshape(-1)
    p = np.asarray(posteriors, dtype=np.float64).reshape(-1)
    if t.shape != p.shape:
        raise ShapeError(f"labels {t.shape} vs posteriors {p.shape}")
    pc = np.clip(p, EPS, 1.0 - EPS)
    grad = -t / pc
    if not verbatim:
        grad = grad + (1.0 - t) / (1.0 - pc)
    return grad.reshape(np.asarray(posteriors).shape)
