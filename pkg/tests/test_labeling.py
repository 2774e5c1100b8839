"""Region labeling against pixel-counting oracles, and the loss function."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semstream.errors import ShapeError
from semstream.labeling import (distill_loss, distill_loss_grad,
                                label_regions, region_box)
from semstream.scene import BoundingBox, iou

L = 8
SIDE = 28 * L

boxes_st = st.lists(
    st.builds(BoundingBox,
              x=st.integers(0, SIDE - 1), y=st.integers(0, SIDE - 1),
              w=st.integers(1, 140), h=st.integers(1, 140)),
    min_size=0, max_size=4,
)


def oracle_labels(truth_boxes, mode):
    """Per-cell labels recomputed by rasterizing each box onto the canvas."""
    labels = np.zeros((L, L), dtype=np.int8)
    for i in range(L):
        for j in range(L):
            cell = np.zeros((SIDE + 300, SIDE + 300), dtype=bool)
            cell[28 * i:28 * i + 28, 28 * j:28 * j + 28] = True
            for box in truth_boxes:
                mask = np.zeros_like(cell)
                mask[box.y:box.y + box.h, box.x:box.x + box.w] = True
                inter = (cell & mask).sum()
                if mode == "coverage":
                    hit = inter / 784 > 0.5
                else:
                    union = (cell | mask).sum()
                    hit = inter / union > 0.5
                if hit:
                    labels[i, j] = 1
                    break
    return labels


def test_region_box_geometry():
    b = region_box(1, 0)
    assert (b.x, b.y, b.w, b.h) == (0, 28, 28, 28)
    b = region_box(0, 3)
    assert (b.x, b.y, b.w, b.h) == (84, 0, 28, 28)


@given(boxes_st)
@settings(max_examples=60, deadline=None)
def test_coverage_labels_match_oracle(boxes):
    got = label_regions(boxes, L, "coverage")
    assert np.array_equal(got, oracle_labels(boxes, "coverage"))


@given(boxes_st)
@settings(max_examples=60, deadline=None)
def test_iou_labels_match_oracle(boxes):
    got = label_regions(boxes, L, "iou")
    assert np.array_equal(got, oracle_labels(boxes, "iou"))


def test_no_boxes_all_zero():
    assert label_regions([], L).sum() == 0


def test_four_cell_box_separates_the_modes():
    # A 56x56 box aligned to 4 cells: full coverage per cell, but per-cell
    # IoU is 784/3136 = 0.25, under the 0.5 cut.
    box = BoundingBox(28, 28, 56, 56)
    cov = label_regions([box], L, "coverage")
    assert cov.sum() == 4
    assert cov[1, 1] == cov[1, 2] == cov[2, 1] == cov[2, 2] == 1
    assert label_regions([box], L, "iou").sum() == 0
    assert iou(region_box(1, 1), box) == pytest.approx(0.25)


def test_cell_sized_box_is_positive_in_both_modes():
    box = BoundingBox(28, 28, 28, 28)
    assert label_regions([box], L, "coverage")[1, 1] == 1
    assert label_regions([box], L, "iou")[1, 1] == 1


def test_labels_shift_with_the_box():
    a = label_regions([BoundingBox(0, 0, 30, 30)], L)
    b = label_regions([BoundingBox(28, 28, 30, 30)], L)
    assert np.array_equal(a[:-1, :-1], b[1:, 1:])


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        label_regions([], L, "jaccard")


def test_distill_loss_hand_computed():
    # Three regions checked against a scalar-by-scalar computation.
    t = [1, 0, 1]
    p = [0.9, 0.2, 0.6]
    want = -(np.log(0.9) + np.log(0.8) + np.log(0.6))
    assert distill_loss(t, p) == pytest.approx(want, rel=1e-12)
    assert distill_loss(t, p, verbatim=True) == pytest.approx(
        -(np.log(0.9) + np.log(0.6)), rel=1e-12)


def test_distill_loss_half_posteriors():
    assert distill_loss([1, 0], [0.5, 0.5]) == pytest.approx(
        2 * -np.log(0.5), rel=1e-12)


def test_verbatim_loss_ignores_negatives():
    assert distill_loss([0, 0], [0.99, 0.42], verbatim=True) == 0.0
    assert distill_loss([0, 0], [0.99, 0.42]) > 0.0


def test_loss_nonnegative_and_zero_floor(rng):
    t = rng.integers(0, 2, 50)
    p = rng.uniform(0.01, 0.99, 50)
    assert distill_loss(t, p) >= 0.0
    near = np.where(t == 1, 1 - 1e-9, 1e-9)
    assert distill_loss(t, near) == pytest.approx(0.0, abs=1e-3)


def test_loss_grad_matches_finite_differences(rng):
    t = rng.integers(0, 2, 20).astype(float)
    p = rng.uniform(0.05, 0.95, 20)
    g = distill_loss_grad(t, p)
    eps = 1e-7
    for k in range(20):
        q = p.copy()
        q[k] += eps
        hi = distill_loss(t, q)
        q[k] -= 2 * eps
        lo = distill_loss(t, q)
        assert g[k] == pytest.approx((hi - lo) / (2 * eps), rel=1e-5)


def test_loss_grad_restores_on_saturation():
    # A saturated-but-wrong posterior must keep a strong restoring gradient
    # instead of flatlining on the clamp plateau.
    g_wrong = distill_loss_grad([1.0], [1e-12])
    assert g_wrong[0] < -1e6
    g_right = distill_loss_grad([1.0], [1.0 - 1e-12])
    assert abs(g_right[0]) < 10.0


def test_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        distill_loss([1, 0], [0.5])
    with pytest.raises(ShapeError):
        distill_loss_grad([1, 0], [0.5])


def test_grid_loss_aggregates_over_all_cells(rng):
    t = rng.integers(0, 2, (4, 4))
    p = rng.uniform(0.1, 0.9, (4, 4))
    flat = distill_loss(t.reshape(-1), p.reshape(-1))
    assert distill_loss(t, p) == pytest.approx(flat, rel=1e-12)
