"""Network timing arithmetic, box matching, and run-level aggregation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semstream.metrics import (CONSTRAINED_NETWORK, RICH_NETWORK,
                               DelayBreakdown, FrameMetric, NetworkConfig,
                               RunMetrics, f1_score, match_boxes,
                               normalized_bandwidth, reference_frame_bytes,
                               response_delay, transmit_time)
from semstream.scene import BoundingBox, iou

boxes_st = st.lists(
    st.builds(BoundingBox,
              x=st.integers(0, 80), y=st.integers(0, 80),
              w=st.integers(5, 60), h=st.integers(5, 60)),
    min_size=0, max_size=5,
)


def oracle_greedy_match(predicted, truth, iou_threshold):
    """Greedy descending-IoU matching as an explicit repeated argmax."""
    used_p, used_t, matches = set(), set(), []
    while True:
        best = None
        for pi, p in enumerate(predicted):
            if pi in used_p:
                continue
            for ti, t in enumerate(truth):
                if ti in used_t:
                    continue
                v = iou(p, t)
                if v < iou_threshold:
                    continue
                key = (-v, pi, ti)
                if best is None or key < best:
                    best = key
        if best is None:
            return matches
        _, pi, ti = best
        used_p.add(pi)
        used_t.add(ti)
        matches.append((pi, ti))


def test_network_presets():
    assert CONSTRAINED_NETWORK.bandwidth_bps == pytest.approx(1.2e6)
    assert CONSTRAINED_NETWORK.latency_s == pytest.approx(0.100)
    assert RICH_NETWORK.bandwidth_bps == pytest.approx(100e6)
    assert RICH_NETWORK.latency_s == pytest.approx(0.020)


def test_transmit_time_examples():
    assert transmit_time(0, CONSTRAINED_NETWORK) == pytest.approx(0.100)
    assert transmit_time(150_000, CONSTRAINED_NETWORK) == pytest.approx(1.1)
    doubled = NetworkConfig(bandwidth_bps=2.4e6, latency_s=0.100)
    assert transmit_time(150_000, doubled) == pytest.approx(0.1 + 0.5)
    with pytest.raises(ValueError):
        transmit_time(-1, CONSTRAINED_NETWORK)


def test_response_delay_single_round():
    d = response_delay(2.0, 3.0, [(150_000, 0.5)], CONSTRAINED_NETWORK)
    assert d.accumulation == pytest.approx(1.0)
    assert d.transmit == pytest.approx(1.1)
    assert d.processing == pytest.approx(0.5)
    assert d.feedback == 0.0
    assert d.total == pytest.approx(1.0 + 1.1 + 0.5)


def test_response_delay_extra_round_costs_one_feedback_latency():
    rounds1 = [(150_000, 0.5)]
    rounds2 = [(150_000, 0.5), (150_000, 0.5)]
    d1 = response_delay(0.0, 0.0, rounds1, CONSTRAINED_NETWORK)
    d2 = response_delay(0.0, 0.0, rounds2, CONSTRAINED_NETWORK)
    # One extra uplink transmit + one processing pass + one downlink latency.
    assert d2.total - d1.total == pytest.approx(1.1 + 0.5 + 0.1)


def test_response_delay_validation():
    with pytest.raises(ValueError):
        response_delay(0.0, 0.0, [], CONSTRAINED_NETWORK)
    with pytest.raises(ValueError):
        response_delay(5.0, 3.0, [(10, 0.1)], CONSTRAINED_NETWORK)


def test_response_delay_source_compute_included():
    d = response_delay(0.0, 0.0, [(0, 0.0)], RICH_NETWORK, source_compute=0.25)
    assert d.total == pytest.approx(0.25 + RICH_NETWORK.latency_s)


@given(boxes_st, boxes_st)
@settings(max_examples=150, deadline=None)
def test_match_boxes_agrees_with_repeated_argmax(predicted, truth):
    got = [(pi, ti) for pi, ti, _ in match_boxes(predicted, truth)]
    assert got == oracle_greedy_match(predicted, truth, 0.5)


@given(boxes_st, boxes_st)
@settings(max_examples=80, deadline=None)
def test_match_boxes_one_to_one(predicted, truth):
    matches = match_boxes(predicted, truth)
    assert len({pi for pi, _, _ in matches}) == len(matches)
    assert len({ti for _, ti, _ in matches}) == len(matches)
    for _, _, v in matches:
        assert v >= 0.5


def test_f1_conventions():
    box = BoundingBox(0, 0, 10, 10)
    assert f1_score([], []) == (1.0, 1.0, 1.0)
    assert f1_score([], [box]) == (0.0, 0.0, 0.0)
    p, r, f = f1_score([box], [])
    assert (p, f) == (0.0, 0.0)


def test_f1_half_right():
    truth = [BoundingBox(0, 0, 10, 10), BoundingBox(50, 50, 10, 10)]
    preds = [BoundingBox(0, 0, 10, 10), BoundingBox(90, 90, 5, 5)]
    p, r, f = f1_score(preds, truth)
    assert (p, r, f) == (0.5, 0.5, 0.5)


def test_f1_perfect():
    truth = [BoundingBox(3, 4, 20, 12)]
    assert f1_score(list(truth), truth) == (1.0, 1.0, 1.0)


def test_normalized_bandwidth():
    assert normalized_bandwidth(300, 1200) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        normalized_bandwidth(1, 0)


def test_reference_frame_bytes_is_all_hq_cost():
    # Must equal the byte-cost model on a frame with every region HQ.
    assert reference_frame_bytes(16) == 602160
    assert reference_frame_bytes(4) == 16 * 28 * 28 * 3 + 2 + 16


def make_frame_metric(batch, idx, tp, fp, fn, delay_s, transmitted=True):
    delay = DelayBreakdown(accumulation=delay_s, transmit=0.0,
                           processing=0.0, feedback=0.0)
    return FrameMetric(batch=batch, frame_index=idx, tp=tp, fp=fp, fn=fn,
                       delay=delay, bytes_attributed=100.0,
                       transmitted=transmitted)


def test_run_metrics_micro_f1_recount():
    run = RunMetrics(mode="ltc", L=4)
    counts = [(2, 1, 0), (1, 0, 1), (0, 2, 3)]
    for i, (tp, fp, fn) in enumerate(counts):
        run.add_frame(make_frame_metric(0, i, tp, fp, fn, 1.0))
    tp = sum(c[0] for c in counts)
    fp = sum(c[1] for c in counts)
    fn = sum(c[2] for c in counts)
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    want = 2 * precision * recall / (precision + recall)
    assert run.micro_f1() == pytest.approx(want)
    # Algebraic identity: micro F1 = 2tp / (2tp + fp + fn).
    assert run.micro_f1() == pytest.approx(2 * tp / (2 * tp + fp + fn))


def test_run_metrics_empty_is_perfect():
    run = RunMetrics(mode="ltc", L=4)
    assert run.micro_f1() == 1.0
    assert run.delay_stats() == {"mean": 0.0, "median": 0.0, "p95": 0.0}


def test_run_metrics_delay_stats():
    run = RunMetrics(mode="ltc", L=4)
    delays = [1.0, 2.0, 3.0, 10.0]
    for i, d in enumerate(delays):
        run.add_frame(make_frame_metric(0, i, 1, 0, 0, d))
    stats = run.delay_stats()
    assert stats["mean"] == pytest.approx(np.mean(delays))
    assert stats["median"] == pytest.approx(np.median(delays))
    assert stats["p95"] == pytest.approx(np.percentile(delays, 95))


def test_run_metrics_filtered_fraction():
    run = RunMetrics(mode="ltc-temporal", L=4)
    for i in range(10):
        run.add_frame(make_frame_metric(0, i, 1, 0, 0, 1.0,
                                        transmitted=(i < 3)))
    assert run.filtered_fraction == pytest.approx(0.7)


def test_run_metrics_summary_fields():
    run = RunMetrics(mode="ltc", L=16)
    run.add_frame(make_frame_metric(0, 0, 1, 0, 0, 2.0))
    run.uplink_bytes = 602160
    run.update_log = [(2, "extension_only"), (4, "full"),
                      (5, "extension_only")]
    s = run.summary()
    assert s["mode"] == "ltc"
    assert s["updates_extension"] == 2
    assert s["updates_full"] == 1
    assert s["normalized_bandwidth"] == pytest.approx(602160 / 602160)
    assert s["mean_delay"] == pytest.approx(2.0)
