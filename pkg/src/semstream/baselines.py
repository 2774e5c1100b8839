"""Comparison pipelines: feedback-round, pixel-difference, uniform, oracle.

Each runner exercises the same scene, network model, and metrics as the
main pipeline but with a different transmission policy:

- dds: two uplink rounds per batch. Round one sends every frame at low
  quality; the server marks the regions that need detail and requests them
  over a feedback downlink; round two re-sends frames with those regions at
  high quality. Faithful in delay and bandwidth shape, not in the feedback
  heuristics of the system it is named after.
- reducto: temporal-only filtering on raw-pixel mean absolute difference.
  Profiling batches are sent unfiltered so the server can refit the
  threshold against ground truth; between profilings the fitted threshold
  filters at the source.
- uniform: every region at the same quality, no filtering.
- oracle: ground truth drives both the quality map and the frame dropping,
  bounding what semantic compression could achieve under this byte model.
"""

from __future__ import annotations

import numpy as np

from .labeling import label_regions
from .messages import BatchMessage, encode_message
from .metrics import FrameMetric, RunMetrics, match_boxes, response_delay
from .pipeline import PipelineConfig, _match_counts, _write_trace
from .scene import REGION_SIDE, SceneGenerator, teacher_detect
from .spatial import compress, qmap_to_pixel_quality
from .student import StudentNet
from .temporal import Partition, frame_difference, frame_features, partition_batch

FEEDBACK_HEADER_BYTES = 16
FEEDBACK_BYTES_PER_REGION = 4


def _cells_touching(truth_boxes, L):
    """(L, L) mask of cells overlapping any truth box at all."""
    mask = np.zeros((L, L), dtype=np.int8)
    for box in truth_boxes:
        j0 = max(box.x // REGION_SIDE, 0)
        j1 = min((box.x + box.w - 1) // REGION_SIDE, L - 1)
        i0 = max(box.y // REGION_SIDE, 0)
        i1 = min((box.y + box.h - 1) // REGION_SIDE, L - 1)
        mask[i0:i1 + 1, j0:j1 + 1] = 1
    return mask


def _runs_from_kept(kept, n, first):
    """Partition [first, first+n) into runs starting at each kept position."""
    parts = []
    for k, pos in enumerate(kept):
        hi = (kept[k + 1] - 1) if k + 1 < len(kept) else n - 1
        parts.append(Partition(lo=first + pos, hi=first + hi,
                               representative=first + pos))
    return parts


def run_dds_baseline(scene_cfg, net_cfg, pcfg: PipelineConfig, batches,
                     low_r=None, trace_dir=None):
    """Two-round feedback pipeline; high quality arrives a round late."""
    pcfg.validate()
    net_cfg.validate()
    low_r = pcfg.r if low_r is None else low_r
    generator = SceneGenerator(scene_cfg)
    metrics = RunMetrics(mode="dds", L=scene_cfg.L)
    n = pcfg.n_frames
    L = scene_cfg.L
    for b in range(batches):
        pairs = generator.batch(b * n, n)
        frames = [f for f, _ in pairs]
        first = frames[0].index
        # Round 1: everything low quality.
        all_lq = np.zeros((L, L), dtype=np.int8)
        singles = tuple(Partition(lo=first + i, hi=first + i,
                                  representative=first + i) for i in range(n))
        cfs1 = tuple(compress(f, all_lq, low_r) for f in frames)
        msg1 = BatchMessage(batch_index=b, student_version=0, first_frame=first,
                            n_frames=n, partitions=singles,
                            frames=cfs1).validate()
        bytes1 = msg1.modeled_bytes()
        _write_trace(trace_dir, f"batch_{b:04d}_round1.ssbm", encode_message(msg1))
        # Server pass 1 finds nothing usable and requests detail regions.
        requests = [_cells_touching(boxes, L) for _, boxes in pairs]
        feedback_bytes = FEEDBACK_HEADER_BYTES + FEEDBACK_BYTES_PER_REGION * int(
            sum(int(req.sum()) for req in requests))
        # Round 2: requested regions high quality, the rest low quality again.
        cfs2 = tuple(compress(f, req, low_r) for f, req in zip(frames, requests))
        msg2 = BatchMessage(batch_index=b, student_version=0, first_frame=first,
                            n_frames=n, partitions=singles,
                            frames=cfs2).validate()
        bytes2 = msg2.modeled_bytes()
        _write_trace(trace_dir, f"batch_{b:04d}_round2.ssbm", encode_message(msg2))
        metrics.uplink_bytes += bytes1 + bytes2
        metrics.downlink_bytes += feedback_bytes
        complete_ts = frames[-1].timestamp
        pass_time = n * net_cfg.server_s_per_frame
        for (frame, boxes), req in zip(pairs, requests):
            detected = teacher_detect(qmap_to_pixel_quality(req), boxes,
                                      pcfg.alpha)
            tp, fp, fn = _match_counts(detected, boxes, pcfg.iou_threshold)
            delay = response_delay(frame.timestamp, complete_ts,
                                   [(bytes1, pass_time), (bytes2, pass_time)],
                                   net_cfg)
            metrics.add_frame(FrameMetric(
                batch=b, frame_index=frame.index, tp=tp, fp=fp, fn=fn,
                delay=delay, bytes_attributed=(bytes1 + bytes2) / n,
                transmitted=True))
    return metrics


def _mad(a, b):
    return float(np.mean(np.abs(a.astype(np.float64) - b.astype(np.float64))))


def _simulate_mad_filter(pixel_stack, threshold):
    """Kept positions under keep-if-difference-to-last-kept-exceeds rule."""
    kept = [0]
    for i in range(1, len(pixel_stack)):
        if _mad(pixel_stack[i], pixel_stack[kept[-1]]) > threshold:
            kept.append(i)
    return kept


def _fit_mad_threshold(pixel_stack, truth_list, iou_threshold, f1_target):
    """Largest-filtering threshold whose replicated F1 stays on target."""
    diffs = sorted({_mad(pixel_stack[i], pixel_stack[i - 1])
                    for i in range(1, len(pixel_stack))})
    candidates = [0.0] + diffs + [diffs[-1] * 1.05 if diffs else 1.0]
    best = (0.0, -1)
    for cand in candidates:
        kept = _simulate_mad_filter(pixel_stack, cand)
        tp = fp = fn = 0
        last = 0
        for i in range(len(pixel_stack)):
            if i in kept:
                last = i
            t, f, m = _match_counts(truth_list[last], truth_list[i],
                                    iou_threshold)
            tp, fp, fn = tp + t, fp + f, fn + m
        denom = 2 * tp + fp + fn
        f1 = 2 * tp / denom if denom else 1.0
        filtered = len(pixel_stack) - len(kept)
        if f1 >= f1_target and filtered > best[1]:
            best = (cand, filtered)
    return best[0]


def run_reducto_baseline(scene_cfg, net_cfg, pcfg: PipelineConfig, batches,
                         profile_period=5, f1_target=0.9, trace_dir=None):
    """Pixel-difference filtering with periodic unfiltered profiling."""
    pcfg.validate()
    net_cfg.validate()
    if profile_period < 1:
        raise ValueError("profile period must be >= 1")
    generator = SceneGenerator(scene_cfg)
    metrics = RunMetrics(mode="reducto", L=scene_cfg.L)
    n = pcfg.n_frames
    L = scene_cfg.L
    all_hq = np.ones((L, L), dtype=np.int8)
    threshold = None
    for b in range(batches):
        profiling = b % profile_period == 0
        pairs = generator.batch(b * n, n)
        frames = [f for f, _ in pairs]
        pixel_stack = [f.pixels for f in frames]
        first = frames[0].index
        if profiling or threshold is None:
            kept = list(range(n))
        else:
            kept = _simulate_mad_filter(pixel_stack, threshold)
        parts = _runs_from_kept(kept, n, first)
        cfs = tuple(compress(frames[pos], all_hq, pcfg.r) for pos in kept)
        msg = BatchMessage(batch_index=b, student_version=0, first_frame=first,
                           n_frames=n, partitions=tuple(parts),
                           frames=cfs).validate()
        _write_trace(trace_dir, f"batch_{b:04d}.ssbm", encode_message(msg))
        msg_bytes = msg.modeled_bytes()
        metrics.uplink_bytes += msg_bytes
        if profiling:
            threshold = _fit_mad_threshold(pixel_stack,
                                           [boxes for _, boxes in pairs],
                                           pcfg.iou_threshold, f1_target)
        complete_ts = frames[-1].timestamp
        processing = len(kept) * net_cfg.server_s_per_frame
        kept_set = {first + pos for pos in kept}
        truth_by_index = {f.index: boxes for f, boxes in pairs}
        detections = {}
        for part in parts:
            rep_boxes = truth_by_index[part.representative]
            for idx in part.indices():
                detections[idx] = rep_boxes
        for frame, boxes in pairs:
            tp, fp, fn = _match_counts(detections[frame.index], boxes,
                                       pcfg.iou_threshold)
            delay = response_delay(frame.timestamp, complete_ts,
                                   [(msg_bytes, processing)], net_cfg)
            metrics.add_frame(FrameMetric(
                batch=b, frame_index=frame.index, tp=tp, fp=fp, fn=fn,
                delay=delay, bytes_attributed=msg_bytes / n,
                transmitted=frame.index in kept_set))
    return metrics


def run_uniform_baseline(scene_cfg, net_cfg, pcfg: PipelineConfig, batches,
                         r_uniform=2, trace_dir=None):
    """Every frame, every region, one quality level; r_uniform=1 is full."""
    pcfg.validate()
    net_cfg.validate()
    generator = SceneGenerator(scene_cfg)
    metrics = RunMetrics(mode="uniform", L=scene_cfg.L)
    n = pcfg.n_frames
    L = scene_cfg.L
    if r_uniform == 1:
        qmap = np.ones((L, L), dtype=np.int8)
        r = pcfg.r
    else:
        qmap = np.zeros((L, L), dtype=np.int8)
        r = r_uniform
    pixel_q = qmap_to_pixel_quality(qmap)
    for b in range(batches):
        pairs = generator.batch(b * n, n)
        frames = [f for f, _ in pairs]
        first = frames[0].index
        parts = tuple(Partition(lo=first + i, hi=first + i,
                                representative=first + i) for i in range(n))
        cfs = tuple(compress(f, qmap, r) for f in frames)
        msg = BatchMessage(batch_index=b, student_version=0, first_frame=first,
                           n_frames=n, partitions=parts, frames=cfs).validate()
        _write_trace(trace_dir, f"batch_{b:04d}.ssbm", encode_message(msg))
        msg_bytes = msg.modeled_bytes()
        metrics.uplink_bytes += msg_bytes
        complete_ts = frames[-1].timestamp
        processing = n * net_cfg.server_s_per_frame
        for frame, boxes in pairs:
            detected = teacher_detect(pixel_q, boxes, pcfg.alpha)
            tp, fp, fn = _match_counts(detected, boxes, pcfg.iou_threshold)
            delay = response_delay(frame.timestamp, complete_ts,
                                   [(msg_bytes, processing)], net_cfg)
            metrics.add_frame(FrameMetric(
                batch=b, frame_index=frame.index, tp=tp, fp=fp, fn=fn,
                delay=delay, bytes_attributed=msg_bytes / n,
                transmitted=True))
    return metrics


def _boxes_equivalent(a, b, iou_threshold):
    """True when the two box sets match one-to-one at the IoU threshold."""
    return len(a) == len(b) and len(match_boxes(a, b, iou_threshold)) == len(a)


def run_oracle(scene_cfg, net_cfg, pcfg: PipelineConfig, batches,
               trace_dir=None):
    """Ground-truth-driven compression; also emits redundancy statistics.

    Extras carry the per-frame object-region fraction and per-batch kept
    counts whose cumulative distributions mirror the redundancy argument
    for semantic compression.
    """
    pcfg.validate()
    net_cfg.validate()
    generator = SceneGenerator(scene_cfg)
    metrics = RunMetrics(mode="oracle", L=scene_cfg.L)
    n = pcfg.n_frames
    L = scene_cfg.L
    region_fraction = []
    kept_per_batch = []
    for b in range(batches):
        pairs = generator.batch(b * n, n)
        frames = [f for f, _ in pairs]
        truth_list = [boxes for _, boxes in pairs]
        first = frames[0].index
        labels = [label_regions(boxes, L, pcfg.overlap_mode)
                  for boxes in truth_list]
        region_fraction.extend(float(lab.mean()) for lab in labels)
        kept = [0]
        for i in range(1, n):
            if not _boxes_equivalent(truth_list[i], truth_list[kept[-1]],
                                     pcfg.iou_threshold):
                kept.append(i)
        kept_per_batch.append(len(kept))
        parts = _runs_from_kept(kept, n, first)
        cfs = tuple(compress(frames[pos], labels[pos], pcfg.r) for pos in kept)
        msg = BatchMessage(batch_index=b, student_version=0, first_frame=first,
                           n_frames=n, partitions=tuple(parts),
                           frames=cfs).validate()
        _write_trace(trace_dir, f"batch_{b:04d}.ssbm", encode_message(msg))
        msg_bytes = msg.modeled_bytes()
        metrics.uplink_bytes += msg_bytes
        complete_ts = frames[-1].timestamp
        processing = len(kept) * net_cfg.server_s_per_frame
        kept_set = {first + pos for pos in kept}
        detections = {}
        for part, pos in zip(parts, kept):
            boxes = teacher_detect(qmap_to_pixel_quality(labels[pos]),
                                   truth_list[pos], pcfg.alpha)
            for idx in part.indices():
                detections[idx] = boxes
        for frame, boxes in pairs:
            tp, fp, fn = _match_counts(detections[frame.index], boxes,
                                       pcfg.iou_threshold)
            delay = response_delay(frame.timestamp, complete_ts,
                                   [(msg_bytes, processing)], net_cfg)
            metrics.add_frame(FrameMetric(
                batch=b, frame_index=frame.index, tp=tp, fp=fp, fn=fn,
                delay=delay, bytes_attributed=msg_bytes / n,
                transmitted=frame.index in kept_set))
    metrics.extras["region_fraction"] = np.array(region_fraction)
    metrics.extras["kept_per_batch"] = np.array(kept_per_batch)
    return metrics


def calibrate_threshold(scene_cfg, student: StudentNet, pcfg: PipelineConfig,
                        batches=2, f1_target=0.9):
    """Largest temporal threshold whose replicated detections keep F1 on
    target over calibration batches; falls back to forcing singletons.

    Replication error is isolated from spatial effects: each candidate is
    scored as if representatives were sent at full quality.
    """
    generator = SceneGenerator(scene_cfg)
    n = pcfg.n_frames
    batch_data = []
    diffs = set()
    for b in range(batches):
        pairs = generator.batch(b * n, n)
        feats = [frame_features(f, student, scene_cfg.L) for f, _ in pairs]
        truth_list = [boxes for _, boxes in pairs]
        batch_data.append((feats, truth_list))
        for i in range(1, n):
            diffs.add(frame_difference(feats[i - 1], feats[i]))
    if not diffs:
        return 1.0
    candidates = sorted(diffs) + [max(diffs) * 1.05]
    feasible = min(candidates) / 2 if min(candidates) > 0 else 1e-9
    for cand in candidates:
        if cand <= 0:
            continue
        tp = fp = fn = 0
        for feats, truth_list in batch_data:
            parts = partition_batch(feats, cand)
            for part in parts:
                rep = part.representative
                for i in part.indices():
                    t, f, m = _match_counts(truth_list[rep], truth_list[i],
                                            pcfg.iou_threshold)
                    tp, fp, fn = tp + t, fp + f, fn + m
        denom = 2 * tp + fp + fn
        f1 = 2 * tp / denom if denom else 1.0
        if f1 >= f1_target:
            feasible = cand
    return feasible
