"""End-to-end simulation: source node, server node, and the run loop.

Per batch the source filters temporally, compresses representatives, and
sends one BatchMessage uplink. The server reconstructs, detects with the
coverage oracle, replicates results across each partition, and watches the
hit-rate of its student replica on teacher-positive regions. When the
hit-rate drops below delta it retrains (extension first, full network only
if that fails validation) and ships the update downlink; the source applies
it at the next batch boundary.

The server is an oracle in two places, both stand-ins for full-scale
components: its detector reads ground truth gated by reconstruction
quality, and its retraining data is regenerated at full quality from the
scene (a real deployment would archive received frames; representatives the
student got right are bit-exact anyway).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import ResyncError, TrainingError
from .labeling import label_regions
from .messages import BatchMessage, UpdateMessage, encode_message, encode_update
from .metrics import FrameMetric, RunMetrics, match_boxes, response_delay
from .scene import REGION_SIDE, SceneGenerator, grid_split, teacher_detect
from .spatial import compress, qmap_to_pixel_quality, reconstruct
from .student import StudentNet
from .temporal import Partition, frame_features, partition_batch
from .training import TrainConfig, train_student


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs shared by the run loop and both nodes."""

    n_frames: int = 30
    th: float = 1.0
    r: int = 4
    delta: float = 0.8
    alpha: float = 0.5
    overlap_mode: str = "coverage"
    iou_threshold: float = 0.5
    drift_window: int = 2
    update_epochs: int = 5
    update_lr: float = 0.01
    enable_updates: bool = True
    seed: int = 0

    def validate(self):
        if self.n_frames < 1:
            raise ValueError("batch size must be >= 1")
        if self.th <= 0:
            raise ValueError("temporal threshold must be positive")
        if not 0.0 <= self.delta <= 1.0 or not 0.0 <= self.alpha <= 1.0:
            raise ValueError("delta and alpha must lie in [0,1]")
        return self


def _match_counts(predicted, truth, iou_threshold):
    tp = len(match_boxes(predicted, truth, iou_threshold))
    return tp, len(predicted) - tp, len(truth) - tp


def _singleton_partitions(n):
    return [Partition(lo=i, hi=i, representative=i) for i in range(n)]


def source_process_batch(frames, student, pcfg: PipelineConfig,
                         use_temporal=True, use_spatial=True, batch_index=0):
    """Filter, classify, and compress one batch into a BatchMessage.

    Region features feed both the temporal filter and, through the
    extension, the quality map, so each region is inferred exactly once.
    """
    n = len(frames)
    first = frames[0].index
    L = frames[0].pixels.shape[0] // REGION_SIDE
    feats = [frame_features(f, student, L) for f in frames]
    if use_temporal:
        rel_parts = partition_batch(feats, pcfg.th)
    else:
        rel_parts = _singleton_partitions(n)
    partitions, cfs = [], []
    for part in rel_parts:
        rep_pos = part.representative
        if use_spatial:
            post = student.extend(feats[rep_pos].features.reshape(-1, 128))
            qmap = (post.reshape(L, L) > 0.5).astype(np.int8)
        else:
            qmap = np.ones((L, L), dtype=np.int8)
        cfs.append(compress(frames[rep_pos], qmap, pcfg.r))
        partitions.append(Partition(lo=first + part.lo, hi=first + part.hi,
                                    representative=first + rep_pos))
    msg = BatchMessage(batch_index=batch_index, student_version=student.version,
                       first_frame=first, n_frames=n,
                       partitions=tuple(partitions), frames=tuple(cfs))
    return msg.validate()


class ServerNode:
    """Server state: student replica, drift bookkeeping, oracle detector."""

    def __init__(self, student: StudentNet, generator: SceneGenerator,
                 pcfg: PipelineConfig):
        self.student = student
        self.generator = generator
        self.pcfg = pcfg
        self.L = generator.config.L
        self.hit_history = []
        self.update_log = []
        self._recent_reps = []

    def _detect(self, cf, truth_boxes):
        pixel_q = qmap_to_pixel_quality(cf.qmap)
        return teacher_detect(pixel_q, truth_boxes, self.pcfg.alpha)

    def _hit_stats(self, cf, truth_boxes):
        """(hits, positives) for one representative, on the server's view."""
        labels = label_regions(truth_boxes, self.L, self.pcfg.overlap_mode)
        positives = labels.reshape(-1).astype(bool)
        if not positives.any():
            return 0, 0
        pixels = reconstruct(cf)
        grid = grid_split(pixels, self.L).reshape(-1, REGION_SIDE, REGION_SIDE, 3)
        post = self.student.infer(grid[positives])
        return int((post > 0.5).sum()), int(positives.sum())

    def _training_arrays(self, window):
        xs, ts = [], []
        for batch_reps in self._recent_reps[-window:]:
            for frame_index, truth_boxes in batch_reps:
                frame, _ = self.generator.frame(frame_index)
                grid = grid_split(frame.pixels, self.L)
                xs.append(grid.reshape(-1, REGION_SIDE, REGION_SIDE, 3))
                ts.append(label_regions(truth_boxes, self.L,
                                        self.pcfg.overlap_mode).reshape(-1))
        return np.concatenate(xs), np.concatenate(ts)

    def _validation_hit_rate(self, regions, labels):
        positives = np.asarray(labels).reshape(-1).astype(bool)
        if not positives.any():
            return 1.0
        post = self.student.infer(regions[positives])
        return float((post > 0.5).mean())

    def _retrain(self, batch_index):
        """Extension-only retraining, escalating to full on failed validation."""
        try:
            regions, labels = self._training_arrays(self.pcfg.drift_window)
            base = TrainConfig(learning_rate=self.pcfg.update_lr,
                               epochs=self.pcfg.update_epochs,
                               seed=self.pcfg.seed + batch_index)
            train_student(self.student, regions, labels,
                          replace(base, freeze_encoder=True))
            scope = "extension_only"
            # Validated on the frames just trained on; escalation retrains
            # everything with a larger budget.
            if self._validation_hit_rate(regions, labels) < self.pcfg.delta:
                train_student(self.student, regions, labels,
                              replace(base, epochs=4 * base.epochs))
                scope = "full"
        except TrainingError:
            # Degenerate window (one class only): postpone by one batch.
            return None
        payload = self.student.save_checkpoint(scope)
        self.update_log.append((batch_index, scope))
        return UpdateMessage(scope=scope, new_version=self.student.version,
                             payload=payload).validate()

    def process_batch(self, msg: BatchMessage, truth_by_index):
        """Detections per frame, drift stats, and an optional update."""
        if msg.student_version != self.student.version:
            raise ResyncError(
                f"message built with student v{msg.student_version}, "
                f"server holds v{self.student.version}")
        detections = {}
        hits = positives = 0
        batch_reps = []
        for part, cf in zip(msg.partitions, msg.frames):
            rep_truth = truth_by_index[part.representative]
            boxes = self._detect(cf, rep_truth)
            for idx in part.indices():
                detections[idx] = boxes
            h, p = self._hit_stats(cf, rep_truth)
            hits += h
            positives += p
            batch_reps.append((part.representative, rep_truth))
        self._recent_reps.append(batch_reps)
        hit_rate = hits / positives if positives else 1.0
        self.hit_history.append((msg.batch_index, hit_rate))
        update = None
        if self.pcfg.enable_updates and hit_rate < self.pcfg.delta:
            update = self._retrain(msg.batch_index)
        return detections, hit_rate, update


def _write_trace(trace_dir, name, raw):
    if trace_dir is None:
        return
    os.makedirs(trace_dir, exist_ok=True)
    with open(os.path.join(trace_dir, name), "wb") as fh:
        fh.write(raw)


def run_ltc(scene_cfg, student: StudentNet, net_cfg, pcfg: PipelineConfig,
            batches, use_temporal=True, use_spatial=True, trace_dir=None,
            mode_name=None):
    """Full source/server loop; returns RunMetrics. Caller's student is
    never mutated (both nodes run on clones)."""
    pcfg.validate()
    net_cfg.validate()
    generator = SceneGenerator(scene_cfg)
    source_student = student.clone()
    server = ServerNode(student.clone(), generator, pcfg)
    if mode_name is None:
        mode_name = {(True, True): "ltc", (False, True): "ltc-spatial",
                     (True, False): "ltc-temporal"}[(use_temporal, use_spatial)]
    metrics = RunMetrics(mode=mode_name, L=scene_cfg.L)
    n = pcfg.n_frames
    pending = None
    for b in range(batches):
        if pending is not None:
            source_student.apply_update(pending.payload)
            pending = None
        pairs = generator.batch(b * n, n)
        frames = [f for f, _ in pairs]
        truth = {f.index: boxes for f, boxes in pairs}
        msg = source_process_batch(frames, source_student, pcfg,
                                   use_temporal, use_spatial, batch_index=b)
        raw = encode_message(msg)
        _write_trace(trace_dir, f"batch_{b:04d}.ssbm", raw)
        msg_bytes = msg.modeled_bytes()
        metrics.uplink_bytes += msg_bytes
        detections, hit_rate, update = server.process_batch(msg, truth)
        reps = {p.representative for p in msg.partitions}
        complete_ts = frames[-1].timestamp
        processing = len(msg.partitions) * net_cfg.server_s_per_frame
        src_time = scene_cfg.L ** 2 * net_cfg.source_s_per_region
        for frame, boxes in pairs:
            tp, fp, fn = _match_counts(detections[frame.index], boxes,
                                       pcfg.iou_threshold)
            delay = response_delay(frame.timestamp, complete_ts,
                                   [(msg_bytes, processing)], net_cfg,
                                   source_compute=src_time)
            metrics.add_frame(FrameMetric(
                batch=b, frame_index=frame.index, tp=tp, fp=fp, fn=fn,
                delay=delay, bytes_attributed=msg_bytes / n,
                transmitted=frame.index in reps))
        if update is not None:
            raw_update = encode_update(update)
            _write_trace(trace_dir, f"update_{b:04d}.ssum", raw_update)
            metrics.downlink_bytes += update.modeled_bytes()
            pending = update
    metrics.update_log = list(server.update_log)
    metrics.hit_history = list(server.hit_history)
    return metrics
