"""Network delay model and evaluation metrics.

Three run-level metrics: detection F1 (greedy IoU matching against ground
truth), normalized bandwidth (bytes on the wire over the cost of sending
everything at full quality), and response delay (accumulation wait plus
transmission, server processing, and any feedback rounds). All pure
computations over run records; nothing here touches sockets or clocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scene import iou
from .spatial import FRAME_HEADER_BYTES, REGION_SIDE

# Teacher-side detector budget: 2 frames/second.
DEFAULT_SERVER_SECONDS_PER_FRAME = 0.5
# Student budget: 65 frames/second over a 16x16 region grid.
DEFAULT_SOURCE_SECONDS_PER_REGION = 1.0 / (65.0 * 256.0)


@dataclass(frozen=True)
class NetworkConfig:
    """Link and compute budget for one simulated deployment."""

    bandwidth_bps: float
    latency_s: float
    server_s_per_frame: float = DEFAULT_SERVER_SECONDS_PER_FRAME
    source_s_per_region: float = DEFAULT_SOURCE_SECONDS_PER_REGION

    def validate(self):
        if min(self.bandwidth_bps, self.latency_s, self.server_s_per_frame,
               self.source_s_per_region) <= 0:
            raise ValueError("network config values must be positive")
        return self


CONSTRAINED_NETWORK = NetworkConfig(bandwidth_bps=1.2e6, latency_s=0.100)
RICH_NETWORK = NetworkConfig(bandwidth_bps=100e6, latency_s=0.020)


def transmit_time(n_bytes, cfg: NetworkConfig) -> float:
    """Serialization plus one-way propagation for a payload."""
    if n_bytes < 0:
        raise ValueError("byte count must be >= 0")
    return n_bytes * 8.0 / cfg.bandwidth_bps + cfg.latency_s


@dataclass(frozen=True)
class DelayBreakdown:
    """Named components of one frame's response delay."""

    accumulation: float
    transmit: float
    processing: float
    feedback: float
    source_compute: float = 0.0

    @property
    def total(self):
        return (self.accumulation + self.transmit + self.processing
                + self.feedback + self.source_compute)


def response_delay(frame_timestamp, batch_complete_timestamp, round_payloads,
                   cfg: NetworkConfig, source_compute=0.0) -> DelayBreakdown:
    """Delay from a frame's capture to its analysis result being ready.

    `round_payloads` is one (uplink bytes, server processing seconds) pair
    per round; single-round pipelines pass one pair. Each round costs an
    uplink transmit plus processing; every round after the first also costs
    a feedback downlink latency.
    """
    rounds = list(round_payloads)
    if not rounds:
        raise ValueError("need at least one round")
    accumulation = batch_complete_timestamp - frame_timestamp
    if accumulation < 0:
        raise ValueError("frame timestamp is after batch completion")
    transmit = sum(transmit_time(b, cfg) for b, _ in rounds)
    processing = sum(p for _, p in rounds)
    feedback = (len(rounds) - 1) * cfg.latency_s
    return DelayBreakdown(accumulation=accumulation, transmit=transmit,
                          processing=processing, feedback=feedback,
                          source_compute=source_compute)


def match_boxes(predicted, truth, iou_threshold=0.5):
    """Greedy one-to-one matching by descending IoU.

    Returns (pred index, truth index, iou) triples; each box on either side
    is used at most once. Deterministic: ties break on (pred, truth) order.
    """
    pairs = []
    for pi, p in enumerate(predicted):
        for ti, t in enumerate(truth):
            v = iou(p, t)
            if v >= iou_threshold:
                pairs.append((-v, pi, ti))
    pairs.sort()
    used_p, used_t, matches = set(), set(), []
    for nv, pi, ti in pairs:
        if pi in used_p or ti in used_t:
            continue
        used_p.add(pi)
        used_t.add(ti)
        matches.append((pi, ti, -nv))
    return matches


def f1_score(predicted, truth, iou_threshold=0.5):
    """(precision, recall, F1) under greedy IoU matching.

    Both sets empty counts as perfect agreement (1, 1, 1). Empty
    predictions against nonempty truth score 0; spurious predictions
    against empty truth zero the precision and hence the F1.
    """
    if not predicted and not truth:
        return 1.0, 1.0, 1.0
    tp = len(match_boxes(predicted, truth, iou_threshold))
    precision = tp / len(predicted) if predicted else 0.0
    recall = tp / len(truth) if truth else 1.0
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def normalized_bandwidth(total_bytes, reference_bytes) -> float:
    if reference_bytes <= 0:
        raise ValueError("reference byte count must be positive")
    return total_bytes / reference_bytes


def reference_frame_bytes(L) -> int:
    """Byte cost of one all-HQ frame under the sample-count model."""
    return (L * L * REGION_SIDE * REGION_SIDE * 3
            + (L * L + 7) // 8 + FRAME_HEADER_BYTES)


@dataclass
class FrameMetric:
    """Evaluation record for one source frame."""

    batch: int
    frame_index: int
    tp: int
    fp: int
    fn: int
    delay: DelayBreakdown
    bytes_attributed: float
    transmitted: bool

    @property
    def f1(self):
        p = self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0
        r = self.tp / (self.tp + self.fn) if self.tp + self.fn else 1.0
        if self.tp + self.fp + self.fn == 0:
            return 1.0
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class RunMetrics:
    """Everything measured over one simulated run."""

    mode: str
    L: int
    frames: list = field(default_factory=list)
    uplink_bytes: int = 0
    downlink_bytes: int = 0
    update_log: list = field(default_factory=list)
    hit_history: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def add_frame(self, fm: FrameMetric):
        self.frames.append(fm)

    @property
    def frame_count(self):
        return len(self.frames)

    @property
    def transmitted_count(self):
        return sum(1 for f in self.frames if f.transmitted)

    @property
    def filtered_fraction(self):
        if not self.frames:
            return 0.0
        return 1.0 - self.transmitted_count / len(self.frames)

    @property
    def reference_bytes(self):
        return len(self.frames) * reference_frame_bytes(self.L)

    @property
    def normalized_bandwidth(self):
        return normalized_bandwidth(
            self.uplink_bytes + self.downlink_bytes, self.reference_bytes)

    def micro_f1(self):
        """F1 from run totals of TP/FP/FN (micro average)."""
        tp = sum(f.tp for f in self.frames)
        fp = sum(f.fp for f in self.frames)
        fn = sum(f.fn for f in self.frames)
        if tp + fp + fn == 0:
            return 1.0
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 1.0
        return 2 * p * r / (p + r) if p + r else 0.0

    def delay_stats(self):
        totals = [f.delay.total for f in self.frames]
        if not totals:
            return {"mean": 0.0, "median": 0.0, "p95": 0.0}
        return {
            "mean": float(np.mean(totals)),
            "median": float(np.median(totals)),
            "p95": float(np.percentile(totals, 95)),
        }

    def summary(self):
        stats = self.delay_stats()
        return {
            "mode": self.mode,
            "frames": self.frame_count,
            "micro_f1": self.micro_f1(),
            "normalized_bandwidth": self.normalized_bandwidth,
            "uplink_bytes": self.uplink_bytes,
            "downlink_bytes": self.downlink_bytes,
            "filtered_fraction": self.filtered_fraction,
            "mean_delay": stats["mean"],
            "median_delay": stats["median"],
            "p95_delay": stats["p95"],
            "updates_extension": sum(1 for _, s in self.update_log
                                     if s == "extension_only"),
            "updates_full": sum(1 for _, s in self.update_log if s == "full"),
        }
