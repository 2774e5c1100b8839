"""Distillation training loops: pretraining and drift-time retraining.

Training data is (regions, labels) arrays produced by labeling generated
frames. Background cells vastly outnumber object cells, so negatives are
subsampled to a configurable ratio once per run; minibatch SGD then
minimizes the mean binary cross-entropy. With freeze_encoder set only the
extension moves, and the encoder is bit-identical afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrainingError
from .labeling import distill_loss, distill_loss_grad, label_regions
from .scene import SceneGenerator, grid_split
from .student import StudentNet


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 20
    minibatch: int = 64
    freeze_encoder: bool = False
    seed: int = 0
    negative_subsample_ratio: float = 3.0
    verbatim_loss: bool = False

    def validate(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.epochs < 1 or self.minibatch < 1:
            raise ValueError("epochs and minibatch must be >= 1")
        if self.negative_subsample_ratio < 0:
            raise ValueError("negative subsample ratio must be >= 0")
        return self


def _training_pool(regions, labels, cfg, rng):
    labels = np.asarray(labels).reshape(-1)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise TrainingError("training set must contain both classes")
    if cfg.negative_subsample_ratio > 0:
        keep = int(round(cfg.negative_subsample_ratio * len(pos)))
        if keep < len(neg):
            neg = rng.choice(neg, size=keep, replace=False)
    idx = np.concatenate([pos, neg])
    rng.shuffle(idx)
    return regions[idx], labels[idx]


def train_student(student: StudentNet, regions, labels, cfg: TrainConfig):
    """Minibatch SGD on the distillation loss; returns (student, loss trace).

    The trace has one entry per epoch: mean per-region loss over the
    training pool after that epoch. The student is updated in place and its
    version incremented once.
    """
    cfg.validate()
    regions = np.asarray(regions, dtype=student.dtype)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 17]))
    pool_x, pool_t = _training_pool(regions, labels, cfg, rng)
    n = len(pool_x)
    if cfg.freeze_encoder:
        # Frozen encoder means constant features: compute them once and
        # train the extension on features directly. Bit-identical to the
        # slow path because no encoder parameter ever moves.
        pool_x = student.encode(pool_x)
    trace = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch):
            sel = order[lo:lo + cfg.minibatch]
            xb, tb = pool_x[sel], pool_t[sel]
            if cfg.freeze_encoder:
                post = student.extension.forward(xb, keep_cache=True)[:, 0]
            else:
                post = student.forward_train(xb)
            dpost = distill_loss_grad(tb, post, verbatim=cfg.verbatim_loss)
            dpost = (dpost / len(sel)).astype(student.dtype)
            if cfg.freeze_encoder:
                student.extension.backward(dpost[:, None])
                student.extension.apply_gradients(cfg.learning_rate)
            else:
                student.backward(dpost)
                student.apply_gradients(cfg.learning_rate)
        if cfg.freeze_encoder:
            post = student.extend(pool_x)
        else:
            post = student.infer(pool_x)
        trace.append(distill_loss(pool_t, post, verbatim=cfg.verbatim_loss) / n)
    student.version += 1
    return student, trace


def labeled_regions_from_scene(scene_cfg, frame_count, stride=1, start=0,
                               overlap_mode="coverage"):
    """Generate frames, split them, and label every cell.

    Returns (regions, labels) with regions flattened to (count*L*L, 28, 28, 3).
    """
    gen = SceneGenerator(scene_cfg)
    xs, ts = [], []
    for k in range(frame_count):
        frame, boxes = gen.frame(start + k * stride)
        grid = grid_split(frame.pixels, scene_cfg.L)
        xs.append(grid.reshape(-1, 28, 28, 3))
        ts.append(label_regions(boxes, scene_cfg.L, overlap_mode).reshape(-1))
    return np.concatenate(xs), np.concatenate(ts)


def pretrain(student: StudentNet, scene_specs, cfg: TrainConfig,
             overlap_mode="coverage"):
    """Train on frames drawn from several historical scenes.

    `scene_specs` is a list of (SceneConfig, frame_count, stride) triples.
    Returns (student, loss trace).
    """
    if not scene_specs:
        raise TrainingError("pretraining needs at least one scene")
    xs, ts = [], []
    for scene_cfg, frame_count, stride in scene_specs:
        x, t = labeled_regions_from_scene(scene_cfg, frame_count, stride,
                                          overlap_mode=overlap_mode)
        xs.append(x)
        ts.append(t)
    return train_student(student, np.concatenate(xs), np.concatenate(ts), cfg)


def evaluate_student(student: StudentNet, regions, labels):
    """Held-out accuracy and positive recall at the 0.5 posterior cut."""
    labels = np.asarray(labels).reshape(-1)
    post = student.infer(np.asarray(regions, dtype=student.dtype))
    pred = (post > 0.5).astype(np.int8)
    accuracy = float((pred == labels).mean())
    pos = labels == 1
    recall = float((pred[pos] == 1).mean()) if pos.any() else 1.0
    return accuracy, recall
