"""Synthetic video scenes with exact ground truth.

A scene is a 28L x 28L canvas: a textured background with optional per-frame
additive noise, plus textured rectangles or ellipses that spawn, move with
constant velocity, and leave the canvas. Frames are pure functions of
(config, frame index), so any frame range can be regenerated independently
and bit-identically. Also home to the grid splitter, box IoU, and the
coverage-oracle detector that stands in for a server-side model.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ShapeError

REGION_SIDE = 28

# Seed-stream tags so every random purpose draws from its own generator.
_STREAM_BG = 1
_STREAM_OBJ = 2
_STREAM_NOISE = 3
_STREAM_TEX = 4

TEXTURE_KINDS = ("flat", "stripes", "checker", "gradient", "speckle")
SHAPE_KINDS = ("rect", "ellipse", "mixed")


@dataclass(frozen=True)
class TextureSpec:
    """Procedural texture: two colors arranged by `kind` at pixel `scale`."""

    kind: str = "flat"
    color_a: tuple = (0.5, 0.5, 0.5)
    color_b: tuple = (0.5, 0.5, 0.5)
    scale: int = 8
    axis: int = 0
    seed_tag: int = 0

    def validate(self):
        if self.kind not in TEXTURE_KINDS:
            raise ValueError(f"unknown texture kind {self.kind!r}")
        if self.scale < 1:
            raise ValueError("texture scale must be >= 1")
        for c in (*self.color_a, *self.color_b):
            if not 0.0 <= c <= 1.0:
                raise ValueError("texture colors must lie in [0,1]")


@dataclass(frozen=True)
class ObjectSpec:
    """One stream of objects sharing appearance and motion statistics."""

    size_range: tuple = (40, 80)
    vx_range: tuple = (0.0, 0.0)
    vy_range: tuple = (0.0, 0.0)
    texture: TextureSpec = field(default_factory=TextureSpec)
    shape: str = "rect"
    initial: int = 1
    spawn_rate: float = 0.0
    max_live: int = 8

    def validate(self, canvas):
        lo, hi = self.size_range
        if not (1 <= lo <= hi <= canvas):
            raise ValueError(f"size range {self.size_range} outside [1, {canvas}]")
        if self.shape not in SHAPE_KINDS:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.initial < 0 or self.spawn_rate < 0 or self.max_live < 1:
            raise ValueError("initial/spawn_rate must be >= 0 and max_live >= 1")
        self.texture.validate()


@dataclass(frozen=True)
class DriftEvent:
    """Scheduled appearance change taking effect at `frame` (inclusive)."""

    frame: int
    background: TextureSpec | None = None
    object_texture: TextureSpec | None = None
    noise_amp: float | None = None


@dataclass(frozen=True)
class SceneConfig:
    L: int = 16
    fps: int = 30
    seed: int = 0
    background: TextureSpec = field(default_factory=TextureSpec)
    noise_amp: float = 0.0
    objects: tuple = ()
    drift_schedule: tuple = ()

    @property
    def canvas(self):
        return REGION_SIDE * self.L

    def validate(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.fps < 1:
            raise ValueError("fps must be >= 1")
        if not 0.0 <= self.noise_amp < 0.5:
            raise ValueError("noise amplitude must lie in [0, 0.5)")
        self.background.validate()
        for spec in self.objects:
            spec.validate(self.canvas)
        frames = [e.frame for e in self.drift_schedule]
        if frames != sorted(frames):
            raise ValueError("drift schedule must be ordered by frame index")
        for e in self.drift_schedule:
            if e.background is not None:
                e.background.validate()
            if e.object_texture is not None:
                e.object_texture.validate()
            if e.noise_amp is not None and not 0.0 <= e.noise_amp < 0.5:
                raise ValueError("drift noise amplitude must lie in [0, 0.5)")
        return self


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, top-left origin: x is column, y is row."""

    x: int
    y: int
    w: int
    h: int
    object_id: int = -1

    @property
    def area(self):
        return self.w * self.h


@dataclass(frozen=True)
class Frame:
    pixels: np.ndarray
    index: int
    timestamp: float


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes, in [0,1]."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def grid_split(pixels, L):
    """Split a 28L x 28L x 3 frame into an (L, L, 28, 28, 3) region grid.

    Region (i, j) covers pixel rows [28i, 28i+28) and columns [28j, 28j+28).
    """
    if isinstance(pixels, Frame):
        pixels = pixels.pixels
    pixels = np.asarray(pixels)
    side = REGION_SIDE * L
    if pixels.shape != (side, side, 3):
        raise ShapeError(f"expected ({side},{side},3) frame for L={L}, got {pixels.shape}")
    grid = pixels.reshape(L, REGION_SIDE, L, REGION_SIDE, 3)
    return np.ascontiguousarray(grid.transpose(0, 2, 1, 3, 4))


def grid_join(regions):
    """Inverse of grid_split: (L, L, 28, 28, 3) -> 28L x 28L x 3."""
    regions = np.asarray(regions)
    L = regions.shape[0]
    if regions.shape != (L, L, REGION_SIDE, REGION_SIDE, 3):
        raise ShapeError(f"expected (L,L,28,28,3) region grid, got {regions.shape}")
    return np.ascontiguousarray(
        regions.transpose(0, 2, 1, 3, 4).reshape(L * REGION_SIDE, L * REGION_SIDE, 3))


def teacher_detect(pixel_quality, truth_boxes, alpha=0.5):
    """Boxes whose high-quality pixel coverage fraction is >= alpha.

    `pixel_quality` is an (H, W) array of {0,1} aligned with the frame. A
    fully high-quality frame returns every truth box. Stands in for a
    server-side detector that sees degraded regions as undetectable.
    """
    q = np.asarray(pixel_quality)
    if q.ndim != 2:
        raise ShapeError(f"expected (H,W) quality map, got {q.shape}")
    out = []
    for box in truth_boxes:
        patch = q[box.y:box.y + box.h, box.x:box.x + box.w]
        if patch.size and float(patch.mean()) >= alpha:
            out.append(box)
    return out


def _texture_field(tex: TextureSpec, h, w, rng):
    """Render a texture to an (h, w, 3) float32 field in [0,1]."""
    a = np.asarray(tex.color_a, dtype=np.float32)
    b = np.asarray(tex.color_b, dtype=np.float32)
    if tex.kind == "flat":
        return np.broadcast_to(a, (h, w, 3)).copy()
    ys, xs = np.mgrid[0:h, 0:w]
    if tex.kind == "stripes":
        coord = xs if tex.axis == 0 else ys
        phase = int(rng.integers(0, tex.scale))
        mask = ((coord + phase) // tex.scale) % 2
    elif tex.kind == "checker":
        py = int(rng.integers(0, tex.scale))
        px = int(rng.integers(0, tex.scale))
        mask = (((ys + py) // tex.scale) + ((xs + px) // tex.scale)) % 2
    elif tex.kind == "gradient":
        coord = xs if tex.axis == 0 else ys
        span = max(w if tex.axis == 0 else h, 2) - 1
        u = (coord / span).astype(np.float32)[:, :, None]
        return (a * (1 - u) + b * u).astype(np.float32)
    elif tex.kind == "speckle":
        u = rng.random((h, w, 1), dtype=np.float32)
        return (a * (1 - u) + b * u).astype(np.float32)
    else:
        raise ValueError(f"unknown texture kind {tex.kind!r}")
    field3 = np.where(mask[:, :, None].astype(bool), b, a)
    return field3.astype(np.float32)


@dataclass(frozen=True)
class _ObjectRecord:
    object_id: int
    stream: int
    index: int
    spawn: int
    exit: float
    x0: int
    y0: int
    vx: float
    vy: float
    w: int
    h: int
    shape: str


class SceneGenerator:
    """Deterministic frame source for one SceneConfig."""

    def __init__(self, config: SceneConfig):
        config.validate()
        self.config = config
        self._records = []
        self._horizon = -1
        self._bg_cache = {}
        self._patch_cache = {}

    # -- drift bookkeeping -------------------------------------------------

    def _effective(self, t):
        bg = self.config.background
        obj_tex = None
        amp = self.config.noise_amp
        for event in self.config.drift_schedule:
            if event.frame > t:
                break
            if event.background is not None:
                bg = event.background
            if event.object_texture is not None:
                obj_tex = event.object_texture
            if event.noise_amp is not None:
                amp = event.noise_amp
        return bg, obj_tex, amp

    # -- object schedule ---------------------------------------------------

    def _spawn_time(self, spec: ObjectSpec, i):
        if i < spec.initial:
            return 0
        if spec.spawn_rate <= 0:
            return None
        return int(math.ceil((i - spec.initial + 1) / spec.spawn_rate))

    def _exit_time(self, x0, y0, vx, vy, w, h):
        canvas = self.config.canvas
        times = []
        for pos, v, extent in ((x0, vx, w), (y0, vy, h)):
            if v > 0:
                times.append((canvas - pos) / v)
            elif v < 0:
                times.append((pos + extent) / (-v))
        return min(times) if times else math.inf

    def _extend_schedule(self, t):
        """Materialize all objects spawning at or before frame t."""
        if t <= self._horizon:
            return
        cfg = self.config
        for k, spec in enumerate(cfg.objects):
            live = []
            existing = max(
                (r.index for r in self._records if r.stream == k), default=-1)
            # Rebuild the per-stream live heap from already-admitted records.
            for r in self._records:
                if r.stream == k:
                    heapq.heappush(live, r.spawn + r.exit)
            i = existing + 1
            while True:
                spawn = self._spawn_time(spec, i)
                if spawn is None or spawn > t:
                    break
                rng = np.random.default_rng(
                    np.random.SeedSequence([cfg.seed, _STREAM_OBJ, k, i]))
                w = int(rng.integers(spec.size_range[0], spec.size_range[1] + 1))
                h = int(rng.integers(spec.size_range[0], spec.size_range[1] + 1))
                x0 = int(rng.integers(0, cfg.canvas - w + 1))
                y0 = int(rng.integers(0, cfg.canvas - h + 1))
                vx = float(rng.uniform(*spec.vx_range))
                vy = float(rng.uniform(*spec.vy_range))
                shape = spec.shape
                if shape == "mixed":
                    shape = "rect" if rng.integers(0, 2) == 0 else "ellipse"
                while live and live[0] <= spawn:
                    heapq.heappop(live)
                if len(live) < spec.max_live:
                    exit_t = self._exit_time(x0, y0, vx, vy, w, h)
                    self._records.append(_ObjectRecord(
                        object_id=k * 1_000_000 + i, stream=k, index=i,
                        spawn=spawn, exit=exit_t, x0=x0, y0=y0, vx=vx, vy=vy,
                        w=w, h=h, shape=shape))
                    heapq.heappush(live, spawn + exit_t)
                i += 1
        self._horizon = t

    def _live_records(self, t):
        self._extend_schedule(t)
        return [r for r in self._records if r.spawn <= t < r.spawn + r.exit]

    # -- rendering ---------------------------------------------------------

    def _background(self, tex: TextureSpec):
        key = tex
        if key not in self._bg_cache:
            rng = np.random.default_rng(np.random.SeedSequence(
                [self.config.seed, _STREAM_BG, tex.seed_tag]))
            side = self.config.canvas
            self._bg_cache[key] = _texture_field(tex, side, side, rng)
        return self._bg_cache[key]

    def _patch(self, rec: _ObjectRecord, tex: TextureSpec):
        key = (rec.object_id, tex)
        if key not in self._patch_cache:
            rng = np.random.default_rng(np.random.SeedSequence(
                [self.config.seed, _STREAM_TEX, rec.stream, rec.index, tex.seed_tag]))
            patch = _texture_field(tex, rec.h, rec.w, rng)
            if rec.shape == "ellipse":
                ys, xs = np.mgrid[0:rec.h, 0:rec.w]
                cy, cx = (rec.h - 1) / 2.0, (rec.w - 1) / 2.0
                ry, rx = max(rec.h / 2.0, 0.5), max(rec.w / 2.0, 0.5)
                mask = ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0
            else:
                mask = np.ones((rec.h, rec.w), dtype=bool)
            self._patch_cache[key] = (patch, mask)
        return self._patch_cache[key]

    def frame(self, t):
        """Render frame t; returns (Frame, list of BoundingBox)."""
        if t < 0:
            raise ShapeError("frame index must be >= 0")
        cfg = self.config
        bg_tex, obj_tex_override, amp = self._effective(t)
        canvas = self._background(bg_tex).copy()
        side = cfg.canvas
        boxes = []
        for rec in sorted(self._live_records(t), key=lambda r: r.object_id):
            tau = t - rec.spawn
            x = int(round(rec.x0 + rec.vx * tau))
            y = int(round(rec.y0 + rec.vy * tau))
            x1, y1 = max(x, 0), max(y, 0)
            x2, y2 = min(x + rec.w, side), min(y + rec.h, side)
            if x2 <= x1 or y2 <= y1:
                continue
            tex = obj_tex_override or cfg.objects[rec.stream].texture
            patch, mask = self._patch(rec, tex)
            sub = patch[y1 - y:y2 - y, x1 - x:x2 - x]
            submask = mask[y1 - y:y2 - y, x1 - x:x2 - x]
            target = canvas[y1:y2, x1:x2]
            target[submask] = sub[submask]
            boxes.append(BoundingBox(x=x1, y=y1, w=x2 - x1, h=y2 - y1,
                                     object_id=rec.object_id))
        if amp > 0:
            rng = np.random.default_rng(np.random.SeedSequence(
                [cfg.seed, _STREAM_NOISE, t]))
            noise = rng.uniform(-amp, amp, size=canvas.shape).astype(np.float32)
            canvas = np.clip(canvas + noise, 0.0, 1.0)
        frame = Frame(pixels=canvas.astype(np.float32), index=t,
                      timestamp=t / cfg.fps)
        return frame, boxes

    def batch(self, start_index, count):
        if count < 1:
            raise ShapeError("batch count must be >= 1")
        return [self.frame(start_index + i) for i in range(count)]


def generate_batch(config: SceneConfig, start_index, count):
    """Deterministic batch of (Frame, boxes) pairs for the given config."""
    return SceneGenerator(config).batch(start_index, count)


def write_ppm(frame, path):
    """Dump a frame (or raw pixel array) as binary 8-bit PPM for inspection."""
    pixels = frame.pixels if isinstance(frame, Frame) else np.asarray(frame)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ShapeError(f"expected (H,W,3) pixels, got {pixels.shape}")
    h, w, _ = pixels.shape
    data = np.clip(np.round(pixels * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
