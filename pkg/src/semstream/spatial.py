"""Region-level quality decisions, degradation, and the byte-cost model.

A frame's regions are classified HQ (posterior above 0.5) or LQ. LQ regions
are mean-pooled down by a factor r and nearest-neighbor-upsampled back on
reconstruction; they are degraded, never dropped. Byte cost is a raw
sample-count model (1 byte per sample) standing in for a real codec: a
constant entropy factor would cancel out of every normalized metric, so
none is applied.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ShapeError
from .scene import REGION_SIDE, grid_join, grid_split

VALID_FACTORS = (2, 4, 7, 14)

FRAME_MAGIC = b"SSCF"
FRAME_HEADER_BYTES = 16

HQ = 1
LQ = 0


def classify_regions(frame, student, L=None):
    """Quality map from student posteriors: cell is HQ iff posterior > 0.5."""
    pixels = frame.pixels if hasattr(frame, "pixels") else np.asarray(frame)
    if L is None:
        side = pixels.shape[0]
        if side % REGION_SIDE:
            raise ShapeError(f"frame side {side} not a multiple of {REGION_SIDE}")
        L = side // REGION_SIDE
    grid = grid_split(pixels, L)
    post = student.infer(grid.reshape(-1, REGION_SIDE, REGION_SIDE, 3))
    return (post.reshape(L, L) > 0.5).astype(np.int8)


def degrade(region, r):
    """Mean-pool a 28x28x3 region over r x r blocks: -> (28/r, 28/r, 3)."""
    region = np.asarray(region)
    if region.shape != (REGION_SIDE, REGION_SIDE, 3):
        raise ShapeError(f"expected (28,28,3) region, got {region.shape}")
    if r not in VALID_FACTORS:
        raise ShapeError(f"downsample factor must be one of {VALID_FACTORS}, got {r}")
    s = REGION_SIDE // r
    return region.reshape(s, r, s, r, 3).mean(axis=(1, 3)).astype(region.dtype)


def upsample(payload, r):
    """Nearest-neighbor upsample of a pooled payload back to 28x28x3."""
    payload = np.asarray(payload)
    s = REGION_SIDE // r
    if payload.shape != (s, s, 3):
        raise ShapeError(f"expected ({s},{s},3) payload for r={r}, got {payload.shape}")
    return np.repeat(np.repeat(payload, r, axis=0), r, axis=1)


@dataclass(frozen=True)
class CompressedFrame:
    """Wire form of one frame: quality map plus per-class region payloads.

    Payloads are stored in row-major region order within each class; the
    quality map says which class each cell belongs to.
    """

    frame_index: int
    L: int
    r: int
    qmap: np.ndarray
    hq_payloads: np.ndarray
    lq_payloads: np.ndarray

    @property
    def n_hq(self):
        return int(self.qmap.sum())

    @property
    def n_lq(self):
        return int(self.qmap.size - self.qmap.sum())


def compress(frame, qmap, r) -> CompressedFrame:
    """Split a frame into HQ and degraded LQ region payloads."""
    pixels = frame.pixels if hasattr(frame, "pixels") else np.asarray(frame)
    index = getattr(frame, "index", 0)
    qmap = np.asarray(qmap)
    L = qmap.shape[0]
    if qmap.shape != (L, L):
        raise ShapeError(f"quality map must be square, got {qmap.shape}")
    if r not in VALID_FACTORS:
        raise ShapeError(f"downsample factor must be one of {VALID_FACTORS}, got {r}")
    grid = grid_split(pixels, L)
    flat = grid.reshape(-1, REGION_SIDE, REGION_SIDE, 3)
    mask = qmap.reshape(-1).astype(bool)
    hq = flat[mask].astype(np.float32)
    s = REGION_SIDE // r
    lq_src = flat[~mask]
    lq = lq_src.reshape(-1, s, r, s, r, 3).mean(axis=(2, 4)).astype(np.float32)
    return CompressedFrame(frame_index=index, L=L, r=r,
                           qmap=qmap.astype(np.int8), hq_payloads=hq,
                           lq_payloads=lq)


def reconstruct(cf: CompressedFrame):
    """Rebuild the full frame: HQ verbatim, LQ pool-then-upsample."""
    L = cf.L
    mask = cf.qmap.reshape(-1).astype(bool)
    if len(cf.hq_payloads) != mask.sum() or len(cf.lq_payloads) != (~mask).sum():
        raise FormatError("payload counts disagree with the quality map")
    flat = np.empty((L * L, REGION_SIDE, REGION_SIDE, 3), dtype=np.float32)
    flat[mask] = cf.hq_payloads
    if len(cf.lq_payloads):
        up = np.repeat(np.repeat(cf.lq_payloads, cf.r, axis=1), cf.r, axis=2)
        flat[~mask] = up
    return grid_join(flat.reshape(L, L, REGION_SIDE, REGION_SIDE, 3))


def byte_cost(cf: CompressedFrame) -> int:
    """Modeled wire size: 1 byte per sample, bit-packed map, 16-byte header."""
    hq_bytes = cf.n_hq * REGION_SIDE * REGION_SIDE * 3
    s = REGION_SIDE // cf.r
    lq_bytes = cf.n_lq * s * s * 3
    map_bytes = (cf.L * cf.L + 7) // 8
    return hq_bytes + lq_bytes + map_bytes + FRAME_HEADER_BYTES


def qmap_to_pixel_quality(qmap):
    """Expand an (L, L) region map to a per-pixel (28L, 28L) map."""
    qmap = np.asarray(qmap)
    return np.repeat(np.repeat(qmap, REGION_SIDE, axis=0), REGION_SIDE, axis=1)


def encode_frame(cf: CompressedFrame) -> bytes:
    """Serialize to the documented binary layout.

    Header (16 bytes): magic "SSCF", format byte, frame index u32, L u16,
    r u16, HQ count u16, one reserved byte. Then the bit-packed quality map
    (row-major, MSB first), then HQ payloads, then LQ payloads as float32
    little-endian. Payload floats are exact, so encode/decode round-trips
    bit-identically; the byte-cost model prices samples at 1 byte instead.
    """
    buf = io.BytesIO()
    buf.write(FRAME_MAGIC)
    buf.write(struct.pack("<BIHHHB", 1, cf.frame_index, cf.L, cf.r, cf.n_hq, 0))
    packed = np.packbits(cf.qmap.reshape(-1).astype(np.uint8))
    buf.write(packed.tobytes())
    buf.write(np.ascontiguousarray(cf.hq_payloads, dtype="<f4").tobytes())
    buf.write(np.ascontiguousarray(cf.lq_payloads, dtype="<f4").tobytes())
    return buf.getvalue()


def decode_frame(raw: bytes) -> CompressedFrame:
    """Inverse of encode_frame; malformed input raises FormatError."""
    buf = io.BytesIO(raw)
    magic = buf.read(4)
    if magic != FRAME_MAGIC:
        raise FormatError("bad compressed-frame magic")
    head = buf.read(12)
    if len(head) != 12:
        raise FormatError("truncated compressed-frame header")
    version, index, L, r, n_hq, _ = struct.unpack("<BIHHHB", head)
    if version != 1:
        raise FormatError(f"unsupported compressed-frame version {version}")
    if r not in VALID_FACTORS:
        raise FormatError(f"invalid downsample factor {r}")
    map_bytes = (L * L + 7) // 8
    packed = buf.read(map_bytes)
    if len(packed) != map_bytes:
        raise FormatError("truncated quality map")
    qmap = np.unpackbits(np.frombuffer(packed, dtype=np.uint8))[:L * L]
    qmap = qmap.reshape(L, L).astype(np.int8)
    if int(qmap.sum()) != n_hq:
        raise FormatError("quality map disagrees with HQ count")
    n_lq = L * L - n_hq
    s = REGION_SIDE // r
    hq_raw = buf.read(4 * n_hq * REGION_SIDE * REGION_SIDE * 3)
    lq_raw = buf.read(4 * n_lq * s * s * 3)
    if len(hq_raw) != 4 * n_hq * REGION_SIDE * REGION_SIDE * 3 or \
            len(lq_raw) != 4 * n_lq * s * s * 3:
        raise FormatError("truncated payload data")
    if buf.read(1):
        raise FormatError("trailing bytes after frame payload")
    hq = np.frombuffer(hq_raw, dtype="<f4").reshape(n_hq, REGION_SIDE, REGION_SIDE, 3)
    lq = np.frombuffer(lq_raw, dtype="<f4").reshape(n_lq, s, s, 3)
    return CompressedFrame(frame_index=index, L=L, r=r, qmap=qmap,
                           hq_payloads=hq.copy(), lq_payloads=lq.copy())
