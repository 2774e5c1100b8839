"""Source/server wire messages and their binary layouts.

A BatchMessage carries one batch uplink: the partition table for all N
frames plus one compressed representative frame per partition. An
UpdateMessage carries a model checkpoint downlink, either extension-only or
full. Both formats are self-describing and double as on-disk trace files.

Modeled byte counts (used by the bandwidth metrics) price frame payloads
through the byte-cost model rather than the float32 trace encoding; header
and table overheads are identical in both.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

from .errors import FormatError
from .spatial import byte_cost, decode_frame, encode_frame
from .student import SCOPE_EXTENSION, SCOPE_FULL
from .temporal import Partition

MESSAGE_MAGIC = b"SSBM"
MESSAGE_VERSION = 1
# magic + format u16 + batch u32 + student version u32 + N u16 + M u16
MESSAGE_HEADER_BYTES = 18
# lo/hi/rep u32 triple plus the frame payload length prefix
PARTITION_ENTRY_BYTES = 12 + 4

UPDATE_MAGIC = b"SSUM"
UPDATE_VERSION = 1
# magic + format u16 + scope u8 + new version u32 + payload length u32
UPDATE_HEADER_BYTES = 15

_CHECKPOINT_SCOPE_OFFSET = 6
_SCOPE_BY_NAME = {"full": SCOPE_FULL, "extension_only": SCOPE_EXTENSION}


@dataclass(frozen=True)
class BatchMessage:
    """One uplink batch: partition table plus representative frames."""

    batch_index: int
    student_version: int
    first_frame: int
    n_frames: int
    partitions: tuple
    frames: tuple

    def validate(self):
        if len(self.partitions) != len(self.frames):
            raise FormatError("one compressed frame per partition required")
        if not self.partitions:
            raise FormatError("empty partition table")
        expect = self.first_frame
        for part, cf in zip(self.partitions, self.frames):
            if part.lo != expect:
                raise FormatError("partition table must cover the batch contiguously")
            if not part.lo <= part.representative <= part.hi:
                raise FormatError("representative outside its partition")
            if cf.frame_index != part.representative:
                raise FormatError("compressed frame is not the partition representative")
            expect = part.hi + 1
        if expect != self.first_frame + self.n_frames:
            raise FormatError("partition table does not cover all batch frames")
        return self

    def modeled_bytes(self):
        """Metric-model size: frame byte costs plus table/header overhead."""
        return (MESSAGE_HEADER_BYTES
                + PARTITION_ENTRY_BYTES * len(self.partitions)
                + sum(byte_cost(cf) for cf in self.frames))


def encode_message(msg: BatchMessage) -> bytes:
    msg.validate()
    buf = io.BytesIO()
    buf.write(MESSAGE_MAGIC)
    buf.write(struct.pack("<HIIHH", MESSAGE_VERSION, msg.batch_index,
                          msg.student_version, msg.n_frames, len(msg.partitions)))
    for part in msg.partitions:
        buf.write(struct.pack("<III", part.lo, part.hi, part.representative))
    for cf in msg.frames:
        raw = encode_frame(cf)
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
    return buf.getvalue()


def _read(buf, n):
    raw = buf.read(n)
    if len(raw) != n:
        raise FormatError("truncated message")
    return raw


def decode_message(raw: bytes) -> BatchMessage:
    buf = io.BytesIO(raw)
    if _read(buf, 4) != MESSAGE_MAGIC:
        raise FormatError("bad batch-message magic")
    version, batch_index, student_version, n_frames, m = struct.unpack(
        "<HIIHH", _read(buf, 14))
    if version != MESSAGE_VERSION:
        raise FormatError(f"unsupported batch-message version {version}")
    parts = []
    for _ in range(m):
        lo, hi, rep = struct.unpack("<III", _read(buf, 12))
        parts.append(Partition(lo=lo, hi=hi, representative=rep))
    frames = []
    for _ in range(m):
        (length,) = struct.unpack("<I", _read(buf, 4))
        frames.append(decode_frame(_read(buf, length)))
    if buf.read(1):
        raise FormatError("trailing bytes after batch message")
    first = parts[0].lo if parts else 0
    msg = BatchMessage(batch_index=batch_index, student_version=student_version,
                       first_frame=first, n_frames=n_frames,
                       partitions=tuple(parts), frames=tuple(frames))
    return msg.validate()


@dataclass(frozen=True)
class UpdateMessage:
    """One downlink model update: scope plus checkpoint payload."""

    scope: str
    new_version: int
    payload: bytes

    def validate(self):
        if self.scope not in _SCOPE_BY_NAME:
            raise FormatError(f"unknown update scope {self.scope!r}")
        if len(self.payload) <= _CHECKPOINT_SCOPE_OFFSET:
            raise FormatError("update payload too short to be a checkpoint")
        declared = self.payload[_CHECKPOINT_SCOPE_OFFSET]
        if declared != _SCOPE_BY_NAME[self.scope]:
            raise FormatError("update scope disagrees with checkpoint payload")
        return self

    def modeled_bytes(self):
        return UPDATE_HEADER_BYTES + len(self.payload)


def encode_update(msg: UpdateMessage) -> bytes:
    msg.validate()
    buf = io.BytesIO()
    buf.write(UPDATE_MAGIC)
    buf.write(struct.pack("<HBII", UPDATE_VERSION, _SCOPE_BY_NAME[msg.scope],
                          msg.new_version, len(msg.payload)))
    buf.write(msg.payload)
    return buf.getvalue()


def decode_update(raw: bytes) -> UpdateMessage:
    buf = io.BytesIO(raw)
    if _read(buf, 4) != UPDATE_MAGIC:
        raise FormatError("bad update-message magic")
    version, scope_code, new_version, length = struct.unpack("<HBII", _read(buf, 11))
    if version != UPDATE_VERSION:
        raise FormatError(f"unsupported update-message version {version}")
    names = {v: k for k, v in _SCOPE_BY_NAME.items()}
    if scope_code not in names:
        raise FormatError(f"unknown update scope code {scope_code}")
    payload = _read(buf, length)
    if buf.read(1):
        raise FormatError("trailing bytes after update message")
    msg = UpdateMessage(scope=names[scope_code], new_version=new_version,
                        payload=payload)
    return msg.validate()
