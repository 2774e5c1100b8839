"""Wire-message validation, byte accounting, and binary round trips."""

import numpy as np
import pytest

from semstream.errors import FormatError
from semstream.messages import (MESSAGE_HEADER_BYTES, PARTITION_ENTRY_BYTES,
                                UPDATE_HEADER_BYTES, BatchMessage,
                                UpdateMessage, decode_message, decode_update,
                                encode_message, encode_update)
from semstream.spatial import compress
from semstream.temporal import Partition


def oracle_frame_cost(cf):
    # Independent recount of the byte-cost model.
    n_hq = int(cf.qmap.sum())
    n_lq = cf.L * cf.L - n_hq
    side = 28 // cf.r
    return n_hq * 28 * 28 * 3 + n_lq * side * side * 3 \
        + (cf.L * cf.L + 7) // 8 + 16


def make_message(rng, splits=((0, 2), (3, 3), (4, 5)), first=12, L=4, r=4,
                 batch_index=3, student_version=2):
    """Batch message over synthetic frames; splits are relative (lo, hi)."""
    parts, cfs = [], []
    for lo, hi in splits:
        rep = first + lo
        pixels = rng.random((L * 28, L * 28, 3), dtype=np.float32)
        qmap = (rng.random((L, L)) > 0.5).astype(np.int8)
        cf = compress(pixels, qmap, r)
        cf = type(cf)(frame_index=rep, L=cf.L, r=cf.r, qmap=cf.qmap,
                      hq_payloads=cf.hq_payloads, lq_payloads=cf.lq_payloads)
        parts.append(Partition(lo=first + lo, hi=first + hi, representative=rep))
        cfs.append(cf)
    n = splits[-1][1] + 1
    return BatchMessage(batch_index=batch_index, student_version=student_version,
                        first_frame=first, n_frames=n,
                        partitions=tuple(parts), frames=tuple(cfs))


def test_modeled_bytes_matches_independent_recount(rng):
    msg = make_message(rng).validate()
    expect = MESSAGE_HEADER_BYTES \
        + PARTITION_ENTRY_BYTES * len(msg.partitions) \
        + sum(oracle_frame_cost(cf) for cf in msg.frames)
    assert msg.modeled_bytes() == expect


def test_message_round_trip(rng):
    msg = make_message(rng).validate()
    out = decode_message(encode_message(msg))
    assert out.batch_index == msg.batch_index
    assert out.student_version == msg.student_version
    assert out.first_frame == msg.first_frame
    assert out.n_frames == msg.n_frames
    assert out.partitions == msg.partitions
    for a, b in zip(out.frames, msg.frames):
        assert a.frame_index == b.frame_index
        assert np.array_equal(a.qmap, b.qmap)
        assert np.array_equal(a.hq_payloads, b.hq_payloads)
        assert np.array_equal(a.lq_payloads, b.lq_payloads)


def test_round_trip_preserves_modeled_bytes(rng):
    msg = make_message(rng, splits=((0, 4),), r=2).validate()
    assert decode_message(encode_message(msg)).modeled_bytes() \
        == msg.modeled_bytes()


def test_validate_rejects_frame_count_mismatch(rng):
    msg = make_message(rng)
    broken = BatchMessage(batch_index=0, student_version=1,
                          first_frame=msg.first_frame, n_frames=msg.n_frames,
                          partitions=msg.partitions, frames=msg.frames[:-1])
    with pytest.raises(FormatError):
        broken.validate()


def test_validate_rejects_empty_table():
    msg = BatchMessage(batch_index=0, student_version=1, first_frame=0,
                       n_frames=0, partitions=(), frames=())
    with pytest.raises(FormatError):
        msg.validate()


def test_validate_rejects_coverage_gap(rng):
    # Drop the middle partition: frames 15..15 go missing.
    msg = make_message(rng)
    broken = BatchMessage(batch_index=0, student_version=1,
                          first_frame=msg.first_frame, n_frames=msg.n_frames,
                          partitions=msg.partitions[::2], frames=msg.frames[::2])
    with pytest.raises(FormatError):
        broken.validate()


def test_validate_rejects_short_coverage(rng):
    msg = make_message(rng)
    broken = BatchMessage(batch_index=0, student_version=1,
                          first_frame=msg.first_frame,
                          n_frames=msg.n_frames + 1,
                          partitions=msg.partitions, frames=msg.frames)
    with pytest.raises(FormatError):
        broken.validate()


def test_validate_rejects_non_representative_frame(rng):
    msg = make_message(rng, splits=((0, 2),))
    cf = msg.frames[0]
    shifted = type(cf)(frame_index=cf.frame_index + 1, L=cf.L, r=cf.r,
                       qmap=cf.qmap, hq_payloads=cf.hq_payloads,
                       lq_payloads=cf.lq_payloads)
    broken = BatchMessage(batch_index=0, student_version=1,
                          first_frame=msg.first_frame, n_frames=3,
                          partitions=msg.partitions, frames=(shifted,))
    with pytest.raises(FormatError):
        broken.validate()


def test_decode_message_corruption_paths(rng):
    raw = encode_message(make_message(rng))
    with pytest.raises(FormatError):
        decode_message(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        decode_message(raw[:4] + b"\x63\x00" + raw[6:])
    with pytest.raises(FormatError):
        decode_message(raw[:-3])
    with pytest.raises(FormatError):
        decode_message(raw + b"\x00")


def test_update_round_trip(tiny_student):
    for scope in ("full", "extension_only"):
        msg = UpdateMessage(scope=scope, new_version=7,
                            payload=tiny_student.save_checkpoint(scope))
        out = decode_update(encode_update(msg))
        assert out.scope == scope
        assert out.new_version == 7
        assert out.payload == msg.payload


def test_update_modeled_bytes(tiny_student):
    payload = tiny_student.save_checkpoint("extension_only")
    msg = UpdateMessage(scope="extension_only", new_version=2, payload=payload)
    assert msg.modeled_bytes() == UPDATE_HEADER_BYTES + len(payload)


def test_update_scope_must_match_payload(tiny_student):
    payload = tiny_student.save_checkpoint("extension_only")
    with pytest.raises(FormatError):
        UpdateMessage(scope="full", new_version=2, payload=payload).validate()


def test_update_rejects_unknown_scope(tiny_student):
    payload = tiny_student.save_checkpoint("full")
    with pytest.raises(FormatError):
        UpdateMessage(scope="partial", new_version=2, payload=payload).validate()


def test_update_rejects_short_payload():
    with pytest.raises(FormatError):
        UpdateMessage(scope="full", new_version=1, payload=b"ab").validate()


def test_decode_update_corruption_paths(tiny_student):
    msg = UpdateMessage(scope="full", new_version=3,
                        payload=tiny_student.save_checkpoint("full"))
    raw = encode_update(msg)
    with pytest.raises(FormatError):
        decode_update(b"YYYY" + raw[4:])
    with pytest.raises(FormatError):
        decode_update(raw[:4] + b"\x63\x00" + raw[6:])
    with pytest.raises(FormatError):
        decode_update(raw[:-1])
    with pytest.raises(FormatError):
        decode_update(raw + b"\x00")
