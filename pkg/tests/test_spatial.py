"""Spatial compression: pooling oracles, byte-cost arithmetic, and the
frame wire format."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semstream.errors import FormatError, ShapeError
from semstream.scene import Frame, grid_split
from semstream.spatial import (VALID_FACTORS, CompressedFrame, byte_cost,
                               classify_regions, compress, decode_frame,
                               degrade, encode_frame, qmap_to_pixel_quality,
                               reconstruct, upsample)
from semstream.student import StudentNet


def oracle_degrade(region, r):
    s = 28 // r
    out = np.zeros((s, s, 3))
    for i in range(s):
        for j in range(s):
            for c in range(3):
                out[i, j, c] = region[r * i:r * i + r,
                                      r * j:r * j + r, c].mean()
    return out


def oracle_byte_cost(n_hq, n_lq, r, L):
    return (n_hq * 28 * 28 * 3
            + n_lq * (28 // r) * (28 // r) * 3
            + (L * L + 7) // 8
            + 16)


def frame_of(pixels, index=0):
    return Frame(pixels=pixels, index=index, timestamp=0.0)


@pytest.mark.parametrize("r", VALID_FACTORS)
def test_degrade_matches_block_mean_oracle(r, rng):
    region = rng.uniform(0, 1, (28, 28, 3))
    assert np.allclose(degrade(region, r), oracle_degrade(region, r),
                       atol=1e-12)


def test_degrade_rejects_bad_factor_and_shape():
    with pytest.raises(ShapeError):
        degrade(np.zeros((28, 28, 3)), 3)
    with pytest.raises(ShapeError):
        degrade(np.zeros((14, 14, 3)), 2)


def test_upsample_nearest_neighbor():
    payload = np.arange(4 * 4 * 3, dtype=float).reshape(4, 4, 3)
    up = upsample(payload, 7)
    assert up.shape == (28, 28, 3)
    for i in range(28):
        for j in range(28):
            assert np.array_equal(up[i, j], payload[i // 7, j // 7])


def test_upsample_shape_check():
    with pytest.raises(ShapeError):
        upsample(np.zeros((5, 5, 3)), 7)


def test_degrade_constant_region_is_lossless():
    region = np.full((28, 28, 3), 0.37)
    assert np.allclose(upsample(degrade(region, 4), 4), region)


def test_classify_regions_threshold(tiny_student):
    # Posterior > 0.5 exactly when the classifier marks the cell HQ.
    rng = np.random.default_rng(0)
    pixels = rng.uniform(0, 1, (112, 112, 3)).astype(np.float32)
    qmap = classify_regions(pixels, tiny_student)
    grid = grid_split(pixels, 4)
    post = tiny_student.infer(grid.reshape(-1, 28, 28, 3)).reshape(4, 4)
    assert np.array_equal(qmap, (post > 0.5).astype(np.int8))


def test_compress_reconstruct_identity_all_hq(rng):
    pixels = rng.uniform(0, 1, (112, 112, 3)).astype(np.float32)
    cf = compress(frame_of(pixels), np.ones((4, 4), dtype=np.int8), 4)
    assert cf.n_hq == 16 and cf.n_lq == 0
    assert np.array_equal(reconstruct(cf), pixels)


def test_reconstruct_lq_is_blockwise_mean(rng):
    pixels = rng.uniform(0, 1, (112, 112, 3)).astype(np.float32)
    qmap = np.zeros((4, 4), dtype=np.int8)
    qmap[0, 0] = 1
    cf = compress(frame_of(pixels), qmap, 7)
    out = reconstruct(cf)
    # HQ cell passes through untouched.
    assert np.array_equal(out[0:28, 0:28], pixels[0:28, 0:28])
    # Any LQ cell equals its pooled-and-upsampled original.
    region = pixels[0:28, 28:56].astype(np.float64)
    want = upsample(oracle_degrade(region, 7), 7)
    assert np.allclose(out[0:28, 28:56], want, atol=1e-6)


def test_lq_regions_are_degraded_not_dropped(rng):
    pixels = rng.uniform(0, 1, (112, 112, 3)).astype(np.float32)
    cf = compress(frame_of(pixels), np.zeros((4, 4), dtype=np.int8), 14)
    out = reconstruct(cf)
    assert out.shape == pixels.shape
    assert np.all(np.isfinite(out))
    # Still correlated with the original: block means survive pooling.
    assert abs(out.mean() - pixels.mean()) < 1e-3


def test_payload_count_mismatch_rejected(rng):
    pixels = rng.uniform(0, 1, (112, 112, 3)).astype(np.float32)
    cf = compress(frame_of(pixels), np.ones((4, 4), dtype=np.int8), 4)
    bad = CompressedFrame(frame_index=0, L=4, r=4, qmap=np.zeros((4, 4)),
                          hq_payloads=cf.hq_payloads,
                          lq_payloads=cf.lq_payloads)
    with pytest.raises(FormatError):
        reconstruct(bad)


@given(st.integers(0, 256), st.sampled_from(VALID_FACTORS))
@settings(max_examples=120, deadline=None)
def test_byte_cost_matches_arithmetic_oracle(n_hq, r):
    L = 16
    qmap = np.zeros(L * L, dtype=np.int8)
    qmap[:n_hq] = 1
    s = 28 // r
    cf = CompressedFrame(
        frame_index=0, L=L, r=r, qmap=qmap.reshape(L, L),
        hq_payloads=np.zeros((n_hq, 28, 28, 3), dtype=np.float32),
        lq_payloads=np.zeros((L * L - n_hq, s, s, 3), dtype=np.float32))
    assert byte_cost(cf) == oracle_byte_cost(n_hq, L * L - n_hq, r, L)


def test_all_hq_reference_cost():
    L = 16
    cf = CompressedFrame(
        frame_index=0, L=L, r=4, qmap=np.ones((L, L), dtype=np.int8),
        hq_payloads=np.zeros((256, 28, 28, 3), dtype=np.float32),
        lq_payloads=np.zeros((0, 7, 7, 3), dtype=np.float32))
    assert byte_cost(cf) == 602160


def test_byte_cost_strictly_monotone_in_hq_count():
    L = 8
    costs = []
    for n_hq in range(0, L * L + 1, 8):
        qmap = np.zeros(L * L, dtype=np.int8)
        qmap[:n_hq] = 1
        cf = CompressedFrame(
            frame_index=0, L=L, r=4, qmap=qmap.reshape(L, L),
            hq_payloads=np.zeros((n_hq, 28, 28, 3), dtype=np.float32),
            lq_payloads=np.zeros((L * L - n_hq, 7, 7, 3), dtype=np.float32))
        costs.append(byte_cost(cf))
    assert all(a < b for a, b in zip(costs, costs[1:]))


def test_byte_cost_strictly_decreasing_in_r_with_lq_present(rng):
    pixels = rng.uniform(0, 1, (112, 112, 3)).astype(np.float32)
    qmap = np.zeros((4, 4), dtype=np.int8)
    costs = [byte_cost(compress(frame_of(pixels), qmap, r))
             for r in sorted(VALID_FACTORS)]
    assert all(a > b for a, b in zip(costs, costs[1:]))


def test_qmap_to_pixel_quality():
    qmap = np.zeros((2, 2), dtype=np.int8)
    qmap[0, 1] = 1
    pq = qmap_to_pixel_quality(qmap)
    assert pq.shape == (56, 56)
    assert pq[0:28, 28:56].all()
    assert pq.sum() == 28 * 28


@given(st.integers(0, 4 * 4), st.sampled_from(VALID_FACTORS),
       st.integers(0, 2 ** 31 - 1))
@settings(max_examples=60, deadline=None)
def test_encode_decode_round_trip(n_hq, r, index):
    rng = np.random.default_rng(n_hq * 31 + r)
    pixels = rng.uniform(0, 1, (112, 112, 3)).astype(np.float32)
    qmap = np.zeros(16, dtype=np.int8)
    qmap[rng.choice(16, size=n_hq, replace=False)] = 1
    cf = compress(frame_of(pixels, index=index), qmap.reshape(4, 4), r)
    raw = encode_frame(cf)
    back = decode_frame(raw)
    assert back.frame_index == index
    assert back.L == cf.L and back.r == cf.r
    assert np.array_equal(back.qmap, cf.qmap)
    assert np.array_equal(back.hq_payloads, cf.hq_payloads)
    assert np.array_equal(back.lq_payloads, cf.lq_payloads)
    assert encode_frame(back) == raw


def test_decode_corruption_paths(rng):
    pixels = rng.uniform(0, 1, (112, 112, 3)).astype(np.float32)
    cf = compress(frame_of(pixels), np.ones((4, 4), dtype=np.int8), 4)
    raw = encode_frame(cf)
    with pytest.raises(FormatError):
        decode_frame(b"JUNK" + raw[4:])
    with pytest.raises(FormatError):
        decode_frame(raw[:10])
    with pytest.raises(FormatError):
        decode_frame(raw[:-5])
    with pytest.raises(FormatError):
        decode_frame(raw + b"\x01")
    bad_version = raw[:4] + bytes([9]) + raw[5:]
    with pytest.raises(FormatError):
        decode_frame(bad_version)


def test_decode_rejects_inconsistent_hq_count(rng):
    pixels = rng.uniform(0, 1, (112, 112, 3)).astype(np.float32)
    cf = compress(frame_of(pixels), np.ones((4, 4), dtype=np.int8), 4)
    raw = bytearray(encode_frame(cf))
    # Header HQ count lives at offset 4 + 1 + 4 + 2 + 2 = 13 (u16).
    raw[13:15] = (5).to_bytes(2, "little")
    with pytest.raises(FormatError):
        decode_frame(bytes(raw))


def test_compress_rejects_bad_factor(rng):
    pixels = rng.uniform(0, 1, (112, 112, 3)).astype(np.float32)
    with pytest.raises(ShapeError):
        compress(frame_of(pixels), np.ones((4, 4), dtype=np.int8), 5)
