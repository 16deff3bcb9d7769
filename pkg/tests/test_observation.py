import numpy as np
import pytest

from sevo.observation import (
    Frame,
    JointState,
    OverlayConfig,
    SegmentationMask,
    compose_overlay,
    make_virtual_observation,
    read_pgm,
    read_ppm,
    write_pgm,
    write_ppm,
)

from oracles import overlay_reference


def solid_frame(value, h=4, w=4):
    return Frame(np.full((h, w, 3), value, dtype=np.uint8))


def full_mask(h=4, w=4):
    return SegmentationMask(np.ones((h, w), dtype=np.uint8))


def test_overlay_blend_of_gray_pixel():
    out = compose_overlay(solid_frame(100), full_mask())
    # 0.55*100 + 114.75 = 169.75 -> 170 on R and G, 0.55*100 = 55 on B
    assert tuple(out.pixels[0, 0]) == (170, 170, 55)


def test_overlay_blend_of_white_pixel():
    out = compose_overlay(solid_frame(255), full_mask())
    assert tuple(out.pixels[0, 0]) == (255, 255, 140)


def test_mask_bit_zero_is_identity():
    rng = np.random.default_rng(7)
    frame = Frame(rng.integers(0, 256, (8, 6, 3), dtype=np.uint8))
    mask = SegmentationMask(np.zeros((8, 6), dtype=np.uint8))
    out = compose_overlay(frame, mask)
    assert np.array_equal(out.pixels, frame.pixels)


def test_zero_alpha_is_identity_for_all_bits():
    rng = np.random.default_rng(8)
    frame = Frame(rng.integers(0, 256, (8, 6, 3), dtype=np.uint8))
    mask = SegmentationMask(rng.integers(0, 2, (8, 6)).astype(np.uint8))
    out = compose_overlay(frame, mask, OverlayConfig(alpha=0.0))
    assert np.array_equal(out.pixels, frame.pixels)


def test_input_frame_is_not_modified():
    frame = solid_frame(100)
    before = frame.pixels.copy()
    compose_overlay(frame, full_mask())
    assert np.array_equal(frame.pixels, before)


def test_overlay_matches_scalar_reference_on_random_cases():
    rng = np.random.default_rng(1234)
    for _ in range(100):
        h = int(rng.integers(1, 24))
        w = int(rng.integers(1, 24))
        pixels = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
        bits = (rng.random((h, w)) < 0.5).astype(np.uint8)
        alpha = float(rng.random())
        color = tuple(int(c) for c in rng.integers(0, 256, 3))
        out = compose_overlay(
            Frame(pixels), SegmentationMask(bits), OverlayConfig(alpha=alpha, color=color)
        )
        expected = overlay_reference(pixels.tolist(), bits.tolist(), alpha, color)
        assert np.array_equal(out.pixels, np.asarray(expected, dtype=np.uint8))


def test_overlay_signature_high_r_high_g_low_b():
    # 16x16 gradient frame covers all 256 channel values
    vals = np.arange(256, dtype=np.uint8).reshape(16, 16)
    pixels = np.stack([vals, vals, vals], axis=2)
    out = compose_overlay(Frame(pixels), SegmentationMask(np.ones((16, 16), dtype=np.uint8)))
    assert int(out.pixels[:, :, 0].min()) >= 114
    assert int(out.pixels[:, :, 1].min()) >= 114
    assert int(out.pixels[:, :, 2].max()) <= 141


def test_dimension_mismatch_names_both_shapes():
    frame = solid_frame(10, h=4, w=4)
    mask = SegmentationMask(np.zeros((5, 3), dtype=np.uint8))
    with pytest.raises(ValueError) as err:
        compose_overlay(frame, mask)
    assert "4x4" in str(err.value) and "3x5" in str(err.value)


def test_make_virtual_observation_zero_masks_identity():
    rng = np.random.default_rng(3)
    frames = [Frame(rng.integers(0, 256, (6, 6, 3), dtype=np.uint8)) for _ in range(2)]
    masks = [SegmentationMask(np.zeros((6, 6), dtype=np.uint8)) for _ in range(2)]
    obs = make_virtual_observation(frames, masks, JointState(np.zeros(3)), enabled=True)
    for got, orig in zip(obs.frames, frames):
        assert np.array_equal(got.pixels, orig.pixels)


def test_make_virtual_observation_disabled_passthrough():
    rng = np.random.default_rng(4)
    frames = [Frame(rng.integers(0, 256, (6, 6, 3), dtype=np.uint8)) for _ in range(2)]
    masks = [SegmentationMask(np.ones((6, 6), dtype=np.uint8)) for _ in range(2)]
    obs = make_virtual_observation(frames, masks, JointState(np.zeros(3)), enabled=False)
    for got, orig in zip(obs.frames, frames):
        assert np.array_equal(got.pixels, orig.pixels)


def test_make_virtual_observation_changes_exactly_masked_pixels():
    rng = np.random.default_rng(5)
    pixels = rng.integers(0, 200, (8, 8, 3), dtype=np.uint8)
    bits = np.zeros((8, 8), dtype=np.uint8)
    bits[2, 3] = bits[2, 4] = bits[3, 3] = bits[3, 4] = 1
    obs = make_virtual_observation(
        [Frame(pixels)], [SegmentationMask(bits)], JointState(np.zeros(3)), enabled=True
    )
    diff = np.any(obs.frames[0].pixels != pixels, axis=2)
    assert int(diff.sum()) == 4
    assert np.array_equal(diff.astype(np.uint8), bits)


def test_make_virtual_observation_length_mismatch():
    frames = [solid_frame(1)]
    with pytest.raises(ValueError):
        make_virtual_observation(frames, [], JointState(np.zeros(3)))


def test_joint_state_passes_through():
    joints = JointState(np.array([1.5, -2.0, 0.25]))
    obs = make_virtual_observation(
        [solid_frame(9)], [full_mask()], joints, enabled=True, timestamp=0.5
    )
    assert obs.joint_state is joints
    assert obs.timestamp == 0.5


def test_ppm_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    frame = Frame(rng.integers(0, 256, (5, 7, 3), dtype=np.uint8))
    p = tmp_path / "frame.ppm"
    write_ppm(frame, p)
    back = read_ppm(p)
    assert np.array_equal(back.pixels, frame.pixels)
    write_ppm(back, tmp_path / "again.ppm")
    assert (tmp_path / "again.ppm").read_bytes() == p.read_bytes()


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(12)
    mask = SegmentationMask((rng.random((5, 7)) < 0.4).astype(np.uint8))
    p = tmp_path / "mask.pgm"
    write_pgm(mask, p)
    back = read_pgm(p)
    assert np.array_equal(back.bits, mask.bits)


def test_ppm_reader_accepts_header_comment(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# a comment\n2 1\n255\n" + bytes(6))
    frame = read_ppm(p)
    assert (frame.width, frame.height) == (2, 1)


@pytest.mark.parametrize(
    "payload",
    [
        b"P5\n2 2\n255\n1234",  # wrong magic for ppm
        b"P6\n2 2\n255\n" + bytes(11),  # truncated
        b"P6\n2 2\n255\n" + bytes(13),  # trailing byte
        b"P6\n2 2\n127\n" + bytes(12),  # wrong maxval
        b"P6\nx 2\n255\n" + bytes(12),  # malformed dimension
    ],
)
def test_ppm_reader_rejects_malformed(tmp_path, payload):
    p = tmp_path / "bad.ppm"
    p.write_bytes(payload)
    with pytest.raises(ValueError) as err:
        read_ppm(p)
    assert "bad.ppm" in str(err.value)


def test_pgm_reader_rejects_gray_values(tmp_path):
    p = tmp_path / "gray.pgm"
    p.write_bytes(b"P5\n2 1\n255\n" + bytes([0, 128]))
    with pytest.raises(ValueError):
        read_pgm(p)


def test_mask_rejects_non_binary_bits():
    with pytest.raises(ValueError):
        SegmentationMask(np.full((2, 2), 3, dtype=np.uint8))


def test_frame_rejects_bad_shape():
    with pytest.raises(ValueError):
        Frame(np.zeros((4, 4), dtype=np.uint8))
