import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from motilitrack.errors import IngestError, ParamError
from motilitrack.ingest import FrameSequence, bandpass, load_sequence, save_sequence, write_pgm

from conftest import gaussian_blob


def conv_reference(image, kernel):
    """Direct 2-D correlation with edge-replicated padding."""
    r = kernel.shape[0] // 2
    padded = np.pad(image, r, mode="edge")
    out = np.empty_like(image, dtype=np.float64)
    for i in range(image.shape[0]):
        for j in range(image.shape[1]):
            out[i, j] = np.sum(padded[i:i + 2 * r + 1, j:j + 2 * r + 1] * kernel)
    return out


def bandpass_reference(image, diameter=11, sigma=1.0):
    radius = int(4 * sigma + 0.5)
    k = np.arange(-radius, radius + 1)
    g = np.exp(-k ** 2 / (2 * sigma ** 2))
    g /= g.sum()
    gauss = conv_reference(image, np.outer(g, g))
    box = conv_reference(image, np.full((diameter, diameter), 1.0 / diameter ** 2))
    return np.maximum(gauss - box, 0.0)


def _write_dir(path, frames):
    path.mkdir()
    for i, f in enumerate(frames):
        write_pgm(path / f"frame_{i:06d}.pgm", f)


def test_load_directory_roundtrip(tmp_path, rng):
    frames = rng.integers(0, 256, (3, 480, 640), dtype=np.uint8)
    _write_dir(tmp_path / "vid", frames)
    seq = load_sequence(tmp_path / "vid", fps=50)
    assert len(seq) == 3 and seq.width == 640 and seq.height == 480
    assert seq.video_id == "vid" and seq.fps == 50
    np.testing.assert_array_equal(seq.frames, frames)


def test_load_rejects_gap(tmp_path, rng):
    d = tmp_path / "gap"
    d.mkdir()
    for i in (0, 1, 3):
        write_pgm(d / f"frame_{i:06d}.pgm", rng.integers(0, 256, (8, 8), dtype=np.uint8))
    with pytest.raises(IngestError, match="contiguous"):
        load_sequence(d)


def test_load_rejects_empty_and_mixed_geometry(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(IngestError):
        load_sequence(tmp_path / "empty")
    d = tmp_path / "mixed"
    d.mkdir()
    write_pgm(d / "frame_000000.pgm", np.zeros((8, 8), np.uint8))
    write_pgm(d / "frame_000001.pgm", np.zeros((8, 9), np.uint8))
    with pytest.raises(IngestError, match="geometry"):
        load_sequence(d)


def test_pgm_with_comment_and_bad_maxval(tmp_path):
    d = tmp_path / "c"
    d.mkdir()
    img = np.arange(12, dtype=np.uint8).reshape(3, 4)
    (d / "frame_000000.pgm").write_bytes(b"P5\n# made by hand\n4 3\n255\n" + img.tobytes())
    np.testing.assert_array_equal(load_sequence(d).frames[0], img)
    (d / "frame_000000.pgm").write_bytes(b"P5\n4 3\n65535\n" + img.tobytes() * 2)
    with pytest.raises(IngestError, match="maxval"):
        load_sequence(d)


def test_container_roundtrip(tmp_path, rng):
    seq = FrameSequence("x", 25.0, rng.integers(0, 256, (4, 5, 7), dtype=np.uint8))
    save_sequence(seq, tmp_path / "x.mtrk", container=True)
    back = load_sequence(tmp_path / "x.mtrk")
    assert back.fps == 25.0 and back.frames.shape == (4, 5, 7)
    np.testing.assert_array_equal(back.frames, seq.frames)
    assert load_sequence(tmp_path / "x.mtrk", fps=50).fps == 50


def test_frame_sequence_invariants():
    with pytest.raises(IngestError):
        FrameSequence("v", 0.0, np.zeros((1, 4, 4), np.uint8))
    with pytest.raises(IngestError):
        FrameSequence("v", 50.0, np.zeros((0, 4, 4), np.uint8))
    seq = FrameSequence("v", 50.0, np.zeros((2, 4, 4), np.uint8))
    with pytest.raises(ValueError):
        seq.frames[0, 0, 0] = 1


def test_bandpass_constant_frame_is_zero():
    out = bandpass(np.full((40, 50), 77, np.uint8))
    assert out.pixels.shape == (40, 50)
    np.testing.assert_allclose(out.pixels, 0.0, atol=1e-12)


def test_bandpass_single_pixel_matches_bruteforce():
    img = np.zeros((31, 33))
    img[15, 16] = 255
    out = bandpass(img, 11, 1.0).pixels
    ref = bandpass_reference(img)
    np.testing.assert_allclose(out, ref, atol=1e-10)
    assert np.unravel_index(out.argmax(), out.shape) == (15, 16)
    assert 0 < out.max() < 255


def test_bandpass_random_image_matches_bruteforce(rng):
    img = rng.integers(0, 256, (24, 29)).astype(np.uint8)
    np.testing.assert_allclose(bandpass(img, 7, 1.5).pixels, bandpass_reference(img.astype(float), 7, 1.5),
                               atol=1e-9)


def test_bandpass_flattens_ramp_keeps_blob():
    h, w = 80, 80
    ramp = np.tile(np.linspace(0, 100, w), (h, 1))
    img = ramp + gaussian_blob((h, w), [(40, 40)], sigma=1.5, peak=150)
    out = bandpass(img, 11, 1.0).pixels
    assert np.unravel_index(out.argmax(), out.shape) == (40, 40)
    far = out[5:30, 11:69]  # away from the blob, at least a radius from the borders
    assert far.max() <= 0.01 * 100


def test_bandpass_rejects_bad_params():
    for d in (10, 1, 4):
        with pytest.raises(ParamError):
            bandpass(np.zeros((9, 9)), d)
    with pytest.raises(ParamError):
        bandpass(np.zeros((9, 9)), 5, 0.0)


@settings(max_examples=30, deadline=None)
@given(scale=st.floats(0.1, 10.0), seed=st.integers(0, 10_000))
def test_bandpass_homogeneous_without_clamping(scale, seed):
    # a single positive blob on zero background: compare unclamped pixels only
    r = np.random.default_rng(seed)
    img = gaussian_blob((40, 40), [(r.uniform(15, 25), r.uniform(15, 25))], sigma=1.5, peak=100)
    a = bandpass(img).pixels
    b = bandpass(scale * img).pixels
    np.testing.assert_allclose(b, scale * a, rtol=1e-9, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(dx=st.integers(-5, 5), dy=st.integers(-5, 5), seed=st.integers(0, 10_000))
def test_bandpass_translation_equivariant_interior(dx, dy, seed):
    r = np.random.default_rng(seed)
    img = r.uniform(0, 255, (60, 60))
    shifted = np.roll(np.roll(img, dy, axis=0), dx, axis=1)
    a = bandpass(img).pixels
    b = bandpass(shifted).pixels
    m = 11 + 5
    np.testing.assert_allclose(b[m:-m, m:-m], np.roll(np.roll(a, dy, 0), dx, 1)[m:-m, m:-m], atol=1e-9)
