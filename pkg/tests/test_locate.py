import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from motilitrack.errors import ParamError
from motilitrack.ingest import FilteredFrame, bandpass
from motilitrack.locate import find_maxima, locate_frame, locate_sequence, refine
from motilitrack.synth import SceneSpec, simulate

from conftest import gaussian_blob


def maxima_oracle(image, diameter, percentile):
    """Exhaustive scan: window maximum, brightness cut, then greedy suppression."""
    h, w = image.shape
    r = diameter // 2
    thr = np.quantile(image, 1 - percentile)
    cands = []
    for i in range(h):
        for j in range(w):
            v = image[i, j]
            win = image[max(i - r, 0):i + r + 1, max(j - r, 0):j + r + 1]
            if v > 0 and v >= thr and v == win.max():
                cands.append((-v, i, j))
    cands.sort()
    kept = []
    for _, i, j in cands:
        if all(np.hypot(i - a, j - b) >= diameter for a, b in kept):
            kept.append((i, j))
    return kept


def test_find_maxima_empty_frame():
    assert find_maxima(np.zeros((30, 30))) == []


def test_find_maxima_single_blob_at_peak():
    img = gaussian_blob((50, 60), [(31.3, 22.8)], sigma=2)
    assert find_maxima(img, 11, 0.3) == [(23, 31)]
    assert find_maxima(img, 11, 0.3) == maxima_oracle(img, 11, 0.3)


def test_find_maxima_close_pair_keeps_brighter():
    img = gaussian_blob((50, 60), [(25, 25)], sigma=2, peak=150) + gaussian_blob((50, 60), [(29, 25)], sigma=2, peak=200)
    found = find_maxima(img, 11, 0.3)
    assert len(found) == 1
    assert found[0][1] >= 28  # on the brighter blob's side


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 100_000), percentile=st.sampled_from([0.05, 0.3, 0.6]))
def test_find_maxima_matches_exhaustive_scan(seed, percentile):
    r = np.random.default_rng(seed)
    n = int(r.integers(1, 8))
    img = gaussian_blob((40, 48), r.uniform(2, 45, (n, 2)), sigma=r.uniform(1.2, 3.0),
                        peak=100) + r.uniform(0, 5, (40, 48))
    img = np.round(img, 1)  # produce exact ties now and then
    assert find_maxima(img, 7, percentile) == maxima_oracle(img, 7, percentile)


@pytest.mark.parametrize("cx", [100.0, 100.4, 99.75])
def test_refine_subpixel_centre(cx):
    img = gaussian_blob((100, 200), [(cx, 50.0)], sigma=2.0)
    spot = refine(img, (50, 100), 11)
    assert abs(spot.x - cx) <= 0.1 and abs(spot.y - 50.0) <= 0.1


def test_refine_recentres_off_peak_candidate():
    img = gaussian_blob((80, 80), [(40.2, 40.0)], sigma=2.0)
    spot = refine(img, (42, 38), 11)
    assert abs(spot.x - 40.2) <= 0.1 and abs(spot.y - 40.0) <= 0.1


def test_refine_uniform_disk_radius_of_gyration():
    R = 4
    yy, xx = np.mgrid[:40, :40]
    img = ((yy - 20) ** 2 + (xx - 20) ** 2 <= R * R).astype(float)
    spot = refine(img, (20, 20), 11)
    assert spot.x == pytest.approx(20.0, abs=1e-12) and spot.y == pytest.approx(20.0, abs=1e-12)
    assert spot.size == pytest.approx(R / np.sqrt(2), rel=0.05)
    assert spot.mass == pytest.approx(img.sum())


def test_refine_drops_border_and_empty():
    img = gaussian_blob((40, 40), [(3, 20)], sigma=2)
    assert refine(img, (20, 3), 11) is None
    assert refine(np.zeros((40, 40)), (20, 20), 11) is None


def _scene(masses, positions, shape=(120, 160), sigma=2.0):
    img = np.zeros(shape)
    for (x, y), m in zip(positions, masses):
        img += gaussian_blob(shape, [(x, y)], sigma=sigma, peak=m / (2 * np.pi * sigma ** 2))
    return img


def test_locate_frame_mass_threshold_separates_bright_and_dim():
    pos = [(20, 20), (60, 25), (100, 30), (140, 40), (30, 90), (80, 90), (120, 95), (60, 60)]
    masses = [2000] * 5 + [300] * 3
    img = _scene(masses, pos)
    spots = locate_frame(FilteredFrame(0, img), 11, 900, 0.3)
    assert len(spots) == 5
    got = sorted((round(s.x), round(s.y)) for s in spots)
    assert got == sorted(pos[:5])
    assert [(s.y, s.x) for s in spots] == sorted((s.y, s.x) for s in spots)


def test_locate_frame_strict_mass_boundary():
    img = _scene([2000], [(40, 40)], shape=(80, 80))
    mass = refine(img, (40, 40), 11).mass
    assert len(locate_frame(img, 11, mass)) == 1
    assert locate_frame(img, 11, np.nextafter(mass, np.inf)) == []
    assert locate_frame(np.zeros((50, 50))) == []


def test_locate_frame_validates():
    with pytest.raises(ParamError):
        locate_frame(np.zeros((20, 20)), diameter=10)
    with pytest.raises(ParamError):
        locate_frame(np.zeros((20, 20)), percentile=1.0)


@settings(max_examples=15, deadline=None)
@given(dx=st.integers(-10, 10), dy=st.integers(-10, 10), seed=st.integers(0, 10_000))
def test_locate_translation_equivariant(dx, dy, seed):
    r = np.random.default_rng(seed)
    pos = [(r.uniform(40, 120), r.uniform(40, 80)), (r.uniform(40, 120), r.uniform(40, 80))]
    if np.hypot(*np.subtract(*pos)) < 12:
        pos[1] = (pos[0][0] + 20, pos[0][1])
    img = _scene([2000, 2500], pos, shape=(120, 160))
    shifted = np.roll(np.roll(img, dy, 0), dx, 1)
    a = locate_frame(img, 11, 500)
    b = locate_frame(shifted, 11, 500)
    assert len(a) == len(b) == 2
    for s, t in zip(a, b):
        assert t.x - s.x == pytest.approx(dx, abs=1e-9) and t.y - s.y == pytest.approx(dy, abs=1e-9)
        assert t.mass == pytest.approx(s.mass, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), m1=st.floats(0, 3000), m2=st.floats(0, 3000))
def test_locate_minmass_monotone(seed, m1, m2):
    r = np.random.default_rng(seed)
    img = bandpass(r.uniform(0, 30, (60, 60)) + _scene(r.uniform(200, 3000, 4),
                                                      r.uniform(10, 50, (4, 2)), shape=(60, 60))).pixels
    lo, hi = sorted((m1, m2))
    assert len(locate_frame(img, 11, hi)) <= len(locate_frame(img, 11, lo))


def test_locate_sequence_deterministic_and_threaded():
    seq, truth = simulate(SceneSpec(n_progressive=3, n_non_progressive=3, n_immotile=3, frames=8, seed=4))
    a = locate_sequence(seq)
    b = locate_sequence(seq, threads=3)
    assert a == b
    assert [s.frame_index for frame in a for s in frame] == sorted(s.frame_index for frame in a for s in frame)
