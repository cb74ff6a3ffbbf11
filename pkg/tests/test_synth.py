import math

import numpy as np
import pytest

from motilitrack.errors import SpecError
from motilitrack.link import Trajectory
from motilitrack.synth import SceneSpec, render, score_tracking, simulate, simulate_tracks


def test_immotile_tracks_do_not_move():
    truth = simulate_tracks(SceneSpec(n_progressive=0, n_non_progressive=0, n_immotile=12, frames=50))
    for t in truth.trajectories():
        assert np.all(t.xy == t.xy[0])


def test_brownian_msd_of_generator():
    D = 0.8
    spec = SceneSpec(n_progressive=0, n_non_progressive=100, n_immotile=0, diffusion=D,
                     frames=200, width=20000, height=20000, margin=10, min_separation=0, seed=3)
    pos = simulate_tracks(spec).positions
    lags = np.arange(1, 21)
    msd = np.array([((pos[:, l:] - pos[:, :-l]) ** 2).sum(-1).mean() for l in lags])
    np.testing.assert_allclose(msd, 4 * D * lags, rtol=0.10)


def test_progressive_speed_is_exact_per_step():
    spec = SceneSpec(n_progressive=5, n_non_progressive=0, n_immotile=0, speed=1.7,
                     width=5000, height=5000, frames=30)
    pos = simulate_tracks(spec).positions
    np.testing.assert_allclose(np.hypot(*np.diff(pos, axis=1).transpose(2, 0, 1)), 1.7, rtol=1e-12)


def test_label_from_counts_and_seed_independence():
    spec = SceneSpec(n_progressive=40, n_non_progressive=30, n_immotile=30, frames=5, width=600, height=600,
                     min_separation=5)
    np.testing.assert_allclose(spec.motility_label(), [40, 30, 30])
    a = simulate_tracks(spec)
    np.testing.assert_allclose(a.motility_label(), [40, 30, 30])
    b = simulate_tracks(SceneSpec(**{**spec.__dict__, "seed": 99}))
    np.testing.assert_allclose(b.motility_label(), a.motility_label())
    assert not np.array_equal(a.positions, b.positions)


def test_simulate_is_deterministic():
    spec = SceneSpec(n_progressive=3, n_non_progressive=3, n_immotile=3, frames=10, width=96, height=96,
                     blink_prob=0.2, drift=(0.2, -0.1), seed=5)
    (s1, t1), (s2, t2) = simulate(spec), simulate(spec)
    np.testing.assert_array_equal(s1.frames, s2.frames)
    np.testing.assert_array_equal(t1.positions, t2.positions)
    np.testing.assert_array_equal(t1.visible, t2.visible)


def test_blink_gaps_bounded_and_drift_recorded():
    spec = SceneSpec(n_progressive=0, n_non_progressive=0, n_immotile=8, frames=300, blink_prob=0.3,
                     blink_max_gap=3, drift=(0.5, 0.25))
    truth = simulate_tracks(spec)
    for t in truth.trajectories():
        assert np.diff(t.frames).max() <= 4
    np.testing.assert_allclose(truth.drift[-1], [0.5 * 299, 0.25 * 299])
    for t in truth.trajectories(drift_free=True):
        np.testing.assert_allclose(t.xy - t.xy[0], 0, atol=1e-9)


def test_blob_mass_matches_gaussian_integral():
    spec = SceneSpec(n_progressive=0, n_non_progressive=0, n_immotile=1, frames=1, noise=0.0, background=0.0,
                     blob_mass=3000.0, blob_sigma=1.7, positions=((40.3, 31.8),), width=80, height=64)
    truth = simulate_tracks(spec)
    img = render(truth, spec)[0].astype(float)
    assert img.sum() == pytest.approx(3000.0, rel=0.02)
    ys, xs = np.mgrid[:64, :80]
    assert (img * xs).sum() / img.sum() == pytest.approx(40.3, abs=0.05)
    assert (img * ys).sum() / img.sum() == pytest.approx(31.8, abs=0.05)


@pytest.mark.parametrize("pos", [(-1.0, 10.0), (10.0, 64.0), (256.0, 3.0)])
def test_out_of_frame_position_rejected(pos):
    with pytest.raises(SpecError):
        simulate(SceneSpec(n_progressive=0, n_non_progressive=0, n_immotile=1, positions=(pos,), width=256,
                           height=64, frames=2))


def test_spec_validation():
    with pytest.raises(SpecError):
        SceneSpec(n_progressive=0, n_non_progressive=0, n_immotile=0).validate()
    with pytest.raises(SpecError):
        SceneSpec(blink_prob=1.5).validate()
    with pytest.raises(SpecError):
        SceneSpec.from_dict({"colour": "red"})
    assert SceneSpec.from_dict({"drift": [1, 2]}).drift == (1.0, 2.0)


def _truth():
    spec = SceneSpec(n_progressive=2, n_non_progressive=2, n_immotile=2, frames=40, width=200, height=200)
    return simulate_tracks(spec)


def test_score_perfect_and_empty():
    truth = _truth()
    s = score_tracking(truth.trajectories(), truth)
    assert s["track_recall"] == 1.0 and s["id_switches"] == 0 and s["mean_position_error"] == 0.0
    assert s["coverage"] == [1.0] * 6
    e = score_tracking([], truth)
    assert e["track_recall"] == 0.0 and math.isnan(e["mean_position_error"])


def test_score_split_track():
    truth = _truth()
    tracks = truth.trajectories()
    t0 = tracks[0]
    halves = [Trajectory(100, t0.frames[:20], t0.xy[:20]), Trajectory(101, t0.frames[20:], t0.xy[20:])]
    s = score_tracking(halves + tracks[1:], truth)
    assert s["track_recall"] == 1.0 and s["id_switches"] == 1
    assert s["per_particle_tracks"][0] == 2


def test_score_offset_tracks_report_error():
    truth = _truth()
    shifted = [Trajectory(t.particle_id, t.frames, t.xy + [0.6, 0.8]) for t in truth.trajectories()]
    s = score_tracking(shifted, truth)
    assert s["mean_position_error"] == pytest.approx(1.0)
    assert score_tracking(shifted, truth, match_radius=0.5)["track_recall"] == 0.0
