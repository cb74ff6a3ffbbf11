import json

import numpy as np
import pytest

from motilitrack import io
from motilitrack.cli import main

SCENE = """[scene]
n_progressive = 3
n_non_progressive = 3
n_immotile = {imm}
frames = 60
width = 96
height = 96
"""


@pytest.fixture(scope="module")
def videos(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    labels = {}
    for i in range(6):
        (d / f"scene{i}.toml").write_text(SCENE.format(imm=i))
        vid = f"v{i}"
        assert main(["synth", "--spec", str(d / f"scene{i}.toml"), "--seed", str(i), "--video-id", vid,
                     "--container", "--out-frames", str(d / f"{vid}.mtrk"), "--out-truth", str(d / f"{vid}_truth.csv"),
                     "--out-labels", str(d / f"{vid}_label.csv")]) == 0
        labels.update(io.read_labels(d / f"{vid}_label.csv"))
    io.write_labels(d / "labels.csv", labels)
    io.write_folds(d / "folds.csv", {f"v{i}": i % 3 + 1 for i in range(6)})
    return d


def test_full_chain(videos, capsys):
    d = videos
    assert main(["ingest", "--input", str(d / "v0.mtrk"), "--check"]) == 0
    assert "60 frames" in capsys.readouterr().out
    tracks = []
    for i in range(6):
        assert main(["locate", "--input", str(d / f"v{i}.mtrk"), "--out", str(d / f"s{i}.csv")]) == 0
        assert main(["link", "--spots", str(d / f"s{i}.csv"), "--min-length", "10", "--drift-subtract",
                     "--drift-out", str(d / f"drift{i}.csv"), "--out", str(d / f"t{i}.csv")]) == 0
        tracks += ["--tracks", f"v{i}={d / f't{i}.csv'}"]
    assert io.read_tracks(d / "t0.csv")
    assert main(["featurize", *tracks, "--kind", "imsd", "--lag-max", "0.4", "--plot", str(d / "msd.png"),
                 "--out", str(d / "feat.csv")]) == 0
    assert (d / "msd.png").stat().st_size > 0
    assert main(["codebook", "--features", str(d / "feat.csv"), "--folds", str(d / "folds.csv"), "--fold", "1",
                 "--n", "12", "--assign", "2", "--seed", "1", "--out", str(d / "cb.json")]) == 0
    assert json.loads((d / "cb.json").read_text())["dim"] == 20
    assert main(["encode", "--features", str(d / "feat.csv"), "--codebook", str(d / "cb.json"), "--assign", "2",
                 "--out", str(d / "hist.csv")]) == 0
    hist = io.read_features(d / "hist.csv")
    assert sorted(hist) == [f"v{i}" for i in range(6)]
    assert main(["train", "--features", str(d / "hist.csv"), "--labels", str(d / "labels.csv"), "--folds",
                 str(d / "folds.csv"), "--C", "1,10", "--out", str(d / "model_fold{K}.json")]) == 0
    assert all((d / f"model_fold{k}.json").is_file() for k in (1, 2, 3))
    assert main(["predict", "--features", str(d / "hist.csv"), "--model", str(d / "model_fold1.json"),
                 "--out", str(d / "pred.csv")]) == 0
    pred = (d / "pred.csv").read_text().splitlines()
    assert pred[0] == "video_id,progressive,non_progressive,immotile" and len(pred) == 7
    assert main(["track-lk", "--input", str(d / "v0.mtrk"), "--min-length", "10", "--out", str(d / "lk.csv")]) == 0


def test_synth_label_printed(videos, capsys, tmp_path):
    assert main(["synth", "--spec", str(videos / "scene0.toml"), "--out-frames", str(tmp_path / "f")]) == 0
    assert "progressive 50.00" in capsys.readouterr().out
    assert len(list((tmp_path / "f").glob("*.pgm"))) == 60


def test_train_multi_fold_requires_placeholder(videos, tmp_path):
    io.write_features(tmp_path / "h.csv", [(f"v{i}", "bow", 0, [float(i), 1.0]) for i in range(6)])
    assert main(["train", "--features", str(tmp_path / "h.csv"), "--labels", str(videos / "labels.csv"),
                 "--folds", str(videos / "folds.csv"), "--out", str(tmp_path / "m.json")]) == 2
    assert main(["train", "--features", str(tmp_path / "h.csv"), "--labels", str(videos / "labels.csv"),
                 "--folds", str(videos / "folds.csv"), "--fold", "2", "--C", "1",
                 "--out", str(tmp_path / "m.json")]) == 0


@pytest.mark.parametrize("argv,code", [
    (["evaluate", "--config", "/nonexistent/exp.toml"], 2),
    (["locate", "--input", "/nonexistent/video", "--out", "x.csv"], 3),
    (["synth", "--spec", "/nonexistent.toml", "--out-frames", "x"], 2),
])
def test_exit_codes(argv, code, capsys):
    assert main(argv) == code
    assert "motilitrack" in capsys.readouterr().err


def test_bad_scene_key_is_config_error(tmp_path):
    (tmp_path / "s.toml").write_text("colour = 'red'\n")
    assert main(["synth", "--spec", str(tmp_path / "s.toml"), "--out-frames", str(tmp_path / "f")]) == 2


def test_verbose_flag_position(tmp_path):
    (tmp_path / "exp.toml").write_text("[data]\nn_videos = 6\n")
    assert main(["-v", "evaluate", "--config", str(tmp_path / "exp.toml"), "--dry-run"]) == 0
    assert main(["evaluate", "-v", "--config", str(tmp_path / "exp.toml"), "--dry-run"]) == 0


def test_evaluate_dry_run_and_allow_extended(tmp_path, capsys):
    (tmp_path / "exp.toml").write_text("[data]\nn_videos = 6\n[bow]\nn = [16]\n")
    assert main(["evaluate", "--config", str(tmp_path / "exp.toml"), "--dry-run"]) == 2
    capsys.readouterr()
    assert main(["evaluate", "--config", str(tmp_path / "exp.toml"), "--dry-run", "--allow-extended"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "run\tdata" and out[-1] == "run\tfigures"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["exp.toml"]
