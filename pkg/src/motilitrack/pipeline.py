"""Declarative experiment runner: tracking, features, BoW, model and cross-validation.

Every stage persists its outputs under the run directory and records them in
``manifest.json`` together with a key derived from the stage's configuration
and the keys of the stages it depends on. A rerun skips any stage whose key is
unchanged and whose outputs still hash to the recorded values.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import io, plotting
from .bow import ASSIGN_COUNTS, CODEBOOK_SIZES
from .errors import ConfigError, EmptySample, MotilitrackError, StageError
from .evaluation import FoldSplit, PipelineSpec, json_safe, make_folds, run_cv
from .features import EMSD_CONFIGS, cms, emsd, imsd
from .flow import FlowParams, track_lk
from .ingest import load_sequence
from .link import filter_tracks, link_spots, subtract_drift
from .locate import locate_sequence
from .model import C_GRID, SCALERS, save_model
from .synth import SceneSpec, simulate

log = logging.getLogger(__name__)

DEFAULTS = {
    "seed": 0,
    "out_dir": "run",
    "threads": 1,
    "allow_extended": False,
    "data": {
        "source": "synth",  # synth | frames
        "n_videos": 60,
        "particles": 24,
        "fps": 50.0,
        "scene": {},
        "videos_dir": "",
        "labels": "",
        "folds": "",
        "n_folds": 3,
    },
    "tracker": {
        "kind": "crocker_grier",  # crocker_grier | lucas_kanade
        "diameter": 11,
        "minmass": 900.0,
        "percentile": 0.30,
        "noise_sigma": 1.0,
        "search_range": 5.0,
        "memory": 3,
        "min_length": 25,
        "drift_subtract": True,
        "max_corners": 100,
        "min_distance": 10.0,
        "block_size": 10,
        "quality_level": 0.01,
        "lk_window": 15,
        "pyramid_levels": 2,
        "fb_error_max": 1.0,
        "redetect_interval": 5,
    },
    "features": {"kind": "imsd", "lag_max": 10.0, "window": 10.0, "hop": 5.0},
    "bow": {"enabled": True, "n": [10000], "assign": [10]},
    "model": {
        "kind": "svr",  # svr | mlp | zeror
        "scalers": list(SCALERS),
        "C": list(C_GRID),
        "epsilon": 0.1,
        "internal_folds": 5,
        "mlp_draws": 10,
        "mlp_max_epochs": 300,
        "mlp_patience": 100,
    },
    "report": {"figures": True},
}


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k}")
        if isinstance(base[k], dict) and k != "scene":
            if not isinstance(v, dict):
                raise ConfigError(f"{where}{k} must be a table")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            doc = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(doc, path.parent, **overrides)

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".", **overrides) -> "ExperimentConfig":
        raw = _merge(DEFAULTS, doc)
        for k, v in overrides.items():
            if v is not None:
                raw[k] = v
        raw["bow"]["n"] = _as_list(raw["bow"]["n"])
        raw["bow"]["assign"] = _as_list(raw["bow"]["assign"])
        raw["model"]["C"] = _as_list(raw["model"]["C"])
        raw["model"]["scalers"] = _as_list(raw["model"]["scalers"])
        cfg = cls(raw, Path(base_dir))
        cfg.validate()
        return cfg

    def path(self, rel) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out_dir(self) -> Path:
        return self.path(self.raw["out_dir"])

    @property
    def video_ids(self) -> list[str]:
        d = self.raw["data"]
        if d["source"] == "synth":
            return [f"synth_{i:03d}" for i in range(d["n_videos"])]
        return sorted(io.read_folds(self.path(d["folds"])))

    @property
    def aggregation(self) -> str:
        if self.raw["bow"]["enabled"]:
            return "bow"
        return "direct" if self.raw["features"]["kind"] == "emsd" else "mean"

    def validate(self) -> None:
        r = self.raw
        d, t, f, b, m = r["data"], r["tracker"], r["features"], r["bow"], r["model"]
        if d["source"] not in ("synth", "frames"):
            raise ConfigError(f"data.source must be synth or frames, got {d['source']!r}")
        if t["kind"] not in ("crocker_grier", "lucas_kanade"):
            raise ConfigError(f"tracker.kind must be crocker_grier or lucas_kanade, got {t['kind']!r}")
        if f["kind"] not in ("cms", "imsd", "emsd"):
            raise ConfigError(f"features.kind must be cms, imsd or emsd, got {f['kind']!r}")
        if m["kind"] not in ("svr", "mlp", "zeror"):
            raise ConfigError(f"model.kind must be svr, mlp or zeror, got {m['kind']!r}")
        if int(r["threads"]) < 1:
            raise ConfigError("threads must be >= 1")
        if d["source"] == "synth":
            if d["n_videos"] < d["n_folds"]:
                raise ConfigError("need at least one synthetic video per fold")
            try:
                SceneSpec.from_dict(dict(d["scene"]))
            except (TypeError, MotilitrackError) as exc:
                raise ConfigError(f"data.scene: {exc}") from None
            if d["folds"] and not self.path(d["folds"]).is_file():
                raise ConfigError(f"fold file {self.path(d['folds'])} does not exist")
        else:
            for key in ("videos_dir", "labels", "folds"):
                if not d[key] or not self.path(d[key]).exists():
                    raise ConfigError(f"data.{key} {self.path(d[key]) if d[key] else '(unset)'} does not exist")
            missing = [v for v in self.video_ids if not (self.path(d["videos_dir"]) / v).exists()]
            if missing:
                raise ConfigError(f"videos missing under {d['videos_dir']}: {missing[:5]}")
        if not set(m["scalers"]) <= set(SCALERS):
            raise ConfigError(f"model.scalers must be drawn from {SCALERS}")
        if any(c <= 0 for c in m["C"]):
            raise ConfigError("model.C values must be positive")
        if any(a > n for n in b["n"] for a in b["assign"]):
            raise ConfigError("bow.assign values must not exceed bow.n")
        if not r["allow_extended"]:
            bad = []
            if b["enabled"]:
                bad += [f"bow.n={n}" for n in b["n"] if n not in CODEBOOK_SIZES]
                bad += [f"bow.assign={a}" for a in b["assign"] if a not in ASSIGN_COUNTS]
            bad += [f"model.C={c}" for c in m["C"] if not any(np.isclose(c, g) for g in C_GRID)]
            if f["kind"] == "emsd" and (float(f["window"]), float(f["hop"])) not in EMSD_CONFIGS:
                bad.append(f"features.window/hop={f['window']}/{f['hop']}")
            if bad:
                raise ConfigError(f"values outside the documented ranges (set allow_extended): {bad}")

    def pipeline_spec(self, n: int, a: int) -> PipelineSpec:
        m = self.raw["model"]
        return PipelineSpec(self.aggregation, int(n), int(a), m["kind"], tuple(m["scalers"]),
                            tuple(float(c) for c in m["C"]), float(m["epsilon"]), int(m["internal_folds"]),
                            int(m["mlp_draws"]), int(m["mlp_max_epochs"]), int(m["mlp_patience"]),
                            int(self.raw["seed"]))


# helpers

def _key(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True, default=str).encode()).hexdigest()


def _scene_for(cfg: ExperimentConfig, i: int) -> SceneSpec:
    """Class composition drawn per video; counts use largest remainders."""
    d = cfg.raw["data"]
    rng = np.random.default_rng([int(cfg.raw["seed"]), i])
    frac = rng.dirichlet(np.ones(3))
    total = int(d["particles"])
    counts = np.floor(frac * total).astype(int)
    for j in np.argsort(-(frac * total - counts), kind="stable")[: total - counts.sum()]:
        counts[j] += 1
    scene = dict(d["scene"])
    scene.update(n_progressive=int(counts[0]), n_non_progressive=int(counts[1]), n_immotile=int(counts[2]),
                 fps=float(d["fps"]), seed=int(rng.integers(2 ** 31)))
    return SceneSpec.from_dict(scene)


def track_video(seq, tracker: dict):
    """Run the configured tracker; returns (spots or None, tracks)."""
    if tracker["kind"] == "lucas_kanade":
        params = FlowParams(int(tracker["max_corners"]), float(tracker["min_distance"]), int(tracker["block_size"]),
                            float(tracker["quality_level"]), int(tracker["lk_window"]),
                            int(tracker["pyramid_levels"]), float(tracker["fb_error_max"]))
        return None, track_lk(seq, params, int(tracker["redetect_interval"]), int(tracker["min_length"]))
    per_frame = locate_sequence(seq, int(tracker["diameter"]), float(tracker["minmass"]),
                                float(tracker["percentile"]), float(tracker["noise_sigma"]))
    tracks = link_spots(per_frame, float(tracker["search_range"]), int(tracker["memory"]))
    tracks = filter_tracks(tracks, int(tracker["min_length"]))
    if tracker["drift_subtract"] and tracks:
        tracks, _ = subtract_drift(tracks)
    return [s for frame in per_frame for s in frame], tracks


def feature_rows(video_id: str, tracks, feat: dict, fps: float, n_frames: int | None = None):
    kind = feat["kind"]
    if kind == "cms":
        return [(video_id, "cms", t.particle_id, cms(t).values) for t in tracks]
    if kind == "imsd":
        return [(video_id, "imsd", t.particle_id, imsd(t, float(feat["lag_max"]), fps).values) for t in tracks]
    if not tracks:
        return []
    return [(video_id, "emsd", v.ref_id, v.values)
            for v in emsd(tracks, float(feat["window"]), float(feat["hop"]), fps, n_frames)]


# manifest

class Manifest:
    def __init__(self, path: Path):
        self.path = path
        self.stages = json.loads(path.read_text())["stages"] if path.is_file() else {}

    def fresh(self, stage: str, key: str, root: Path) -> bool:
        entry = self.stages.get(stage)
        if not entry or entry["key"] != key:
            return False
        return all((root / rel).is_file() and io.sha256_file(root / rel) == h for rel, h in entry["outputs"].items())

    def record(self, stage: str, key: str, root: Path, outputs) -> None:
        self.stages[stage] = {"key": key, "outputs": {str(p.relative_to(root)): io.sha256_file(p) for p in outputs}}
        io.atomic_write_text(self.path, json.dumps({"stages": self.stages}, sort_keys=True, indent=2) + "\n")


@dataclass
class RunResult:
    plan: list  # (stage, "run" | "skip")
    executed: list = field(default_factory=list)
    report: dict | None = None
    report_path: Path | None = None


def plan_stages(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    """Stage names with the chained key each would run under."""
    r = cfg.raw
    d = r["data"]
    if d["source"] == "synth":
        data_key = _key("data", d, r["seed"], _file_key(cfg, d["folds"]))
    else:
        data_key = _key("data", _file_key(cfg, d["labels"]), _file_key(cfg, d["folds"]), d["fps"])
    stages = [("data", data_key)]
    track_keys = []
    for i, vid in enumerate(cfg.video_ids):
        if d["source"] == "synth":
            src = _scene_for(cfg, i).__dict__
        else:
            src = _dir_key(cfg.path(d["videos_dir"]) / vid)
        k = _key("track", vid, src, r["tracker"], d["fps"])
        stages.append((f"track:{vid}", k))
        track_keys.append(k)
    feat_key = _key("features", r["features"], d["fps"], track_keys)
    stages.append(("features", feat_key))
    cv_key = _key("cv", feat_key, data_key, r["bow"], r["model"], r["seed"], cfg.aggregation)
    stages.append(("cv", cv_key))
    if r["report"]["figures"]:
        stages.append(("figures", _key("figures", cv_key)))
    return stages


def _file_key(cfg, rel):
    if not rel:
        return None
    p = cfg.path(rel)
    return io.sha256_file(p) if p.is_file() else None


def _dir_key(path: Path):
    if path.is_file():
        return io.sha256_file(path)
    return [(p.name, io.sha256_file(p)) for p in sorted(path.iterdir()) if p.is_file()]


def run(cfg: ExperimentConfig, dry_run: bool = False) -> RunResult:
    stages = plan_stages(cfg)
    root = cfg.out_dir
    manifest = Manifest(root / "manifest.json")
    plan = [(name, "skip" if manifest.fresh(name, key, root) else "run") for name, key in stages]
    result = RunResult(plan)
    if dry_run:
        return result
    root.mkdir(parents=True, exist_ok=True)
    keys = dict(stages)
    todo = {name for name, state in plan if state == "run"}
    threads = int(cfg.raw["threads"])
    d = cfg.raw["data"]
    fps = float(d["fps"])
    vids = cfg.video_ids

    def stage(name, fn, context):
        try:
            outputs = fn()
        except MotilitrackError as exc:
            raise StageError(name, context, exc) from exc
        manifest.record(name, keys[name], root, outputs)
        result.executed.append(name)

    labels_path, folds_path = root / "labels.csv", root / "folds.csv"

    def do_data():
        if d["source"] == "synth":
            labels = {vid: _scene_for(cfg, i).motility_label() for i, vid in enumerate(vids)}
            folds = (io.read_folds(cfg.path(d["folds"])) if d["folds"]
                     else make_folds(vids, n_folds=int(d["n_folds"]), seed=int(cfg.raw["seed"])).assignments)
        else:
            labels = io.read_labels(cfg.path(d["labels"]))
            folds = io.read_folds(cfg.path(d["folds"]))
        FoldSplit(folds)
        io.write_labels(labels_path, labels)
        io.write_folds(folds_path, folds)
        return [labels_path, folds_path]

    if "data" in todo:
        stage("data", do_data, d["folds"] or "synthetic scenes")

    def do_track(i, vid):
        if d["source"] == "synth":
            spec = _scene_for(cfg, i)
            seq, truth = simulate(spec, vid)
            truth_path = root / "truth" / f"{vid}.csv"
            truth_path.parent.mkdir(parents=True, exist_ok=True)
            tmp = truth_path.with_suffix(".tmp")
            truth.to_csv(tmp)
            os.replace(tmp, truth_path)
            extra = [truth_path]
        else:
            seq = load_sequence(cfg.path(d["videos_dir"]) / vid, fps)
            extra = []
        spots, tracks = track_video(seq, cfg.raw["tracker"])
        outputs = []
        if spots is not None:
            io.write_spots(root / "spots" / f"{vid}.csv", spots)
            outputs.append(root / "spots" / f"{vid}.csv")
        io.write_tracks(root / "tracks" / f"{vid}.csv", tracks)
        return outputs + [root / "tracks" / f"{vid}.csv"] + extra

    track_todo = [(i, vid) for i, vid in enumerate(vids) if f"track:{vid}" in todo]

    def track_one(item):
        i, vid = item
        try:
            return vid, do_track(i, vid)
        except MotilitrackError as exc:
            raise StageError(f"track:{vid}", str(cfg.path(d["videos_dir"]) / vid) if d["videos_dir"] else vid,
                             exc) from exc

    if threads > 1 and len(track_todo) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            done = list(pool.map(track_one, track_todo))
    else:
        done = [track_one(item) for item in track_todo]
    for vid, outputs in done:
        manifest.record(f"track:{vid}", keys[f"track:{vid}"], root, outputs)
        result.executed.append(f"track:{vid}")

    features_path = root / "features.csv"

    def do_features():
        rows = []
        n_frames = None
        if d["source"] == "synth":
            n_frames = SceneSpec.from_dict(dict(d["scene"])).frames
        for vid in vids:
            tracks = io.read_tracks(root / "tracks" / f"{vid}.csv")
            if not tracks:
                log.warning("video %s has no tracks after filtering", vid)
            rows.extend(feature_rows(vid, tracks, cfg.raw["features"], fps, n_frames))
        if not rows:
            raise EmptySample("no feature vectors in any video")
        io.write_features(features_path, rows)
        return [features_path]

    if "features" in todo:
        stage("features", do_features, str(root / "tracks"))

    report_path = root / "report.json"

    def do_cv():
        labels = io.read_labels(labels_path)
        folds = FoldSplit(io.read_folds(folds_path))
        feats = io.read_features(features_path)
        dim = next(iter(feats.values()))[2].shape[1]
        samples = {v: (feats[v][2] if v in feats else np.zeros((0, dim))) for v in folds.assignments}
        grid_rows, best = [], None
        for n in cfg.raw["bow"]["n"] if cfg.aggregation == "bow" else [0]:
            for a in cfg.raw["bow"]["assign"] if cfg.aggregation == "bow" else [1]:
                spec = cfg.pipeline_spec(n or 1, a)
                arts = {}
                rep = run_cv(samples, labels, folds, spec, threads=threads,
                             extra_config={"experiment": _public_config(cfg)},
                             on_fold=lambda k, model, cb, arts=arts: arts.__setitem__(k, (model, cb)))
                if cfg.aggregation == "bow":
                    grid_rows.append({"n": n, "assign": a, "val_mae": rep.mean["val_mae"],
                                      "eval_mae": rep.mean["eval_mae"], "eval_rmse": rep.mean["eval_rmse"]})
                score = rep.mean["val_mae"]
                if best is None or (np.isfinite(score) and not score >= best[0]):
                    best = (score, rep, arts)
        _, rep, arts = best
        outputs = []
        for k, (model, cb) in sorted(arts.items()):
            if cb is not None:
                cb.save(root / "codebooks" / f"fold{k}.json")
                outputs.append(root / "codebooks" / f"fold{k}.json")
            if rep.config["pipeline"]["model"] != "zeror":
                save_model(model, root / "models" / f"fold{k}.json")
                outputs.append(root / "models" / f"fold{k}.json")
        doc = rep.to_dict()
        if grid_rows:
            doc["grid"] = grid_rows
        text = json.dumps(json_safe(doc), sort_keys=True, indent=2) + "\n"
        io.atomic_write_text(report_path, text)
        preds = [(v, p) for f in rep.folds for v, p in sorted(f["predictions"].items())]
        io.write_predictions(root / "predictions.csv", [v for v, _ in preds], [p for _, p in preds])
        return outputs + [report_path, root / "predictions.csv"]

    if "cv" in todo:
        stage("cv", do_cv, str(features_path))

    def do_figures():
        report = json.loads(report_path.read_text())
        labels = io.read_labels(labels_path)
        figs = root / "figures"
        out = [plotting.plot_fold_errors(report, figs / "fold_errors.png"),
               plotting.plot_predictions(report, labels, figs / "predictions.png")]
        return out

    if "figures" in todo:
        stage("figures", do_figures, str(report_path))

    result.report = json.loads(report_path.read_text())
    result.report_path = report_path
    return result


def _public_config(cfg: ExperimentConfig) -> dict:
    """Resolved config without machine-specific fields, for the report fingerprint."""
    r = copy.deepcopy(cfg.raw)
    for k in ("out_dir", "threads"):
        r.pop(k, None)
    return r

