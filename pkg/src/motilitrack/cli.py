"""Command-line front-end. Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical failure."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import io
from .bow import Codebook, build_codebook, encode
from .errors import ConfigError, EvalError, MotilitrackError, SpecError
from .evaluation import FoldSplit
from .features import MsdVector
from .flow import FlowParams, track_lk
from .ingest import load_sequence, save_sequence
from .link import filter_tracks, link_spots, subtract_drift
from .locate import locate_sequence
from .model import C_GRID, SCALERS, aggregate_by_video, load_model, predict, save_model, search_mlp, select_svr, train_svr
from .pipeline import ExperimentConfig, feature_rows, run, tomllib
from .synth import SceneSpec, simulate

log = logging.getLogger("motilitrack")


def _floats(text):
    return [float(v) for v in text.split(",") if v]


def _strs(text):
    return [v for v in text.split(",") if v]


def cmd_ingest(a):
    seq = load_sequence(a.input, a.fps)
    print(f"{seq.video_id}\t{len(seq)} frames\t{seq.width}x{seq.height}\t{seq.fps:g} fps")
    if a.out and not a.check:
        save_sequence(seq, a.out, container=True)
    return 0


def cmd_locate(a):
    seq = load_sequence(a.input, a.fps)
    per_frame = locate_sequence(seq, a.diameter, a.minmass, a.percentile, a.noise_sigma, a.threads)
    spots = [s for frame in per_frame for s in frame]
    io.write_spots(a.out, spots)
    log.info("%d spots in %d frames", len(spots), len(seq))
    return 0


def cmd_link(a):
    spots = io.read_spots(a.spots)
    tracks = filter_tracks(link_spots(spots, a.search_range, a.memory), a.min_length)
    if a.drift_subtract:
        tracks, drift = subtract_drift(tracks)
        if a.drift_out:
            with io.atomic_open(a.drift_out, "w", newline="") as fh:
                fh.write("frame,dx,dy\n")
                for f, (dx, dy) in zip(drift.frames, drift.offsets):
                    fh.write(f"{int(f)},{dx!r},{dy!r}\n")
    io.write_tracks(a.out, tracks)
    log.info("%d tracks", len(tracks))
    return 0


def cmd_track_lk(a):
    seq = load_sequence(a.input, a.fps)
    params = FlowParams(a.max_corners, a.min_distance, a.block_size, a.quality_level,
                        a.lk_window, a.pyramid_levels, a.fb_error_max)
    tracks = track_lk(seq, params, a.redetect_interval, a.min_length)
    io.write_tracks(a.out, tracks)
    log.info("%d tracks", len(tracks))
    return 0


def _track_sources(specs):
    out = []
    for spec in specs:
        vid, sep, path = spec.partition("=")
        if not sep:
            vid, path = Path(spec).stem, spec
        out.append((vid, path))
    ids = [v for v, _ in out]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate video ids in --tracks: {ids}")
    return out


def cmd_featurize(a):
    feat = {"kind": a.kind, "lag_max": a.lag_max, "window": a.window, "hop": a.hop}
    rows = []
    for vid, path in _track_sources(a.tracks):
        tracks = io.read_tracks(path)
        rows.extend(feature_rows(vid, tracks, feat, a.fps))
    io.write_features(a.out, rows)
    if a.plot and a.kind in ("imsd", "emsd"):
        from .plotting import plot_msd
        plot_msd([MsdVector(a.kind, r[2], np.asarray(r[3]), (0, len(r[3])), a.fps) for r in rows], a.plot)
    log.info("%d %s vectors", len(rows), a.kind)
    return 0


def _samples(path, kind=None):
    return {vid: mat for vid, (_, _, mat) in io.read_features(path, kind).items()}


def cmd_codebook(a):
    samples = _samples(a.features, a.kind)
    folds = FoldSplit(io.read_folds(a.folds))
    train = folds.train_ids(a.fold) if a.fold else sorted(folds.assignments)
    missing = [v for v in train if v not in samples]
    if missing:
        log.warning("%d training videos have no feature rows: %s", len(missing), missing[:5])
    cb = build_codebook([samples[v] for v in train if v in samples], a.n, a.seed, a.assign)
    cb.save(a.out)
    return 0


def cmd_encode(a):
    cb = Codebook.load(a.codebook)
    rows = []
    for vid, mat in _samples(a.features, a.kind).items():
        rows.append((vid, "bow", 0, encode(mat, cb, a.assign, vid).weighted))
    io.write_features(a.out, rows)
    return 0


def _design(samples, ids, labels, aggregate):
    X, groups = [], []
    for vid in ids:
        if vid not in labels:
            raise EvalError(f"no label for video {vid}")
        mat = samples[vid]
        if aggregate == "mean":
            mat = mat.mean(axis=0, keepdims=True)
        X.append(mat)
        groups += [vid] * mat.shape[0]
    Y = np.array([labels[g] for g in groups])
    return np.vstack(X), Y, np.array(groups)


def cmd_train(a):
    samples = _samples(a.features, a.kind)
    labels = io.read_labels(a.labels)
    folds = FoldSplit(io.read_folds(a.folds)) if a.folds else None
    ks = [a.fold] if a.fold else (folds.folds if folds else [0])
    if len(ks) > 1 and "{K}" not in a.out:
        raise ConfigError("--out must contain {K} when training one model per fold")
    for k in ks:
        ids = folds.train_ids(k) if k else sorted(samples)
        ids = [v for v in ids if v in samples]
        X, Y, groups = _design(samples, ids, labels, a.aggregate)
        if a.model == "svr":
            scaler, C, cv_mae, _ = select_svr(X, Y, a.scalers, a.C, a.epsilon, 5, a.seed, groups)
            model = train_svr(X, Y, scaler, C, a.epsilon, seed=a.seed)
            log.info("fold %s: scaler=%s C=%g internal MAE %.3f", k, scaler, C, cv_mae)
        else:
            model, scores, cfg = search_mlp(X, Y, a.mlp_draws, a.seed, groups, max_epochs=a.mlp_max_epochs)
            log.info("fold %s: validation MAE %.3f with %s", k, scores["mae"], cfg)
        save_model(model, a.out.replace("{K}", str(k)))
    return 0


def cmd_predict(a):
    model = load_model(a.model)
    rows, groups = [], []
    for vid, mat in _samples(a.features, a.kind).items():
        rows.append(mat)
        groups += [vid] * mat.shape[0]
    ids, pred = aggregate_by_video(predict(model, np.vstack(rows)), groups)
    io.write_predictions(a.out, ids, pred)
    return 0


def cmd_evaluate(a):
    cfg = ExperimentConfig.load(a.config, threads=a.threads, allow_extended=True if a.allow_extended else None)
    result = run(cfg, dry_run=a.dry_run)
    if a.dry_run:
        for name, state in result.plan:
            print(f"{state}\t{name}")
        return 0
    if a.out:
        Path(a.out).parent.mkdir(parents=True, exist_ok=True)
        if Path(a.out).resolve() != result.report_path.resolve():
            shutil.copyfile(result.report_path, a.out)
    m = result.report["mean"]
    print(f"eval MAE {m['eval_mae']:.3f}  RMSE {m['eval_rmse']:.3f}"
          + (f"  (ZeroR MAE {m['baseline_mae']:.3f})" if "baseline_mae" in m else ""))
    return 0


def cmd_synth(a):
    try:
        doc = tomllib.loads(Path(a.spec).read_text()) if a.spec else {}
    except FileNotFoundError:
        raise ConfigError(f"scene spec {a.spec} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{a.spec}: {exc}") from None
    doc = doc.get("scene", doc)
    if a.seed is not None:
        doc["seed"] = a.seed
    try:
        spec = SceneSpec.from_dict(doc)
    except TypeError as exc:
        raise SpecError(str(exc)) from None
    seq, truth = simulate(spec, a.video_id)
    save_sequence(seq, a.out_frames, container=a.container)
    if a.out_truth:
        truth.to_csv(a.out_truth)
    if a.out_labels:
        io.write_labels(a.out_labels, {a.video_id: truth.motility_label()})
    p, n, i = truth.motility_label()
    print(f"{a.video_id}\tprogressive {p:.2f}\tnon_progressive {n:.2f}\timmotile {i:.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS,
                        help="-v for progress, -vv for debug output")
    p = argparse.ArgumentParser(prog="motilitrack", description=__doc__, parents=[common])
    p.set_defaults(verbose=0)
    sub = p.add_subparsers(dest="command", required=True)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    s = sub.add_parser("ingest", help="validate a frame sequence")
    s.add_argument("--input", required=True)
    s.add_argument("--fps", type=float)
    s.add_argument("--check", action="store_true", help="validate only")
    s.add_argument("--out", help="write an MTRK1 container")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("locate", help="bandpass and locate spots in every frame")
    s.add_argument("--input", required=True)
    s.add_argument("--fps", type=float)
    s.add_argument("--diameter", type=int, default=11)
    s.add_argument("--minmass", type=float, default=900.0)
    s.add_argument("--percentile", type=float, default=0.30)
    s.add_argument("--noise-sigma", type=float, default=1.0)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_locate)

    s = sub.add_parser("link", help="link spots into trajectories")
    s.add_argument("--spots", required=True)
    s.add_argument("--search-range", type=float, default=5.0)
    s.add_argument("--memory", type=int, default=3)
    s.add_argument("--min-length", type=int, default=25)
    s.add_argument("--drift-subtract", action="store_true")
    s.add_argument("--drift-out")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_link)

    s = sub.add_parser("track-lk", help="Lucas-Kanade corner tracking")
    s.add_argument("--input", required=True)
    s.add_argument("--fps", type=float)
    d = FlowParams()
    s.add_argument("--max-corners", type=int, default=d.max_corners)
    s.add_argument("--min-distance", type=float, default=d.min_distance)
    s.add_argument("--block-size", type=int, default=d.block_size)
    s.add_argument("--quality-level", type=float, default=d.quality_level)
    s.add_argument("--lk-window", type=int, default=d.lk_window)
    s.add_argument("--pyramid-levels", type=int, default=d.pyramid_levels)
    s.add_argument("--fb-error-max", type=float, default=d.fb_error_max)
    s.add_argument("--redetect-interval", type=int, default=5)
    s.add_argument("--min-length", type=int, default=25)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_track_lk)

    s = sub.add_parser("featurize", help="cms / imsd / emsd feature vectors")
    s.add_argument("--tracks", required=True, action="append", metavar="[VIDEO_ID=]PATH")
    s.add_argument("--kind", choices=("cms", "imsd", "emsd"), default="imsd")
    s.add_argument("--lag-max", type=float, default=10.0, help="seconds")
    s.add_argument("--window", type=float, default=10.0, help="emsd window, seconds")
    s.add_argument("--hop", type=float, default=5.0, help="emsd hop, seconds")
    s.add_argument("--fps", type=float, default=50.0)
    s.add_argument("--plot", help="also draw MSD curves to this PNG")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("codebook", help="build a BoW codebook from training-fold videos")
    s.add_argument("--features", required=True)
    s.add_argument("--kind")
    s.add_argument("--folds", required=True)
    s.add_argument("--fold", type=int, help="held-out fold; its videos are excluded")
    s.add_argument("--n", type=int, default=10000)
    s.add_argument("--assign", type=int, default=10, help="assignments used for idf")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_codebook)

    s = sub.add_parser("encode", help="BoW histograms per video")
    s.add_argument("--features", required=True)
    s.add_argument("--kind")
    s.add_argument("--codebook", required=True)
    s.add_argument("--assign", type=int, default=10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("train", help="fit a regressor on training folds")
    s.add_argument("--features", required=True)
    s.add_argument("--kind")
    s.add_argument("--labels", required=True)
    s.add_argument("--folds")
    s.add_argument("--fold", type=int, help="train only the model that holds out this fold")
    s.add_argument("--model", choices=("svr", "mlp"), default="svr")
    s.add_argument("--aggregate", choices=("direct", "mean"), default="direct",
                   help="multi-row videos: one row per vector, or their mean")
    s.add_argument("--C", type=_floats, default=list(C_GRID))
    s.add_argument("--scalers", type=_strs, default=list(SCALERS))
    s.add_argument("--epsilon", type=float, default=0.1)
    s.add_argument("--mlp-draws", type=int, default=10)
    s.add_argument("--mlp-max-epochs", type=int, default=300)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="may contain {K} for the fold index")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="per-video predictions")
    s.add_argument("--features", required=True)
    s.add_argument("--kind")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="run an experiment config end to end")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--dry-run", action="store_true")
    s.add_argument("--threads", type=int)
    s.add_argument("--allow-extended", action="store_true")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="render a synthetic video with ground truth")
    s.add_argument("--spec", help="TOML scene file (keys of SceneSpec, optionally under [scene])")
    s.add_argument("--seed", type=int)
    s.add_argument("--video-id", default="synthetic")
    s.add_argument("--container", action="store_true", help="write one MTRK1 file instead of PGMs")
    s.add_argument("--out-frames", required=True)
    s.add_argument("--out-truth")
    s.add_argument("--out-labels")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MotilitrackError as exc:
        print(f"motilitrack {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"motilitrack {args.command}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
