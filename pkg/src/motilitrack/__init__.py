"""Unsupervised particle tracking and motility regression for microscopy videos."""

from .bow import BowHistogram, Codebook, build_codebook, encode
from .errors import MotilitrackError
from .evaluation import EvalReport, FoldSplit, PipelineSpec, mae, make_folds, rmse, run_cv
from .features import CmsFeature, MsdVector, cms, emsd, imsd
from .flow import FlowParams, detect_corners, lk_step, track_lk
from .ingest import FilteredFrame, FrameSequence, bandpass, load_sequence, save_sequence
from .link import DriftSeries, Trajectory, filter_tracks, link_spots, subtract_drift
from .locate import Spot, find_maxima, locate_frame, locate_sequence, refine
from .model import MotilityLabel, predict, select_svr, train_mlp, train_svr
from .synth import GroundTruth, SceneSpec, score_tracking, simulate

__version__ = "0.1.0"

__all__ = [
    "BowHistogram", "CmsFeature", "Codebook", "DriftSeries", "EvalReport", "FilteredFrame", "FlowParams",
    "FoldSplit", "FrameSequence", "GroundTruth", "MotilitrackError", "MotilityLabel", "MsdVector",
    "PipelineSpec", "SceneSpec", "Spot", "Trajectory", "bandpass", "build_codebook", "cms",
    "detect_corners", "emsd", "encode", "filter_tracks", "find_maxima", "imsd", "link_spots",
    "lk_step", "load_sequence", "locate_frame", "locate_sequence", "mae", "make_folds", "predict", "refine", "rmse",
    "run_cv", "save_sequence", "score_tracking", "select_svr", "simulate", "subtract_drift",
    "track_lk", "train_mlp", "train_svr",
]
