"""Frame sequence loading and Crocker-Grier style preprocessing."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import IngestError, ParamError

FRAME_PATTERN = re.compile(r"^frame_(\d+)\.pgm$")
CONTAINER_MAGIC = b"MTRK1"


@dataclass(frozen=True)
class FrameSequence:
    video_id: str
    fps: float
    frames: np.ndarray  # (n, height, width) uint8

    def __post_init__(self):
        frames = np.asarray(self.frames).view()
        if frames.ndim != 3 or frames.shape[0] < 1:
            raise IngestError(f"{self.video_id}: expected a non-empty stack of 2-D frames")
        if not self.fps > 0:
            raise IngestError(f"{self.video_id}: fps must be positive, got {self.fps}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    def __len__(self):
        return self.frames.shape[0]

    def __iter__(self):
        return iter(self.frames)


@dataclass(frozen=True)
class FilteredFrame:
    frame_index: int
    pixels: np.ndarray


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval; '#' comments allowed between tokens
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IngestError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace before raster
    if tokens[0] != b"P5":
        raise IngestError(f"{path}: not a binary P5 PGM")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise IngestError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise IngestError(f"{path}: only 8-bit PGM (maxval 255) is supported")
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise IngestError(f"{path}: raster shorter than {width}x{height}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    height, width = image.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (width, height))
        fh.write(image.tobytes())


def _load_directory(path: Path, fps: float) -> FrameSequence:
    indexed = []
    for name in os.listdir(path):
        m = FRAME_PATTERN.match(name)
        if m:
            indexed.append((int(m.group(1)), name))
    if not indexed:
        raise IngestError(f"{path}: no frame_NNNNNN.pgm files found")
    indexed.sort()
    indices = [i for i, _ in indexed]
    if indices != list(range(len(indices))):
        missing = sorted(set(range(indices[-1] + 1)) - set(indices))
        raise IngestError(f"{path}: frame indices are not contiguous from 0 (missing {missing[:5]})")
    frames = [_read_pgm(path / name) for _, name in indexed]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise IngestError(f"{path}: mixed frame geometry {sorted(shapes)}")
    return FrameSequence(path.name, fps, np.stack(frames))


def _load_container(path: Path, fps: float | None) -> FrameSequence:
    with open(path, "rb") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 5 or parts[0] != CONTAINER_MAGIC:
            raise IngestError(f"{path}: bad container header {header[:40]!r}")
        try:
            width, height = int(parts[1]), int(parts[2])
            header_fps = float(parts[3])
            count = int(parts[4])
        except ValueError as exc:
            raise IngestError(f"{path}: bad container header {header[:40]!r}") from exc
        body = fh.read()
    if count < 1 or len(body) != count * width * height:
        raise IngestError(f"{path}: expected {count} frames of {width}x{height}, got {len(body)} bytes")
    frames = np.frombuffer(body, dtype=np.uint8).reshape(count, height, width)
    return FrameSequence(path.stem, fps if fps is not None else header_fps, frames)


def load_sequence(path, fps: float | None = None) -> FrameSequence:
    """Load a frame directory (``frame_%06d.pgm``) or an ``MTRK1`` raw container.

    For directories ``fps`` defaults to 50; for containers the header value is
    used unless ``fps`` is given explicitly.
    """
    path = Path(path)
    if path.is_dir():
        return _load_directory(path, 50.0 if fps is None else fps)
    if path.is_file():
        return _load_container(path, fps)
    raise IngestError(f"{path}: no such file or directory")


def save_sequence(seq: FrameSequence, path, container: bool = False) -> None:
    path = Path(path)
    if container:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(b"MTRK1 %d %d %s %d\n" % (seq.width, seq.height,
                                               repr(float(seq.fps)).encode(), len(seq)))
            fh.write(np.ascontiguousarray(seq.frames).tobytes())
        return
    path.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        write_pgm(path / f"frame_{i:06d}.pgm", frame)


def bandpass(frame, feature_diameter: int = 11, noise_sigma: float = 1.0,
             frame_index: int = 0) -> FilteredFrame:
    """Background removal plus noise smoothing.

    Computes ``max(gaussian(frame, noise_sigma) - boxcar(frame, feature_diameter), 0)``
    with edge-replicated borders.
    """
    if int(feature_diameter) != feature_diameter or feature_diameter < 3 or feature_diameter % 2 == 0:
        raise ParamError(f"feature_diameter must be an odd integer >= 3, got {feature_diameter}")
    if not noise_sigma > 0:
        raise ParamError(f"noise_sigma must be positive, got {noise_sigma}")
    image = np.asarray(frame, dtype=np.float64)
    smoothed = ndimage.gaussian_filter(image, noise_sigma, mode="nearest")
    background = ndimage.uniform_filter(image, size=int(feature_diameter), mode="nearest")
    out = smoothed - background
    np.maximum(out, 0.0, out=out)
    return FilteredFrame(frame_index, out)
