"""Multi-scale frame statistics.

Feature layout (28 values), frozen:

    for scale in (1, 2, 4):            # box-downsample factor
        for channel in (R, G, B):
            mean, variance, neighbour-difference
    stat_diff(frame, previous frame)   # 0.0 for the first frame

"Neighbour-difference" is the mean absolute difference over all horizontally
and vertically adjacent pixel pairs, a cheap high-frequency energy measure.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, FrameTooSmall
from .frame_io import Frame

SCALES = (1, 2, 4)
STATS = ("mean", "var", "nbr")
CHANNELS = ("R", "G", "B")
N_FEATURES = len(SCALES) * len(CHANNELS) * len(STATS) + 1
MIN_SIZE = 4


def feature_names() -> list[str]:
    names = [f"s{s}_{c}_{st}" for s in SCALES for c in CHANNELS for st in STATS]
    return names + ["stat_diff"]


def _pixels(x) -> np.ndarray:
    return x.pixels if isinstance(x, Frame) else np.asarray(x, dtype=np.float64)


def stat_diff(a, b) -> float:
    """sum((a - mean(a))^2) - sum((b - mean(b))^2) over every pixel and channel."""
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise DimensionMismatch(f"cannot compare frames of shape {pa.shape} and {pb.shape}")
    return float(np.sum((pa - pa.mean()) ** 2) - np.sum((pb - pb.mean()) ** 2))


def box_downsample(pixels: np.ndarray, factor: int) -> np.ndarray:
    """Average non-overlapping factor x factor blocks; remainder rows/cols are dropped."""
    if factor == 1:
        return pixels
    h, w = pixels.shape[0] // factor, pixels.shape[1] // factor
    cropped = pixels[: h * factor, : w * factor]
    return cropped.reshape(h, factor, w, factor, -1).mean(axis=(1, 3))


def neighbour_diff(plane: np.ndarray) -> float:
    dx = np.abs(np.diff(plane, axis=1))
    dy = np.abs(np.diff(plane, axis=0))
    n = dx.size + dy.size
    if n == 0:
        return 0.0
    return float((dx.sum() + dy.sum()) / n)


def pyramid_stats(pixels: np.ndarray) -> np.ndarray:
    out = []
    for s in SCALES:
        level = box_downsample(pixels, s)
        for c in range(3):
            plane = level[:, :, c]
            out += [plane.mean(), plane.var(), neighbour_diff(plane)]
    return np.array(out, dtype=np.float64)


def extract_features(frame: Frame, prev: Frame | None = None) -> np.ndarray:
    if frame.width < MIN_SIZE or frame.height < MIN_SIZE:
        raise FrameTooSmall(
            f"frame {frame.index} is {frame.width}x{frame.height}; need at least {MIN_SIZE}x{MIN_SIZE}")
    diff = 0.0 if prev is None else stat_diff(frame, prev)
    return np.append(pyramid_stats(frame.pixels), diff)


def extract_sequence(frames: Sequence[Frame]) -> np.ndarray:
    """Feature matrix for consecutive frames, each paired with its predecessor."""
    rows = [extract_features(f, frames[i - 1] if i else None) for i, f in enumerate(frames)]
    return np.array(rows).reshape(len(rows), N_FEATURES)


def dump_features_csv(indices: Iterable[int], matrix: np.ndarray, path: str | Path) -> None:
    header = ["index"] + [f"f{k:02d}" for k in range(N_FEATURES)]
    lines = [",".join(header)]
    for idx, row in zip(indices, matrix):
        lines.append(",".join([str(int(idx))] + [repr(float(v)) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
