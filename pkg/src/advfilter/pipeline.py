"""Batch and streaming detection over frame datasets.

Batch mode fits one forest on every frame of the dataset (clean and attacked
alike, as an unsupervised deployment would) and flags the top
``contamination`` fraction. Stream mode fits on a presumed-clean warmup and
scores each later frame as it arrives, looking only at that frame and its
predecessor.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import shutil
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import isoforest
from .errors import EmptyDataset, IoError, SchemaViolation, WarmupTooShort
from .features import extract_features
from .frame_io import (DatasetManifest, Frame, ManifestEntry, load_frame, output_relpath,
                       write_manifest)
from .parallel import ordered_map

log = logging.getLogger(__name__)

TRUTH_VALUES = ("attacked", "clean", "unknown")
CSV_HEADER = ("frame_index", "score", "threshold", "flagged", "truth", "epsilon")


@dataclass(frozen=True)
class DetectionRecord:
    frame_index: int
    score: float
    threshold: float
    flagged: bool
    truth: str = "unknown"
    epsilon: float | None = None


@dataclass(frozen=True)
class StreamConfig:
    mode: str = "batch"
    warmup: int = 50
    refit_every: int | None = None
    workers: int = 1
    contamination: float = 0.1
    seed: int = 42
    n_trees: int = 100

    def __post_init__(self):
        if self.mode not in ("batch", "stream"):
            raise ValueError(f"mode must be 'batch' or 'stream', got {self.mode!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.mode == "stream" and self.warmup < 2:
            raise WarmupTooShort(f"warmup must be at least 2 frames, got {self.warmup}")
        if self.refit_every is not None and self.refit_every < 1:
            raise ValueError("refit_every must be a positive frame count")
        if not 0.0 < self.contamination <= 0.5:
            raise ValueError("contamination must lie in (0, 0.5]")


def truth_of(entry: ManifestEntry) -> str:
    return "attacked" if entry.role == "adversarial" else "clean"


# --- batch ----------------------------------------------------------------------

def _feature_task(args) -> np.ndarray:
    path, index, prev_path, prev_index = args
    frame = load_frame(path, index)
    prev = load_frame(prev_path, prev_index) if prev_path is not None else None
    return extract_features(frame, prev)


def _score_task(args) -> np.ndarray:
    forest, X = args
    return isoforest.score_samples(forest, X)


def _check_single_track(manifest: DatasetManifest) -> None:
    seen = set()
    for e in manifest.entries:
        if e.index in seen:
            raise SchemaViolation(
                "$.frames", f"index {e.index} appears more than once; compose a single "
                "stream (one entry per index) before detection")
        seen.add(e.index)


def manifest_features(manifest: DatasetManifest, root: str | Path,
                      workers: int = 1) -> np.ndarray:
    """Feature matrix in manifest order; entry i is paired with entry i - 1."""
    root = Path(root)
    entries = manifest.entries
    tasks = []
    for i, e in enumerate(entries):
        prev = entries[i - 1] if i else None
        tasks.append((root / e.path, e.index,
                      root / prev.path if prev else None, prev.index if prev else 0))
    rows = ordered_map(_feature_task, tasks, workers)
    return np.array(rows)


def score_parallel(forest: isoforest.IsoForest, X: np.ndarray, workers: int = 1) -> np.ndarray:
    if workers == 1:
        return isoforest.score_samples(forest, X)
    chunks = np.array_split(X, min(workers, len(X)))
    return np.concatenate(ordered_map(_score_task, [(forest, c) for c in chunks], workers))


def run_batch(manifest: DatasetManifest, root: str | Path, config: StreamConfig,
              features: np.ndarray | None = None) -> tuple[list[DetectionRecord], isoforest.IsoForest]:
    if not manifest.entries:
        raise EmptyDataset("manifest has no frames")
    _check_single_track(manifest)
    X = manifest_features(manifest, root, config.workers) if features is None else features
    forest = isoforest.fit(X, n_trees=config.n_trees, contamination=config.contamination,
                           seed=config.seed, workers=config.workers)
    scores = score_parallel(forest, X, config.workers)
    threshold = isoforest.calibrate_threshold(forest, scores)
    records = [
        DetectionRecord(e.index, float(s), threshold, bool(s > threshold), truth_of(e), e.epsilon)
        for e, s in zip(manifest.entries, scores)
    ]
    return records, forest


# --- streaming --------------------------------------------------------------------

def run_stream(frames: Iterable[Frame], config: StreamConfig,
               truths: Iterable[tuple[str, float | None]] | None = None
               ) -> Iterator[DetectionRecord]:
    """Yield one record per frame, each before the next frame is read.

    Warmup frames are presumed clean: they are emitted unflagged once the
    forest is fitted on them. With ``refit_every`` set, the forest is refitted
    every that many post-warmup frames on the most recent ``warmup`` frames
    that were not flagged.
    """
    if config.warmup < 2:
        raise WarmupTooShort(f"warmup must be at least 2 frames, got {config.warmup}")
    truth_iter = iter(truths) if truths is not None else None

    def next_truth():
        if truth_iter is None:
            return "unknown", None
        return next(truth_iter)

    warm: list[tuple[int, np.ndarray, str, float | None]] = []
    window: deque[np.ndarray] = deque(maxlen=config.warmup)
    forest = None
    prev = None
    since_fit = 0
    refits = 0

    for frame in frames:
        feats = extract_features(frame, prev)
        prev = frame
        truth, eps = next_truth()
        if forest is None:
            warm.append((frame.index, feats, truth, eps))
            if len(warm) < config.warmup:
                continue
            X = np.array([w[1] for w in warm])
            forest = isoforest.fit(X, n_trees=config.n_trees, contamination=config.contamination,
                                   seed=config.seed, workers=config.workers)
            scores = isoforest.score_samples(forest, X)
            threshold = isoforest.calibrate_threshold(forest, scores)
            window.extend(X)
            for (idx, _, t, e), s in zip(warm, scores):
                yield DetectionRecord(idx, float(s), threshold, False, t, e)
            continue

        s = isoforest.score(forest, feats)
        flagged = s > forest.threshold
        yield DetectionRecord(frame.index, s, forest.threshold, flagged, truth, eps)
        if not flagged:
            window.append(feats)
        since_fit += 1
        if config.refit_every and since_fit >= config.refit_every and len(window) >= 2:
            refits += 1
            log.debug("refit %d at frame %d on %d frames", refits, frame.index, len(window))
            X = np.array(window)
            forest = isoforest.fit(X, n_trees=config.n_trees, contamination=config.contamination,
                                   seed=config.seed + refits, workers=1)
            isoforest.calibrate_threshold(forest, isoforest.score_samples(forest, X))
            since_fit = 0

    if forest is None and warm:
        raise WarmupTooShort(f"stream ended after {len(warm)} frames, before the "
                             f"{config.warmup}-frame warmup completed")


def stream_manifest(manifest: DatasetManifest, root: str | Path,
                    config: StreamConfig) -> list[DetectionRecord]:
    if not manifest.entries:
        raise EmptyDataset("manifest has no frames")
    _check_single_track(manifest)
    root = Path(root)
    frames = (load_frame(root / e.path, e.index) for e in manifest.entries)
    truths = ((truth_of(e), e.epsilon) for e in manifest.entries)
    return list(run_stream(frames, config, truths))


def detect(manifest: DatasetManifest, root: str | Path,
           config: StreamConfig) -> list[DetectionRecord]:
    if config.mode == "stream":
        return stream_manifest(manifest, root, config)
    return run_batch(manifest, root, config)[0]


# --- composing a test stream ------------------------------------------------------

def compose_stream(manifest: DatasetManifest, attack_fraction: float = 0.385,
                   seed: int = 42, clean_prefix: int = 50) -> DatasetManifest:
    """Pick one version of every frame: clean, or one of its adversarial copies.

    ``round(attack_fraction * n)`` frames after the first ``clean_prefix`` are
    attacked; epsilons are dealt out in a shuffled round-robin so every level
    gets the same count (plus or minus one).
    """
    by_index: dict[int, list[ManifestEntry]] = {}
    for e in manifest.entries:
        by_index.setdefault(e.index, []).append(e)
    indices = sorted(by_index)
    if not 0.0 <= attack_fraction <= 1.0:
        raise ValueError("attack_fraction must lie in [0, 1]")
    eligible = [i for i in indices[clean_prefix:]
                if any(e.role == "adversarial" for e in by_index[i])]
    n_attack = min(len(eligible), int(math.floor(attack_fraction * len(indices) + 0.5)))
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(eligible, size=n_attack, replace=False).tolist()) if n_attack else []
    epsilons = sorted({e.epsilon for e in manifest.entries if e.role == "adversarial"})
    deal = [epsilons[k % len(epsilons)] for k in range(n_attack)] if epsilons else []
    deal = [deal[k] for k in rng.permutation(len(deal))]
    pick = dict(zip(chosen, deal))

    entries = []
    for i in indices:
        versions = by_index[i]
        if i in pick:
            match = [e for e in versions if e.epsilon == pick[i]]
            # a frame lacking that level falls back to its strongest available attack
            entries.append(match[0] if match else versions[-1])
        else:
            clean = [e for e in versions if e.role == "clean"]
            if not clean:
                raise SchemaViolation("$.frames", f"index {i} has no clean version")
            entries.append(clean[0])
    return manifest.with_entries(entries)


# --- filtering and CSV ------------------------------------------------------------

def filter_frames(records: Sequence[DetectionRecord], manifest: DatasetManifest,
                  src_root: str | Path, out_dir: str | Path) -> DatasetManifest:
    """Copy unflagged frames to ``out_dir`` and write their manifest there."""
    src_root, out_dir = Path(src_root), Path(out_dir)
    flagged = {r.frame_index for r in records if r.flagged}
    known = {r.frame_index for r in records}
    kept = []
    for e in manifest.entries:
        if e.index not in known:
            raise ValueError(f"no detection record for frame {e.index}")
        if e.index in flagged:
            continue
        dst = out_dir / output_relpath(e.path)
        try:
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(src_root / e.path, dst)
        except OSError as exc:
            raise IoError(dst, exc.strerror or str(exc)) from exc
        kept.append(e)
    passed = manifest.with_entries(
        ManifestEntry(e.index, output_relpath(e.path).as_posix(), e.role, e.epsilon) for e in kept)
    write_manifest(passed, out_dir / "manifest.json")
    return passed


def _fmt(x: float) -> str:
    return f"{x:.9f}"


def detections_to_csv(records: Sequence[DetectionRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow([r.frame_index, _fmt(r.score), _fmt(r.threshold), int(r.flagged), r.truth,
                    "" if r.epsilon is None else _fmt(r.epsilon)])
    return buf.getvalue()


def write_detections(records: Sequence[DetectionRecord], path: str | Path) -> None:
    Path(path).write_text(detections_to_csv(records), encoding="ascii")


def read_detections(path: str | Path) -> list[DetectionRecord]:
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from exc
    except UnicodeDecodeError:
        raise SchemaViolation(path.name, "file is not ASCII text") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise SchemaViolation(f"{path.name}:1", f"header must be {','.join(CSV_HEADER)}")
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        where = f"{path.name}:{lineno}"
        if len(row) != len(CSV_HEADER):
            raise SchemaViolation(where, f"expected {len(CSV_HEADER)} columns, got {len(row)}")
        idx, score, thr, flagged, truth, eps = row
        if truth not in TRUTH_VALUES:
            raise SchemaViolation(f"{where}.truth", f"must be one of {TRUTH_VALUES}")
        if flagged not in ("0", "1"):
            raise SchemaViolation(f"{where}.flagged", "must be 0 or 1")
        try:
            record = DetectionRecord(int(idx), float(score), float(thr), flagged == "1", truth,
                                     float(eps) if eps else None)
        except ValueError:
            raise SchemaViolation(where, "non-numeric field") from None
        if not (math.isfinite(record.score) and math.isfinite(record.threshold)):
            raise SchemaViolation(where, "score and threshold must be finite")
        records.append(record)
    return records
