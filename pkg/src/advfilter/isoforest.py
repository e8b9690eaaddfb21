"""Isolation Forest.

Trees are stored as flat node arrays (pre-order, left child first). Each tree
draws from its own child of ``SeedSequence(seed)``, so the forest is the same
whether trees are built sequentially or by a pool.

Scores follow the usual orientation: ``s(x) = 2 ** (-E[h(x)] / c(psi))`` is
close to 1 for easily isolated points and about 0.5 for unremarkable ones.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, NonFiniteFeature, NotFitted, TooFewPoints
from .parallel import ordered_map

EULER_GAMMA = 0.5772156649
MAGIC = b"ISOF1"


def average_path_length(m) -> np.ndarray | float:
    """c(m) = 2(ln(m-1) + gamma) - 2(m-1)/m for m >= 2, and 0 for m <= 1."""
    m_arr = np.asarray(m, dtype=np.float64)
    safe = np.maximum(m_arr, 2.0)
    c = 2.0 * (np.log(safe - 1.0) + EULER_GAMMA) - 2.0 * (safe - 1.0) / safe
    c = np.where(m_arr <= 1.0, 0.0, c)
    return float(c) if c.ndim == 0 else c


@dataclass
class IsoTree:
    split_dim: np.ndarray    # int32, -1 marks an external node
    split_value: np.ndarray  # float64
    left: np.ndarray         # int32 child ids, -1 for external nodes
    right: np.ndarray
    size: np.ndarray         # training points reaching an external node, 0 for internal
    height_limit: int
    sample: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_nodes(self) -> int:
        return len(self.split_dim)

    def depths(self) -> np.ndarray:
        d = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):  # pre-order: parents precede children
            if self.split_dim[i] >= 0:
                d[self.left[i]] = d[self.right[i]] = d[i] + 1
        return d


def _draw_split(rng: np.random.Generator, lo: float, hi: float) -> float:
    # need lo < p <= hi so that "x < p" sends at least one point each way
    for _ in range(16):
        p = float(rng.uniform(lo, hi))
        if lo < p <= hi:
            return p
    return hi


def build_tree(X: np.ndarray, psi: int, seed_seq: np.random.SeedSequence) -> IsoTree:
    rng = np.random.default_rng(seed_seq)
    sample = np.sort(rng.choice(len(X), size=psi, replace=False))
    limit = math.ceil(math.log2(psi)) if psi > 1 else 0

    dims, values, lefts, rights, sizes = [], [], [], [], []

    def new_node() -> int:
        dims.append(-1)
        values.append(0.0)
        lefts.append(-1)
        rights.append(-1)
        sizes.append(0)
        return len(dims) - 1

    root = new_node()
    stack = [(root, sample, 0)]
    while stack:
        node, rows, depth = stack.pop()
        pts = X[rows]
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        candidates = np.flatnonzero(hi > lo)
        if depth >= limit or len(rows) <= 1 or len(candidates) == 0:
            sizes[node] = len(rows)
            continue
        q = int(candidates[rng.integers(len(candidates))])
        p = _draw_split(rng, lo[q], hi[q])
        go_left = pts[:, q] < p
        left, right = new_node(), new_node()
        dims[node], values[node], lefts[node], rights[node] = q, p, left, right
        # push right first so the left subtree is expanded first (pre-order ids)
        stack.append((right, rows[~go_left], depth + 1))
        stack.append((left, rows[go_left], depth + 1))

    return IsoTree(np.array(dims, dtype=np.int32), np.array(values, dtype=np.float64),
                   np.array(lefts, dtype=np.int32), np.array(rights, dtype=np.int32),
                   np.array(sizes, dtype=np.int64), limit, sample)


def _leaves(tree: IsoTree, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    node = np.zeros(len(X), dtype=np.int64)
    depth = np.zeros(len(X), dtype=np.int64)
    rows = np.arange(len(X))
    active = tree.split_dim[node] >= 0
    while active.any():
        idx = rows[active]
        n = node[idx]
        go_left = X[idx, tree.split_dim[n]] < tree.split_value[n]
        node[idx] = np.where(go_left, tree.left[n], tree.right[n])
        depth[idx] += 1
        active = tree.split_dim[node] >= 0
    return node, depth


def path_lengths(tree: IsoTree, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    node, depth = _leaves(tree, X)
    return depth + average_path_length(tree.size[node])


def path_length(tree: IsoTree, x) -> float:
    """Depth of the external node reached by ``x`` plus c(size of that node)."""
    return float(path_lengths(tree, np.asarray(x, dtype=np.float64)[None, :])[0])


@dataclass
class IsoForest:
    trees: list[IsoTree]
    psi: int
    n_features: int
    contamination: float = 0.1
    seed: int = 0
    threshold: float | None = None

    @property
    def calibrated(self) -> bool:
        return self.threshold is not None


def _validate(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("feature matrix must be two-dimensional")
    bad = ~np.isfinite(X)
    if bad.any():
        raise NonFiniteFeature(int(np.flatnonzero(bad.any(axis=0))[0]))
    return X


def _build_task(args) -> IsoTree:
    X, psi, seed_seq = args
    return build_tree(X, psi, seed_seq)


def fit(X, n_trees: int = 100, psi: int | None = None, contamination: float = 0.1,
        seed: int = 0, workers: int = 1) -> IsoForest:
    X = _validate(X)
    n = len(X)
    if n < 2:
        raise TooFewPoints(f"need at least 2 points to fit, got {n}")
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if not 0.0 < contamination <= 0.5:
        raise ValueError("contamination must lie in (0, 0.5]")
    psi = min(256, n) if psi is None else min(int(psi), n)
    if psi < 2:
        raise ValueError("psi must be >= 2")
    children = np.random.SeedSequence(seed).spawn(n_trees)
    trees = ordered_map(_build_task, [(X, psi, ss) for ss in children], workers)
    return IsoForest(trees, psi, X.shape[1], contamination, seed)


def mean_path_lengths(forest: IsoForest, X) -> np.ndarray:
    if not forest.trees:
        raise NotFitted("forest has no trees")
    X = _validate(X)
    if X.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got {X.shape[1]}")
    total = np.zeros(len(X))
    for tree in forest.trees:
        total += path_lengths(tree, X)
    return total / len(forest.trees)


def score_from_path_length(mean_path, psi: int) -> np.ndarray | float:
    return np.power(2.0, -np.asarray(mean_path, dtype=np.float64) / average_path_length(psi))


def score_samples(forest: IsoForest, X) -> np.ndarray:
    return score_from_path_length(mean_path_lengths(forest, X), forest.psi)


def score(forest: IsoForest, x) -> float:
    return float(score_samples(forest, np.asarray(x, dtype=np.float64)[None, :])[0])


def calibrate_threshold(forest: IsoForest, scores) -> float:
    """Set the threshold to the (1 - contamination) quantile of ``scores``."""
    if not forest.trees:
        raise NotFitted("forest has no trees")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("no scores to calibrate on")
    forest.threshold = float(np.quantile(scores, 1.0 - forest.contamination, method="linear"))
    return forest.threshold


def predict(forest: IsoForest, scores) -> np.ndarray:
    if forest.threshold is None:
        raise NotFitted("forest threshold has not been calibrated")
    return np.asarray(scores) > forest.threshold


# --- serialization --------------------------------------------------------------
#
# "ISOF1" magic, then little-endian:
#   u32 n_features, u32 psi, f64 contamination, u64 seed,
#   u8 has_threshold, f64 threshold (0.0 if unset), u32 n_trees,
#   per tree: u32 height_limit, u32 n_nodes, then n_nodes records of
#   (i32 split_dim, f64 split_value, i32 left, i32 right, u32 size).
# Subsample indices are not stored.

_HEAD = struct.Struct("<IIdQBdI")
_TREE = struct.Struct("<II")
_NODE = np.dtype([("dim", "<i4"), ("value", "<f8"), ("left", "<i4"), ("right", "<i4"),
                  ("size", "<u4")])


def dumps(forest: IsoForest) -> bytes:
    parts = [MAGIC, _HEAD.pack(forest.n_features, forest.psi, forest.contamination,
                               forest.seed, forest.threshold is not None,
                               forest.threshold or 0.0, len(forest.trees))]
    for t in forest.trees:
        nodes = np.empty(t.n_nodes, dtype=_NODE)
        nodes["dim"], nodes["value"] = t.split_dim, t.split_value
        nodes["left"], nodes["right"], nodes["size"] = t.left, t.right, t.size
        parts += [_TREE.pack(t.height_limit, t.n_nodes), nodes.tobytes()]
    return b"".join(parts)


def loads(data: bytes) -> IsoForest:
    if not data.startswith(MAGIC):
        raise FormatError("not an ISOF1 forest file")
    pos = len(MAGIC)
    try:
        n_features, psi, contamination, seed, has_thr, thr, n_trees = _HEAD.unpack_from(data, pos)
        pos += _HEAD.size
        trees = []
        for _ in range(n_trees):
            limit, n_nodes = _TREE.unpack_from(data, pos)
            pos += _TREE.size
            nbytes = n_nodes * _NODE.itemsize
            if pos + nbytes > len(data):
                raise FormatError("truncated forest file")
            nodes = np.frombuffer(data, dtype=_NODE, count=n_nodes, offset=pos)
            pos += nbytes
            ids = np.arange(n_nodes)
            internal = nodes["dim"] >= 0
            # pre-order ids: children always follow their parent, which rules out cycles
            if n_nodes == 0 or np.any(nodes["dim"][internal] >= n_features) or np.any(
                    internal & ((nodes["left"] <= ids) | (nodes["right"] <= ids)
                                | (nodes["left"] >= n_nodes) | (nodes["right"] >= n_nodes))):
                raise FormatError("corrupt tree structure in forest file")
            trees.append(IsoTree(nodes["dim"].astype(np.int32), nodes["value"].astype(np.float64),
                                 nodes["left"].astype(np.int32), nodes["right"].astype(np.int32),
                                 nodes["size"].astype(np.int64), limit))
    except struct.error:
        raise FormatError("truncated forest file") from None
    if pos != len(data):
        raise FormatError("trailing bytes after forest")
    return IsoForest(trees, psi, n_features, contamination, seed, thr if has_thr else None)


def save(forest: IsoForest, path: str | Path) -> None:
    Path(path).write_bytes(dumps(forest))


def load(path: str | Path) -> IsoForest:
    return loads(Path(path).read_bytes())
