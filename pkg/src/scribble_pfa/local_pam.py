"""Per-image random forest annotator.

Trees are CART classifiers grown on a bootstrap resample of the scribbled
pixels (represented as integer sample weights), Gini splitting, unbounded
depth. Each tree draws its randomness from ``default_rng([seed, tree, stream])``
(stream 1 for the feature-selection pilot, 0 otherwise), so trees do not
depend on training order.

The forest only knows the classes that appear in the scribbles; prediction
embeds its output into the full class set with exact zeros elsewhere.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ClassSet, ProbabilityMap, ScribbleSet, _frozen, validate_probability_map
from .errors import EmptyAnnotation, FormatError, ShapeMismatch
from .features import FeatureStack

LEAF = -1
RFC_MAGIC = b"RFC1"
RFC_VERSION = 1
_NO_CHILD = 0xFFFFFFFF
_NO_FEATURE = 0xFFFF


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 50
    n_selected_features: int = 100
    max_features_per_split: Optional[int] = None
    min_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.n_selected_features < 1:
            raise ValueError("n_selected_features must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.max_features_per_split is not None and self.max_features_per_split < 1:
            raise ValueError("max_features_per_split must be >= 1")

    def split_features(self, n_available: int) -> int:
        if self.max_features_per_split is None:
            return max(1, math.ceil(math.sqrt(n_available)))
        return min(self.max_features_per_split, n_available)


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat node arrays. ``feature`` indexes the full feature stack; leaves hold LEAF.

    ``counts`` is the (bootstrap-weighted) class histogram of every node over
    the forest's seen classes.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        for name in ("feature", "threshold", "left", "right", "counts"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name))))

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature == LEAF


@dataclass(frozen=True, eq=False)
class TrainedForest:
    trees: tuple
    selected_features: np.ndarray
    classes_seen: tuple
    n_features: int
    classes: ClassSet
    config: ForestConfig

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(
            self, "selected_features", _frozen(np.asarray(self.selected_features, dtype=np.int64))
        )
        object.__setattr__(self, "classes_seen", tuple(int(c) for c in self.classes_seen))

    def __eq__(self, other):
        if not isinstance(other, TrainedForest):
            return NotImplemented
        if (
            self.classes_seen != other.classes_seen
            or self.n_features != other.n_features
            or self.classes.num_classes != other.classes.num_classes
            or self.config != other.config
            or not np.array_equal(self.selected_features, other.selected_features)
            or len(self.trees) != len(other.trees)
        ):
            return False
        fields = ("feature", "threshold", "left", "right", "counts")
        return all(
            np.array_equal(getattr(a, f), getattr(b, f))
            for a, b in zip(self.trees, other.trees)
            for f in fields
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ImportanceScores:
    scores: np.ndarray
    normalized: bool

    def ranking(self) -> np.ndarray:
        """Feature indices by decreasing score, ties toward the lower index."""
        idx = np.arange(self.scores.size)
        return np.lexsort((idx, -self.scores))


def _gini(counts: np.ndarray) -> np.ndarray:
    n = counts.sum(axis=-1)
    safe = np.where(n > 0, n, 1.0)
    return 1.0 - ((counts / safe[..., None]) ** 2).sum(axis=-1)


def _best_split(Xn, Yw, cols, min_leaf):
    """Best Gini split of one node over candidate columns.

    Xn: node samples x candidate features, Yw: node samples x classes weighted
    one-hot. Returns (column position, threshold) or None.
    """
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    cum = np.cumsum(Yw[order], axis=0)  # n x m x K
    total = cum[-1]
    left = cum[:-1]
    right = total[None] - left
    n_left = left.sum(-1)
    n_right = right.sum(-1)
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (left**2).sum(-1) / n_left + (right**2).sum(-1) / n_right
    score = np.where(valid, score, -np.inf)
    # column-major argmax: earliest candidate column wins ties
    flat = np.argmax(score.T)
    col, pos = divmod(int(flat), score.shape[0])
    a, b = xs[pos, col], xs[pos + 1, col]
    thr = np.float32((float(a) + float(b)) / 2.0)
    if not thr < b:
        thr = np.float32(a)
    return cols[col], thr


def _grow_tree(X, y, weights, n_classes, feature_ids, cfg: ForestConfig, rng) -> Tree:
    n_avail = X.shape[1]
    m = cfg.split_features(n_avail)
    onehot = np.eye(n_classes)[y]

    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(rows):
        feature.append(LEAF)
        threshold.append(np.float32(0.0))
        left.append(LEAF)
        right.append(LEAF)
        counts.append((onehot[rows] * weights[rows, None]).sum(axis=0))
        return len(feature) - 1

    root_rows = np.flatnonzero(weights > 0)
    stack = [(new_node(root_rows), root_rows)]
    while stack:
        node, rows = stack.pop()
        c = counts[node]
        if np.count_nonzero(c) <= 1 or c.sum() < 2 * cfg.min_leaf:
            continue
        perm = rng.permutation(n_avail)
        Yw = onehot[rows] * weights[rows, None]
        found = _best_split(X[np.ix_(rows, perm[:m])], Yw, perm[:m], cfg.min_leaf)
        if found is None and m < n_avail:
            # keep searching the remaining features before giving up on the node
            found = _best_split(X[np.ix_(rows, perm[m:])], Yw, perm[m:], cfg.min_leaf)
        if found is None:
            continue
        col, thr = found
        go_left = X[rows, col] <= thr
        l_rows, r_rows = rows[go_left], rows[~go_left]
        feature[node] = int(feature_ids[col])
        threshold[node] = thr
        li = new_node(l_rows)
        ri = new_node(r_rows)
        left[node], right[node] = li, ri
        # right pushed first so the left subtree is expanded first
        stack.append((ri, r_rows))
        stack.append((li, l_rows))

    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float32),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        counts=np.array(counts, dtype=np.float64),
    )


def _training_data(features: FeatureStack, wa: ScribbleSet):
    wa.grid.check_same(features.grid, "feature stack")
    if len(wa) == 0:
        raise EmptyAnnotation("no scribbled pixels to train on")
    X = features.pixel_matrix()[wa.pixels].astype(np.float32)
    seen = sorted(wa.annotated_classes)
    lookup = {c: i for i, c in enumerate(seen)}
    y = np.array([lookup[int(c)] for c in wa.labels], dtype=np.int64)
    return X, y, tuple(seen)


def _fit(X, y, seen, feature_ids, n_features, classes, cfg: ForestConfig, stream: int) -> TrainedForest:
    n = X.shape[0]
    Xs = X[:, feature_ids]
    trees = []
    for t in range(cfg.n_trees):
        rng = np.random.default_rng([cfg.seed, t, stream])
        draws = rng.integers(0, n, size=n)
        weights = np.bincount(draws, minlength=n).astype(np.float64)
        trees.append(_grow_tree(Xs, y, weights, len(seen), feature_ids, cfg, rng))
    return TrainedForest(trees, np.asarray(feature_ids), seen, n_features, classes, cfg)


def train_forest(features: FeatureStack, wa: ScribbleSet, cfg: ForestConfig) -> TrainedForest:
    """Train on every feature channel."""
    X, y, seen = _training_data(features, wa)
    ids = np.arange(features.depth)
    return _fit(X, y, seen, ids, features.depth, wa.classes, cfg, stream=0)


def gini_importance(forest: TrainedForest) -> ImportanceScores:
    """Mean decrease in Gini impurity per feature, weighted by node sample counts.

    Each tree's importances are normalized before averaging; the average is
    renormalized. A forest without any useful split yields all zeros with
    ``normalized=False``.
    """
    total = np.zeros(forest.n_features)
    for tree in forest.trees:
        internal = np.flatnonzero(~tree.is_leaf)
        if internal.size == 0:
            continue
        n = tree.counts.sum(axis=1)
        imp = _gini(tree.counts)
        l, r = tree.left[internal], tree.right[internal]
        dec = n[internal] * imp[internal] - n[l] * imp[l] - n[r] * imp[r]
        per_tree = np.bincount(tree.feature[internal], weights=dec, minlength=forest.n_features)
        per_tree /= n[0]
        s = per_tree.sum()
        if s > 0:
            total += per_tree / s
    s = total.sum()
    if s > 0:
        return ImportanceScores(total / s, True)
    return ImportanceScores(total, False)


def select_and_retrain(features: FeatureStack, wa: ScribbleSet, cfg: ForestConfig) -> TrainedForest:
    """Pilot forest on all channels, keep the top-ranked ones, retrain on those."""
    depth = features.depth
    if cfg.n_selected_features > depth:
        raise ValueError(f"cannot select {cfg.n_selected_features} of {depth} features")
    X, y, seen = _training_data(features, wa)
    all_ids = np.arange(depth)
    if cfg.n_selected_features == depth:
        return _fit(X, y, seen, all_ids, depth, wa.classes, cfg, stream=0)
    pilot = _fit(X, y, seen, all_ids, depth, wa.classes, cfg, stream=1)
    keep = np.sort(gini_importance(pilot).ranking()[: cfg.n_selected_features])
    return _fit(X, y, seen, keep, depth, wa.classes, cfg, stream=0)


def _leaf_index(forest: TrainedForest, X: np.ndarray) -> list[np.ndarray]:
    out = []
    for tree in forest.trees:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(tree.feature[node] != LEAF)
        while active.size:
            nd = node[active]
            go_left = X[active, tree.feature[nd]] <= tree.threshold[nd]
            node[active] = np.where(go_left, tree.left[nd], tree.right[nd])
            active = active[tree.feature[node[active]] != LEAF]
        out.append(node)
    return out


def predict_proba_rows(forest: TrainedForest, X: np.ndarray) -> np.ndarray:
    """Mean leaf class frequencies for each row, over the seen classes only."""
    X = np.asarray(X, dtype=np.float32)
    acc = np.zeros((X.shape[0], len(forest.classes_seen)))
    for tree, leaves in zip(forest.trees, _leaf_index(forest, X)):
        c = tree.counts[leaves]
        acc += c / c.sum(axis=1, keepdims=True)
    return acc / len(forest.trees)


def predict_local(forest: TrainedForest, features: FeatureStack) -> ProbabilityMap:
    needed = int(forest.selected_features.max()) + 1 if forest.selected_features.size else 0
    if features.depth < needed:
        raise ShapeMismatch(f"forest uses feature {needed - 1} but the stack has depth {features.depth}")
    X = features.pixel_matrix()
    seen_probs = predict_proba_rows(forest, X)
    probs = np.zeros((X.shape[0], forest.classes.num_classes))
    probs[:, list(forest.classes_seen)] = seen_probs
    h, w = features.grid.shape
    pm = ProbabilityMap(probs.reshape(h, w, -1), forest.classes, source="local")
    return validate_probability_map(pm)


def save_forest(path, forest: TrainedForest) -> None:
    cfg = forest.config
    C = forest.classes.num_classes
    parts = [
        RFC_MAGIC,
        struct.pack(
            "<IIIIIq",
            RFC_VERSION,
            cfg.n_trees,
            cfg.n_selected_features,
            cfg.max_features_per_split or 0,
            cfg.min_leaf,
            cfg.seed,
        ),
        struct.pack("<III", forest.n_features, C, len(forest.classes_seen)),
        np.asarray(forest.classes_seen, dtype="<u4").tobytes(),
        struct.pack("<I", forest.selected_features.size),
        forest.selected_features.astype("<u4").tobytes(),
    ]
    seen = list(forest.classes_seen)
    for tree in forest.trees:
        parts.append(struct.pack("<I", tree.n_nodes))
        feat = np.where(tree.is_leaf, _NO_FEATURE, tree.feature).astype("<u2")
        left = np.where(tree.is_leaf, _NO_CHILD, tree.left).astype("<u4")
        right = np.where(tree.is_leaf, _NO_CHILD, tree.right).astype("<u4")
        hist = np.zeros((tree.n_nodes, C), dtype="<u4")
        hist[:, seen] = np.rint(tree.counts).astype(np.uint32)
        parts += [
            feat.tobytes(),
            tree.threshold.astype("<f4").tobytes(),
            left.tobytes(),
            right.tobytes(),
            hist.tobytes(),
        ]
    Path(path).write_bytes(b"".join(parts))


def load_forest(path) -> TrainedForest:
    data = Path(path).read_bytes()
    if data[:4] != RFC_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    try:
        off = 4
        version, n_trees, n_sel_cfg, max_feat, min_leaf, seed = struct.unpack_from("<IIIIIq", data, off)
        off += struct.calcsize("<IIIIIq")
        if version != RFC_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        n_features, C, n_seen = struct.unpack_from("<III", data, off)
        off += 12
        seen = np.frombuffer(data, "<u4", n_seen, off).astype(int).tolist()
        off += 4 * n_seen
        (n_sel,) = struct.unpack_from("<I", data, off)
        off += 4
        selected = np.frombuffer(data, "<u4", n_sel, off).astype(np.int64)
        off += 4 * n_sel
        trees = []
        for _ in range(n_trees):
            (nn,) = struct.unpack_from("<I", data, off)
            off += 4
            feat = np.frombuffer(data, "<u2", nn, off).astype(np.int64)
            off += 2 * nn
            thr = np.frombuffer(data, "<f4", nn, off).astype(np.float32)
            off += 4 * nn
            left = np.frombuffer(data, "<u4", nn, off).astype(np.int64)
            off += 4 * nn
            right = np.frombuffer(data, "<u4", nn, off).astype(np.int64)
            off += 4 * nn
            hist = np.frombuffer(data, "<u4", nn * C, off).reshape(nn, C)
            off += 4 * nn * C
            leaf = feat == _NO_FEATURE
            trees.append(
                Tree(
                    feature=np.where(leaf, LEAF, feat),
                    threshold=thr,
                    left=np.where(leaf, LEAF, left),
                    right=np.where(leaf, LEAF, right),
                    counts=hist[:, seen].astype(np.float64),
                )
            )
    except FormatError:
        raise
    except struct.error as exc:
        raise FormatError(f"{path}: truncated ({exc})") from None
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    cfg = ForestConfig(n_trees, n_sel_cfg, max_feat or None, min_leaf, seed)
    return TrainedForest(trees, selected, seen, n_features, ClassSet(C), cfg)
