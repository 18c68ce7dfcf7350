"""Gradient-boosted regression trees with squared loss.

Splits are exact: every feature is coded by the rank of its distinct training
values, and candidate thresholds are the midpoints between consecutive
distinct values, so a split on code ``k`` (``code <= k`` goes left) is the
same as ``x <= threshold[k]`` on raw data.

Each round draws a row subsample for the tree structure and a fresh feature
subsample per depth level. Leaf values are the mean residual of all training
rows routed to the leaf, so adding a tree scaled by a learning rate in (0, 1]
never increases the training squared loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .base import BoostedTreesParams, TrainedModel, check_finite

LEAF = -1


@dataclass
class BinnedFeatures:
    codes: np.ndarray  # (n, F) integer codes
    thresholds: list  # per feature: midpoints between consecutive distinct values

    @classmethod
    def from_array(cls, X: np.ndarray) -> "BinnedFeatures":
        X = np.asarray(X, dtype=float)
        check_finite(X)
        thresholds, columns = [], []
        for f in range(X.shape[1]):
            uniq, inverse = np.unique(X[:, f], return_inverse=True)
            mid = uniq[:-1] + (uniq[1:] - uniq[:-1]) / 2
            # adjacent floats: the midpoint may round up onto the upper value
            mid = np.where(mid >= uniq[1:], uniq[:-1], mid)
            thresholds.append(mid)
            columns.append(inverse.reshape(-1))
        dtype = np.uint16 if max(len(t) for t in thresholds) < 65535 else np.int32
        codes = np.empty(X.shape, dtype=dtype)
        for f, col in enumerate(columns):
            codes[:, f] = col
        return cls(codes, thresholds)

    @property
    def n_bins(self) -> np.ndarray:
        return np.array([len(t) + 1 for t in self.thresholds], dtype=np.int64)


@dataclass
class RegressionTree:
    feature: np.ndarray  # int32, LEAF for leaves
    threshold: np.ndarray  # float64
    left: np.ndarray  # int32
    right: np.ndarray  # int32
    value: np.ndarray  # float64, leaf output before learning-rate scaling

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        def walk(node):
            if self.feature[node] == LEAF:
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))

        return walk(0)

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        out = np.zeros(len(X))
        _add_tree(X, self.feature, self.threshold, self.left, self.right, self.value, 1.0, out)
        return out


@numba.njit(cache=True)
def _level_splits(codes, rows, seg_start, seg_end, residual, feats, offsets, sel_bins, min_leaf, rel_tol):
    """Best split per node segment over the selected features.

    Returns, per node, the selected-feature position (-1: no split) and the
    split code. Ties keep the first candidate in (feature, code) order.
    """
    n_nodes = seg_start.shape[0]
    total_bins = 0
    for k in range(sel_bins.shape[0]):
        total_bins += sel_bins[k]
    hist = np.empty(2 * total_bins)  # interleaved (sum, count)
    best_k = np.full(n_nodes, -1, dtype=np.int64)
    best_code = np.full(n_nodes, -1, dtype=np.int64)
    r_seg = np.empty(rows.shape[0])
    for s in range(n_nodes):
        lo = seg_start[s]
        n = seg_end[s] - lo
        if n < 2 * min_leaf:
            continue
        hist[:] = 0.0
        total = 0.0
        sumsq = 0.0
        for p in range(n):
            r = residual[rows[lo + p]]
            r_seg[p] = r
            total += r
            sumsq += r * r
        for p in range(n):
            i = rows[lo + p]
            r = r_seg[p]
            for k in range(feats.shape[0]):
                j = 2 * (offsets[k] + codes[i, feats[k]])
                hist[j] += r
                hist[j + 1] += 1.0
        parent = total * total / n
        # a split must beat round-off relative to the node's sum of squares
        best = rel_tol * sumsq
        for k in range(feats.shape[0]):
            ls = 0.0
            lc = 0
            base = offsets[k]
            for b in range(sel_bins[k] - 1):
                ls += hist[2 * (base + b)]
                lc += int(hist[2 * (base + b) + 1])
                if lc < min_leaf:
                    continue
                rc = n - lc
                if rc < min_leaf:
                    break
                rs = total - ls
                gain = ls * ls / lc + rs * rs / rc - parent
                if gain > best and gain > 0.0:
                    best = gain
                    best_k[s] = k
                    best_code[s] = b
    return best_k, best_code


@numba.njit(cache=True)
def _partition(codes, rows, seg_start, seg_end, split_feat, split_code, buf):
    """Stable in-place partition of each split segment into (left, right);
    returns the size of each left part."""
    n_left = np.zeros(seg_start.shape[0], dtype=np.int64)
    for s in range(seg_start.shape[0]):
        f = split_feat[s]
        if f < 0:
            continue
        lo = seg_start[s]
        hi = seg_end[s]
        c = split_code[s]
        nl = 0
        nr = 0
        for p in range(lo, hi):
            i = rows[p]
            if codes[i, f] <= c:
                rows[lo + nl] = i
                nl += 1
            else:
                buf[nr] = i
                nr += 1
        for q in range(nr):
            rows[lo + nl + q] = buf[q]
        n_left[s] = nl
    return n_left


@numba.njit(cache=True)
def _leaves(codes, feature, split_code, left, right):
    out = np.empty(codes.shape[0], dtype=np.int64)
    for i in range(codes.shape[0]):
        node = 0
        while feature[node] >= 0:
            if codes[i, feature[node]] <= split_code[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@numba.njit(cache=True)
def _add_tree(X, feature, threshold, left, right, value, scale, out):
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] += scale * value[node]


@numba.njit(cache=True)
def _add_ensemble(X, feature, threshold, left, right, value, roots, scale, out):
    for t in range(roots.shape[0] - 1):
        lo = roots[t]
        for i in range(X.shape[0]):
            node = 0
            while feature[lo + node] >= 0:
                if X[i, feature[lo + node]] <= threshold[lo + node]:
                    node = left[lo + node]
                else:
                    node = right[lo + node]
            out[i] += scale * value[lo + node]


def gbt_fit_round(residuals, features, rng: np.random.Generator, params: BoostedTreesParams | None = None):
    """Fit one regression tree to residuals.

    ``features`` is a :class:`BinnedFeatures` or a raw array. The structure is
    grown on a row subsample with a new feature subsample per level; leaf
    values are mean residuals over all rows. Returns the tree and the leaf
    node index of every row.
    """
    params = params or BoostedTreesParams()
    binned = features if isinstance(features, BinnedFeatures) else BinnedFeatures.from_array(features)
    residuals = np.ascontiguousarray(residuals, dtype=float)
    if not np.isfinite(residuals).all():
        raise ValueError("residuals must be finite")
    codes = binned.codes
    n, n_feat = codes.shape
    n_bins = binned.n_bins
    rows = np.flatnonzero(rng.random(n) < params.subsample)
    if len(rows) == 0:
        rows = np.arange(n)
    buf = np.empty(len(rows), dtype=np.int64)
    n_select = max(1, int(params.colsample_bylevel * n_feat))

    feature, split_code, left, right = [LEAF], [0], [LEAF], [LEAF]
    level = [0]  # node ids at the current depth, aligned with the segments
    seg_start = np.array([0], dtype=np.int64)
    seg_end = np.array([len(rows)], dtype=np.int64)
    for _depth in range(params.max_depth):
        feats = np.sort(rng.choice(n_feat, size=n_select, replace=False)).astype(np.int64)
        sel_bins = n_bins[feats]
        offsets = np.concatenate([[0], np.cumsum(sel_bins)[:-1]]).astype(np.int64)
        best_k, best_code = _level_splits(codes, rows, seg_start, seg_end, residuals, feats, offsets,
                                          sel_bins, params.min_samples_leaf, 1e-12)
        if (best_k < 0).all():
            break
        seg_feat = np.where(best_k >= 0, feats[np.maximum(best_k, 0)], LEAF)
        n_left = _partition(codes, rows, seg_start, seg_end, seg_feat, best_code, buf)
        next_level, starts, ends = [], [], []
        for s, node in enumerate(level):
            if best_k[s] < 0:
                continue
            feature[node] = int(seg_feat[s])
            split_code[node] = int(best_code[s])
            for lo, hi in ((seg_start[s], seg_start[s] + n_left[s]), (seg_start[s] + n_left[s], seg_end[s])):
                child = len(feature)
                feature.append(LEAF)
                split_code.append(0)
                left.append(LEAF)
                right.append(LEAF)
                next_level.append(child)
                starts.append(lo)
                ends.append(hi)
            left[node], right[node] = next_level[-2], next_level[-1]
        level = next_level
        seg_start = np.array(starts, dtype=np.int64)
        seg_end = np.array(ends, dtype=np.int64)

    feature = np.array(feature, dtype=np.int32)
    split_code = np.array(split_code, dtype=np.int64)
    left = np.array(left, dtype=np.int32)
    right = np.array(right, dtype=np.int32)
    leaf_of_row = _leaves(codes, feature, split_code, left, right)
    n_nodes = len(feature)
    sums = np.bincount(leaf_of_row, weights=residuals, minlength=n_nodes)
    counts = np.bincount(leaf_of_row, minlength=n_nodes)
    is_leaf = feature == LEAF
    value = np.where(is_leaf & (counts > 0), sums / np.maximum(counts, 1), 0.0)
    threshold = np.zeros(n_nodes)
    for node in np.flatnonzero(~is_leaf):
        threshold[node] = binned.thresholds[feature[node]][split_code[node]]
    return RegressionTree(feature, threshold, left, right, value), leaf_of_row


class BoostedTreesModel(TrainedModel):
    kind = "boosted_trees"

    def __init__(self, base_score: float, learning_rate: float, trees: list, best_round: int | None = None,
                 config=None, training_log=None):
        super().__init__(config, training_log)
        self.base_score = float(base_score)
        self.learning_rate = float(learning_rate)
        self.trees = list(trees)
        self.best_round = best_round

    def _packed(self):
        if not self.trees:
            empty_i = np.empty(0, dtype=np.int32)
            return empty_i, np.empty(0), empty_i, empty_i, np.empty(0), np.zeros(1, dtype=np.int64)
        sizes = np.array([t.n_nodes for t in self.trees])
        roots = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        cat = lambda name: np.concatenate([getattr(t, name) for t in self.trees])  # noqa: E731
        return cat("feature"), cat("threshold"), cat("left"), cat("right"), cat("value"), roots

    def _predict(self, X):
        out = np.full(len(X), self.base_score)
        feature, threshold, left, right, value, roots = self._packed()
        _add_ensemble(np.ascontiguousarray(X), feature, threshold, left, right, value, roots,
                      self.learning_rate, out)
        return out

    def state(self):
        feature, threshold, left, right, value, roots = self._packed()
        meta = {"base_score": self.base_score, "learning_rate": self.learning_rate, "best_round": self.best_round}
        arrays = dict(feature=feature, threshold=threshold, left=left, right=right, value=value, roots=roots)
        return meta, arrays

    @classmethod
    def from_state(cls, meta, arrays):
        roots = arrays["roots"]
        trees = [
            RegressionTree(*(arrays[k][roots[t]:roots[t + 1]] for k in ("feature", "threshold", "left", "right", "value")))
            for t in range(len(roots) - 1)
        ]
        return cls(meta["base_score"], meta["learning_rate"], trees, meta.get("best_round"))


def fit_boosted_trees(X, y, params: BoostedTreesParams, rng: np.random.Generator, X_val=None, y_val=None,
                      config=None) -> BoostedTreesModel:
    """Boosting loop with optional early stopping on a validation set.

    Training stops once the validation loss has not improved for
    ``early_stopping_rounds`` rounds; the ensemble is cut back to the best round.
    """
    y = np.asarray(y, dtype=float)
    binned = BinnedFeatures.from_array(X)
    base = float(np.mean(y)) if params.base_score is None else float(params.base_score)
    pred = np.full(len(y), base)
    has_val = X_val is not None and len(X_val) > 0
    if has_val:
        X_val = np.ascontiguousarray(X_val, dtype=float)
        y_val = np.asarray(y_val, dtype=float)
        pred_val = np.full(len(y_val), base)
    log = [{"round": 0, "train_loss": float(np.mean((y - pred) ** 2)),
            "val_loss": float(np.mean((y_val - pred_val) ** 2)) if has_val else None}]
    trees = []
    best_loss, best_round = np.inf, 0
    lr = params.learning_rate
    for r in range(1, params.n_estimators + 1):
        tree, leaf_of_row = gbt_fit_round(y - pred, binned, rng, params)
        pred += lr * tree.value[leaf_of_row]
        trees.append(tree)
        entry = {"round": r, "train_loss": float(np.mean((y - pred) ** 2)), "val_loss": None}
        if has_val:
            _add_tree(X_val, tree.feature, tree.threshold, tree.left, tree.right, tree.value, lr, pred_val)
            entry["val_loss"] = float(np.mean((y_val - pred_val) ** 2))
            if entry["val_loss"] < best_loss:
                best_loss, best_round = entry["val_loss"], r
        log.append(entry)
        if has_val and r - best_round >= params.early_stopping_rounds:
            break
    if has_val:
        trees = trees[:best_round]
    else:
        best_round = len(trees)
    return BoostedTreesModel(base, lr, trees, best_round, config, log)
