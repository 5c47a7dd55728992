"""Gradient boosted decision trees with logistic loss and missing-aware splits.

Second-order boosting: per round the gradients are g = p - y and hessians
h = p(1-p) on the current margins; each tree is grown level-wise with an
exact greedy split search over sorted unique feature values. Rows with a
missing feature value are routed to whichever side of a candidate split
yields the higher gain, and that side is stored as the node's default
direction. Leaf weights are -eta * G / (H + lambda); the ensemble margin
is base_score plus the sum of routed leaf weights.

Ties in gain are broken toward the lower feature index, then the lower
threshold, then the missing-to-left variant, which makes training fully
deterministic for a fixed (data, hyperparameters, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .features import Dataset

MODEL_FORMAT_VERSION = 1


class ModelFormatError(Exception):
    """Unreadable or version-incompatible model file."""


@dataclass(frozen=True)
class HyperParams:
    n_rounds: int = 200
    max_depth: int = 4
    learning_rate: float = 0.1
    min_child_weight: float = 1.0
    l2_reg: float = 1.0
    subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_rounds < 0:
            raise ValueError("n_rounds must be >= 0")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning_rate must be in (0, 1]")
        if self.l2_reg < 0:
            raise ValueError("l2_reg must be >= 0")
        if self.min_child_weight < 0:
            raise ValueError("min_child_weight must be >= 0")
        if not (0.0 < self.subsample <= 1.0):
            raise ValueError("subsample must be in (0, 1]")


@dataclass(frozen=True)
class Tree:
    """Flat node arrays; node 0 is the root, left < 0 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


@dataclass(frozen=True)
class TreeEnsemble:
    base_score: float
    trees: tuple
    feature_names: tuple
    train_losses: tuple = ()

    def predict_margin(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        if X.shape[1] != len(self.feature_names):
            raise ValueError(f"expected {len(self.feature_names)} features, got {X.shape[1]}")
        out = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            _predict_tree(X, tree.feature, tree.threshold, tree.default_left,
                          tree.left, tree.right, tree.value, out)
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.predict_margin(X))


@njit(cache=True, nogil=True)
def _predict_tree(X, feature, threshold, default_left, left, right, value, out):
    for r in range(X.shape[0]):
        nd = 0
        while left[nd] >= 0:
            v = X[r, feature[nd]]
            if v != v:
                nd = left[nd] if default_left[nd] else right[nd]
            elif v < threshold[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out[r] += value[nd]


@njit(cache=True, nogil=True)
def _find_best_splits(vals_sorted, sort_idx, n_present, node_of_row, g, h,
                      g_total, h_total, lam, min_child_weight,
                      best_gain, best_feature, best_threshold, best_default_left):
    """Exact greedy split search over every active node, one feature at a time.

    Candidates are the midpoints between consecutive distinct present values
    within a node; for each candidate both missing-routing directions are
    scored. Updates the best_* arrays in place; best_gain starts at 0 so a
    node splits only on strictly positive gain.
    """
    n_nodes = g_total.shape[0]
    n_features = sort_idx.shape[0]
    g_present = np.zeros(n_nodes)
    h_present = np.zeros(n_nodes)
    cum_g = np.zeros(n_nodes)
    cum_h = np.zeros(n_nodes)
    last_val = np.zeros(n_nodes)
    seen = np.zeros(n_nodes, dtype=np.bool_)
    for f in range(n_features):
        cnt = n_present[f]
        for k in range(n_nodes):
            g_present[k] = 0.0
            h_present[k] = 0.0
            cum_g[k] = 0.0
            cum_h[k] = 0.0
            seen[k] = False
        for i in range(cnt):
            r = sort_idx[f, i]
            nd = node_of_row[r]
            if nd >= 0:
                g_present[nd] += g[r]
                h_present[nd] += h[r]
        for i in range(cnt):
            r = sort_idx[f, i]
            nd = node_of_row[r]
            if nd < 0:
                continue
            v = vals_sorted[f, i]
            if seen[nd] and v > last_val[nd]:
                thr = 0.5 * (last_val[nd] + v)
                gt = g_total[nd]
                ht = h_total[nd]
                parent = gt * gt / (ht + lam)
                g_missing = gt - g_present[nd]
                h_missing = ht - h_present[nd]
                # missing routed left
                gl = cum_g[nd] + g_missing
                hl = cum_h[nd] + h_missing
                gr = gt - gl
                hr = ht - hl
                if hl >= min_child_weight and hr >= min_child_weight:
                    gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent)
                    if gain > best_gain[nd]:
                        best_gain[nd] = gain
                        best_feature[nd] = f
                        best_threshold[nd] = thr
                        best_default_left[nd] = True
                # missing routed right
                gl = cum_g[nd]
                hl = cum_h[nd]
                gr = gt - gl
                hr = ht - hl
                if hl >= min_child_weight and hr >= min_child_weight:
                    gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent)
                    if gain > best_gain[nd]:
                        best_gain[nd] = gain
                        best_feature[nd] = f
                        best_threshold[nd] = thr
                        best_default_left[nd] = False
            cum_g[nd] += g[r]
            cum_h[nd] += h[r]
            last_val[nd] = v
            seen[nd] = True


@njit(cache=True, nogil=True)
def _route_level(X, node_of_row, feat_local, thr_local, default_left_local,
                 child_left, child_right):
    for r in range(node_of_row.shape[0]):
        nd = node_of_row[r]
        if nd < 0:
            continue
        f = feat_local[nd]
        if f < 0:
            node_of_row[r] = -1  # node finalized as a leaf
        else:
            v = X[r, f]
            if v != v:
                go_left = default_left_local[nd]
            elif v < thr_local[nd]:
                go_left = True
            else:
                go_left = False
            node_of_row[r] = child_left[nd] if go_left else child_right[nd]


def _sigmoid(m: np.ndarray) -> np.ndarray:
    out = np.empty_like(m, dtype=np.float64)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    e = np.exp(m[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _leaf_weight(g_sum: float, h_sum: float, hp: HyperParams) -> float:
    denom = h_sum + hp.l2_reg
    if denom <= 0:
        return 0.0
    return -hp.learning_rate * g_sum / denom


def _build_tree(X, vals_sorted, sort_idx, n_present, g, h, row_active, hp: HyperParams) -> Tree:
    n = X.shape[0]
    feature: list[int] = []
    threshold: list[float] = []
    default_left: list[bool] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(math.nan)
        default_left.append(True)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    node_of_row = np.where(row_active, 0, -1).astype(np.int64)
    level_nodes = [new_node()]

    for depth in range(hp.max_depth + 1):
        k = len(level_nodes)
        active = node_of_row >= 0
        g_total = np.bincount(node_of_row[active], weights=g[active], minlength=k)
        h_total = np.bincount(node_of_row[active], weights=h[active], minlength=k)

        best_gain = np.zeros(k)
        best_feature = np.full(k, -1, dtype=np.int64)
        best_threshold = np.full(k, np.nan)
        best_default_left = np.ones(k, dtype=np.bool_)
        if depth < hp.max_depth:
            _find_best_splits(vals_sorted, sort_idx, n_present, node_of_row, g, h,
                              g_total, h_total, hp.l2_reg, hp.min_child_weight,
                              best_gain, best_feature, best_threshold, best_default_left)

        child_left = np.full(k, -1, dtype=np.int64)
        child_right = np.full(k, -1, dtype=np.int64)
        feat_local = np.full(k, -1, dtype=np.int64)
        thr_local = np.full(k, np.nan)
        dl_local = np.ones(k, dtype=np.bool_)
        next_level: list[int] = []
        for local, node_id in enumerate(level_nodes):
            if best_gain[local] > 0.0:
                li = new_node()
                ri = new_node()
                feature[node_id] = int(best_feature[local])
                threshold[node_id] = float(best_threshold[local])
                default_left[node_id] = bool(best_default_left[local])
                left[node_id] = li
                right[node_id] = ri
                feat_local[local] = best_feature[local]
                thr_local[local] = best_threshold[local]
                dl_local[local] = best_default_left[local]
                child_left[local] = len(next_level)
                next_level.append(li)
                child_right[local] = len(next_level)
                next_level.append(ri)
            else:
                value[node_id] = _leaf_weight(float(g_total[local]), float(h_total[local]), hp)
        _route_level(X, node_of_row, feat_local, thr_local, dl_local, child_left, child_right)
        if not next_level:
            break
        level_nodes = next_level

    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        default_left=np.asarray(default_left, dtype=np.bool_),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
    )


def _logloss(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, 1e-15, 1.0 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def train(dataset: Dataset, hp: HyperParams) -> TreeEnsemble:
    """Fit a boosted tree classifier; deterministic for fixed (data, hp, seed)."""
    X = np.ascontiguousarray(dataset.X, dtype=np.float64)
    y = np.asarray(dataset.labels, dtype=np.float64)
    n, n_features = X.shape
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if np.isinf(X).any():
        raise ValueError("feature matrix contains infinities")
    positives = float(y.sum())
    if positives == 0 or positives == n:
        raise ValueError("training data must contain both classes")

    # presort every feature once; missing (NaN) rows are simply absent
    sort_idx = np.zeros((n_features, n), dtype=np.int64)
    vals_sorted = np.zeros((n_features, n), dtype=np.float64)
    n_present = np.zeros(n_features, dtype=np.int64)
    for f in range(n_features):
        col = X[:, f]
        rows = np.flatnonzero(~np.isnan(col))
        order = rows[np.argsort(col[rows], kind="stable")]
        n_present[f] = len(order)
        sort_idx[f, :len(order)] = order
        vals_sorted[f, :len(order)] = col[order]

    prevalence = positives / n
    base_score = math.log(prevalence / (1.0 - prevalence))
    margins = np.full(n, base_score)
    trees = []
    losses = []
    for t in range(hp.n_rounds):
        p = _sigmoid(margins)
        g = p - y
        h = p * (1.0 - p)
        if hp.subsample < 1.0:
            rng = np.random.default_rng([hp.seed, t])
            row_active = rng.random(n) < hp.subsample
        else:
            row_active = np.ones(n, dtype=np.bool_)
        tree = _build_tree(X, vals_sorted, sort_idx, n_present, g, h, row_active, hp)
        _predict_tree(X, tree.feature, tree.threshold, tree.default_left,
                      tree.left, tree.right, tree.value, margins)
        trees.append(tree)
        losses.append(_logloss(y, _sigmoid(margins)))
    return TreeEnsemble(base_score=base_score, trees=tuple(trees),
                        feature_names=tuple(dataset.feature_names),
                        train_losses=tuple(losses))


def predict_margin(ensemble: TreeEnsemble, x) -> float:
    """Log-odds for a single feature row (missing values follow default directions)."""
    x = _as_feature_row(ensemble, x)
    return float(ensemble.predict_margin(x[None, :])[0])


def predict_proba(ensemble: TreeEnsemble, x) -> float:
    m = predict_margin(ensemble, x)
    return float(_sigmoid(np.asarray([m]))[0])


def _as_feature_row(ensemble: TreeEnsemble, x) -> np.ndarray:
    if hasattr(x, "as_row"):
        x = x.as_row()
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (len(ensemble.feature_names),):
        raise ValueError(f"expected a row of {len(ensemble.feature_names)} features, "
                         f"got shape {x.shape}")
    return x


def _fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def _to_json(obj) -> str:
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, float):
        return _fmt_float(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_to_json(v) for v in obj) + "]"
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(k)}:{_to_json(v)}" for k, v in obj.items()) + "}"
    raise TypeError(f"cannot serialize {type(obj)}")


def _tree_to_nodes(tree: Tree) -> list[dict]:
    nodes = []
    for i in range(tree.n_nodes):
        if tree.left[i] < 0:
            nodes.append({"leaf": float(tree.value[i])})
        else:
            nodes.append({
                "feature": int(tree.feature[i]),
                "threshold": float(tree.threshold[i]),
                "default_left": bool(tree.default_left[i]),
                "left": int(tree.left[i]),
                "right": int(tree.right[i]),
            })
    return nodes


def save_model(ensemble: TreeEnsemble, sink) -> None:
    """Write the ensemble as JSON (floats at 17 significant digits)."""
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "base_score": float(ensemble.base_score),
        "feature_names": list(ensemble.feature_names),
        "trees": [_tree_to_nodes(t) for t in ensemble.trees],
    }
    sink.write((_to_json(doc) + "\n").encode("utf-8"))


def _tree_from_nodes(nodes: list[dict]) -> Tree:
    n = len(nodes)
    feature = np.full(n, -1, dtype=np.int64)
    threshold = np.full(n, np.nan)
    default_left = np.ones(n, dtype=np.bool_)
    left = np.full(n, -1, dtype=np.int64)
    right = np.full(n, -1, dtype=np.int64)
    value = np.zeros(n)
    for i, node in enumerate(nodes):
        if "leaf" in node:
            value[i] = float(node["leaf"])
        else:
            feature[i] = int(node["feature"])
            threshold[i] = float(node["threshold"])
            default_left[i] = bool(node["default_left"])
            left[i] = int(node["left"])
            right[i] = int(node["right"])
            if not math.isfinite(threshold[i]):
                raise ModelFormatError(f"non-finite threshold in node {i}")
    return Tree(feature=feature, threshold=threshold, default_left=default_left,
                left=left, right=right, value=value)


def load_model(source) -> TreeEnsemble:
    """Read a model written by save_model; raises ModelFormatError when unreadable."""
    try:
        doc = json.loads(source.read().decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"unreadable model file: {exc}") from None
    if not isinstance(doc, dict) or doc.get("version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported model version {doc.get('version') if isinstance(doc, dict) else None!r}")
    try:
        trees = tuple(_tree_from_nodes(nodes) for nodes in doc["trees"])
        return TreeEnsemble(
            base_score=float(doc["base_score"]),
            trees=trees,
            feature_names=tuple(doc["feature_names"]),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from None
