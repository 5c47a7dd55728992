"""Exact Shapley attributions for tree ensembles, on the margin scale.

The coalition game follows tree paths: a feature "playing" routes the
prediction through its real comparisons (missing values take the node's
default direction), while an absent feature is marginalized by splitting
the prediction across both children in proportion to how many background
rows reach each child. Attributions are computed exactly per tree with the
polynomial-time path-weighting traversal and summed, so for every row

    sum(phis) + base_value == margin

with base_value the cover-weighted expected margin over the background.

Attributions are on the log-odds (margin) scale: signs and orderings are
the interpretable content, not probabilities.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .features import Dataset
from .gbdt import Tree, TreeEnsemble

SHAP_SCALE_NOTE = ("attributions are on the margin (log-odds) scale; signs and "
                   "orderings are interpretable, absolute probabilities are not")


@dataclass(frozen=True)
class ShapExplanation:
    phis: np.ndarray
    base_value: float
    margin: float
    feature_names: tuple = ()

    def local_accuracy_gap(self) -> float:
        return abs(float(np.sum(self.phis)) + self.base_value - self.margin)


@dataclass(frozen=True)
class ShapExplanations:
    """Batch of explanations: one row of phis per explained row."""

    phis: np.ndarray
    base_value: float
    margins: np.ndarray
    feature_names: tuple

    def __len__(self):
        return len(self.margins)

    def __getitem__(self, i: int) -> ShapExplanation:
        return ShapExplanation(self.phis[i], self.base_value, float(self.margins[i]),
                               self.feature_names)

    def local_accuracy_gaps(self) -> np.ndarray:
        return np.abs(self.phis.sum(axis=1) + self.base_value - self.margins)


@njit(cache=True, nogil=True)
def _route_counts(bg, feature, threshold, default_left, left, right, cover):
    for r in range(bg.shape[0]):
        nd = 0
        while True:
            cover[nd] += 1.0
            if left[nd] < 0:
                break
            v = bg[r, feature[nd]]
            if v != v:
                nd = left[nd] if default_left[nd] else right[nd]
            elif v < threshold[nd]:
                nd = left[nd]
            else:
                nd = right[nd]


@njit(cache=True, nogil=True)
def _tree_shap_rows(X, feature, threshold, default_left, left, right, value, cover,
                    max_depth, phi_out):
    """Path-dependent Shapley values of one tree, accumulated into phi_out."""
    size = max_depth + 2
    d_path = np.empty((size, size), dtype=np.int64)
    z_path = np.empty((size, size), dtype=np.float64)  # weight when absent
    o_path = np.empty((size, size), dtype=np.float64)  # weight when playing
    w_path = np.empty((size, size), dtype=np.float64)
    cap = 2 * size + 2
    st_node = np.empty(cap, dtype=np.int64)
    st_level = np.empty(cap, dtype=np.int64)
    st_plen = np.empty(cap, dtype=np.int64)
    st_pz = np.empty(cap, dtype=np.float64)
    st_po = np.empty(cap, dtype=np.float64)
    st_pi = np.empty(cap, dtype=np.int64)

    for r in range(X.shape[0]):
        st_node[0] = 0
        st_level[0] = 0
        st_plen[0] = 0
        st_pz[0] = 1.0
        st_po[0] = 1.0
        st_pi[0] = -1
        sp = 1
        while sp > 0:
            sp -= 1
            node = st_node[sp]
            level = st_level[sp]
            path_len = st_plen[sp]
            pz = st_pz[sp]
            po = st_po[sp]
            pi = st_pi[sp]
            L = path_len
            if level > 0:
                for j in range(L):
                    d_path[level, j] = d_path[level - 1, j]
                    z_path[level, j] = z_path[level - 1, j]
                    o_path[level, j] = o_path[level - 1, j]
                    w_path[level, j] = w_path[level - 1, j]
                if pi >= 0:
                    k = -1
                    for j in range(L):
                        if d_path[level, j] == pi:
                            k = j
                            break
                    if k >= 0:
                        # remove the previous occurrence of this feature
                        nxt = w_path[level, L - 1]
                        ok = o_path[level, k]
                        zk = z_path[level, k]
                        for j in range(L - 2, -1, -1):
                            if ok != 0.0:
                                tmp = nxt * L / ((j + 1) * ok)
                                nxt = w_path[level, j] - tmp * zk * (L - 1 - j) / L
                                w_path[level, j] = tmp
                            else:
                                w_path[level, j] = w_path[level, j] * L / (zk * (L - 1 - j))
                        for j in range(k, L - 1):
                            d_path[level, j] = d_path[level, j + 1]
                            z_path[level, j] = z_path[level, j + 1]
                            o_path[level, j] = o_path[level, j + 1]
                        L -= 1
            # extend the path with this step's fractions
            d_path[level, L] = pi
            z_path[level, L] = pz
            o_path[level, L] = po
            w_path[level, L] = 1.0 if L == 0 else 0.0
            for j in range(L - 1, -1, -1):
                w_path[level, j + 1] += po * w_path[level, j] * (j + 1) / (L + 1)
                w_path[level, j] = pz * w_path[level, j] * (L - j) / (L + 1)
            L += 1

            if left[node] < 0:
                leaf_value = value[node]
                for i in range(1, L):
                    oi = o_path[level, i]
                    zi = z_path[level, i]
                    if oi == 0.0 and zi == 0.0:
                        continue  # zero-weight subtree contributes nothing
                    nxt = w_path[level, L - 1]
                    total = 0.0
                    for j in range(L - 2, -1, -1):
                        if oi != 0.0:
                            tmp = nxt * L / ((j + 1) * oi)
                            total += tmp
                            nxt = w_path[level, j] - tmp * zi * (L - 1 - j) / L
                        else:
                            total += w_path[level, j] * L / (zi * (L - 1 - j))
                    phi_out[r, d_path[level, i]] += total * (oi - zi) * leaf_value
            else:
                f = feature[node]
                v = X[r, f]
                if v != v:
                    hot = left[node] if default_left[node] else right[node]
                elif v < threshold[node]:
                    hot = left[node]
                else:
                    hot = right[node]
                cold = right[node] if hot == left[node] else left[node]
                iz = 1.0
                io = 1.0
                for j in range(L):
                    if d_path[level, j] == f:
                        iz = z_path[level, j]
                        io = o_path[level, j]
                        break
                rj = cover[node]
                if rj > 0.0:
                    ratio_hot = cover[hot] / rj
                    ratio_cold = cover[cold] / rj
                else:
                    ratio_hot = 0.0
                    ratio_cold = 0.0
                # a subtree entered with both fractions zero contributes
                # nothing; skipping it also keeps the path algebra away
                # from 0/0 when the same feature repeats deeper down
                if iz * ratio_cold != 0.0:
                    st_node[sp] = cold
                    st_level[sp] = level + 1
                    st_plen[sp] = L
                    st_pz[sp] = iz * ratio_cold
                    st_po[sp] = 0.0
                    st_pi[sp] = f
                    sp += 1
                if iz * ratio_hot != 0.0 or io != 0.0:
                    st_node[sp] = hot
                    st_level[sp] = level + 1
                    st_plen[sp] = L
                    st_pz[sp] = iz * ratio_hot
                    st_po[sp] = io
                    st_pi[sp] = f
                    sp += 1


def _tree_depth(tree: Tree) -> int:
    depth = np.zeros(tree.n_nodes, dtype=np.int64)
    best = 0
    for i in range(tree.n_nodes):
        if tree.left[i] >= 0:
            depth[tree.left[i]] = depth[i] + 1
            depth[tree.right[i]] = depth[i] + 1
        else:
            best = max(best, int(depth[i]))
    return best


def _background_matrix(background) -> np.ndarray:
    bg = background.X if isinstance(background, Dataset) else np.asarray(background,
                                                                         dtype=np.float64)
    bg = np.ascontiguousarray(np.atleast_2d(bg), dtype=np.float64)
    if bg.shape[0] == 0:
        raise ValueError("background set must be non-empty")
    return bg


class TreeShapExplainer:
    """Reusable explainer: routes the background once, then explains rows."""

    def __init__(self, ensemble: TreeEnsemble, background):
        bg = _background_matrix(background)
        if bg.shape[1] != len(ensemble.feature_names):
            raise ValueError(f"background has {bg.shape[1]} columns, model expects "
                             f"{len(ensemble.feature_names)}")
        self.ensemble = ensemble
        self.feature_names = tuple(ensemble.feature_names)
        self._covers = []
        self._depths = []
        expected = ensemble.base_score
        for tree in ensemble.trees:
            cover = np.zeros(tree.n_nodes)
            _route_counts(bg, tree.feature, tree.threshold, tree.default_left,
                          tree.left, tree.right, cover)
            self._covers.append(cover)
            self._depths.append(_tree_depth(tree))
            leaves = tree.left < 0
            expected += float(np.sum(tree.value[leaves] * cover[leaves]) / cover[0])
        self.base_value = float(expected)

    def explain_matrix(self, X: np.ndarray) -> ShapExplanations:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        if X.shape[1] != len(self.feature_names):
            raise ValueError(f"rows have {X.shape[1]} columns, model expects "
                             f"{len(self.feature_names)}")
        phis = np.zeros((X.shape[0], X.shape[1]))
        for tree, cover, depth in zip(self.ensemble.trees, self._covers, self._depths):
            _tree_shap_rows(X, tree.feature, tree.threshold, tree.default_left,
                            tree.left, tree.right, tree.value, cover, depth, phis)
        margins = self.ensemble.predict_margin(X)
        return ShapExplanations(phis=phis, base_value=self.base_value, margins=margins,
                                feature_names=self.feature_names)

    def explain_row(self, x) -> ShapExplanation:
        x = _as_row(x, len(self.feature_names))
        return self.explain_matrix(x[None, :])[0]


def _as_row(x, n_features: int) -> np.ndarray:
    if hasattr(x, "as_row"):
        x = x.as_row()
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n_features,):
        raise ValueError(f"expected a row of {n_features} features, got shape {x.shape}")
    return x


def shap_values(ensemble: TreeEnsemble, x, background) -> ShapExplanation:
    """Exact margin-scale Shapley attribution of one prediction."""
    return TreeShapExplainer(ensemble, background).explain_row(x)


MAX_BRUTE_FORCE_FEATURES = 12


def brute_force_shap(ensemble: TreeEnsemble, x, background) -> ShapExplanation:
    """Shapley values by explicit subset enumeration; testing oracle only.

    Marginalizes absent features by background cover routing, exactly like
    shap_values. Refuses models that split on more than 12 distinct features.
    """
    bg = _background_matrix(background)
    x = _as_row(x, len(ensemble.feature_names))
    used = sorted({int(f) for tree in ensemble.trees
                   for f in tree.feature[tree.feature >= 0]})
    if len(used) > MAX_BRUTE_FORCE_FEATURES:
        raise ValueError(f"{len(used)} features in use exceeds the brute-force "
                         f"limit of {MAX_BRUTE_FORCE_FEATURES}")

    covers = []
    for tree in ensemble.trees:
        cover = np.zeros(tree.n_nodes)
        _route_counts(bg, tree.feature, tree.threshold, tree.default_left,
                      tree.left, tree.right, cover)
        covers.append(cover)

    def expectation(tree: Tree, cover: np.ndarray, playing: frozenset) -> float:
        def rec(nd: int) -> float:
            if tree.left[nd] < 0:
                return float(tree.value[nd])
            f = int(tree.feature[nd])
            if f in playing:
                v = x[f]
                if math.isnan(v):
                    child = tree.left[nd] if tree.default_left[nd] else tree.right[nd]
                elif v < tree.threshold[nd]:
                    child = tree.left[nd]
                else:
                    child = tree.right[nd]
                return rec(int(child))
            if cover[nd] <= 0.0:
                return 0.0
            return (cover[tree.left[nd]] * rec(int(tree.left[nd]))
                    + cover[tree.right[nd]] * rec(int(tree.right[nd]))) / cover[nd]

        return rec(0)

    u = len(used)
    phis = np.zeros(len(x))
    fact = [math.factorial(i) for i in range(u + 1)]
    for subset in itertools.chain.from_iterable(
            itertools.combinations(range(u), k) for k in range(u + 1)):
        playing = frozenset(used[i] for i in subset)
        v_s = sum(expectation(t, c, playing) for t, c in zip(ensemble.trees, covers))
        s = len(subset)
        in_subset = set(subset)
        for i in range(u):
            if i in in_subset:
                # subset plays the role of S + {i}: weight by |S| = s - 1
                phis[used[i]] += fact[s - 1] * fact[u - s] / fact[u] * v_s
            else:
                phis[used[i]] -= fact[s] * fact[u - s - 1] / fact[u] * v_s

    expected = ensemble.base_score + sum(
        expectation(t, c, frozenset()) for t, c in zip(ensemble.trees, covers))
    margin = float(ensemble.predict_margin(x[None, :])[0])
    return ShapExplanation(phis=phis, base_value=float(expected), margin=margin,
                           feature_names=tuple(ensemble.feature_names))


@dataclass(frozen=True)
class ImportanceTable:
    """Features ranked by mean absolute attribution, descending."""

    entries: tuple  # (feature_name, mean |phi|), rank order

    def top(self, k: int) -> tuple:
        return self.entries[:k]

    def value(self, feature: str) -> float:
        for name, v in self.entries:
            if name == feature:
                return v
        raise KeyError(feature)


def _phi_matrix(explanations) -> tuple[np.ndarray, tuple]:
    if isinstance(explanations, ShapExplanations):
        return explanations.phis, explanations.feature_names
    explanations = list(explanations)
    if not explanations:
        raise ValueError("no explanations given")
    if isinstance(explanations[0], ShapExplanations):
        # several batches (e.g. one per cross-validation fold), pooled
        names = explanations[0].feature_names
        return np.vstack([e.phis for e in explanations]), names
    names = explanations[0].feature_names
    if not names:
        names = tuple(f"f{j}" for j in range(len(explanations[0].phis)))
    return np.asarray([e.phis for e in explanations]), names


def global_importance(explanations) -> ImportanceTable:
    """Mean |phi| per feature; ties rank by feature index."""
    phis, names = _phi_matrix(explanations)
    means = np.abs(phis).mean(axis=0)
    order = sorted(range(len(names)), key=lambda j: (-means[j], j))
    return ImportanceTable(entries=tuple((names[j], float(means[j])) for j in order))


def summary_data(explanations, dataset: Dataset) -> dict:
    """Per feature: (phi, raw value or None, missing flag) for every row."""
    phis, names = _phi_matrix(explanations)
    if len(phis) != len(dataset):
        raise ValueError(f"{len(phis)} explanations vs {len(dataset)} dataset rows")
    out = {}
    for j, name in enumerate(names):
        column = dataset.X[:, j]
        out[name] = [
            (float(phis[i, j]), None if np.isnan(column[i]) else float(column[i]),
             bool(np.isnan(column[i])))
            for i in range(len(phis))
        ]
    return out


def dependence_data(explanations, dataset: Dataset, feature: str) -> list:
    """(value, phi) pairs for one feature, sorted by value; missing rows excluded."""
    phis, names = _phi_matrix(explanations)
    if len(phis) != len(dataset):
        raise ValueError(f"{len(phis)} explanations vs {len(dataset)} dataset rows")
    if feature not in names:
        raise ValueError(f"unknown feature {feature!r}")
    j = names.index(feature)
    column = dataset.X[:, j]
    pairs = [(float(column[i]), float(phis[i, j]))
             for i in range(len(phis)) if not np.isnan(column[i])]
    pairs.sort(key=lambda p: p[0])
    return pairs
