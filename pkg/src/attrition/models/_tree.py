"""Decision tree kernels (numba-compiled) shared by the predictive forest
and the imputation forests.

Trees grow depth-first with an explicit stack over an index array that is
partitioned in place.  Numeric split finding is histogram-based: feature
values are binned once per forest on up-to-255 candidate thresholds
(midpoints of unique values when few, quantiles otherwise), so a node costs
O(rows + bins) instead of a sort; small nodes fall back to an exact sorted
sweep.  Categorical features split one-vs-rest on level equality.
Randomness comes from a splitmix64 stream seeded per tree, so growth is
bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

_U64 = 0xFFFFFFFFFFFFFFFF
MAX_BINS = 255
_HIST_MIN_ROWS = 256


@njit(cache=True, nogil=True, inline="always")
def _next_u64(state):
    state[0] = (state[0] + 0x9E3779B97F4A7C15) & _U64
    z = state[0]
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    return (z ^ (z >> 31)) & _U64


@njit(cache=True, nogil=True, inline="always")
def _rand_below(state, n):
    return _next_u64(state) % np.uint64(n)


@njit(cache=True, nogil=True)
def _sample_features(state, feat_buf, mtry):
    n = feat_buf.shape[0]
    m = mtry if mtry < n else n
    for i in range(m):
        j = i + int(_rand_below(state, n - i))
        feat_buf[i], feat_buf[j] = feat_buf[j], feat_buf[i]
    return m


def prepare_bins(X: np.ndarray, is_cat: np.ndarray):
    """Bin numeric columns on midpoint/quantile thresholds, once per forest.

    Returns (codes int16, n_bins per column, padded threshold table).  A code
    b means the raw value is <= edges[b-1] and > edges[b-2]; splitting after
    bin b is exactly the raw comparison x <= edges[b].
    """
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    Xb = np.zeros((n, p), dtype=np.int16)
    n_bins = np.zeros(p, dtype=np.int64)
    edge_list: list[np.ndarray] = []
    for f in range(p):
        if is_cat[f]:
            edge_list.append(np.empty(0))
            continue
        uniq = np.unique(X[:, f])
        if len(uniq) <= 1:
            edges = np.empty(0)
        elif len(uniq) - 1 <= MAX_BINS:
            edges = 0.5 * (uniq[:-1] + uniq[1:])
        else:
            qs = np.quantile(X[:, f], np.linspace(0.0, 1.0, MAX_BINS + 2)[1:-1])
            edges = np.unique(qs)
        edge_list.append(edges)
        Xb[:, f] = np.searchsorted(edges, X[:, f], side="left").astype(np.int16)
        n_bins[f] = len(edges) + 1
    width = max(1, max((len(e) for e in edge_list), default=1))
    edges_pad = np.zeros((p, width), dtype=np.float64)
    for f, e in enumerate(edge_list):
        edges_pad[f, : len(e)] = e
    return Xb, n_bins, edges_pad


@njit(cache=True, nogil=True)
def _grow(X, Xb, n_bins, edges, y_cls, y_reg, idx, is_cat, n_levels, n_classes,
          mtry, min_leaf, seed, feature, thresh, left, right, counts, means):
    """Grow one tree; classification when n_classes > 0, regression otherwise.

    Returns the number of nodes used.  ``counts`` holds per-node class
    fractions (classification), ``means`` per-node targets (regression).
    """
    n_feat = X.shape[1]
    classification = n_classes > 0
    K = n_classes if classification else 1
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    feat_buf = np.empty(n_feat, dtype=np.int64)
    max_cat = 1
    for f in range(n_feat):
        if is_cat[f] and n_levels[f] > max_cat:
            max_cat = n_levels[f]
    hist = np.empty((MAX_BINS + 1, K), dtype=np.float64)
    hist_sum = np.empty(MAX_BINS + 1, dtype=np.float64)
    lvl_stat = np.empty((max_cat, K), dtype=np.float64)
    lvl_sum = np.empty(max_cat, dtype=np.float64)
    left_acc = np.empty(K, dtype=np.float64)
    node_acc = np.empty(K, dtype=np.float64)
    tmp = np.empty(idx.shape[0], dtype=np.int64)

    cap = feature.shape[0]
    stack = np.empty((cap, 3), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = idx.shape[0]
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        n_node = end - start
        tot = float(n_node)

        # node statistics and stopping checks
        node_sum = 0.0
        if classification:
            for c in range(K):
                node_acc[c] = 0.0
            for r in range(start, end):
                node_acc[y_cls[idx[r]]] += 1.0
            for c in range(K):
                counts[node, c] = node_acc[c] / tot
            stop = n_node < 2 * min_leaf or n_node < 2
            if not stop:
                for c in range(K):
                    if node_acc[c] == tot:
                        stop = True
            parent_crit = 0.0
            for c in range(K):
                parent_crit += node_acc[c] * node_acc[c]
            parent_crit /= tot
        else:
            s2 = 0.0
            for r in range(start, end):
                v = y_reg[idx[r]]
                node_sum += v
                s2 += v * v
            means[node] = node_sum / tot
            sse = s2 - node_sum * node_sum / tot
            stop = n_node < 2 * min_leaf or n_node < 2 or sse <= 1e-12
            parent_crit = node_sum * node_sum / tot
        if stop:
            feature[node] = -1
            continue

        for f in range(n_feat):
            feat_buf[f] = f
        m = _sample_features(state, feat_buf, mtry)

        # best split maximizes sum over children of (class counts^2 / size)
        # (equivalently minimizes weighted Gini / SSE)
        best_crit = parent_crit + 1e-12
        best_f = -1
        best_thr = 0.0
        for fi in range(m):
            f = feat_buf[fi]
            if is_cat[f]:
                nl = n_levels[f]
                for lv in range(nl):
                    lvl_sum[lv] = 0.0
                    for c in range(K):
                        lvl_stat[lv, c] = 0.0
                for r in range(start, end):
                    v = int(X[idx[r], f])
                    if 0 <= v < nl:
                        lvl_sum[v] += 1.0
                        if classification:
                            lvl_stat[v, y_cls[idx[r]]] += 1.0
                        else:
                            lvl_stat[v, 0] += y_reg[idx[r]]
                for lv in range(nl):
                    n_left = lvl_sum[lv]
                    n_right = tot - n_left
                    if n_left < min_leaf or n_right < min_leaf:
                        continue
                    crit = 0.0
                    if classification:
                        for c in range(K):
                            l = lvl_stat[lv, c]
                            rr = node_acc[c] - l
                            crit += l * l / n_left + rr * rr / n_right
                    else:
                        sl = lvl_stat[lv, 0]
                        sr = node_sum - sl
                        crit = sl * sl / n_left + sr * sr / n_right
                    if crit > best_crit:
                        best_crit = crit
                        best_f = f
                        best_thr = float(lv)
            elif n_node >= _HIST_MIN_ROWS and n_bins[f] > 1:
                nbf = n_bins[f]
                for b in range(nbf):
                    hist_sum[b] = 0.0
                    for c in range(K):
                        hist[b, c] = 0.0
                for r in range(start, end):
                    b = Xb[idx[r], f]
                    hist_sum[b] += 1.0
                    if classification:
                        hist[b, y_cls[idx[r]]] += 1.0
                    else:
                        hist[b, 0] += y_reg[idx[r]]
                n_left = 0.0
                for c in range(K):
                    left_acc[c] = 0.0
                for b in range(nbf - 1):
                    n_left += hist_sum[b]
                    for c in range(K):
                        left_acc[c] += hist[b, c]
                    if n_left < min_leaf:
                        continue
                    n_right = tot - n_left
                    if n_right < min_leaf:
                        break
                    if hist_sum[b] == 0.0:
                        continue
                    crit = 0.0
                    if classification:
                        for c in range(K):
                            l = left_acc[c]
                            rr = node_acc[c] - l
                            crit += l * l / n_left + rr * rr / n_right
                    else:
                        sl = left_acc[0]
                        sr = node_sum - sl
                        crit = sl * sl / n_left + sr * sr / n_right
                    if crit > best_crit:
                        best_crit = crit
                        best_f = f
                        best_thr = edges[f, b]
            else:
                vals = np.empty(n_node, dtype=np.float64)
                for r in range(n_node):
                    vals[r] = X[idx[start + r], f]
                order = np.argsort(vals)
                for c in range(K):
                    left_acc[c] = 0.0
                sl = 0.0
                for i in range(n_node - 1):
                    row = idx[start + order[i]]
                    if classification:
                        left_acc[y_cls[row]] += 1.0
                    else:
                        sl += y_reg[row]
                    if vals[order[i + 1]] == vals[order[i]]:
                        continue
                    n_left = float(i + 1)
                    n_right = tot - n_left
                    if n_left < min_leaf or n_right < min_leaf:
                        continue
                    crit = 0.0
                    if classification:
                        for c in range(K):
                            l = left_acc[c]
                            rr = node_acc[c] - l
                            crit += l * l / n_left + rr * rr / n_right
                    else:
                        sr = node_sum - sl
                        crit = sl * sl / n_left + sr * sr / n_right
                    if crit > best_crit:
                        best_crit = crit
                        best_f = f
                        # midpoint of adjacent doubles can round up to the
                        # next value, which would send every row left
                        thr = 0.5 * (vals[order[i]] + vals[order[i + 1]])
                        if thr >= vals[order[i + 1]]:
                            thr = vals[order[i]]
                        best_thr = thr

        if best_f < 0:
            feature[node] = -1
            continue

        # stable two-sided partition of idx[start:end]
        k_left = 0
        k_right = 0
        cat_split = is_cat[best_f]
        for r in range(start, end):
            v = X[idx[r], best_f]
            goes_left = (v == best_thr) if cat_split else (v <= best_thr)
            if goes_left:
                tmp[k_left] = idx[r]
                k_left += 1
            else:
                tmp[n_node - 1 - k_right] = idx[r]
                k_right += 1
        for r in range(k_left):
            idx[start + r] = tmp[r]
        for r in range(k_right):
            idx[start + k_left + r] = tmp[n_node - 1 - r]

        feature[node] = best_f
        thresh[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[top, 0] = n_nodes
        stack[top, 1] = start
        stack[top, 2] = start + k_left
        top += 1
        stack[top, 0] = n_nodes + 1
        stack[top, 1] = start + k_left
        stack[top, 2] = end
        top += 1
        n_nodes += 2
    return n_nodes


@njit(cache=True, nogil=True)
def _apply(X, is_cat, feature, thresh, left, right):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for r in range(n):
        node = 0
        while feature[node] >= 0:
            f = feature[node]
            if is_cat[f]:
                node = left[node] if X[r, f] == thresh[node] else right[node]
            else:
                node = left[node] if X[r, f] <= thresh[node] else right[node]
        out[r] = node
    return out


@dataclass
class Tree:
    feature: np.ndarray
    thresh: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray        # (nodes, n_classes) class fractions, or (nodes,) means

    def apply(self, X: np.ndarray, is_cat: np.ndarray) -> np.ndarray:
        return _apply(np.ascontiguousarray(X, dtype=np.float64), is_cat,
                      self.feature, self.thresh, self.left, self.right)

    def predict(self, X: np.ndarray, is_cat: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X, is_cat)]


_EMPTY_BINS = (None, None, None)


def grow_tree(X: np.ndarray, y: np.ndarray, *, is_cat: np.ndarray, n_levels: np.ndarray,
              mtry: int, min_leaf: int, seed: int, sample_idx: np.ndarray,
              n_classes: int = 0, bins=None) -> Tree:
    """Grow one tree on the given bootstrap rows; n_classes=0 means regression.

    ``bins`` is the (codes, n_bins, edges) triple from prepare_bins; pass it
    when growing many trees on the same matrix.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    is_cat = np.ascontiguousarray(is_cat, dtype=np.bool_)
    n_levels = np.ascontiguousarray(n_levels, dtype=np.int64)
    Xb, n_bins, edges = prepare_bins(X, is_cat) if bins is None else bins
    idx = np.ascontiguousarray(sample_idx, dtype=np.int64)
    cap = 2 * idx.shape[0] + 1
    feature = np.full(cap, -1, dtype=np.int64)
    thresh = np.zeros(cap, dtype=np.float64)
    left = np.zeros(cap, dtype=np.int64)
    right = np.zeros(cap, dtype=np.int64)
    if n_classes:
        counts = np.zeros((cap, n_classes), dtype=np.float64)
        means = np.zeros(1, dtype=np.float64)
        y_cls = np.ascontiguousarray(y, dtype=np.int64)
        y_reg = np.zeros(1, dtype=np.float64)
    else:
        counts = np.zeros((1, 1), dtype=np.float64)
        means = np.zeros(cap, dtype=np.float64)
        y_cls = np.zeros(1, dtype=np.int64)
        y_reg = np.ascontiguousarray(y, dtype=np.float64)
    used = _grow(X, Xb, n_bins, edges, y_cls, y_reg, idx, is_cat, n_levels,
                 int(n_classes), int(mtry), int(min_leaf), np.uint64(seed),
                 feature, thresh, left, right, counts, means)
    value = counts[:used] if n_classes else means[:used]
    return Tree(feature=feature[:used], thresh=thresh[:used], left=left[:used],
                right=right[:used], value=value)
