"""Compiled kernels for exact greedy tree growth and prediction.

One grower serves both ensemble kinds through per-sample (grad, hess)
pairs: with grad=y, hess=1 the split score G²/H reduces to Gini/variance
reduction on binary labels and leaves predict class frequencies; with
logistic-loss gradients and hessians it is the second-order gain and
leaves take the one-step Newton value G/H.

Split candidates are the midpoints of consecutive distinct sorted feature
values (no histogram binning). Ties in gain break to the lowest feature
index, then the lowest threshold. Rows with value <= threshold go left.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_GAIN_EPS = 1e-12  # require strictly positive gain beyond float noise


@njit(inline="always")
def _next_u64(state):
    # splitmix64: cheap, full-period, safe to carry as a local
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(inline="always")
def _rand_below(state, n):
    # unbiased uniform draw from [0, n) via rejection
    nn = np.uint64(n)
    lim = (np.uint64(0xFFFFFFFFFFFFFFFF) // nn) * nn
    while True:
        state, v = _next_u64(state)
        if v < lim:
            return state, int(v % nn)


@njit(cache=True, nogil=True)
def bootstrap_rows(n, seed):
    out = np.empty(n, np.int64)
    state = np.uint64(seed)
    for i in range(n):
        state, v = _rand_below(state, n)
        out[i] = v
    return out


@njit(cache=True, nogil=True)
def build_tree(X, grad, hess, use_rows, max_depth, min_samples_leaf, mtry,
               lam, seed):
    """Grow one tree on X[use_rows] (repeats allowed for bootstrap samples).

    Returns flat node arrays (feature, threshold, left, right, value) plus
    the leaf node id for every position of use_rows. feature == -1 marks a
    leaf. lam guards hessian sums near zero; pass 0.0 when hess is all ones.
    """
    n = use_rows.shape[0]
    d = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap, np.float64)
    leaf_of = np.full(n, -1, np.int64)

    idx = use_rows.copy()
    slot = np.arange(n)  # position of idx[t] in the original use_rows order

    stack_node = np.empty(cap, np.int64)
    stack_start = np.empty(cap, np.int64)
    stack_end = np.empty(cap, np.int64)
    stack_depth = np.empty(cap, np.int64)

    vbuf = np.empty(n, np.float64)
    tmp_idx = np.empty(n, np.int64)
    tmp_slot = np.empty(n, np.int64)
    featbuf = np.arange(d)

    state = np.uint64(seed)
    node_count = 1
    sp = 0
    stack_node[sp] = 0
    stack_start[sp] = 0
    stack_end[sp] = n
    stack_depth[sp] = 0
    sp += 1

    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        start = stack_start[sp]
        end = stack_end[sp]
        depth = stack_depth[sp]
        m = end - start

        G = 0.0
        H = 0.0
        gmin = np.inf
        gmax = -np.inf
        hmin = np.inf
        hmax = -np.inf
        for t in range(start, end):
            r = idx[t]
            g = grad[r]
            h = hess[r]
            G += g
            H += h
            if g < gmin:
                gmin = g
            if g > gmax:
                gmax = g
            if h < hmin:
                hmin = h
            if h > hmax:
                hmax = h
        value[node] = G / (H + lam)

        # identical (grad, hess) everywhere means no split can gain
        if (depth >= max_depth or m < 2 * min_samples_leaf
                or (gmin == gmax and hmin == hmax)):
            for t in range(start, end):
                leaf_of[slot[t]] = node
            continue

        if mtry >= d:
            n_feats = d
            for j in range(d):
                featbuf[j] = j
        else:
            # partial Fisher-Yates, then ascending order for tie-breaking
            n_feats = mtry
            for t in range(mtry):
                state, r = _rand_below(state, d - t)
                tswap = featbuf[t + r]
                featbuf[t + r] = featbuf[t]
                featbuf[t] = tswap
            featbuf[:mtry].sort()

        parent_score = G * G / (H + lam)
        best_gain = _GAIN_EPS
        best_feat = -1
        best_thr = 0.0

        for fi in range(n_feats):
            j = featbuf[fi]
            for t in range(m):
                vbuf[t] = X[idx[start + t], j]
            order = np.argsort(vbuf[:m])
            Gl = 0.0
            Hl = 0.0
            for t in range(m - 1):
                o = order[t]
                r = idx[start + o]
                Gl += grad[r]
                Hl += hess[r]
                vc = vbuf[o]
                vn = vbuf[order[t + 1]]
                if vn > vc:
                    n_left = t + 1
                    if n_left >= min_samples_leaf and m - n_left >= min_samples_leaf:
                        Gr = G - Gl
                        Hr = H - Hl
                        score = Gl * Gl / (Hl + lam) + Gr * Gr / (Hr + lam)
                        gain = score - parent_score
                        if gain > best_gain:
                            thr = vc + 0.5 * (vn - vc)
                            if thr >= vn:  # midpoint rounded up to vn
                                thr = vc
                            best_gain = gain
                            best_feat = j
                            best_thr = thr

        if best_feat < 0:
            for t in range(start, end):
                leaf_of[slot[t]] = node
            continue

        # stable partition: <= threshold goes left; lefts pack at the front
        # of the scratch buffer, rights at the back in reverse
        nl = 0
        nr = 0
        for t in range(start, end):
            if X[idx[t], best_feat] <= best_thr:
                tmp_idx[nl] = idx[t]
                tmp_slot[nl] = slot[t]
                nl += 1
            else:
                nr += 1
                tmp_idx[n - nr] = idx[t]
                tmp_slot[n - nr] = slot[t]
        for t in range(nl):
            idx[start + t] = tmp_idx[t]
            slot[start + t] = tmp_slot[t]
        for t in range(nr):
            idx[start + nl + t] = tmp_idx[n - 1 - t]
            slot[start + nl + t] = tmp_slot[n - 1 - t]

        lid = node_count
        rid = node_count + 1
        node_count += 2
        feature[node] = best_feat
        threshold[node] = best_thr
        left[node] = lid
        right[node] = rid
        stack_node[sp] = rid
        stack_start[sp] = start + nl
        stack_end[sp] = end
        stack_depth[sp] = depth + 1
        sp += 1
        stack_node[sp] = lid
        stack_start[sp] = start
        stack_end[sp] = start + nl
        stack_depth[sp] = depth + 1
        sp += 1

    return (feature[:node_count], threshold[:node_count], left[:node_count],
            right[:node_count], value[:node_count], leaf_of)


@njit(cache=True, nogil=True)
def accumulate_tree(X, feature, threshold, left, right, value, out):
    """Add each row's leaf value to ``out`` (callers zero it first)."""
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] += value[node]


def warmup() -> None:
    """Force compilation (or cache load) of all kernels on tiny inputs."""
    X = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 2.0]])
    g = np.array([0.0, 1.0, 1.0])
    h = np.ones(3)
    rows = np.arange(3)
    tree = build_tree(X, g, h, rows, 2, 1, 2, 0.0, np.uint64(1))
    out = np.zeros(3)
    accumulate_tree(X, tree[0], tree[1], tree[2], tree[3], tree[4], out)
    bootstrap_rows(3, np.uint64(1))
