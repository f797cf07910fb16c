"""Hot numeric kernels, each with a numba-jitted and a pure-numpy implementation.

The jitted path is the default whenever numba imports cleanly. Set
``CHATRANK_NUMBA=0`` in the environment to force the numpy fallback (the
flag is read once, at import time). Both implementations of every kernel
stay importable so the test suite can check they agree and
``benchmarks/bench_kernels.py`` can time them against each other.

Kernels operate on float64/int arrays and keep summation order fixed so a
given backend is bit-deterministic run to run.
"""

from __future__ import annotations

import math
import os

import numpy as np


def _numba_requested() -> bool:
    return os.environ.get("CHATRANK_NUMBA", "1").strip().lower() not in {
        "0",
        "false",
        "no",
        "off",
    }


NUMBA_ENABLED = False
if _numba_requested():
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False


# ---------------------------------------------------------------------------
# Windowed sparse convolution (forward + weight gradient scatter)
#
# An utterance is a CSR batch of T window vectors over the concatenated
# trigram space: window t owns entries indptr[t]:indptr[t+1] of
# (indices, values). conv_w is stored input-major, shape (in_dim, conv_dim),
# so each sparse entry gathers one contiguous row.
# ---------------------------------------------------------------------------


def conv_tanh_forward_np(indptr, indices, values, conv_w, conv_b):
    """tanh(conv_b + sum_k values[k] * conv_w[indices[k]]) per window."""
    n_win = indptr.shape[0] - 1
    pre = np.tile(conv_b, (n_win, 1))
    for t in range(n_win):
        s, e = indptr[t], indptr[t + 1]
        if e > s:
            pre[t] += values[s:e] @ conv_w[indices[s:e]]
    return np.tanh(pre)


def _conv_tanh_forward_loop(indptr, indices, values, conv_w, conv_b):
    n_win = indptr.shape[0] - 1
    dim = conv_b.shape[0]
    out = np.empty((n_win, dim))
    for t in range(n_win):
        acc = conv_b.copy()
        for k in range(indptr[t], indptr[t + 1]):
            row = conv_w[indices[k]]
            v = values[k]
            for d in range(dim):
                acc[d] += v * row[d]
        for d in range(dim):
            out[t, d] = math.tanh(acc[d])
    return out


def conv_scatter_grad_np(indptr, indices, values, d_pre, d_conv_w):
    """Accumulate d_conv_w[indices[k]] += values[k] * d_pre[window(k)]."""
    n_win = indptr.shape[0] - 1
    for t in range(n_win):
        s, e = indptr[t], indptr[t + 1]
        if e > s:
            np.add.at(d_conv_w, indices[s:e], values[s:e, None] * d_pre[t])


def _conv_scatter_grad_loop(indptr, indices, values, d_pre, d_conv_w):
    n_win = indptr.shape[0] - 1
    dim = d_pre.shape[1]
    for t in range(n_win):
        for k in range(indptr[t], indptr[t + 1]):
            idx = indices[k]
            v = values[k]
            for d in range(dim):
                d_conv_w[idx, d] += v * d_pre[t, d]


# ---------------------------------------------------------------------------
# TF-IDF score accumulation over a CSR postings layout.
# ---------------------------------------------------------------------------


def tfidf_accumulate_np(offsets, post_doc_ids, post_weights, term_ids, term_weights, n_docs):
    """scores[doc] += qw(t) * normalized_weight(t, doc) over query terms."""
    scores = np.zeros(n_docs)
    for j in range(term_ids.shape[0]):
        t = term_ids[j]
        s, e = offsets[t], offsets[t + 1]
        # unbuffered accumulate: a doc repeated within one posting slice
        # must contribute every occurrence
        np.add.at(scores, post_doc_ids[s:e], term_weights[j] * post_weights[s:e])
    return scores


def _tfidf_accumulate_loop(offsets, post_doc_ids, post_weights, term_ids, term_weights, n_docs):
    scores = np.zeros(n_docs)
    for j in range(term_ids.shape[0]):
        t = term_ids[j]
        qw = term_weights[j]
        for k in range(offsets[t], offsets[t + 1]):
            scores[post_doc_ids[k]] += qw * post_weights[k]
    return scores


# ---------------------------------------------------------------------------
# Pairwise rank gradients (lambdas) with NDCG swap deltas, binary labels.
#
# Groups are contiguous slices of (scores, labels) delimited by group_ptr.
# Ranking within a group orders by score descending, original position
# ascending on ties. Degenerate groups (single label value) contribute
# nothing; callers filter or warn as appropriate.
# ---------------------------------------------------------------------------


def _group_positions(scores):
    # rank positions (1-based) under (-score, index) ordering
    order = np.argsort(-scores, kind="stable")
    pos = np.empty(order.shape[0], dtype=np.int64)
    for r in range(order.shape[0]):
        pos[order[r]] = r + 1
    return pos


def lambda_gradients_np(scores, labels, group_ptr):
    n = scores.shape[0]
    lambdas = np.zeros(n)
    weights = np.zeros(n)
    for g in range(group_ptr.shape[0] - 1):
        s, e = group_ptr[g], group_ptr[g + 1]
        y = labels[s:e]
        n_pos = int(y.sum())
        if n_pos == 0 or n_pos == e - s:
            continue
        pos = _group_positions(scores[s:e])
        idcg = np.sum(1.0 / np.log2(1.0 + np.arange(1, n_pos + 1)))
        disc = 1.0 / np.log2(1.0 + pos)
        for i in range(e - s):
            if y[i] != 1:
                continue
            for j in range(e - s):
                if y[j] != 0:
                    continue
                rho = 1.0 / (1.0 + np.exp(scores[s + i] - scores[s + j]))
                delta = abs(disc[i] - disc[j]) / idcg
                lam = rho * delta
                w = rho * (1.0 - rho) * delta
                lambdas[s + i] += lam
                lambdas[s + j] -= lam
                weights[s + i] += w
                weights[s + j] += w
    return lambdas, weights


def _lambda_gradients_loop(scores, labels, group_ptr):
    n = scores.shape[0]
    lambdas = np.zeros(n)
    weights = np.zeros(n)
    for g in range(group_ptr.shape[0] - 1):
        s, e = group_ptr[g], group_ptr[g + 1]
        m = e - s
        n_pos = 0
        for i in range(s, e):
            n_pos += labels[i]
        if n_pos == 0 or n_pos == m:
            continue
        order = np.argsort(-scores[s:e], kind="mergesort")
        disc = np.empty(m)
        for r in range(m):
            disc[order[r]] = 1.0 / math.log2(2.0 + r)
        idcg = 0.0
        for r in range(n_pos):
            idcg += 1.0 / math.log2(2.0 + r)
        for i in range(m):
            if labels[s + i] != 1:
                continue
            for j in range(m):
                if labels[s + j] != 0:
                    continue
                rho = 1.0 / (1.0 + math.exp(scores[s + i] - scores[s + j]))
                delta = abs(disc[i] - disc[j]) / idcg
                lam = rho * delta
                w = rho * (1.0 - rho) * delta
                lambdas[s + i] += lam
                lambdas[s + j] -= lam
                weights[s + i] += w
                weights[s + j] += w
    return lambdas, weights


def ndcg1_mean_np(scores, labels, group_ptr):
    """Mean NDCG@1 over groups: label of the top-ranked doc (ties -> lowest index)."""
    n_groups = group_ptr.shape[0] - 1
    if n_groups == 0:
        return 0.0
    total = 0.0
    for g in range(n_groups):
        s, e = group_ptr[g], group_ptr[g + 1]
        top = s + int(np.argmax(scores[s:e]))
        total += float(labels[top])
    return total / n_groups


def _ndcg1_mean_loop(scores, labels, group_ptr):
    n_groups = group_ptr.shape[0] - 1
    if n_groups == 0:
        return 0.0
    total = 0.0
    for g in range(n_groups):
        s, e = group_ptr[g], group_ptr[g + 1]
        best = s
        for i in range(s + 1, e):
            if scores[i] > scores[best]:
                best = i
        total += labels[best]
    return total / n_groups


# ---------------------------------------------------------------------------
# Exact best-split search for one regression-tree node.
#
# Returns (feature, threshold, improved) where improved is 0/1. Candidate
# splits sit halfway between consecutive distinct values; the winner is the
# strictly best variance-reduction gain, ties resolved by lowest feature
# index then lowest threshold (guaranteed by the ascending scan order with a
# strict improvement test).
# ---------------------------------------------------------------------------


def best_split_np(X, sample_idx, grad, min_leaf):
    m = sample_idx.shape[0]
    best_feat = -1
    best_thr = 0.0
    best_gain = -np.inf
    if m < 2 * min_leaf:
        return best_feat, best_thr, 0
    g = grad[sample_idx]
    total = g.sum()
    base = total * total / m
    for f in range(X.shape[1]):
        vals = X[sample_idx, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        sg = g[order]
        left = np.cumsum(sg)
        for p in range(min_leaf, m - min_leaf + 1):
            if p > m - 1 or sv[p] == sv[p - 1]:
                continue
            gl = left[p - 1]
            gr = total - gl
            gain = gl * gl / p + gr * gr / (m - p)
            if gain > best_gain and gain > base:
                best_gain = gain
                best_feat = f
                best_thr = (sv[p - 1] + sv[p]) / 2.0
    return best_feat, best_thr, 1 if best_feat >= 0 else 0


def _best_split_loop(X, sample_idx, grad, min_leaf):
    m = sample_idx.shape[0]
    best_feat = -1
    best_thr = 0.0
    best_gain = -np.inf
    if m < 2 * min_leaf:
        return best_feat, best_thr, 0
    g = np.empty(m)
    for r in range(m):
        g[r] = grad[sample_idx[r]]
    total = 0.0
    for r in range(m):
        total += g[r]
    base = total * total / m
    vals = np.empty(m)
    for f in range(X.shape[1]):
        for r in range(m):
            vals[r] = X[sample_idx[r], f]
        order = np.argsort(vals, kind="mergesort")
        gl = 0.0
        for p in range(1, m - min_leaf + 1):
            gl += g[order[p - 1]]
            if p < min_leaf or p > m - 1:
                continue
            va = vals[order[p - 1]]
            vb = vals[order[p]]
            if va == vb:
                continue
            gr = total - gl
            gain = gl * gl / p + gr * gr / (m - p)
            if gain > best_gain and gain > base:
                best_gain = gain
                best_feat = f
                best_thr = (va + vb) / 2.0
    return best_feat, best_thr, 1 if best_feat >= 0 else 0


# ---------------------------------------------------------------------------
# Regression-tree application: per-row leaf value.
# Node arrays: feature[i] < 0 marks a leaf (value[i]); internal nodes route
# left when x[feature] <= threshold.
# ---------------------------------------------------------------------------


def tree_apply_np(feature, threshold, left, right, value, X):
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    active = feature[node] >= 0
    while active.any():
        rows = np.nonzero(active)[0]
        cur = node[rows]
        feat = feature[cur]
        go_left = X[rows, feat] <= threshold[cur]
        node[rows] = np.where(go_left, left[cur], right[cur])
        active = feature[node] >= 0
    return value[node]


def _tree_apply_loop(feature, threshold, left, right, value, X):
    n = X.shape[0]
    out = np.empty(n)
    for r in range(n):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
    return out


# ---------------------------------------------------------------------------
# Backend selection
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:
    _jit = njit(cache=True)
    conv_tanh_forward_nb = _jit(_conv_tanh_forward_loop)
    conv_scatter_grad_nb = _jit(_conv_scatter_grad_loop)
    tfidf_accumulate_nb = _jit(_tfidf_accumulate_loop)
    lambda_gradients_nb = _jit(_lambda_gradients_loop)
    ndcg1_mean_nb = _jit(_ndcg1_mean_loop)
    best_split_nb = _jit(_best_split_loop)
    tree_apply_nb = _jit(_tree_apply_loop)

    conv_tanh_forward = conv_tanh_forward_nb
    conv_scatter_grad = conv_scatter_grad_nb
    tfidf_accumulate = tfidf_accumulate_nb
    lambda_gradients = lambda_gradients_nb
    ndcg1_mean = ndcg1_mean_nb
    best_split = best_split_nb
    tree_apply = tree_apply_nb
else:
    conv_tanh_forward = conv_tanh_forward_np
    conv_scatter_grad = conv_scatter_grad_np
    tfidf_accumulate = tfidf_accumulate_np
    lambda_gradients = lambda_gradients_np
    ndcg1_mean = ndcg1_mean_np
    best_split = best_split_np
    tree_apply = tree_apply_np


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
