"""Benchmark the numba-jitted kernels against their pure-numpy fallbacks.

Run from the repo root:

    python3 benchmarks/bench_kernels.py [--repeats 30]

Jitted variants are warmed up before timing so compilation is excluded.
If numba is unavailable (or CHATRANK_NUMBA=0), only the numpy column runs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from chatrank import kernels


def _time(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def _conv_args(rng):
    # ~40-token utterance over a 5k-trigram vocabulary, 300 conv channels
    n_win, in_dim, conv_dim, nnz_per = 40, 15000, 300, 30
    counts = np.full(n_win, nnz_per)
    indptr = np.zeros(n_win + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(counts)
    indices = rng.integers(0, in_dim, size=int(indptr[-1])).astype(np.int64)
    values = rng.uniform(0.5, 2.0, size=int(indptr[-1]))
    w = rng.normal(size=(in_dim, conv_dim))
    b = rng.normal(size=conv_dim)
    return indptr, indices, values, w, b


def _scatter_args(rng):
    indptr, indices, values, w, _ = _conv_args(rng)
    d_pre = rng.normal(size=(indptr.shape[0] - 1, w.shape[1]))
    grad = np.zeros_like(w)
    return indptr, indices, values, d_pre, grad


def _tfidf_args(rng):
    n_terms, n_docs, postings_per = 20000, 100000, 200
    counts = np.full(n_terms, postings_per)
    offsets = np.zeros(n_terms + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(counts)
    doc_ids = rng.integers(0, n_docs, size=int(offsets[-1])).astype(np.int32)
    weights = rng.uniform(0, 1, size=int(offsets[-1]))
    term_ids = rng.choice(n_terms, size=12, replace=False).astype(np.int64)
    term_w = rng.uniform(0, 2, size=12)
    return offsets, doc_ids, weights, term_ids, term_w, n_docs


def _lambda_args(rng):
    n_groups, group = 5000, 3
    ptr = np.arange(0, n_groups * group + 1, group, dtype=np.int64)
    scores = rng.normal(size=n_groups * group)
    labels = np.zeros(n_groups * group, dtype=np.int64)
    labels[::group] = 1
    return scores, labels, ptr


def _split_args(rng):
    n = 20000
    X = np.ascontiguousarray(rng.normal(size=(n, 11)))
    idx = np.arange(n, dtype=np.int64)
    grad = rng.normal(size=n)
    return X, idx, grad, 1


def _tree_args(rng):
    feature = np.array([0, 2, 5, -1, -1, -1, -1], dtype=np.int32)
    threshold = np.array([0.0, 0.4, -0.3, 0.0, 0.0, 0.0, 0.0])
    left = np.array([1, 3, 5, -1, -1, -1, -1], dtype=np.int32)
    right = np.array([2, 4, 6, -1, -1, -1, -1], dtype=np.int32)
    value = np.array([0.0, 0.0, 0.0, 1.0, -1.0, 0.5, 2.0])
    X = np.ascontiguousarray(rng.normal(size=(50000, 11)))
    return feature, threshold, left, right, value, X


BENCHES = [
    ("conv_tanh_forward", "conv_tanh_forward_np", "conv_tanh_forward_nb", _conv_args),
    ("conv_scatter_grad", "conv_scatter_grad_np", "conv_scatter_grad_nb", _scatter_args),
    ("tfidf_accumulate", "tfidf_accumulate_np", "tfidf_accumulate_nb", _tfidf_args),
    ("lambda_gradients", "lambda_gradients_np", "lambda_gradients_nb", _lambda_args),
    ("best_split", "best_split_np", "best_split_nb", _split_args),
    ("tree_apply", "tree_apply_np", "tree_apply_nb", _tree_args),
]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"numba backend available: {kernels.NUMBA_ENABLED}")
    header = f"{'kernel':<20} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, np_name, nb_name, make_args in BENCHES:
        call_args = make_args(rng)
        np_fn = getattr(kernels, np_name)
        t_np = _time(np_fn, call_args, args.repeats)
        if kernels.NUMBA_ENABLED:
            nb_fn = getattr(kernels, nb_name)
            nb_fn(*make_args(rng))  # warm-up: compile outside the timer
            t_nb = _time(nb_fn, call_args, args.repeats)
            print(f"{name:<20} {t_np * 1e3:>12.3f} {t_nb * 1e3:>12.3f} {t_np / t_nb:>8.1f}x")
        else:
            print(f"{name:<20} {t_np * 1e3:>12.3f} {'-':>12} {'-':>9}")


if __name__ == "__main__":
    main()
