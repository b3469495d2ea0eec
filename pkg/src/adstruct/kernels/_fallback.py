"""Pure numpy/Python implementations of the hot kernels.

These are the reference versions; ``_ccore`` must agree with them to
floating-point round-off.  Inputs are assumed validated and C-contiguous
float64 by the callers in ``backend``.
"""

import numpy as np


def _tap_ranges(T, k, dilation):
    half = (k - 1) // 2
    for j in range(k):
        s = (j - half) * dilation
        lo = max(0, -s)
        hi = min(T, T - s)
        if lo < hi:
            yield j, s, lo, hi


def conv1d_forward(x, kernel, dilation):
    T = x.shape[0]
    k, _, c_out = kernel.shape
    y = np.zeros((T, c_out))
    for j, s, lo, hi in _tap_ranges(T, k, dilation):
        y[lo:hi] += x[lo + s:hi + s] @ kernel[j]
    return y


def conv1d_backward(x, kernel, dilation, grad_out):
    T = x.shape[0]
    k = kernel.shape[0]
    grad_x = np.zeros_like(x)
    grad_k = np.zeros_like(kernel)
    for j, s, lo, hi in _tap_ranges(T, k, dilation):
        grad_x[lo + s:hi + s] += grad_out[lo:hi] @ kernel[j].T
        grad_k[j] = x[lo + s:hi + s].T @ grad_out[lo:hi]
    return grad_x, grad_k


def greedy_match(pred, gt, tolerance):
    """Two-pointer sweep over sorted ``pred`` and ``gt``.

    Each ground truth takes the earliest unused prediction with
    ``|pred - gt| < tolerance``.  Returns index pairs into the sorted arrays.
    """
    pairs = []
    p = 0
    n_pred = len(pred)
    for g, t in enumerate(gt):
        # same rounded quantity as the match test, so the two never disagree
        while p < n_pred and pred[p] < t and t - pred[p] >= tolerance:
            p += 1
        if p < n_pred and abs(pred[p] - t) < tolerance:
            pairs.append((p, g))
            p += 1
    return pairs


def local_maxima(probs, threshold, radius):
    """Indices t with probs[t] >= threshold that strictly exceed every
    neighbour within ``radius`` snippets."""
    T = len(probs)
    out = []
    for t in range(T):
        v = probs[t]
        if v < threshold:
            continue
        lo = max(0, t - radius)
        hi = min(T, t + radius + 1)
        ok = True
        for u in range(lo, hi):
            if u != t and probs[u] >= v:
                ok = False
                break
        if ok:
            out.append(t)
    return out


def precision_sum(hits):
    """Sum of precision@r over the ranks r where ``hits`` is true."""
    total = 0.0
    tp = 0
    for r, h in enumerate(hits, start=1):
        if h:
            tp += 1
            total += tp / r
    return total
