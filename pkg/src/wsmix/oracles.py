"""Slow, obviously-correct reference computations.

Nothing here shares code with the fast paths it is used to check: loops
over indices, explicit sums, and brute-force enumeration only.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, n = a.shape
    p = b.shape[1]
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            acc = 0.0
            for k in range(n):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def gelu_scalar(x: float) -> float:
    return x * 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def naive_global_mean(z: np.ndarray, valid: int) -> np.ndarray:
    """Mean of the first ``valid`` rows of a (T, c) array."""
    acc = np.zeros(z.shape[1])
    for t in range(valid):
        acc += z[t]
    return acc / valid


def naive_window_mean(z: np.ndarray, valid: int, k: int, mode: str) -> np.ndarray:
    """Double loop over frames and window offsets of a (T, c) array; padded rows are zero."""
    T, c = z.shape
    out = np.zeros((T, c))
    for t in range(valid):
        acc = np.zeros(c)
        count = 0
        for j in range(t - k, t + k + 1):
            if 0 <= j < valid:
                acc += z[j]
                count += 1
        out[t] = acc / (2 * k + 1 if mode == "zero-pad" else count)
    return out


def collapse(path, blank: int) -> tuple[int, ...]:
    out = []
    prev = None
    for c in path:
        if c != prev and c != blank:
            out.append(c)
        prev = c
    return tuple(out)


def brute_force_ctc(log_probs: np.ndarray, labels, blank: int = 0) -> float:
    """-log of the summed probability of every frame labelling that collapses to ``labels``."""
    T, V = log_probs.shape
    target = tuple(labels)
    total = 0.0
    for path in itertools.product(range(V), repeat=T):
        if collapse(path, blank) == target:
            total += math.exp(sum(log_probs[t, c] for t, c in enumerate(path)))
    return -math.log(total) if total > 0 else math.inf


def naive_attention(
    H: np.ndarray, wq, bq, wk, bk, wv, bv, wo, bo, heads: int, valid: int
) -> np.ndarray:
    """Per-pair multi-head attention for one (T, d) sequence; padded rows are zero."""
    T, d = H.shape
    dh = d // heads
    q = H @ wq + bq
    k = H @ wk + bk
    v = H @ wv + bv
    concat = np.zeros((T, d))
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        for t in range(valid):
            scores = [float(np.dot(q[t, cols], k[j, cols])) / math.sqrt(dh) for j in range(valid)]
            top = max(scores)
            weights = [math.exp(s - top) for s in scores]
            z = sum(weights)
            for j in range(valid):
                concat[t, cols] += weights[j] / z * v[j, cols]
    out = concat @ wo + bo
    out[valid:] = 0.0
    return out
