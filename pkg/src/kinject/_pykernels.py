"""Pure-Python/numpy kernels; the fallback when ``_ckernels`` is not built."""
from __future__ import annotations

import numpy as np


def softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(y, g):
    dot = (g * y).sum(axis=1, keepdims=True)
    return y * (g - dot)


def layer_norm_rows(x, eps):
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=1)
    inv = 1.0 / np.sqrt(var + eps)
    return centered * inv[:, None], inv


def layer_norm_rows_backward(xhat, inv, g):
    sg = g.mean(axis=1, keepdims=True)
    sgx = (g * xhat).mean(axis=1, keepdims=True)
    return inv[:, None] * (g - sg - xhat * sgx)


def row_dots(mat, q):
    # einsum, not BLAS gemv: identical rows must give identical scores
    return np.einsum("ij,j->i", mat, q)


def lcs_length(a, b):
    a = list(a)
    b = list(b)
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = prev[j] if prev[j] >= cur[j - 1] else cur[j - 1]
        prev = cur
    return prev[-1]
