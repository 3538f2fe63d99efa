"""Hot-loop kernels, compiled when available.

The Cython build (``kinject._ckernels``) is preferred; the numpy/pure-Python
module ``kinject._pykernels`` is used when the extension is missing or when
``KINJECT_PURE_PYTHON=1`` is set before import. ``BACKEND`` names the one in
use. Both expose the same functions, all operating on C-contiguous float64
arrays (``lcs_length`` takes int64 sequences).
"""
from __future__ import annotations

import os

import numpy as np

from kinject import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("KINJECT_PURE_PYTHON") != "1":
    try:
        from kinject import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def _c(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def softmax_rows(x):
    return _impl.softmax_rows(_c(x))


def softmax_rows_backward(y, g):
    return _impl.softmax_rows_backward(_c(y), _c(g))


def layer_norm_rows(x, eps=1e-5):
    return _impl.layer_norm_rows(_c(x), float(eps))


def layer_norm_rows_backward(xhat, inv, g):
    return _impl.layer_norm_rows_backward(_c(xhat), _c(inv), _c(g))


def row_dots(mat, q):
    return _impl.row_dots(_c(mat), _c(q))


def lcs_length(a, b) -> int:
    if _impl is _pykernels:
        return _impl.lcs_length(a, b)
    return _impl.lcs_length(
        np.ascontiguousarray(a, dtype=np.int64), np.ascontiguousarray(b, dtype=np.int64)
    )
