"""Kernel dispatch: the compiled extension when it was built, numpy otherwise.

Set ``XRUMOUR_PURE=1`` in the environment to force the pure-Python path.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("XRUMOUR_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def merge_pair(symbols, a: int, b: int, new: int) -> np.ndarray:
    return _impl.merge_pair(np.ascontiguousarray(symbols, dtype=np.int32), int(a), int(b), int(new))


def pool_mean(ids, lengths, table) -> np.ndarray:
    return _impl.pool_mean(
        np.ascontiguousarray(ids, dtype=np.int64),
        np.ascontiguousarray(lengths, dtype=np.int64),
        np.ascontiguousarray(table, dtype=np.float64),
    )


def pool_scatter(ids, lengths, grad_pooled, grad_table) -> None:
    # grad_table is written in place and must already be C-contiguous float64
    _impl.pool_scatter(
        np.ascontiguousarray(ids, dtype=np.int64),
        np.ascontiguousarray(lengths, dtype=np.int64),
        np.ascontiguousarray(grad_pooled, dtype=np.float64),
        grad_table,
    )


__all__ = ["BACKEND", "merge_pair", "pool_mean", "pool_scatter"]
