"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def merge_pair(symbols, a, b, new):
    symbols = np.asarray(symbols, dtype=np.int32)
    hits = np.flatnonzero((symbols[:-1] == a) & (symbols[1:] == b))
    if hits.size == 0:
        return symbols.copy()
    taken = []
    last = -2
    for i in hits.tolist():
        # overlapping runs (a == b) are merged greedily from the left
        if i > last + 1:
            taken.append(i)
            last = i
    taken = np.asarray(taken, dtype=np.int64)
    out = symbols.copy()
    out[taken] = new
    return np.delete(out, taken + 1)


def pool_mean(ids, lengths, table):
    ids = np.asarray(ids, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    mask = np.arange(ids.shape[1])[None, :] < lengths[:, None]
    summed = (table[ids] * mask[:, :, None]).sum(axis=1)
    denom = np.maximum(lengths, 1)[:, None].astype(np.float64)
    return summed / denom


def pool_scatter(ids, lengths, grad_pooled, grad_table):
    ids = np.asarray(ids, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    rows = np.repeat(np.arange(ids.shape[0]), lengths)
    cols = np.concatenate([np.arange(n) for n in lengths]) if len(lengths) else np.array([], dtype=np.int64)
    cols = cols.astype(np.int64)
    scale = 1.0 / np.maximum(lengths, 1)
    np.add.at(grad_table, ids[rows, cols], grad_pooled[rows] * scale[rows, None])
