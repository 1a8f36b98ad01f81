import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xrumour import _kernels_py, kernels

compiled = pytest.importorskip("xrumour._kernels")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("symbols, a, b, expected", [
    ([1, 2, 1, 2], 1, 2, [9, 9]),
    ([1, 1, 1], 1, 1, [9, 1]),
    ([1, 1, 1, 1], 1, 1, [9, 9]),
    ([3, 4], 1, 2, [3, 4]),
    ([], 1, 2, []),
])
def test_merge_pair_examples(symbols, a, b, expected):
    for impl in (compiled, _kernels_py):
        out = impl.merge_pair(np.asarray(symbols, dtype=np.int32), a, b, 9)
        assert out.tolist() == expected


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=40), st.integers(0, 3), st.integers(0, 3))
def test_merge_pair_backends_agree(symbols, a, b):
    arr = np.asarray(symbols, dtype=np.int32)
    assert compiled.merge_pair(arr, a, b, 7).tolist() == _kernels_py.merge_pair(arr, a, b, 7).tolist()


@st.composite
def batches(draw):
    n = draw(st.integers(1, 6))
    width = draw(st.integers(1, 8))
    vocab = draw(st.integers(1, 10))
    seed = draw(st.integers(0, 2**16))
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, vocab, size=(n, width))
    lengths = rng.integers(0, width + 1, size=n)
    table = rng.normal(size=(vocab, 3))
    return ids, lengths, table


@settings(max_examples=200, deadline=None)
@given(batches())
def test_pool_mean_backends_agree(batch):
    ids, lengths, table = batch
    np.testing.assert_allclose(compiled.pool_mean(ids, lengths, table),
                               _kernels_py.pool_mean(ids, lengths, table), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(batches())
def test_pool_scatter_backends_agree(batch):
    ids, lengths, table = batch
    g = np.random.default_rng(1).normal(size=(ids.shape[0], table.shape[1]))
    a = np.zeros_like(table)
    b = np.zeros_like(table)
    compiled.pool_scatter(ids, lengths, g, a)
    _kernels_py.pool_scatter(ids, lengths, g, b)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_pool_scatter_is_adjoint_of_pool_mean():
    rng = np.random.default_rng(0)
    ids = rng.integers(0, 5, size=(4, 6))
    lengths = np.array([6, 3, 0, 1])
    table = rng.normal(size=(5, 2))
    g = rng.normal(size=(4, 2))
    grad = np.zeros_like(table)
    kernels.pool_scatter(ids, lengths, g, grad)
    # <g, pool(table)> is linear in table, so its gradient is the scatter
    lhs = np.sum(g * kernels.pool_mean(ids, lengths, table))
    assert lhs == pytest.approx(np.sum(grad * table))


def test_empty_row_pools_to_zero():
    out = kernels.pool_mean(np.zeros((1, 3), dtype=np.int64), np.array([0]), np.ones((2, 2)))
    assert out.tolist() == [[0.0, 0.0]]
