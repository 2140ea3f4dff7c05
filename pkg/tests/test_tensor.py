import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pinet import tensor as T
from pinet.tensor import ShapeError, Tensor

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def vectors(n):
    return arrays(np.float64, (n,), elements=finite)


def test_tensor_stores_row_major_float64_and_is_immutable():
    src = np.array([[1, 2], [3, 4]])
    t = Tensor(src)
    src[0, 0] = 99
    assert t.data.dtype == np.float64
    assert t.data.flags.c_contiguous
    assert t.tolist() == [[1.0, 2.0], [3.0, 4.0]]
    assert t.size == 4 == len(t.flat())
    with pytest.raises(ValueError):
        t.data[0, 0] = 5.0


def test_zero_extent_is_rejected():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((0, 3)))


def test_hadamard_examples():
    a = Tensor([1.0, 2.0, 3.0])
    assert T.hadamard(a, Tensor([4.0, 5.0, 6.0])).tolist() == [4.0, 10.0, 18.0]
    assert T.hadamard(a, T.ones_like(a)) == a
    assert T.hadamard(a, T.zeros_like(a)) == T.zeros((3,))


@pytest.mark.parametrize("op", [T.hadamard, T.add, T.sub])
def test_elementwise_ops_refuse_to_broadcast(op):
    with pytest.raises(ShapeError):
        op(Tensor([1.0, 2.0]), Tensor([[1.0, 2.0]]))
    with pytest.raises(ShapeError):
        op(Tensor([[1.0, 2.0]]), Tensor([[1.0], [2.0]]))


def test_batch_bias_is_the_only_broadcast():
    x = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert T.add_bias(x, Tensor([10.0, 20.0])).tolist() == [[11.0, 22.0], [13.0, 24.0]]
    assert T.mul_bias(x, Tensor([2.0, 0.5])).tolist() == [[2.0, 1.0], [6.0, 2.0]]
    with pytest.raises(ShapeError):
        T.add_bias(x, Tensor([1.0, 2.0, 3.0]))


@settings(max_examples=50, deadline=None)
@given(vectors(5), vectors(5), vectors(5))
def test_hadamard_commutative_and_associative(a, b, c):
    a, b, c = Tensor(a), Tensor(b), Tensor(c)
    assert T.hadamard(a, b) == T.hadamard(b, a)
    left = T.hadamard(T.hadamard(a, b), c).data
    right = T.hadamard(a, T.hadamard(b, c)).data
    np.testing.assert_allclose(left, right, rtol=1e-15, atol=1e-300)


def test_khatri_rao_examples():
    assert T.khatri_rao(Tensor([[1.0]]), Tensor([[7.5]])).tolist() == [[7.5]]
    got = T.khatri_rao(Tensor([[1.0], [2.0]]), Tensor([[3.0], [4.0]]))
    assert got.tolist() == [[3.0], [4.0], [6.0], [8.0]]
    with pytest.raises(ShapeError):
        T.khatri_rao(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 3))))


def _kron(a, b):
    # direct Kronecker of two vectors, written out with loops
    return np.array([x * y for x in a for y in b])


def test_khatri_rao_matches_columnwise_kronecker(rng):
    a, b = rng.normal(size=(3, 2)), rng.normal(size=(2, 2))
    got = T.khatri_rao(Tensor(a), Tensor(b)).data
    assert got.shape == (6, 2)
    for j in range(2):
        np.testing.assert_array_equal(got[:, j], _kron(a[:, j], b[:, j]))


@settings(max_examples=50, deadline=None)
@given(vectors(3), vectors(4))
def test_khatri_rao_single_column_is_kronecker(a, b):
    got = T.khatri_rao(Tensor(a[:, None]), Tensor(b[:, None])).data[:, 0]
    np.testing.assert_array_equal(got, np.kron(a, b))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 2), elements=st.floats(-10, 10)), arrays(np.float64, (4, 2), elements=st.floats(-10, 10)))
def test_khatri_rao_gram_is_hadamard_of_grams(a, b):
    kr = T.khatri_rao(Tensor(a), Tensor(b)).data
    np.testing.assert_allclose(kr.T @ kr, (a.T @ a) * (b.T @ b), rtol=1e-10, atol=1e-8)


def test_mode_vec_product_examples():
    w = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert T.mode_vec_product(w, Tensor([1.0, 0.0]), 2).tolist() == [1.0, 3.0]
    ones3 = Tensor(np.ones((2, 2, 2)))
    assert T.mode_vec_product(ones3, Tensor([1.0, 1.0]), 3).tolist() == [[2.0, 2.0], [2.0, 2.0]]


@pytest.mark.parametrize("mode", [1, 2, 3])
def test_mode_vec_product_with_zero_vector(rng, mode):
    w = Tensor(rng.normal(size=(2, 3, 4)))
    v = T.zeros((w.shape[mode - 1],))
    out = T.mode_vec_product(w, v, mode)
    assert out.shape == tuple(n for i, n in enumerate(w.shape) if i != mode - 1)
    assert not np.any(out.data)


def test_mode_vec_product_errors():
    w = Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        T.mode_vec_product(w, Tensor([1.0, 2.0]), 2)
    for bad in (0, 3):
        with pytest.raises(ShapeError):
            T.mode_vec_product(w, Tensor([1.0, 2.0]), bad)


def _nested_loop_contraction(w, z):
    total = 0.0
    for idx in itertools.product(range(len(z)), repeat=w.ndim):
        term = w[idx]
        for i in idx:
            term *= z[i]
        total += term
    return total


@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_successive_mode_products_match_nested_loops(rng, order):
    w = rng.normal(size=(3,) * order)
    z = rng.normal(size=3)
    acc = Tensor(w)
    while acc.ndim > 0:
        acc = T.mode_vec_product(acc, Tensor(z), acc.ndim)
    assert acc.item() == pytest.approx(_nested_loop_contraction(w, z), rel=1e-12, abs=1e-12)


def test_linear_algebra_plumbing(rng):
    a = Tensor(rng.normal(size=(3, 3)))
    assert T.matmul(Tensor(np.eye(3)), a) == a
    assert T.scale(a, 0.0) == T.zeros((3, 3))
    assert T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4)))).shape == (2, 4)
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    assert T.transpose(Tensor([[1.0, 2.0]])).tolist() == [[1.0], [2.0]]
    assert T.reshape(Tensor([1.0, 2.0, 3.0, 4.0]), (2, 2)).tolist() == [[1.0, 2.0], [3.0, 4.0]]
    with pytest.raises(ShapeError):
        T.reshape(Tensor([1.0, 2.0, 3.0]), (2, 2))
    x = Tensor(np.arange(8.0).reshape(4, 2))
    assert T.slice_rows(x, 1, 3).tolist() == [[2.0, 3.0], [4.0, 5.0]]
    assert T.take_rows(x, [3, 0]).tolist() == [[6.0, 7.0], [0.0, 1.0]]
    assert T.concat([x, x], axis=1).shape == (4, 4)
    with pytest.raises(ShapeError):
        T.concat([x, Tensor(np.ones((4, 3)))], axis=0)


def test_nonlinearities():
    assert T.tanh(Tensor([0.0])).tolist() == [0.0]
    assert T.relu(Tensor([-1.0, 2.0])).tolist() == [0.0, 2.0]
    x = Tensor([[1.0, 2.0, 3.0, 4.0], [10.0, -10.0, 5.0, 0.0]])
    y = T.instance_norm(x).data
    np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=1), x.data.var(axis=1) / (x.data.var(axis=1) + 1e-5), rtol=1e-12)


def test_ops_are_deterministic(rng):
    a, b = Tensor(rng.normal(size=(5, 4))), Tensor(rng.normal(size=(4, 3)))
    first = T.matmul(a, b)
    for _ in range(3):
        assert T.matmul(a, b) == first
