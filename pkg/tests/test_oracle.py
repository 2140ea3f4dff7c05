import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import hand_ccp
from pinet import blocks as B
from pinet import oracle as O
from pinet.oracle import DensePoly
from pinet.tensor import ShapeError, Tensor


def test_monomial_order_and_names():
    assert O.monomials(2, 2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert [O.monomial_name(e) for e in O.monomials(2, 2)] == ["1", "z1", "z2", "z1^2", "z1*z2", "z2^2"]


@pytest.mark.parametrize("d", range(1, 7))
@pytest.mark.parametrize("n", range(0, 7))
def test_monomial_count_is_binomial(d, n):
    basis = O.monomials(d, n)
    assert len(basis) == len(set(basis)) == math.comb(d + n, n) == O.basis_size(d, n)
    assert all(sum(e) <= n for e in basis)


def _poly(terms, d=2, n=2):
    basis = O.monomials(d, n)
    coeffs = np.zeros((1, len(basis)))
    for e, c in terms.items():
        coeffs[0, basis.index(e)] = c
    return DensePoly(d, 1, n, coeffs)


def test_eval_dense_examples(rng):
    p = _poly({(1, 0): 1.0, (1, 1): 1.0})
    assert O.eval_dense(p, Tensor([2.0, 3.0])).tolist() == [8.0]
    q = DensePoly(3, 2, 2, rng.normal(size=(2, 10)))
    np.testing.assert_array_equal(O.eval_dense(q, Tensor(np.zeros(3))).data, q.beta)
    w1, beta = rng.normal(size=(2, 3)), rng.normal(size=2)
    affine = DensePoly(3, 2, 1, np.concatenate([beta[:, None], w1], axis=1))
    z = rng.normal(size=3)
    np.testing.assert_allclose(O.eval_dense(affine, Tensor(z)).data, w1 @ z + beta, rtol=1e-14)
    with pytest.raises(ShapeError):
        O.eval_dense(affine, Tensor([1.0, 2.0]))


@pytest.mark.parametrize("d,n", [(1, 3), (2, 2), (3, 3), (2, 4)])
def test_tensor_contraction_path_matches_monomial_path(d, n, rng):
    p = DensePoly(d, 2, n, rng.uniform(-2, 2, size=(2, O.basis_size(d, n))))
    for _ in range(5):
        z = rng.uniform(-1, 1, size=d)
        np.testing.assert_allclose(O.eval_dense_tensor_path(p, Tensor(z)).data, O.eval_dense(p, Tensor(z)).data,
                                   rtol=1e-12, atol=1e-12)


def test_symmetric_tensors_round_trip(rng):
    p = DensePoly(3, 2, 3, rng.normal(size=(2, O.basis_size(3, 3))))
    q = DensePoly.from_tensors(p.beta, p.tensors())
    np.testing.assert_allclose(q.coeffs, p.coeffs, rtol=1e-13, atol=1e-15)
    # a non-symmetric W collapses onto its symmetric part
    w2 = np.zeros((1, 2, 2))
    w2[0, 0, 1] = 3.0
    assert DensePoly.from_tensors([0.0], [np.zeros((1, 2)), w2]).terms(0) == [((1, 1), 3.0)]


def test_fit_constant():
    fit = O.fit_dense(lambda z: np.full((len(z), 1), 2.5), 2, 1, 2)
    np.testing.assert_allclose(fit.poly.beta, [2.5], rtol=1e-12)
    assert np.max(np.abs(fit.poly.coeffs[:, 1:])) < 1e-12
    assert fit.residual < 1e-12
    poly, residual = fit  # also unpacks as a pair
    assert residual == fit.residual


def test_fit_hand_ccp_recovers_coefficients():
    p = hand_ccp()
    fit = O.fit_dense(lambda z: B.forward_ccp(p, Tensor(z)), 2, 1, 2)
    assert fit.residual < 1e-10
    got = {e: c for e, c in fit.poly.terms(0, atol=1e-9)}
    assert set(got) == {(1, 0), (1, 1)}
    assert got[(1, 0)] == pytest.approx(1.0, abs=1e-10) and got[(1, 1)] == pytest.approx(1.0, abs=1e-10)


def test_fit_detects_non_polynomial(rng):
    w = rng.normal(size=(2, 2))
    fit = O.fit_dense(lambda z: np.tanh(3.0 * z @ w), 2, 2, 3)
    assert fit.residual > 1e-3


def test_fit_budget_and_samples():
    with pytest.raises(O.BudgetExceeded, match=r"C\(16,6\)=8008 exceeds budget"):
        O.fit_dense(lambda z: z, 10, 10, 6)
    fit = O.fit_dense(lambda z: z[:, :1], 2, 1, 1)
    assert fit.samples == 20  # max(2 * 3, 20)
    assert O.fit_dense(lambda z: z[:, :1], 3, 1, 3).samples == 2 * 20
    with pytest.raises(ShapeError):
        O.fit_dense(lambda z: z, 2, 3, 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 2), st.integers(0, 2 ** 31))
def test_fit_round_trip_recovers_coefficients(d, n, o, seed):
    coeffs = np.random.default_rng(seed).uniform(-2, 2, size=(o, O.basis_size(d, n)))
    p = DensePoly(d, o, n, coeffs)
    fit = O.fit_dense(lambda z: O.eval_dense(p, z), d, o, n, seed=seed % 1000)
    assert np.max(np.abs(fit.poly.coeffs - coeffs)) < 1e-9


@pytest.mark.parametrize("variant", B.VARIANTS)
@pytest.mark.parametrize("n", [1, 2, 3])
def test_fit_residual_on_plain_blocks(variant, n):
    spec = (B.PolyBlockSpec(variant, n, input_dim=3) if variant == B.HIGH_ORDER_RESIDUAL
            else B.PolyBlockSpec(variant, n, input_dim=3, output_dim=2, rank=3))
    net = B.make_net([spec], seed=n, scheme="ones")
    assert O.fit_dense(lambda z: net(Tensor(z)), 3, net.output_dim, n).residual < 1e-9


def test_random_ncp_matches_dense_oracle(rng):
    spec = B.PolyBlockSpec(B.NCP, 3, input_dim=3, output_dim=1, rank=2, bias_dim=2)
    net = B.make_net([spec], seed=0, scheme="ones")
    fit = O.fit_dense(lambda z: net(Tensor(z)), 3, 1, 3)
    z = rng.uniform(-1, 1, size=(200, 3))
    assert O.relative_error(net(Tensor(z)).data, O.eval_dense(fit.poly, z).data) < 1e-9


def test_least_squares_examples(rng):
    a = rng.normal(size=(4, 4)) + 4 * np.eye(4)
    x = rng.normal(size=4)
    sol = O.solve_least_squares(a, a @ x)
    np.testing.assert_allclose(sol.coefficients, x, rtol=1e-12, atol=1e-12)
    assert not sol.rank_deficient and sol.rank == 4
    tall = rng.normal(size=(10, 3))
    sol = O.solve_least_squares(tall, tall @ x[:3])
    assert sol.residual < 1e-12
    t = np.linspace(-1, 1, 8)
    vander = np.vander(t, 4, increasing=True)
    c = np.array([0.5, -1.0, 2.0, 0.25])
    np.testing.assert_allclose(O.solve_least_squares(vander, vander @ c).coefficients, c, atol=1e-10)


def test_least_squares_rank_deficiency_is_flagged():
    a = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    sol = O.solve_least_squares(a, np.array([1.0, 2.0, 3.0]))
    assert sol.rank_deficient and sol.rank == 1
    # the minimum-norm solution of x1 + 2 x2 = 1
    np.testing.assert_allclose(sol.coefficients, [0.2, 0.4], rtol=1e-12)
    with pytest.raises(ShapeError):
        O.solve_least_squares(np.ones((2, 3)), np.ones(2))


def test_probe_examples(rng):
    w = rng.normal(size=(3, 2))
    assert O.probe_degree(lambda z: z @ w + 1.0, 3).degree == 1
    assert O.probe_degree(lambda z: np.full((len(z), 2), 4.0), 3).degree == 0
    s = B.PolyBlockSpec(B.CCP, 2, input_dim=2, output_dim=2, rank=2)
    net = B.make_net([s, s], seed=0)
    assert O.probe_degree(lambda z: net(Tensor(z)), 2).degree == 4
    tanh_net = B.make_net([B.PolyBlockSpec(B.CCP, 2, input_dim=2, output_dim=2, rank=2, stabilizer="tanh")], seed=0)
    probe = O.probe_degree(lambda z: tanh_net(Tensor(z)), 2)
    assert probe.exceeds and str(probe) == "exceeds max"


def test_probe_reports_each_output():
    f = lambda z: np.stack([z[:, 0], z[:, 0] ** 3, z[:, 1] ** 2 * z[:, 0]], axis=1)  # noqa: E731
    probe = O.probe_degree(f, 2, seed=3)
    assert probe.per_output == [1, 3, 3] and probe.degree == 3


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 6), st.integers(0, 2 ** 31))
def test_probe_finds_true_degree_of_generic_dense_polys(d, n, seed):
    coeffs = np.random.default_rng(seed).uniform(-2, 2, size=(2, O.basis_size(d, n)))
    p = DensePoly(d, 2, n, coeffs)
    assert O.probe_degree(lambda z: O.eval_dense(p, z), d, seed=seed % 97).degree == n


def test_difference_ratio_separates_signal_from_roundoff(rng):
    # the probe threshold sits far above the rounding floor of an exact polynomial
    t = np.arange(19) - 9 + 0.3
    for deg in range(1, 9):
        c = rng.uniform(-2, 2, size=deg + 1)
        g = np.polyval(c, 8.0 * t)
        assert O.difference_ratio(g, deg + 1) < 1e-12 < O.PROBE_TOL
        assert O.difference_ratio(g, deg) > 1e-6
