import hypothesis.strategies as st
import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings

from eigenflow.discretize import assemble, build_grid
from eigenflow.errors import NoConvergence, NonPositiveTestVector
from eigenflow.model import drift_laplacian_spec, laplacian_spec
from eigenflow.perron import dense_perron, effective_tol, matrix_cw_bounds, principal_eigenpair

from randspec import random_metzler


def _toeplitz_top(n, lower, diag, upper):
    # closed form for the top eigenvalue of a tridiagonal Toeplitz matrix
    return diag + 2 * np.sqrt(lower * upper) * np.cos(np.pi / (n + 1))


def test_two_by_two():
    ep = principal_eigenpair(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert ep.lam == pytest.approx(3.0, abs=1e-12)
    np.testing.assert_allclose(ep.psi, [1.0, 1.0], atol=1e-12)


def test_cw_bounds_hand_example():
    assert matrix_cw_bounds(np.array([[2.0, 1.0], [1.0, 2.0]]), np.array([1.0, 2.0])) == (2.5, 4.0)
    with pytest.raises(NonPositiveTestVector):
        matrix_cw_bounds(np.eye(2), np.array([1.0, 0.0]))


@pytest.mark.parametrize("h", [0.1, 0.02, 0.005])
def test_dirichlet_laplacian(h):
    opr = assemble(laplacian_spec(1), build_grid(1, 1.0, h))
    ep = principal_eigenpair(opr.matrices[0], tol=1e-12, shift=opr.shift, anchor=opr.grid.anchor)
    exact = -4 / h**2 * np.sin(np.pi * h / 4) ** 2
    assert ep.lam == pytest.approx(exact, abs=1e-9)
    assert np.all(ep.psi > 0) and ep.psi[opr.grid.anchor] == 1.0
    np.testing.assert_allclose(ep.psi, np.cos(np.pi * opr.grid.points[:, 0] / 2), atol=1e-8)


def test_laplacian_limit():
    h = 0.002
    opr = assemble(laplacian_spec(1), build_grid(1, 1.0, h))
    ep = principal_eigenpair(opr.matrices[0], shift=opr.shift)
    assert ep.lam == pytest.approx(-np.pi**2 / 4, abs=1e-5)


@pytest.mark.parametrize("R, h, limit", [(1.0, 0.002, -2.7174011), (10.0, 0.005, -0.2746740)])
def test_drift_example(R, h, limit):
    grid = build_grid(1, R, h)
    opr = assemble(drift_laplacian_spec(), grid)
    ep = principal_eigenpair(opr.matrices[0], tol=1e-12, shift=opr.shift, anchor=grid.anchor)
    exact = _toeplitz_top(grid.N, 1 / h**2 + 1 / h, -2 / h**2 - 1 / h, 1 / h**2)
    assert ep.lam == pytest.approx(exact, abs=1e-9)
    # first-order upwind: within a few h of the continuum limit
    assert abs(ep.lam - limit) < 2 * h
    assert ep.residual <= effective_tol(opr.matrices[0], 1e-12)


def test_max_iter_exhaustion_reports_last_iterate():
    M = assemble(laplacian_spec(1), build_grid(1, 1.0, 0.01)).matrices[0]
    with pytest.raises(NoConvergence) as info:
        principal_eigenpair(M, max_iter=1)
    assert info.value.last is not None


@given(st.integers(0, 100_000), st.integers(2, 8))
@settings(max_examples=200, deadline=None)
def test_collatz_wielandt_sandwich(seed, n):
    rng = np.random.default_rng(seed)
    M = random_metzler(rng, n)
    v = rng.uniform(0.05, 3, n)
    lo, hi = matrix_cw_bounds(M, v)
    lam, _ = dense_perron(M)
    slack = 1e-10 * (1 + np.abs(M).max())
    assert lo - slack <= lam <= hi + slack


@given(st.integers(0, 100_000), st.integers(2, 8))
@settings(max_examples=150, deadline=None)
def test_matches_dense_oracle_and_is_simple(seed, n):
    rng = np.random.default_rng(seed)
    M = random_metzler(rng, n)
    ep = principal_eigenpair(M, tol=1e-12)
    lam, vec = dense_perron(M)
    assert ep.lam == pytest.approx(lam, abs=1e-9 * (1 + abs(lam)))
    assert np.all(ep.psi > 0)
    # any positive eigenvector is a multiple of psi
    vec = vec / vec[0]
    np.testing.assert_allclose(vec, ep.psi, rtol=1e-7)


@given(st.integers(0, 100_000), st.floats(-50, 50))
@settings(max_examples=100, deadline=None)
def test_shift_invariance(seed, c0):
    rng = np.random.default_rng(seed)
    M = random_metzler(rng, 6)
    a = principal_eigenpair(M, tol=1e-13)
    b = principal_eigenpair(M + c0 * np.eye(6), tol=1e-13)
    assert b.lam - a.lam == pytest.approx(c0, abs=1e-12 * (1 + abs(c0) + np.abs(M).max()) * 10)
    np.testing.assert_allclose(b.psi, a.psi, rtol=1e-9)


@given(st.integers(0, 100_000))
@settings(max_examples=100, deadline=None)
def test_entrywise_monotonicity(seed):
    rng = np.random.default_rng(seed)
    M = random_metzler(rng, 6)
    bump = rng.uniform(0, 1, (6, 6)) * (rng.random((6, 6)) < 0.3)
    lo = principal_eigenpair(M, tol=1e-12).lam
    hi = principal_eigenpair(M + bump, tol=1e-12).lam
    assert lo <= hi + 1e-9


def test_sparse_input_and_wide_dynamic_range():
    # strong drift makes the eigenvector span many decades
    h = 0.01
    spec = drift_laplacian_spec().replace(b=["-20"])
    grid = build_grid(1, 5.0, h)
    opr = assemble(spec, grid)
    ep = principal_eigenpair(sp.csr_matrix(opr.matrices[0]), shift=opr.shift, anchor=grid.anchor)
    assert np.all(ep.psi > 0)
    assert ep.psi.max() / ep.psi.min() > 1e30
    exact = _toeplitz_top(grid.N, 1 / h**2 + 20 / h, -2 / h**2 - 20 / h, 1 / h**2)
    assert ep.lam == pytest.approx(exact, abs=1e-8 * abs(exact))
