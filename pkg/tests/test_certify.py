import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from eigenflow.certify import (TAG_INTERIOR, TAG_VANISHING, cw_lower, cw_upper, gap_check,
                               ground_state_check, minimax_measure, negativity_check)
from eigenflow.discretize import assemble, build_grid
from eigenflow.errors import NoConvergence, NonPositiveTestFunction
from eigenflow.expr import parse_expr
from eigenflow.hjb import policy_iteration
from eigenflow.model import drift_laplacian_spec, isotropic_spec, laplacian_spec

from randspec import enumerate_policies, random_controlled_operator, small_grid_1d


def _example(R, h):
    return assemble(drift_laplacian_spec(), build_grid(1, R, h))


def test_eigenfunction_certificates_are_tight():
    opr = _example(2.0, 0.02)
    res = policy_iteration(opr, tol=1e-12)
    lo = cw_lower(opr, res.psi)
    hi = cw_upper(opr, res.psi)
    slack = 2 * max(res.fixed_point_residual, 1e-12)
    assert lo.bound <= res.lam <= hi.bound
    assert hi.bound - lo.bound <= 2 * slack
    assert lo.tag == TAG_VANISHING


def test_crude_lower_certificate():
    # quotient of cos(pi x / 2) blows up to -infinity near x = -1
    opr = _example(1.0, 0.01)
    lam = policy_iteration(opr).lam
    cert = cw_lower(opr, np.cos(np.pi * opr.grid.points[:, 0] / 2))
    assert cert.bound <= lam
    assert cert.bound < lam - 10
    assert opr.grid.points[cert.argmin_node, 0] < -0.9


@pytest.mark.parametrize("R", [2.0, 5.0])
def test_example_eigenfunction_gives_exact_analytic_quotient(R):
    opr = _example(R, 0.05)
    phi = f"cos(pi*x0/(2*{R}))*exp(x0/2)"
    cert = cw_upper(opr, phi)
    target = -(0.25 + np.pi**2 / (4 * R**2))
    np.testing.assert_allclose(cert.quotient, target, atol=1e-12)
    assert cert.tag == TAG_INTERIOR and cert.mode == "analytic"
    # sampled on the grid it still certifies a lower bound; next to the boundary the
    # upwind error is divided by a psi of size O(h), so the bound is not tight
    low = cw_lower(opr, phi)
    assert low.bound <= policy_iteration(opr).lam


def test_exponential_upper_certificate():
    cert = cw_upper(_example(20.0, 0.05), "exp(x0/2)")
    assert cert.bound == pytest.approx(-0.25, abs=1e-13)
    ghost = cw_upper(_example(20.0, 0.05), "exp(x0/2)", mode="ghost")
    # the upwind stencil is only consistent to O(h)
    assert ghost.bound == pytest.approx(-0.25, abs=0.05)


def test_constant_test_function():
    spec = laplacian_spec(1).replace(c="-0.3")
    assert cw_upper(assemble(spec, build_grid(1, 3.0, 0.1)), "1").bound == pytest.approx(-0.3)
    ctrl = isotropic_spec(1, ["0"], c="x0*u0", controls=[[-1.0], [1.0]])
    opr = assemble(ctrl, build_grid(1, 2.0, 0.1))
    expected = np.max(np.minimum(-opr.grid.points[:, 0], opr.grid.points[:, 0]))
    assert cw_upper(opr, parse_expr("1")).bound == pytest.approx(expected)


def test_nonpositive_test_function():
    opr = _example(1.0, 0.25)
    with pytest.raises(NonPositiveTestFunction):
        cw_lower(opr, np.array([1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0]))
    with pytest.raises(NonPositiveTestFunction):
        cw_upper(opr, "x0")


def test_certificate_serialisation():
    d = cw_upper(_example(2.0, 0.1), "exp(x0/2)").to_dict()
    assert {"kind", "bound", "tag", "psi_source", "quotient_min", "quotient_max",
            "argmin_node"} <= set(d)
    assert d["kind"] == "upper" and "discret" in d["disclaimer"]


@given(st.integers(0, 100_000), st.sampled_from(["min", "max"]))
@settings(max_examples=100, deadline=None)
def test_sandwich_random_test_functions(seed, sense):
    rng = np.random.default_rng(seed)
    opr = random_controlled_operator(rng, int(rng.integers(3, 9)), sense=sense)
    lam = policy_iteration(opr, tol=1e-13).lam
    slack = 1e-9 * (1 + opr.norm_inf)
    for _ in range(10):
        psi = rng.uniform(0.01, 3.0, opr.N)
        assert cw_lower(opr, psi).bound <= lam + slack
        assert cw_upper(opr, psi).bound >= lam - slack


def test_minimax_toy():
    res = minimax_measure(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert res.value == pytest.approx(3.0, abs=1e-8)
    mirror = minimax_measure(np.array([[2.0, 1.0], [1.0, 2.0]]), method="mirror")
    assert mirror.value == pytest.approx(3.0, abs=1e-5)


def test_minimax_laplacian():
    opr = assemble(laplacian_spec(1), small_grid_1d(5), sense="max")
    res = minimax_measure(opr)
    lam = policy_iteration(opr, tol=1e-12).lam
    assert abs(res.value - lam) < 1e-3
    assert res.value <= lam + 1e-9 <= res.upper + 2e-9
    assert np.all(res.mu > 0) and res.mu.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_minimax_two_controls(seed):
    rng = np.random.default_rng(seed)
    opr = random_controlled_operator(rng, 5, sense="max", K=2)
    res = minimax_measure(opr)
    assert abs(res.value - enumerate_policies(opr).max()) < 1e-3


def test_minimax_rejects_min_sense():
    with pytest.raises(ValueError):
        minimax_measure(assemble(laplacian_spec(1), small_grid_1d(5)))


def test_minimax_failure_reports_gap():
    opr = random_controlled_operator(np.random.default_rng(3), 8, sense="max", K=3)
    with pytest.raises(NoConvergence) as info:
        minimax_measure(opr, mu_steps=1, tol=1e-14, method="mirror")
    assert info.value.last.gap > 0


def _ground(opr):
    res = policy_iteration(opr, tol=1e-12)
    return res.lam, res.psi


def test_ground_state_multiple():
    opr = _example(2.0, 0.1)
    lam, Phi = _ground(opr)
    v = ground_state_check(opr, 2.5 * Phi, lam, Phi)
    assert v.applicable and v.holds and v.kappa == pytest.approx(2.5)


def test_ground_state_precondition_fails_for_perturbation():
    opr = _example(2.0, 0.1)
    lam, Phi = _ground(opr)
    bump = np.zeros_like(Phi)
    bump[opr.grid.anchor] = 0.1
    v = ground_state_check(opr, Phi + bump, lam, Phi)
    assert not v.applicable and v.counterexample_node is not None


def test_ground_state_precondition_fails_for_second_eigenvector():
    opr = assemble(laplacian_spec(1), small_grid_1d(7))
    w, V = np.linalg.eigh(opr.matrices[0].toarray())
    lam, Phi = _ground(opr)
    v2 = V[:, -2]
    assert v2.min() < 0 < v2.max()
    assert not ground_state_check(opr, v2, lam, Phi).applicable


def test_negativity_branches():
    opr = assemble(drift_laplacian_spec().replace(c="-1"), build_grid(1, 2.0, 0.1))
    lam, Phi = _ground(opr)
    assert lam < 0
    zero = negativity_check(opr, np.zeros(opr.N), lam)
    assert zero.holds and zero.branch == "zero"
    neg = negativity_check(opr, -Phi, lam)
    assert neg.holds and neg.branch == "negative"
    assert not negativity_check(opr, Phi, lam).applicable


def test_gap_has_no_nontrivial_solution():
    spec = isotropic_spec(1, ["u0"], c="-exp(-x0^2)", controls=[[-1.0], [1.0]])
    opr = assemble(spec, build_grid(1, 3.0, 0.1))
    lo = policy_iteration(opr.with_sense("min")).lam
    hi = policy_iteration(opr.with_sense("max")).lam
    ev = gap_check(opr, 0.5 * (lo + hi), n_starts=20)
    assert ev.holds and ev.starts == 20
    with pytest.raises(ValueError):
        gap_check(opr, hi + 1.0)
