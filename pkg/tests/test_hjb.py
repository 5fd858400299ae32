import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from eigenflow.discretize import assemble, build_grid
from eigenflow.errors import NotSupercritical
from eigenflow.hjb import (annulus_bump, cutoff_expr, eigenfunction_at_lambda, perturb_potential,
                           policy_iteration)
from eigenflow.model import ControlSet, OperatorSpec, drift_laplacian_spec, isotropic_spec, laplacian_spec
from eigenflow.perron import principal_eigenpair

from randspec import enumerate_policies, random_controlled_operator, small_grid_1d


def _bang_bang(sense):
    return isotropic_spec(1, ["u0"], controls=[[-1.0], [1.0]], sense=sense)


def test_uncontrolled_is_one_perron_solve():
    opr = assemble(drift_laplacian_spec(), build_grid(1, 2.0, 0.05))
    res = policy_iteration(opr, tol=1e-12)
    ep = principal_eigenpair(opr.matrices[0], tol=1e-12, shift=opr.shift, anchor=opr.grid.anchor)
    assert res.sweeps == 1 and res.lam == ep.lam


@pytest.mark.parametrize("sense, pick", [("min", np.min), ("max", np.max)])
@pytest.mark.parametrize("n", [3, 5, 8])
def test_bang_bang_matches_enumeration(sense, pick, n):
    opr = assemble(_bang_bang(sense), small_grid_1d(n))
    res = policy_iteration(opr, tol=1e-13)
    assert res.lam == pytest.approx(pick(enumerate_policies(opr)), abs=1e-10)
    assert res.fixed_point_residual < 1e-9


@given(st.integers(0, 100_000), st.sampled_from(["min", "max"]), st.integers(3, 7))
@settings(max_examples=60, deadline=None)
def test_random_specs_match_enumeration(seed, sense, n):
    rng = np.random.default_rng(seed)
    opr = random_controlled_operator(rng, n, sense=sense)
    res = policy_iteration(opr, tol=1e-13)
    lams = enumerate_policies(opr)
    target = lams.min() if sense == "min" else lams.max()
    assert res.lam == pytest.approx(target, abs=1e-9 * (1 + opr.norm_inf))
    # history is monotone in the optimising direction
    hist = np.array(res.history)
    step = np.diff(hist) if sense == "max" else -np.diff(hist)
    assert np.all(step >= -1e-9)
    # the final eigenvector is the Perron vector of the frozen matrix
    ep = principal_eigenpair(opr.frozen(res.policy), tol=1e-13, anchor=opr.grid.anchor)
    np.testing.assert_allclose(ep.psi, res.psi, rtol=1e-7)
    assert ep.lam == pytest.approx(res.lam, abs=1e-9 * (1 + opr.norm_inf))


@given(st.integers(0, 100_000))
@settings(max_examples=50, deadline=None)
def test_optimum_dominates_random_policies(seed):
    rng = np.random.default_rng(seed)
    opr = random_controlled_operator(rng, 12, sense="min", K=3)
    lam = policy_iteration(opr).lam
    for _ in range(5):
        pol = rng.integers(0, opr.K, opr.N)
        assert lam <= principal_eigenpair(opr.frozen(pol)).lam + 1e-8


def test_eigenfunction_at_zero_for_example():
    grids = [build_grid(1, R, 0.01) for R in (2.0, 4.0, 8.0)]
    res = eigenfunction_at_lambda(drift_laplacian_spec(), 0.0, grids)
    assert res.positive
    assert np.all(res.phi > 0)
    assert res.residual < 1e-8
    assert res.lam_dirichlet < 0


def test_eigenfunction_single_pair_positive():
    spec = drift_laplacian_spec()
    grids = [build_grid(1, 1.0, 0.05), build_grid(1, 2.0, 0.05)]
    lam = policy_iteration(assemble(spec, grids[1])).lam + 1.0
    res = eigenfunction_at_lambda(spec, lam, grids)
    assert np.all(res.phi > 0)


def test_controlled_eigenfunction_positive():
    spec = _bang_bang("min").replace(c="-exp(-x0^2)")
    grids = [build_grid(1, R, 0.05) for R in (2.0, 4.0)]
    res = eigenfunction_at_lambda(spec, 0.1, grids)
    assert np.all(res.phi > 0) and res.residual < 1e-8


def test_not_supercritical():
    grids = [build_grid(1, R, 0.05) for R in (2.0, 4.0)]
    with pytest.raises(NotSupercritical):
        eigenfunction_at_lambda(drift_laplacian_spec(), -1.0, grids)


def test_annulus_bump():
    r = np.array([0.5, 1.0, 1.25, 1.5, 1.75, 2.0, 3.0])
    f = annulus_bump(r, 1.0, 2.0)
    assert f[0] == 0 and f[-1] == 0 and f[3] == pytest.approx(1.0)
    assert np.all(f >= 0)


def test_cutoff_profile():
    z = cutoff_expr(2, 3.0)
    pts = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 3.5], [4.0, 0.0], [10.0, 10.0]])
    np.testing.assert_allclose(z.evaluate(pts), [1.0, 1.0, 0.5, 0.0, 0.0], atol=1e-15)


def test_perturbed_potential_examples():
    base = laplacian_spec(1)
    cm = perturb_potential(base, 2.0, 0.1, tail=0.0)
    x = np.array([[0.0], [1.9], [3.0], [7.0]])
    np.testing.assert_allclose(cm.potential(x), [0, 0, 0.1, 0.1], atol=1e-15)
    spec = laplacian_spec(1).replace(c="-exp(-x0^2)")
    assert perturb_potential(spec, 2.0, 0.1, tail=0.0).potential(np.zeros((1, 1)))[0] == -1.0
    with pytest.raises(ValueError):
        perturb_potential(spec, 2.0, 0.0, tail=0.0)
    with pytest.raises(ValueError):
        perturb_potential(spec, 0.5, 0.1, tail=0.0)


def test_tail_estimated_from_grid():
    spec = laplacian_spec(1).replace(c="0.25")
    cm = perturb_potential(spec, 1.0, 0.1, grid=build_grid(1, 4.0, 0.5))
    assert cm.potential(np.array([[5.0]]))[0] == pytest.approx(0.35)


def test_perturbation_sequence_nonincreasing():
    spec = OperatorSpec(dim=1, a=[["1"]], b=["-x0 + u0"], c="-max(0, 1 - x0^2)",
                        controls=ControlSet(np.array([[-0.5], [0.5]])))
    grid = build_grid(1, 10.0, 0.05)
    lams = [policy_iteration(assemble(perturb_potential(spec, m, 0.1, tail=0.0), grid)).lam
            for m in (2, 4, 6)]
    base = policy_iteration(assemble(spec, grid)).lam
    assert lams[0] >= lams[1] - 1e-10 >= lams[2] - 2e-10
    assert lams[2] >= base - 1e-10
