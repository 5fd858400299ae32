import json

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from eigenflow.errors import DegenerateDiffusion, SpecError, UnboundedBelowPotential, UnknownIdentifier
from eigenflow.expr import parse_expr
from eigenflow.model import (Box, ControlSet, LyapunovSpec, OperatorSpec, drift_laplacian_spec,
                             laplacian_spec, load_problem, validate_spec)


def test_identity_diffusion_passes():
    rep = validate_spec(laplacian_spec(2), Box.symmetric(3.0, 2))
    assert rep.passed and rep.min_diffusion_eig == pytest.approx(1.0)


def test_degenerate_diffusion_found_at_origin():
    spec = OperatorSpec(dim=1, a=[["x0^2"]], b=["0"], c="0")
    with pytest.raises(DegenerateDiffusion) as info:
        validate_spec(spec, Box.symmetric(1.0, 1))
    assert np.allclose(info.value.point, 0.0)


def test_example_drift_reported():
    rep = validate_spec(drift_laplacian_spec(), Box.symmetric(5.0, 1))
    assert rep.passed and rep.max_drift_norm == pytest.approx(1.0)
    assert rep.to_dict()["assertions"]


def test_potential_floor():
    spec = OperatorSpec(dim=1, a=[["1"]], b=["0"], c="-exp(x0^2)")
    with pytest.raises(UnboundedBelowPotential):
        validate_spec(spec, Box.symmetric(5.0, 1), c_floor=-100.0)
    assert validate_spec(spec, Box.symmetric(1.0, 1), c_floor=-100.0).passed


@given(st.integers(1, 64), st.integers(1, 64))
@settings(max_examples=30, deadline=None)
def test_samples_are_nested(n, extra):
    box = Box.symmetric(2.0, 2)
    small, big = box.samples(n), box.samples(n + extra)
    np.testing.assert_array_equal(big[:n], small)


def test_validation_monotone_in_samples():
    # a vanishes only near x0 = 0.3; once a sample finds it, more samples keep finding it
    spec = OperatorSpec(dim=1, a=[["abs(x0 - 0.3) + 0.0"]], b=["0"], c="0")
    box = Box.symmetric(1.0, 1)
    failed = False
    for n in (1, 2, 4, 8, 16, 64, 256):
        pts = box.samples(n)
        if np.any(np.abs(pts[:, 0] - 0.3) == 0):
            failed = True
        if failed:
            with pytest.raises(DegenerateDiffusion):
                validate_spec(spec, box, n)


def test_controls_invariants():
    with pytest.raises(SpecError):
        ControlSet(np.array([[1.0], [1.0]]))
    assert len(ControlSet.uncontrolled()) == 1
    with pytest.raises(SpecError):
        OperatorSpec(dim=1, a=[["u0"]], b=["0"], c="0", controls=ControlSet(np.array([[0.0], [1.0]])))
    with pytest.raises(UnknownIdentifier):
        OperatorSpec(dim=1, a=[["1"]], b=["u0"], c="0")
    with pytest.raises(UnknownIdentifier):
        OperatorSpec(dim=1, a=[["1"]], b=["x1"], c="0")


def test_json_round_trip(tmp_path):
    spec = OperatorSpec(dim=2, a=[["1", "0.2"], ["0.2", "1 + 0.1*x0^2"]], b=["-x0 + u0", "-x1"],
                        c="exp(-x0^2)*u1", sense="max",
                        controls=ControlSet(np.array([[0.0, 1.0], [1.0, -1.0]])))
    data = {**spec.to_dict(), "lyapunov": LyapunovSpec("exp(x0^2/4)", 1.0, 2.0, gamma=0.5).to_dict()}
    path = tmp_path / "p.json"
    path.write_text(json.dumps(data))
    prob = load_problem(path)
    x = np.random.default_rng(0).normal(size=(5, 2))
    for k in range(2):
        np.testing.assert_array_equal(prob.spec.drift(x, k), spec.drift(x, k))
        np.testing.assert_array_equal(prob.spec.potential(x, k), spec.potential(x, k))
    np.testing.assert_array_equal(prob.spec.diffusion(x), spec.diffusion(x))
    assert prob.lyapunov.gamma == 0.5 and prob.spec.sense == "max"


def test_lyapunov_variants():
    with pytest.raises(SpecError):
        LyapunovSpec("1", 0.0, 1.0, variant="gamma")
    lyap = LyapunovSpec("1 + x0^2", 0.0, 1.0, variant="ell", ell="x0^2")
    assert lyap.ell.evaluate(np.array([2.0])) == 4.0


def test_analytic_operator_on_exponential():
    # exp(x/2) under f'' - f': 1/4 - 1/2 = -1/4 everywhere
    spec = drift_laplacian_spec()
    x = np.linspace(-3, 3, 7)[:, None]
    vals = spec.analytic_operator(parse_expr("exp(x0/2)"), x) / np.exp(x[:, 0] / 2)
    np.testing.assert_allclose(vals, -0.25, atol=1e-14)


def test_potential_shift():
    spec = drift_laplacian_spec().with_potential_shift(0.7)
    assert spec.potential(np.zeros((1, 1)))[0] == pytest.approx(0.7)
