from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import expm

from roughflow.algebra import antisymmetric_part, piecewise_linear_signature, segment_signature
from roughflow.driver import piecewise_linear_driver, pure_area_driver
from roughflow.errors import CapabilityError, ConfigError, NonConvergence
from roughflow.fields import linear_field, trig_field
from roughflow.schemes import (
    SchemeSpec,
    axis_loop_path,
    bailleul_almost_flow,
    bailleul_remainder,
    davie_almost_flow,
    euler_increment,
    friz_victoir_almost_flow,
    loop_length_bound,
    rk4,
    step_n_euler,
)

from conftest import AREA

B = np.random.default_rng(3).normal(size=(2, 2, 2)) * 0.5
A0 = np.array([0.4, -0.7])


@pytest.mark.parametrize("n", [1, 2, 3])
def test_euler_on_a_segment_is_the_taylor_polynomial(n):
    v = np.array([0.3, -0.2])
    M = np.einsum("i,imp->mp", v, B)
    taylor = sum(np.linalg.matrix_power(M, k) / factorial(k) for k in range(n + 1))
    out = euler_increment(linear_field(B), n, segment_signature(v, 3), A0)
    assert np.allclose(out, taylor @ A0, atol=1e-14)


def test_euler_preconditions():
    d2 = pure_area_driver(AREA)
    with pytest.raises(ConfigError):
        step_n_euler(linear_field(B), d2, 4)
    with pytest.raises(CapabilityError):
        step_n_euler(linear_field(B), d2, 3)
    with pytest.raises(CapabilityError):
        davie_almost_flow(linear_field(np.zeros((3, 2, 2))), d2)


def test_bailleul_on_pure_area_is_the_exponential():
    d = pure_area_driver(AREA)
    phi = bailleul_almost_flow(linear_field(B), d, substeps=32)
    C = B[1] @ B[0] - B[0] @ B[1]
    assert np.allclose(phi(0.0, 0.7, A0), expm(0.7 * C) @ A0, atol=1e-10)


def test_bailleul_remainder_is_a_perturbation():
    d = pure_area_driver(AREA)
    eps = bailleul_remainder(linear_field(B), d)
    assert eps.is_perturbation
    assert np.array_equal(eps(0.5, 0.5, A0), np.zeros(2))
    # exp(hC) - (1 + hC) = O(h^2)
    r1, r2 = (np.linalg.norm(eps(0.0, h, A0)) for h in (0.1, 0.05))
    assert r1 / r2 == pytest.approx(4.0, rel=0.05)


def test_friz_victoir_matches_bailleul_to_higher_order():
    rng = np.random.default_rng(0)
    d = piecewise_linear_driver(np.linspace(0, 1, 5), rng.normal(size=(5, 2)))
    v = trig_field(rng.normal(size=(2, 2, 2)), rng.normal(size=(2, 2)))
    fv, bl, dv = (friz_victoir_almost_flow(v, d, 16), bailleul_almost_flow(v, d, 16), davie_almost_flow(v, d))
    for h in (0.02, 0.01):
        gap_fv = np.linalg.norm(fv(0.0, h, A0) - dv(0.0, h, A0))
        assert gap_fv < 50 * h ** 3
    assert np.linalg.norm(fv(0.0, 0.01, A0) - bl(0.0, 0.01, A0)) < 1e-5


@settings(max_examples=60, deadline=None)
@given(arrays(float, 3, elements=st.floats(-2, 2)), arrays(float, 3, elements=st.floats(-2, 2)))
def test_loop_path_reproduces_depth_two_signature(v, upper):
    A = np.zeros((3, 3))
    A[np.triu_indices(3, 1)] = upper
    A = A - A.T
    verts = axis_loop_path(v, A)
    x = piecewise_linear_signature(verts, 3)
    assert np.allclose(x[1], v, atol=1e-12)
    assert np.allclose(antisymmetric_part(x[2]), A, atol=1e-12)
    length = np.sum(np.linalg.norm(np.diff(verts, axis=0), axis=1))
    assert length <= loop_length_bound(v, A) + 1e-12


def test_loops_add_no_third_level():
    A = np.array([[0.0, 0.8], [-0.8, 0.0]])
    x = piecewise_linear_signature(axis_loop_path(np.zeros(2), A), 3)
    assert np.allclose(x[3], 0.0, atol=1e-14)
    with pytest.raises(ValueError):
        axis_loop_path(np.zeros(2), np.eye(2))


def test_rk4_blow_up_is_reported():
    with pytest.raises(NonConvergence):
        rk4(lambda y: y ** 2, np.array([1e200]), 4)


def test_scheme_spec_parsing():
    assert SchemeSpec.parse("euler_3") == SchemeSpec("euler_n", n=3)
    assert SchemeSpec.parse({"kind": "bailleul", "ode_substeps": 4}).label == "bailleul"
    assert SchemeSpec.parse("euler_2").label == "euler_2"
    for bad in ("rk45", {"kind": "davie", "order": 2}, {"kind": "euler_n", "n": 0}):
        with pytest.raises(ConfigError):
            SchemeSpec.parse(bad)
    phi = SchemeSpec.parse("friz_victoir").build(linear_field(B), pure_area_driver(AREA))
    assert phi.name == "friz_victoir"


def test_full_norm_pure_area_converges_at_first_order():
    # with |B_i| = 1 the level-12 error is ~1e-5: still first order, just a larger constant
    from conftest import area_matrices, bracket
    from roughflow.sewing import trajectory

    Bf = area_matrices(scale=1.0)
    phi = davie_almost_flow(linear_field(Bf), pure_area_driver(AREA))
    exact = expm(bracket(Bf)) @ A0
    errs = [np.abs(trajectory(phi, A0, 1.0, k)[1][-1] - exact).max() for k in (10, 11, 12)]
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.02)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.02)
    assert 1e-6 < errs[2] < 1e-3
