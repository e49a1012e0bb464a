import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roughflow.fields import (
    FourPointConstants,
    VectorFieldFamily,
    analytic_four_point,
    compose_four_point,
    empirical_four_point_defect,
    estimate_norms,
    f_I_identity,
    field_from_config,
    inverse_four_point,
    lie_bracket,
    linear_field,
    rotation_field,
    second_order_actions,
    sum_four_point,
    third_order_actions,
    trig_field,
)

from conftest import PHASES, W

POINTS = np.random.default_rng(0).normal(size=(6, 2))


def without_derivatives(v):
    return VectorFieldFamily(v._eval, v.state_dim, v.driver_dim, name="fd")


@pytest.mark.parametrize("make", [
    lambda: trig_field(W, PHASES),
    lambda: rotation_field([[[0, -1], [1, 0]], [[0, 2], [-2, 0]]]),
])
def test_analytic_derivatives_match_finite_differences(make):
    v = make()
    fd = without_derivatives(v)
    assert fd.fd_jacobian and not v.fd_jacobian
    assert np.allclose(v.jacobian(POINTS), fd.jacobian(POINTS), atol=1e-8)
    assert np.allclose(v.hessian(POINTS), fd.hessian(POINTS), atol=1e-5)


def test_linear_actions_are_matrix_products():
    B = np.random.default_rng(1).normal(size=(2, 2, 2))
    v = linear_field(B)
    a = POINTS[0]
    assert np.allclose(f_I_identity(v, (), a), a)
    assert np.allclose(f_I_identity(v, (0,), a), B[0] @ a)
    # f_(i,j) i = grad f_j . f_i = B_j B_i a
    assert np.allclose(f_I_identity(v, (0, 1), a), B[1] @ B[0] @ a)
    assert np.allclose(f_I_identity(v, (1, 0, 1), a), B[1] @ B[0] @ B[1] @ a)
    assert np.allclose(lie_bracket(v, 0, 1, a), (B[1] @ B[0] - B[0] @ B[1]) @ a)
    with pytest.raises(ValueError):
        f_I_identity(v, (0, 0, 0, 0), a)


def test_batched_actions_agree_with_single_words():
    v = trig_field(W, PHASES)
    F2 = second_order_actions(v, POINTS)
    F3 = third_order_actions(v, POINTS)
    for I in [(0, 1), (1, 1)]:
        assert np.allclose(F2[..., I[0], I[1]], f_I_identity(v, I, POINTS))
    for I in [(0, 1, 0), (1, 0, 1)]:
        assert np.allclose(F3[..., I[0], I[1], I[2]], f_I_identity(v, I, POINTS))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_bracket_is_antisymmetric(seed):
    rng = np.random.default_rng(seed)
    v = trig_field(rng.normal(size=(2, 2, 2)), rng.normal(size=(2, 2)))
    a = rng.normal(size=2)
    assert np.allclose(lie_bracket(v, 0, 1, a), -lie_bracket(v, 1, 0, a), atol=1e-12)
    assert np.allclose(lie_bracket(v, 1, 1, a), 0.0)


def test_sampled_norms_stay_below_analytic_bounds():
    v = trig_field(W, PHASES)
    est = estimate_norms(v, samples=2000)
    assert est["sup_jac"] <= v.norms["sup_jac"] + 1e-12
    assert est["holder_jac"] <= v.norms["holder_jac"] + 1e-12


def test_config_and_bad_shapes():
    v = field_from_config({"kind": "linear", "matrices": np.eye(2)[None].tolist()})
    assert v.driver_dim == 1
    with pytest.raises(ValueError):
        field_from_config({"kind": "polynomial"})
    with pytest.raises(ValueError):
        linear_field(np.zeros((2, 3)))


SIN = trig_field([[[1.0]]])


@pytest.mark.parametrize("v", [linear_field(W), SIN, trig_field(W, PHASES)], ids=["linear", "sin", "trig"])
def test_four_point_bound_holds_with_analytic_constants(v):
    c = analytic_four_point(v).scaled(1.1)
    rep = empirical_four_point_defect(v, c, samples=10_000, seed=1)
    assert rep.ok and rep.value == 0.0


def test_four_point_detects_too_small_constants():
    c = FourPointConstants(lambda x: 0.0 * x, 0.1)
    assert not empirical_four_point_defect(SIN, c, samples=2000).ok


def test_sum_and_composition_closure():
    f, g = np.sin, np.tanh
    cf = FourPointConstants(lambda x: 2.0 * np.asarray(x), 1.0)
    # tanh'' is bounded by 4 / (3 sqrt 3) < 0.77
    cg = FourPointConstants(lambda x: 2.0 * 0.77 * np.asarray(x), 1.0)
    s = sum_four_point(cf, cg, 0.5, -2.0)
    rep = empirical_four_point_defect(lambda a: 0.5 * f(a) - 2.0 * g(a), s, samples=10_000, dim=2)
    assert rep.value == 0.0
    comp = compose_four_point(cf, cg, lip_g=1.0)
    rep = empirical_four_point_defect(lambda a: f(g(a)), comp, samples=10_000, dim=2)
    assert rep.value == 0.0


def test_inverse_constants_hold_for_near_identity_map():
    # k = (id + g)^{-1} with g = 0.3 sin, computed by fixed point
    cg = FourPointConstants(lambda x: 0.6 * np.asarray(x), 0.3)
    ck = inverse_four_point(cg, lip_g=0.3)

    def k(b):
        a = b.copy()
        for _ in range(200):
            a = b - 0.3 * np.sin(a)
        return a

    assert empirical_four_point_defect(k, ck, samples=5000, dim=2).value == 0.0
    with pytest.raises(ValueError):
        inverse_four_point(cg, lip_g=1.0)
