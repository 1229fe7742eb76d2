import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harnackflow import flow as fl
from harnackflow import manifold as mf
from harnackflow.pme import band_limited
from oracles import spectral_partial, sphere_radius_sq


def circle_state(n=64, seed=0, amp=0.5):
    geom = mf.flat_circle(n)
    return fl.FlowState(0.0, geom, amp * band_limited(geom.grid, seed))


def curved_torus_state(n=32, seed=1, amp=0.1, t=0.0):
    grid = mf.GridSpec.uniform(2, n)
    return fl.FlowState(t, mf.ConformalTorus2D(grid, amp * band_limited(grid, seed)))


# -- S tensor and trace ----------------------------------------------------------

def test_static_tensor_is_zero():
    st_ = curved_torus_state()
    assert np.all(fl.s_tensor(st_, fl.Static()) == 0)
    assert np.all(fl.s_trace(st_, fl.Static()) == 0)


def test_scaled_identity_on_flat_torus():
    st_ = fl.FlowState(0.0, mf.flat_torus(16))
    S_ij = fl.s_tensor(st_, fl.ScaledIdentity(1.0))
    assert np.array_equal(S_ij, st_.geom.metric())
    assert np.allclose(fl.s_trace(st_, fl.ScaledIdentity(1.0)), 2.0)


def test_scaled_identity_time_dependent_lambda():
    st_ = fl.FlowState(0.5, mf.flat_torus(16))
    kind = fl.ScaledIdentity(lambda t: 1 + t)
    assert np.allclose(fl.s_trace(st_, kind), 3.0)


def test_harmonic_tensor_on_flat_circle():
    n = 128
    geom = mf.flat_circle(n)
    x = geom.grid.coordinates()[0]
    f = np.sin(2 * np.pi * x)
    kind = fl.HarmonicScalar(fl.AlphaTable.constant(0.5))
    S = fl.s_trace(fl.FlowState(0.0, geom, f), kind)
    fx = 2 * np.pi * np.cos(2 * np.pi * x)
    assert np.max(np.abs(S + 0.5 * fx**2)) < 0.5 * (2 * np.pi) ** 2 * (2 * np.pi / n) ** 2


def test_list_trace_is_minus_two_gradient_squared():
    st_ = circle_state()
    S = fl.s_trace(st_, fl.ListExtended())
    fx = mf.partials(st_.geom, st_.f)[0]
    assert np.allclose(S, -2 * fx**2, rtol=0, atol=1e-13)


def test_sphere_ricci_trace():
    st_ = fl.FlowState(0.0, mf.RoundSphere(2, 1.0))
    assert fl.s_trace(st_, fl.Ricci())[0] == pytest.approx(2.0)


# -- compatibility ----------------------------------------------------------------

@pytest.mark.parametrize(
    "geom, kind",
    [
        (mf.flat_torus(16), fl.HarmonicScalar()),
        (mf.flat_torus(16), fl.ListExtended()),
        (mf.RoundSphere(2, 1.0), fl.ListExtended()),
        (mf.flat_circle(16), fl.Ricci()),
    ],
)
def test_incompatible_pairs_name_both(geom, kind):
    with pytest.raises(fl.ConfigurationError) as exc:
        fl.check_compatible(geom, kind)
    assert type(geom).__name__ in str(exc.value)
    assert type(kind).__name__ in str(exc.value)


def test_scalar_map_presence_is_checked():
    with pytest.raises(fl.ConfigurationError):
        fl.s_tensor(fl.FlowState(0.0, mf.flat_circle(16)), fl.ListExtended())
    with pytest.raises(fl.ConfigurationError):
        fl.s_tensor(circle_state(16), fl.Static())


def test_alpha_table_validation():
    with pytest.raises(fl.ConfigurationError):
        fl.AlphaTable((0.0, 1.0), (1.0, 2.0))  # increasing
    with pytest.raises(fl.ConfigurationError):
        fl.AlphaTable((0.0,), (0.0,))
    with pytest.raises(fl.ConfigurationError):
        fl.AlphaTable((1.0, 0.0), (2.0, 1.0))
    table = fl.AlphaTable((0.0, 1.0), (2.0, 1.0))
    assert table(0.5) == pytest.approx(1.5)
    assert table.derivative(0.5) == pytest.approx(-1.0)
    assert table(3.0) == 1.0 and table.derivative(3.0) == 0.0
    with pytest.raises(fl.ConfigurationError):
        fl.ListExtended(fl.AlphaTable.constant(1.0))


def test_non_conformal_tensor_is_rejected():
    geom = mf.flat_torus(16)
    S = np.zeros((2, 2, 16, 16))
    S[0, 1] = S[1, 0] = 1.0
    with pytest.raises(fl.ConfigurationError):
        fl._conformal_ratio(geom, S)


# -- stepping ----------------------------------------------------------------------

def test_static_step_only_advances_time():
    st_ = curved_torus_state()
    out = fl.step(st_, fl.Static(), 0.01)
    assert out.t == pytest.approx(0.01)
    assert np.array_equal(out.geom.w, st_.geom.w)


def test_scaled_identity_conformal_factor_is_linear_in_time():
    # d w/dt = -lam, which Heun integrates exactly
    st_ = curved_torus_state()
    kind = fl.ScaledIdentity(0.7)
    out = st_
    for _ in range(10):
        out = fl.step(out, kind, 0.01)
    assert np.allclose(out.geom.w, st_.geom.w - 0.07, rtol=0, atol=1e-14)


@pytest.mark.parametrize("n", [2, 3])
def test_round_sphere_shrinks_linearly(n):
    st_ = fl.FlowState(0.0, mf.RoundSphere(n, 1.0))
    for _ in range(40):
        st_ = fl.step(st_, fl.Ricci(), 0.005)
    assert abs(st_.geom.r2 - sphere_radius_sq(1.0, n, 0.2)) < 1e-12


def test_round_sphere_extinction_is_reported():
    st_ = fl.FlowState(0.0, mf.RoundSphere(2, 0.1))
    with pytest.raises(fl.MetricExtinction) as exc:
        for _ in range(10):
            st_ = fl.step(st_, fl.Ricci(), 0.01)
    assert exc.value.t > 0


def test_ricci_conformal_factor_equation():
    # dw/dt = -R/2: the centered rate matches the middle curvature up to O(dt^2)
    st0 = curved_torus_state(32)
    errors = []
    for dt in (1e-4, 5e-5, 2.5e-5):
        st1 = fl.step(st0, fl.Ricci(), dt)
        st2 = fl.step(st1, fl.Ricci(), dt)
        w_t = (st2.geom.w - st0.geom.w) / (2 * dt)
        errors.append(np.max(np.abs(w_t + 0.5 * mf.scalar_curvature(st1.geom))))
    assert errors[0] < 1e-4 * np.max(np.abs(mf.scalar_curvature(st0.geom)))
    assert errors[0] / errors[1] > 3.5 and errors[1] / errors[2] > 3.5


def test_harmonic_map_maximum_principle():
    st_ = circle_state(64)
    kind = fl.HarmonicScalar(fl.AlphaTable.constant(1.0))
    f_max, f_min = st_.f.max(), st_.f.min()
    for _ in range(100):
        st_ = fl.step(st_, kind, 5e-5)
        assert st_.f.max() <= f_max + 1e-12 and st_.f.min() >= f_min - 1e-12
        f_max, f_min = st_.f.max(), st_.f.min()


def test_oversized_dt_is_substepped(caplog):
    st_ = curved_torus_state(32)
    limit = fl.stability_limit(st_, fl.Ricci())
    dt = 3 * limit
    with caplog.at_level(logging.INFO, logger="harnackflow.flow"):
        out = fl.step(st_, fl.Ricci(), dt)
    assert any("substeps" in r.message for r in caplog.records)
    manual = st_
    for _ in range(4):
        manual = fl._heun(manual, fl.Ricci(), dt / 4)
    assert np.array_equal(out.geom.w, manual.geom.w)


def test_step_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        fl.step(curved_torus_state(), fl.Static(), 0.0)


# -- time derivative and bounds ---------------------------------------------------

def test_s_time_derivative_on_sphere():
    # S = 2/r^2 and r^2 = 1 - 2t, so dS/dt = 4/r^4
    dt = 1e-3
    states = [fl.FlowState(0.0, mf.RoundSphere(2, 1.0))]
    for _ in range(2):
        states.append(fl.step(states[-1], fl.Ricci(), dt))
    dS = fl.s_time_derivative(states[0], states[2], fl.Ricci())[0]
    assert dS == pytest.approx(4 / (1 - 2 * dt) ** 2, rel=1e-5)


def test_s_time_derivative_of_static_and_scaled_is_zero():
    st0 = curved_torus_state()
    for kind in (fl.Static(), fl.ScaledIdentity(0.3)):
        st1 = fl.step(fl.step(st0, kind, 0.01), kind, 0.01)
        assert np.max(np.abs(fl.s_time_derivative(st0, st1, kind))) < 1e-12


def test_s_time_derivative_requires_same_grid():
    with pytest.raises(ValueError):
        fl.s_time_derivative(curved_torus_state(16), curved_torus_state(32, t=0.1), fl.Static())


@pytest.mark.parametrize(
    "state, kind, expected",
    [
        (fl.FlowState(0.0, mf.flat_torus(16)), fl.Static(), (0.0, 0.0, 0.0)),
        (fl.FlowState(0.0, mf.RoundSphere(2, 1.0)), fl.Ricci(), (0.0, 0.0, 1.0)),
        (fl.FlowState(0.0, mf.flat_torus(16)), fl.ScaledIdentity(-1.0), (0.0, 1.0, 0.0)),
        (fl.FlowState(0.0, mf.RoundSphere(3, 2.0)), fl.ScaledIdentity(0.5), (0.0, 0.0, 0.5)),
    ],
)
def test_minimal_bounds(state, kind, expected):
    assert fl.minimal_bounds(state, kind) == pytest.approx(expected)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000))
def test_minimal_bounds_bracket_the_tensor(seed):
    st_ = curved_torus_state(16, seed, amp=0.3)
    k1, k2, k3 = fl.minimal_bounds(st_, fl.Ricci())
    half_R = 0.5 * mf.scalar_curvature(st_.geom)
    assert min(k1, k2, k3) >= 0
    assert np.all(half_R >= -k1 - 1e-12) and np.all(-k2 - 1e-12 <= half_R) and np.all(half_R <= k3 + 1e-12)
    assert k3 == pytest.approx(max(0.0, half_R.max()))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_trace_consistency_along_a_run(seed):
    st_ = curved_torus_state(16, seed)
    kind = fl.Ricci()
    for _ in range(3):
        st_ = fl.step(st_, kind, 1e-4)
        assert np.allclose(fl.s_trace(st_, kind), mf.scalar_curvature(st_.geom), rtol=0, atol=1e-10)


def test_circle_metric_evolves_by_list_tensor():
    # d g_11/dt = -2 S_11 = 4 f_x^2 on the flat circle at t = 0
    st0 = circle_state(64)
    dt = 1e-5
    st1 = fl.step(st0, fl.ListExtended(), dt)
    rate = (st1.geom.dof - st0.geom.dof) / dt
    fx = spectral_partial(st0.f, 0)
    assert np.max(np.abs(rate - 4 * fx**2)) < 0.02 * np.max(4 * fx**2)
    assert math.isclose(st1.t, dt)
