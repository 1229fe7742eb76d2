import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harnackflow import flow as fl
from harnackflow import manifold as mf
from harnackflow import pme
from harnackflow import structure as sq


def run_states(state, kind, dt, count=3):
    out = [state]
    for _ in range(count - 1):
        out.append(fl.step(out[-1], kind, dt))
    return out


def torus_states(kind, n=32, amp=0.1, t0=0.5, dt=1e-4, seed=1):
    grid = mf.GridSpec.uniform(2, n)
    geom = mf.ConformalTorus2D(grid, amp * pme.band_limited(grid, seed))
    return run_states(fl.FlowState(t0, geom), kind, dt)


def circle_states(kind, n=64, t0=0.5, dt=1e-5):
    grid = mf.GridSpec.uniform(1, n)
    geom = mf.Circle1D(grid, 1 + 0.1 * pme.band_limited(grid, 1))
    return run_states(fl.FlowState(t0, geom, 0.5 * pme.band_limited(grid, 2)), kind, dt)


def random_field(geom, seed):
    return np.stack([pme.band_limited(geom.grid, seed + a) for a in range(geom.dim)])


# -- I -----------------------------------------------------------------------------

def test_I_vanishes_for_ricci():
    prev, st_, nxt = torus_states(fl.Ricci())
    X = random_field(st_.geom, 5)
    assert np.max(np.abs(sq.quantity_I(st_, fl.Ricci(), X))) < 1e-12


def test_I_is_ricci_for_static():
    _, st_, _ = torus_states(fl.Static())
    X = random_field(st_.geom, 5)
    assert np.array_equal(sq.quantity_I(st_, fl.Static(), X), mf.contract(mf.ricci(st_.geom), X))


def test_I_for_list_flow():
    _, st_, _ = circle_states(fl.ListExtended())
    X = random_field(st_.geom, 5)
    x_f = mf.partials(st_.geom, st_.f)[0] * X[0]
    assert np.allclose(sq.quantity_I(st_, fl.ListExtended(), X), 2 * x_f**2, rtol=0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(-3, 3))
def test_I_is_quadratic_in_X(seed, c):
    _, st_, _ = circle_states(fl.HarmonicScalar())
    X = random_field(st_.geom, seed)
    I1 = sq.quantity_I(st_, fl.HarmonicScalar(), X)
    Ic = sq.quantity_I(st_, fl.HarmonicScalar(), c * X)
    assert np.allclose(Ic, c**2 * I1, rtol=1e-12, atol=1e-12)


# -- H -----------------------------------------------------------------------------

def test_H_of_static_is_zero():
    prev, st_, nxt = torus_states(fl.Static())
    X = random_field(st_.geom, 1)
    assert np.all(sq.quantity_H(prev, st_, nxt, fl.Static(), X) == 0)


def test_H_scaled_identity_with_zero_field():
    # S = n lam constant, so H = n lam / t
    kind = fl.ScaledIdentity(0.5)
    prev, st_, nxt = torus_states(kind, t0=0.25)
    H = sq.quantity_H(prev, st_, nxt, kind, np.zeros((2,) + st_.geom.shape))
    assert np.allclose(H, 2 * 0.5 / st_.t, rtol=1e-12)


def test_H_on_shrinking_sphere():
    # S = 2/r^2, dS/dt = 4/r^4; with X = 0: H = 4/r^4 + 2/(r^2 t)
    states = run_states(fl.FlowState(0.1, mf.RoundSphere(2, 1.0)), fl.Ricci(), 1e-3)
    prev, st_, nxt = states
    r2 = st_.geom.r2
    H = sq.quantity_H(prev, st_, nxt, fl.Ricci(), np.zeros((2, 1)))
    assert H[0] == pytest.approx(4 / r2**2 + 2 / (r2 * st_.t), rel=1e-6)


def test_H_needs_positive_time():
    states = run_states(fl.FlowState(0.0, mf.flat_torus(16)), fl.Static(), 1e-3)
    with pytest.raises(sq.DivisionByTime):
        sq.quantity_H(states[0], states[0], states[1], fl.Static(), np.zeros((2, 16, 16)), t=0.0)


# -- D, gap, E ---------------------------------------------------------------------

def test_D_and_gap_of_static_vanish():
    prev, st_, nxt = torus_states(fl.Static())
    assert np.all(sq.quantity_D(prev, st_, nxt, fl.Static()) == 0)
    assert np.all(sq.divergence_gap(st_, fl.Static()) == 0)


def test_D_on_shrinking_sphere_vanishes():
    prev, st_, nxt = run_states(fl.FlowState(0.1, mf.RoundSphere(2, 1.0)), fl.Ricci(), 1e-3)
    D = sq.quantity_D(prev, st_, nxt, fl.Ricci())
    assert abs(D[0]) < 1e-5 * 4 / st_.geom.r2**2  # O(dt^2) from the centered dS/dt


def test_D_for_list_flow_matches_closed_form():
    prev, st_, nxt = circle_states(fl.ListExtended())
    forms = sq.closed_forms(prev, st_, nxt, fl.ListExtended(), random_field(st_.geom, 3))
    D, target = forms["D"]
    lap_f = mf.laplace_beltrami(st_.geom, st_.f)
    assert np.array_equal(target, 4 * lap_f**2)
    assert np.max(np.abs(D - target)) < 0.05 * np.max(np.abs(target))


def test_gap_for_list_flow():
    _, st_, _ = circle_states(fl.ListExtended(), n=128)
    gap = sq.divergence_gap_form(st_, fl.ListExtended())
    lap_f = mf.laplace_beltrami(st_.geom, st_.f)
    df = mf.partials(st_.geom, st_.f)
    target = -4 * lap_f * df
    assert np.max(np.abs(gap - target)) < 0.01 * np.max(np.abs(target))


def test_ricci_gap_converges_to_zero():
    errors = []
    for n in (32, 64, 128):
        _, st_, _ = torus_states(fl.Ricci(), n=n, dt=1e-6)
        errors.append(np.max(np.abs(sq.divergence_gap_form(st_, fl.Ricci()))))
    assert errors[0] / errors[1] > 3.5 and errors[1] / errors[2] > 3.5


def test_Eb_at_two_is_E():
    prev, st_, nxt = circle_states(fl.ListExtended())
    X = random_field(st_.geom, 9)
    assert np.array_equal(
        sq.quantity_Eb(prev, st_, nxt, fl.ListExtended(), X, 2.0),
        sq.quantity_E(prev, st_, nxt, fl.ListExtended(), X),
    )


def test_Eb_warns_below_two():
    prev, st_, nxt = torus_states(fl.Static())
    with pytest.warns(UserWarning):
        sq.quantity_Eb(prev, st_, nxt, fl.Static(), np.zeros((2,) + st_.geom.shape), 1.5)


@settings(max_examples=20, deadline=None)
@given(st.floats(2.0, 10.0), st.floats(2.0, 10.0))
def test_Eb_is_affine_in_b(b1, b2):
    prev, st_, nxt = circle_states(fl.ListExtended(), n=32)
    X = random_field(st_.geom, 4)
    kind = fl.ListExtended()
    e1 = sq.quantity_Eb(prev, st_, nxt, kind, X, b1)
    e2 = sq.quantity_Eb(prev, st_, nxt, kind, X, b2)
    mid = sq.quantity_Eb(prev, st_, nxt, kind, X, 0.5 * (b1 + b2))
    assert np.allclose(mid, 0.5 * (e1 + e2), rtol=1e-10, atol=1e-8)


def test_harmonic_closed_forms_include_alpha_slope():
    kind = fl.HarmonicScalar(fl.AlphaTable((0.0, 1.0), (2.0, 1.0)))
    prev, st_, nxt = circle_states(kind, n=128)
    forms = sq.closed_forms(prev, st_, nxt, kind, random_field(st_.geom, 6))
    for name in ("I", "E", "D"):
        discrete, target = forms[name]
        assert np.max(np.abs(discrete - target)) < 0.02 * np.max(np.abs(target)), name


def test_closed_forms_reject_scaled_identity():
    prev, st_, nxt = torus_states(fl.ScaledIdentity(1.0))
    with pytest.raises(ValueError):
        sq.closed_forms(prev, st_, nxt, fl.ScaledIdentity(1.0), np.zeros((2,) + st_.geom.shape))


# -- hypothesis sampling -------------------------------------------------------------

def test_sample_fields_are_deterministic_and_normalised():
    geom = mf.ConformalTorus2D(mf.GridSpec.uniform(2, 16), 0.1 * pme.band_limited(mf.GridSpec.uniform(2, 16), 1))
    a = sq.sample_fields(geom, seed=3)
    b = sq.sample_fields(geom, seed=3)
    assert len(a) == 1 + 6 * 3
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert np.all(a[0] == 0)
    assert np.allclose(mf.norm_sq(geom, a[2]), 1.0)
    assert np.allclose(mf.norm_sq(geom, a[3]), 16.0)


def test_hypotheses_on_static_flat_torus():
    states = run_states(fl.FlowState(0.1, mf.flat_torus(16)), fl.Static(), 0.01, count=4)
    rep = sq.check_hypotheses(states, fl.Static())
    assert rep.passed and (rep.k1, rep.k2, rep.k3) == (0.0, 0.0, 0.0)
    assert rep.method == "sampled" and rep.sample_count == 2 * 19


def test_hypotheses_on_shrinking_sphere():
    states = run_states(fl.FlowState(0.1, mf.RoundSphere(2, 1.0)), fl.Ricci(), 1e-3, count=4)
    rep = sq.check_hypotheses(states, fl.Ricci())
    assert rep.S_ok and rep.H_ok
    assert rep.min_S > 0 and rep.k3 == pytest.approx(1 / states[-1].geom.r2)


def test_hypotheses_fail_for_negative_S():
    kind = fl.ScaledIdentity(-1.0)
    states = run_states(fl.FlowState(0.1, mf.flat_torus(16)), kind, 0.01)
    rep = sq.check_hypotheses(states, kind)
    assert not rep.S_ok and not rep.passed
    assert rep.as_dict()["passed"] is False


def test_hypotheses_need_three_snapshots():
    states = run_states(fl.FlowState(0.1, mf.flat_torus(16)), fl.Static(), 0.01, count=2)
    with pytest.raises(ValueError):
        sq.check_hypotheses(states, fl.Static())


def test_hypotheses_warn_below_two():
    states = run_states(fl.FlowState(0.1, mf.flat_torus(16)), fl.Static(), 0.01)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sq.check_hypotheses(states, fl.Static(), b=1.5)
    assert any("b in [2, inf)" in str(w.message) for w in caught)
