import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from difflab.fdiff import apply_derivative
from difflab.initial_layer import (
    DivergentSourceError,
    build_UI0,
    build_UI1,
    rk4_oracle,
    solve_initial_layer,
    ui1_closed_form,
)
from difflab.phase import build_quadrature, uniform_grid

Q = build_quadrature(16)
GRID = uniform_grid(40)
XN = GRID.nodes
MU = Q.nodes


def sample_u0():
    return np.sin(np.pi * XN)[:, None] * (1.0 + 0.5 * MU[None, :] * (XN * (1 - XN))[:, None])


def test_order_zero_matches_generic_solver():
    u_o = sample_u0()
    ui0 = build_UI0(u_o, Q)
    gen = solve_initial_layer(u_o, None, Q)
    for tau in (0.0, 0.7, 3.0, 12.0):
        gap = np.max(np.abs(ui0.eval(tau) - (gen.eval(tau) - gen.limit[:, None])))
        assert gap <= 1e-12


def test_order_zero_formula_values():
    u_o = sample_u0()
    fluct = u_o - Q.average(u_o, axis=-1)[:, None]
    ui0 = build_UI0(u_o, Q)
    assert np.max(np.abs(ui0.eval(0.0) - fluct)) == 0.0
    got = np.max(np.abs(ui0.eval(5.0)))
    assert abs(got - np.exp(-5.0) * np.max(np.abs(fluct))) <= 1e-12
    assert np.max(np.abs(ui0.limit)) == 0.0


def test_isotropic_start_gives_zero_corrector():
    u_o = np.cos(np.pi * XN)[:, None] * np.ones((1, Q.n))
    ui0 = build_UI0(u_o, Q)
    assert np.max(np.abs(ui0.eval(1.3))) <= 1e-14


def test_angle_constant_start_is_relaxation_kernel():
    theta_o = (1.0 + XN**2)[:, None] * np.ones((1, Q.n))
    term = solve_initial_layer(theta_o, None, Q)
    for tau in (0.0, 2.0, 9.0):
        assert np.max(np.abs(term.eval(tau) - theta_o)) <= 1e-13


def test_exponential_direction_source_closed_form():
    # forcing e^-tau * mu from rest: the response is tau e^-tau mu with zero mean
    src = lambda tau: np.exp(-tau) * np.tile(MU, (3, 1))
    term = solve_initial_layer(np.zeros((3, Q.n)), src, Q)
    for tau in (0.5, 2.0, 7.0):
        exact = tau * np.exp(-tau) * np.tile(MU, (3, 1))
        assert np.max(np.abs(term.eval(tau) - exact)) <= 1e-10
        assert np.max(np.abs(Q.average(term.eval(tau), axis=-1))) <= 1e-12
    assert np.max(np.abs(term.limit)) <= 1e-12
    oracle = rk4_oracle(np.zeros((3, Q.n)), src, Q, 2.0)
    assert np.max(np.abs(oracle - term.eval(2.0))) <= 1e-8


def test_mean_slope_tracks_source_mean():
    # d/dtau of the mean equals the source mean
    rng = np.random.default_rng(3)
    prof = rng.normal(size=(5, Q.n))
    src = lambda tau: np.exp(-0.8 * tau) * prof
    term = solve_initial_layer(rng.normal(size=(5, Q.n)), src, Q)
    tau = 1.3
    dtau = 1e-5
    lhs = Q.average((term.eval(tau + dtau) - term.eval(tau - dtau)) / (2 * dtau), axis=-1)
    rhs = Q.average(src(tau), axis=-1)
    assert np.max(np.abs(lhs - rhs)) <= 1e-8


@given(st.floats(min_value=0.2, max_value=8.0), st.floats(min_value=0.2, max_value=8.0))
@settings(max_examples=10, deadline=None)
def test_semigroup_for_free_relaxation(tau1, tau2):
    u_o = sample_u0()
    term = solve_initial_layer(u_o, None, Q)
    direct = term.eval(tau1 + tau2)
    restart = solve_initial_layer(term.eval(tau1), None, Q)
    assert np.max(np.abs(direct - restart.eval(tau2))) <= 1e-12


def test_order_one_against_closed_form_and_oracle():
    u_o = sample_u0()
    dxU0 = np.pi * np.cos(np.pi * XN)
    ui1 = build_UI1(u_o, dxU0, XN, Q)
    cf = ui1_closed_form(u_o, dxU0, XN, Q)
    for tau in (0.0, 1.0, 5.0, 15.0):
        assert np.max(np.abs(ui1.eval(tau) - cf(tau))) <= 1e-8
    # independent RK4 integration of the driven relaxation problem
    fluct = u_o - Q.average(u_o, axis=-1)[:, None]
    dxf = apply_derivative(fluct, XN, order=1, axis=0)
    src = lambda tau: -np.exp(-tau) * MU[None, :] * dxf
    theta_o = MU[None, :] * dxU0[:, None]
    oracle = rk4_oracle(theta_o, src, Q, 3.0)
    direct = ui1.eval(3.0) + ui1.theta_inf[:, None]
    assert np.max(np.abs(oracle - direct)) <= 1e-8


def test_order_one_limit_formula():
    u_o = sample_u0()
    dxU0 = np.pi * np.cos(np.pi * XN)
    ui1 = build_UI1(u_o, dxU0, XN, Q)
    m1 = Q.average(MU[None, :] * u_o, axis=-1)
    expected = -apply_derivative(m1, XN, order=1)
    assert np.max(np.abs(ui1.theta_inf - expected)) <= 1e-8


def test_decay_rates_near_unity():
    u_o = sample_u0()
    ui0 = build_UI0(u_o, Q)
    ui1 = build_UI1(u_o, np.pi * np.cos(np.pi * XN), XN, Q)
    assert 0.9 <= ui0.decay_rate <= 1.1
    assert 0.9 <= ui1.decay_rate <= 1.1


def test_trivial_order_one():
    u_o = np.ones((XN.size, Q.n))
    ui1 = build_UI1(u_o, np.zeros(XN.size), XN, Q)
    assert np.max(np.abs(ui1.eval(0.4))) <= 1e-13
    assert np.max(np.abs(ui1.theta_inf)) <= 1e-13


def test_limit_direction_independence():
    u_o = sample_u0()
    term = solve_initial_layer(u_o, None, Q, tau_max=30.0)
    tail = term.eval(30.0)
    assert np.max(np.abs(tail - term.limit[:, None])) <= np.exp(-0.9 * 30.0) * 10.0


def test_non_decaying_source_rejected():
    src = lambda tau: np.full((2, Q.n), 1.0 + 0.1 * tau)
    with pytest.raises(DivergentSourceError):
        solve_initial_layer(np.zeros((2, Q.n)), src, Q)


def test_tau_max_validation():
    with pytest.raises(Exception):
        solve_initial_layer(np.zeros((2, Q.n)), None, Q, tau_max=5.0)
