import numpy as np
import pytest

from difflab.milne import (
    GRAZE,
    CutoffLayer,
    MilneProblem,
    SpecularExtensionLayer,
    TimeProfile,
    build_cutoff_layer,
    build_specular_extension,
    chi,
    chi_prime,
    chi_tilde,
    milne_limit_oracle,
    solve_milne,
)
from difflab.phase import LEFT, RIGHT, InvalidArgumentError, build_quadrature
from difflab.remainder import fit_rate

Q = build_quadrature(16)
RAMP = TimeProfile(a=lambda t: 1 - np.exp(-t), da=lambda t: np.exp(-t))


def test_cutoff_profile_shape():
    r = np.array([-3.0, -2.0, -1.5, -1.0, -0.2, 0.0, 0.7, 1.0, 1.5, 2.0, 9.0])
    vals = chi(r)
    assert np.all(vals[np.abs(r) <= 1.0] == 1.0)
    assert np.all(vals[np.abs(r) >= 2.0] == 0.0)
    assert np.all((vals >= 0) & (vals <= 1))
    assert np.allclose(chi_tilde(r), 1.0 - vals)
    # transition derivative is continuous and vanishes at both junctions
    assert abs(chi_prime(1.0)) <= 1e-14 and abs(chi_prime(2.0)) <= 1e-14
    assert chi_prime(1.5) < 0 < chi_prime(-1.5)


def test_constant_datum_exactness():
    sol = solve_milne(MilneProblem(rho=lambda mu: np.full_like(mu, 3.0), quadrature=Q), check_truncation=False)
    assert np.max(np.abs(sol.phi - 3.0)) <= 1e-12
    assert abs(sol.phi_inf - 3.0) <= 1e-12
    assert sol.decay_rate == 1.0  # no decaying content: certified at the cap


@pytest.fixture(scope="module")
def linear_solution():
    return solve_milne(MilneProblem(rho=lambda mu: mu, quadrature=Q))


class TestLinearDatum:
    @pytest.fixture()
    def sol(self, linear_solution):
        return linear_solution

    def test_relation_residual(self, sol):
        assert sol.residual <= 1e-10

    def test_truncation_stability(self, sol):
        assert sol.truncation_sensitivity <= 1e-8

    def test_decay_slope(self, sol):
        assert sol.decay_rate_raw >= 0.9  # fitted log-slope is <= -0.9
        assert 0.0 < sol.decay_rate <= 1.0

    def test_limit_matches_richardson_oracle(self, sol):
        ref = milne_limit_oracle(lambda mu: mu, Q, eta_max=60.0, cells=800)
        assert abs(sol.phi_inf - ref) <= 1e-6

    def test_limit_is_direction_free_at_depth(self, sol):
        spread = np.max(sol.phi[-1]) - np.min(sol.phi[-1])
        assert spread <= 1e-9

    def test_eval_mu_close_at_production_nodes(self, sol):
        # characteristic reconstruction vs the diamond solve: scheme-order gap
        rec = sol.eval_mu(Q.nodes)
        assert np.max(np.abs(rec - sol.phi)) <= 5e-3
        # the layer objects short-circuit to the solved profile there
        lay = build_cutoff_layer(sol, LEFT, 0.05, RAMP)
        eta_t = np.linspace(0.0, 3.0, 7)
        via_layer = lay._psi(eta_t, Q.nodes)
        direct = sol.psi0_at(eta_t, Q.nodes, phi_mu=sol.phi)
        assert np.max(np.abs(via_layer - direct)) == 0.0

    def test_eval_mu_handles_grazing(self, sol):
        vals = sol.eval_mu(np.array([-1e-3, 1e-3]))
        assert np.all(np.isfinite(vals))
        # nearly grazing directions carry the local mean away from the wall
        deep = vals[sol.eta > 5.0]
        ref = np.interp(sol.eta[sol.eta > 5.0], sol.eta, sol.phi_bar)
        assert np.max(np.abs(deep - ref[:, None])) <= 1e-3


def test_generic_smooth_datum_decay():
    sol = solve_milne(MilneProblem(rho=lambda mu: 1 + 0.5 * mu**2, quadrature=Q), check_truncation=False)
    assert sol.decay_rate_raw >= 0.9


def test_eta_max_validation():
    with pytest.raises(InvalidArgumentError):
        MilneProblem(rho=lambda mu: mu, quadrature=Q, eta_max=10.0)


def test_cutoff_layer_trivial_and_support():
    sol = solve_milne(MilneProblem(rho=lambda mu: np.full_like(mu, 2.0), quadrature=Q), check_truncation=False)
    lay = build_cutoff_layer(sol, LEFT, 0.05, RAMP)
    x = np.linspace(1e-3, 0.999, 100)
    u = lay.u(0.4, x, Q.nodes, 1.0)
    assert np.max(np.abs(u)) <= 1e-11  # constant datum has zero layer
    assert np.max(np.abs(lay.s3(0.4, x, Q.nodes, 1.0))) <= 1e-9

    sol2 = solve_milne(MilneProblem(rho=lambda mu: mu, quadrature=Q), check_truncation=False)
    for eps in (0.1, 0.02):
        lay2 = build_cutoff_layer(sol2, LEFT, eps, RAMP)
        u2 = lay2.u(0.4, x, Q.nodes, 1.0)
        beyond = x > 2.0 * np.sqrt(eps)
        assert np.max(np.abs(u2[beyond, :])) == 0.0
        mu_dead = np.array([-GRAZE * eps * 0.9, GRAZE * eps * 0.5])
        assert np.max(np.abs(lay2.u(0.4, x, mu_dead, 1.0))) == 0.0


def test_cutoff_layer_wall_mismatch_identity():
    # at the wall the layer equals the pass-filtered datum excess
    sol = solve_milne(MilneProblem(rho=lambda mu: mu, quadrature=Q), check_truncation=False)
    eps = 0.05
    lay = build_cutoff_layer(sol, LEFT, eps, RAMP)
    t = 0.7
    inc = Q.incoming(LEFT)
    wall = lay.wall_value(t, Q.nodes)
    expected = (1 - np.exp(-t)) * chi_tilde(Q.nodes / (GRAZE * eps)) * (Q.nodes - sol.phi_inf)
    assert np.max(np.abs(wall[inc] - expected[inc])) <= 1e-12


def test_cutoff_layer_right_wall_mirror():
    sol = solve_milne(MilneProblem(rho=lambda mu: mu, quadrature=Q), check_truncation=False)
    eps = 0.05
    left = build_cutoff_layer(sol, LEFT, eps, RAMP)
    right = build_cutoff_layer(sol, RIGHT, eps, RAMP)
    x = np.linspace(1e-4, 0.9999, 200)
    ul = left.u(0.5, x, Q.nodes, 1.0)
    ur = right.u(0.5, x, Q.nodes, 1.0)
    assert np.allclose(ul, ur[::-1, ::-1], atol=1e-12)


def test_cutoff_layer_rejects_bad_eps():
    sol = solve_milne(MilneProblem(rho=lambda mu: mu, quadrature=Q), check_truncation=False)
    with pytest.raises(InvalidArgumentError):
        build_cutoff_layer(sol, LEFT, 1.5, RAMP)


def test_weighted_layer_norm_scales_as_sqrt_eps():
    from difflab.phase import graded_grid

    sol = solve_milne(MilneProblem(rho=lambda mu: mu, quadrature=Q), check_truncation=False)
    eps_list = [0.1, 0.05, 0.025, 0.0125]
    vals = []
    for eps in eps_list:
        lay = build_cutoff_layer(sol, LEFT, eps, TimeProfile(lambda t: 1.0, lambda t: 0.0))
        grid = graded_grid(200, eps)
        x = grid.centers
        u = lay.u(1.0, x, Q.nodes, 1.0)
        wgt = 1.0 + x / eps
        vals.append(np.sqrt(np.einsum("xm,x,m->", (wgt[:, None] * u) ** 2, grid.widths, Q.weights)))
    slope, _, _ = fit_rate(list(zip(eps_list, vals)))
    assert 0.4 <= slope <= 0.6


def test_specular_extension_basics():
    psi = lambda mu: mu * (mu**2 - 0.6)
    ext = build_specular_extension(psi, LEFT, 0.05, RAMP, Q)
    assert abs(ext.wall_flux()) <= 1e-12
    x = np.linspace(1e-4, 0.999, 150)
    u = ext.u(0.0, x, Q.nodes, 1.0)
    assert np.max(np.abs(u)) == 0.0  # ramp starts at zero
    u = ext.u(1.0, x, Q.nodes, 1.0)
    inc = Q.nodes > 0
    assert np.max(np.abs(u[:, ~inc])) == 0.0  # extension rides incoming directions only
    assert np.max(np.abs(u[x > 2 * 0.05, :])) == 0.0  # thin-layer support


def test_specular_extension_zero_datum():
    ext = build_specular_extension(lambda mu: np.zeros_like(mu), LEFT, 0.05, RAMP, Q)
    x = np.linspace(1e-4, 0.999, 50)
    assert np.max(np.abs(ext.u(1.0, x, Q.nodes, 1.0))) == 0.0
    assert np.max(np.abs(ext.s_b(1.0, x, Q.nodes, 1.0))) == 0.0


def test_specular_extension_rejects_bad_flux():
    with pytest.raises(InvalidArgumentError):
        build_specular_extension(lambda mu: np.abs(mu), LEFT, 0.05, RAMP, Q)


def test_specular_extension_l2_scales_as_sqrt_eps():
    from difflab.phase import graded_grid

    psi = lambda mu: mu * (mu**2 - 0.6)
    eps_list = [0.1, 0.05, 0.025, 0.0125]
    vals = []
    for eps in eps_list:
        ext = build_specular_extension(psi, LEFT, eps, TimeProfile(lambda t: 1.0, lambda t: 0.0), Q)
        grid = graded_grid(200, eps)
        u = ext.u(1.0, grid.centers, Q.nodes, 1.0)
        vals.append(np.sqrt(np.einsum("xm,x,m->", u * u, grid.widths, Q.weights)))
    slope, _, _ = fit_rate(list(zip(eps_list, vals)))
    assert 0.4 <= slope <= 0.6
