import numpy as np
import pytest

from difflab.phase import (
    LEFT,
    RIGHT,
    SlabGeometry,
    build_quadrature,
    graded_grid,
    refine_grid,
    trapezoid_weights,
    uniform_grid,
)
from difflab.transport import (
    DIFFUSE,
    INFLOW,
    SPECULAR,
    BoundaryCondition,
    ConvergenceError,
    TransportProblem,
    boundary_flux,
    check_null_flux_compatibility,
    solve,
    step,
    trace_norm,
)

Q = build_quadrature(16)
GEO = SlabGeometry(1.0)


def const_problem(kind, c=2.5, **kw):
    grid = uniform_grid(60)
    if kind == INFLOW:
        bc = BoundaryCondition(INFLOW, lambda t, s, mu: np.full_like(mu, c))
    else:
        bc = BoundaryCondition(kind)
    return TransportProblem(GEO, grid, Q, 0.1, 0.02, lambda x, mu: c + 0 * x * mu, bc, **kw)


@pytest.mark.parametrize("kind", [INFLOW, DIFFUSE, SPECULAR])
def test_equilibrium_fixed_point(kind):
    pb = const_problem(kind)
    u1, traces, _ = step(np.full((60, Q.n), 2.5), pb)
    assert np.max(np.abs(u1 - 2.5)) <= 1e-13
    assert np.max(np.abs(traces - 2.5)) <= 1e-13


def test_constant_inflow_trajectory():
    pb = const_problem(INFLOW, c=1.0)
    traj = solve(pb)
    assert np.max(np.abs(traj.final_state - 1.0)) <= 1e-12
    assert np.max(np.abs(traj.snapshots - 1.0)) <= 1e-12


def test_specular_mass_conservation():
    grid = uniform_grid(100)
    pb = TransportProblem(
        GEO, grid, Q, 0.05, 0.05,
        lambda x, mu: np.sin(np.pi * x) + 0 * mu, BoundaryCondition(SPECULAR),
    )
    traj = solve(pb, snapshot_stride=None)
    drift = np.max(np.abs(traj.mass - traj.mass[0]))
    assert drift <= 1e-10


@pytest.mark.parametrize("kind", [DIFFUSE, SPECULAR])
def test_null_flux(kind):
    grid = uniform_grid(80)
    h = lambda t, s, mu: (1 - np.exp(-t)) * mu * (mu**2 - 0.6)
    pb = TransportProblem(
        GEO, grid, Q, 0.06, 0.03,
        lambda x, mu: 1 + np.cos(np.pi * x) + 0 * mu, BoundaryCondition(kind, h),
    )
    traj = solve(pb, snapshot_stride=None)
    worst = max(
        abs(boundary_flux(traj, side, n))
        for side in (LEFT, RIGHT)
        for n in range(traj.times.size)
    )
    assert worst <= 1e-10


def test_inflow_constant_zero_flux():
    pb = const_problem(INFLOW, c=1.0)
    traj = solve(pb, snapshot_stride=None)
    assert abs(boundary_flux(traj, LEFT, traj.times.size - 1)) <= 1e-12


@pytest.mark.parametrize("kind", [INFLOW, DIFFUSE, SPECULAR])
def test_direct_matches_source_iteration(kind):
    grid = uniform_grid(50)
    u0 = lambda x, mu: np.sin(np.pi * x) * (1 + 0.5 * mu * x * (1 - x))
    if kind == INFLOW:
        dat = lambda t, s, mu: (1 - np.exp(-t)) * np.abs(mu)
    else:
        dat = lambda t, s, mu: (1 - np.exp(-t)) * mu * (mu**2 - 0.6)
    a = solve(TransportProblem(GEO, grid, Q, 0.08, 0.02, u0, BoundaryCondition(kind, dat), scheme="direct"))
    b = solve(TransportProblem(GEO, grid, Q, 0.08, 0.02, u0, BoundaryCondition(kind, dat), scheme="source-iteration"))
    assert np.max(np.abs(a.final_state - b.final_state)) <= 1e-11


def test_maximum_principle():
    grid = uniform_grid(60)
    pb = TransportProblem(
        GEO, grid, Q, 0.05, 0.1,
        lambda x, mu: 0.5 + 0.5 * np.sin(np.pi * x) * np.cos(3 * mu),
        BoundaryCondition(INFLOW, lambda t, s, mu: 0.5 + 0.4 * np.sin(5 * t) * np.ones_like(mu)),
    )
    # initial state spans [0, 1], wall datum [0.1, 0.9]; the discrete
    # solution must stay inside the data range
    traj = solve(pb, snapshot_stride=2)
    assert traj.snapshots.min() >= -1e-10
    assert traj.snapshots.max() <= 1.0 + 1e-10


def test_self_convergence_first_order():
    # simultaneous (h, dt) halving on smooth data; dt follows h through cfl
    base = uniform_grid(40)
    u0 = lambda x, mu: np.sin(np.pi * x) * (1 + 0.3 * mu)
    g = lambda t, s, mu: np.zeros_like(mu)
    finals = []
    for lev in range(3):
        grid = refine_grid(base, lev)
        pb = TransportProblem(GEO, grid, Q, 0.1, 0.05, u0, BoundaryCondition(INFLOW, g))
        traj = solve(pb, snapshot_stride=None)
        finals.append((grid, traj.final_state))
    errs = []
    for (gc, uc), (gf, uf) in zip(finals[:-1], finals[1:]):
        coarse_of_fine = 0.5 * (uf[0::2] + uf[1::2])
        errs.append(np.sqrt(np.einsum("xm,x,m->", (uc - coarse_of_fine) ** 2, gc.widths, Q.weights)))
    order = np.log2(errs[0] / errs[1])
    assert order >= 0.8, f"self-convergence order {order:.2f}"


def test_mean_tracks_heat_solution():
    # isotropic start, dark walls: the mean should approach the heat flow
    # with the limit diffusivity within O(eps)
    from difflab.hierarchy import DIFFUSIVITY, solve_heat

    eps = 0.1
    grid = graded_grid(100, eps)
    pb = TransportProblem(
        GEO, grid, Q, eps, 0.3,
        lambda x, mu: np.sin(np.pi * x) + 0 * mu,
        BoundaryCondition(INFLOW, lambda t, s, mu: np.zeros_like(mu)),
    )
    traj = solve(pb, snapshot_stride=None)
    times = traj.times
    U = solve_heat(grid.nodes, times, np.sin(np.pi * grid.nodes),
                   ("dirichlet", np.zeros(times.size)), ("dirichlet", np.zeros(times.size)),
                   DIFFUSIVITY)
    ubar = Q.average(traj.final_state, axis=-1)
    gap = np.max(np.abs(ubar - U[-1, 1:-1]))
    assert gap <= 1.5 * eps, f"mean-vs-heat gap {gap:.3f}"


def test_minmod_option_runs_and_preserves_equilibrium():
    pb = const_problem(INFLOW, scheme="source-iteration", spatial_order=2, flux="upwind")
    u1, _, _ = step(np.full((60, Q.n), 2.5), pb)
    assert np.max(np.abs(u1 - 2.5)) <= 1e-11


def test_iteration_failure_reports_residual():
    pb = const_problem(DIFFUSE, scheme="source-iteration", max_iter=1, tol=1e-300)
    with pytest.raises(ConvergenceError) as err:
        solve(pb)
    assert err.value.residual >= 0.0


def test_null_flux_compatibility_checker():
    bad = BoundaryCondition(DIFFUSE, lambda t, s, mu: np.abs(mu))
    with pytest.raises(Exception):
        check_null_flux_compatibility(bad, Q, [0.0, 0.5])
    good = BoundaryCondition(DIFFUSE, lambda t, s, mu: mu * (mu**2 - 0.6))
    assert check_null_flux_compatibility(good, Q, [0.0, 0.5]) <= 1e-12


def test_trace_norm_projector():
    times = np.linspace(0, 1, 4)
    traces = np.ones((4, 2, Q.n))
    assert trace_norm(traces, times, Q, which="outgoing", projector="fluctuation") <= 1e-13
    assert trace_norm(traces, times, Q, which="outgoing") > 0.9


def test_traces_consistent_with_interior():
    # outgoing trace equals the sweep's wall face; for a smooth state it sits
    # within the wall cell's value range extended by the neighbor slope
    grid = uniform_grid(50)
    pb = TransportProblem(
        GEO, grid, Q, 0.1, 0.02,
        lambda x, mu: 1 + 0.2 * np.sin(np.pi * x) + 0 * mu,
        BoundaryCondition(INFLOW, lambda t, s, mu: np.ones_like(mu)),
    )
    traj = solve(pb, snapshot_stride=None)
    n = traj.times.size - 1
    out = Q.outgoing(LEFT)
    wall_cells = traj.final_state[0, out]
    assert np.max(np.abs(traj.traces[n, 0, out] - wall_cells)) <= 0.05
