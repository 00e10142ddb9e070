"""Fast-transient correctors in the stretched time tau = t / eps^2.

The generic relaxation problem dTheta/dtau + Theta - Thetabar = S with
Theta(0) = Theta_o has the closed solution

    Theta(tau) = Thetabar_o + e^{-tau} (Theta_o - Thetabar_o)
                 + int_0^tau { Sbar + e^{tau'-tau} (S - Sbar) } dtau',

and the direction-independent limit Theta_inf = Thetabar_o +
int_0^infty Sbar dtau'.  ``solve_initial_layer`` evaluates this formula
with an adaptive vector quadrature; ``rk4_oracle`` integrates the ODE
directly and is the independent check on everything here.

The two correctors used by the expansion are the order-zero term
e^{-tau} (u_o - ubar_o) (limit zero) and the order-one term driven by the
streaming of the order-zero one, with initial datum mu * d/dx of the
interior solution at time zero.

All x-sampled arrays live on the wall-inclusive node grid (walls plus cell
centers) so wall traces are available; restrict with [1:-1] for cell data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .fdiff import apply_derivative
from .phase import InvalidArgumentError, Quadrature


class DivergentSourceError(RuntimeError):
    pass


def _adaptive_panel(f, a: float, b: float, tol: float, depth: int = 0):
    """Adaptive Simpson on vector integrands."""
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return _panel_refine(f, a, b, fa, fm, fb, whole, tol, depth)

def _panel_refine(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    flm, frm = f(0.5 * (a + m)), f(0.5 * (m + b))
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    err = np.max(np.abs(left + right - whole))
    if err < 15.0 * tol or depth >= 24:
        return left + right + (left + right - whole) / 15.0
    return _panel_refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1) + _panel_refine(
        f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1
    )


@dataclass
class InitialLayerTerm:
    """Evaluator for one relaxation corrector plus its certificates.

    ``eval(tau)`` returns the corrector on the stored (x, mu) sampling;
    ``limit`` is the direction-independent large-tau state (already
    subtracted for the corrector variants); ``decay_rate`` is the fitted
    exponential rate of the sup norm.
    """

    eval: Callable[[float], np.ndarray]
    limit: np.ndarray
    decay_rate: float
    tau_max: float
    theta_inf: Optional[np.ndarray] = None  # limit of the raw solution, if distinct


def solve_initial_layer(
    theta_o: np.ndarray,
    source: Optional[Callable[[float], np.ndarray]],
    quad: Quadrature,
    tau_max: float = 30.0,
    tol: float = 1e-10,
) -> InitialLayerTerm:
    """Evaluate the integrating-factor solution of the relaxation problem.

    ``theta_o`` is (nx, nmu); ``source`` maps tau to an (nx, nmu) array and
    must decay in tau (checked on the tail).  Cumulative integrals are
    cached along monotone evaluation sequences, so sweeping a trajectory's
    time grid costs one short quadrature per step.
    """
    if tau_max < 20:
        raise InvalidArgumentError("tau_max must be >= 20")
    theta_o = np.asarray(theta_o, dtype=float)
    tbar_o = quad.average(theta_o, axis=-1)
    fluct_o = theta_o - tbar_o[..., None]

    if source is None:
        theta_inf = tbar_o.copy()

        def evaluate(tau: float) -> np.ndarray:
            return tbar_o[..., None] + np.exp(-tau) * fluct_o

        rate = 1.0 if np.max(np.abs(fluct_o)) > 0 else np.inf
        return InitialLayerTerm(
            eval=evaluate, limit=theta_inf, decay_rate=rate, tau_max=tau_max, theta_inf=theta_inf
        )

    # decay certification on the tail: the limit integral must be Cauchy
    tail_norms = [np.max(np.abs(source(t))) for t in (0.5 * tau_max, 0.75 * tau_max, tau_max)]
    head = max(np.max(np.abs(source(t))) for t in (0.0, 1.0, 2.0))
    scale = max(head, max(tail_norms), 1e-300)
    if tail_norms[-1] > 1e-8 * scale and not (tail_norms[0] > tail_norms[1] > tail_norms[2]):
        raise DivergentSourceError("source does not decay on the tail; limit integral is not Cauchy")

    cache = {"tau": 0.0, "A": np.zeros_like(theta_o), "B": np.zeros_like(theta_o)}
    #   A(tau) = int_0^tau Sbar,     B(tau) = int_0^tau e^{tau'} (S - Sbar)

    def sbar_part(t):
        s = source(t)
        sb = quad.average(s, axis=-1)[..., None]
        return np.broadcast_to(sb, s.shape)

    def efluct_part(t):
        s = source(t)
        sb = quad.average(s, axis=-1)[..., None]
        return np.exp(t) * (s - sb)

    def advance(tau: float):
        t0 = cache["tau"]
        if tau < t0 - 1e-14:
            cache["tau"], cache["A"], cache["B"] = 0.0, np.zeros_like(theta_o), np.zeros_like(theta_o)
            t0 = 0.0
        if tau > t0:
            cache["A"] = cache["A"] + _adaptive_panel(sbar_part, t0, tau, tol)
            cache["B"] = cache["B"] + _adaptive_panel(efluct_part, t0, tau, tol)
            cache["tau"] = tau

    def evaluate(tau: float) -> np.ndarray:
        tau = float(min(tau, tau_max))
        advance(tau)
        return tbar_o[..., None] + np.exp(-tau) * fluct_o + cache["A"] + np.exp(-tau) * cache["B"]

    # limit: full integral of Sbar with an exponential tail estimate
    advance(tau_max)
    A_full = cache["A"].copy()
    s_tail = np.max(np.abs(sbar_part(tau_max)))
    tail = np.zeros_like(theta_o)
    if s_tail > 1e-15 * scale:
        taus = np.linspace(0.9 * tau_max, tau_max, 6)
        mags = np.array([max(np.max(np.abs(sbar_part(t))), 1e-300) for t in taus])
        alpha = max(np.polyfit(taus, np.log(mags), 1)[0] * -1.0, 1e-2)
        tail = sbar_part(tau_max) / alpha
    theta_inf = quad.average(tbar_o[..., None] + A_full + tail, axis=-1)

    # decay rate of the deviation from the limit
    taus = np.linspace(0.5 * tau_max, 0.9 * tau_max, 9)
    devs = np.array([np.max(np.abs(evaluate(t) - theta_inf[..., None])) for t in taus])
    good = devs > 1e-13 * max(1.0, float(np.max(np.abs(theta_o))))
    rate = float(-np.polyfit(taus[good], np.log(devs[good]), 1)[0]) if np.count_nonzero(good) >= 4 else np.inf

    return InitialLayerTerm(
        eval=evaluate,
        limit=theta_inf,
        decay_rate=rate,
        tau_max=tau_max,
        theta_inf=theta_inf,
    )


def build_UI0(u_o: np.ndarray, quad: Quadrature, tau_max: float = 30.0) -> InitialLayerTerm:
    """Order-zero corrector e^{-tau} (u_o - ubar_o); limit identically zero."""
    u_o = np.asarray(u_o, dtype=float)
    fluct = u_o - quad.average(u_o, axis=-1)[..., None]

    def evaluate(tau: float) -> np.ndarray:
        return np.exp(-min(tau, 700.0)) * fluct

    rate = 1.0 if np.max(np.abs(fluct)) > 0 else np.inf
    return InitialLayerTerm(
        eval=evaluate,
        limit=np.zeros(u_o.shape[0]),
        decay_rate=rate,
        tau_max=tau_max,
        theta_inf=quad.average(u_o, axis=-1),
    )


def build_UI1(
    u_o: np.ndarray,
    dxU0_at0: np.ndarray,
    x_nodes: np.ndarray,
    quad: Quadrature,
    tau_max: float = 30.0,
) -> InitialLayerTerm:
    """Order-one corrector: relaxation driven by streaming of the order-zero
    one, started from mu * (gradient of the interior solution at time 0).

    Returns the corrector (limit subtracted); its ``theta_inf`` supplies the
    initial datum of the first-order interior mean.
    """
    u_o = np.asarray(u_o, dtype=float)
    mu = quad.nodes
    fluct = u_o - quad.average(u_o, axis=-1)[..., None]
    dx_fluct = apply_derivative(fluct, x_nodes, order=1, axis=0)
    theta_o = mu[None, :] * np.asarray(dxU0_at0, dtype=float)[:, None]

    def src(tau: float) -> np.ndarray:
        return -np.exp(-min(tau, 700.0)) * mu[None, :] * dx_fluct

    theta = solve_initial_layer(theta_o, src, quad, tau_max=tau_max)
    theta_inf = theta.theta_inf

    def evaluate(tau: float) -> np.ndarray:
        return theta.eval(tau) - theta_inf[:, None]

    return InitialLayerTerm(
        eval=evaluate,
        limit=np.zeros(u_o.shape[0]),
        decay_rate=theta.decay_rate,
        tau_max=tau_max,
        theta_inf=theta_inf,
    )


def ui1_closed_form(
    u_o: np.ndarray, dxU0_at0: np.ndarray, x_nodes: np.ndarray, quad: Quadrature
) -> Callable[[float], np.ndarray]:
    """Closed form of the order-one corrector for cross-checks.

    With m1 = first angular moment of u_o:
      corrector(tau) = e^{-tau} [ mu*dx(ubar_o) + dx(m1)
                                  - tau (mu*dx(u_o - ubar_o) - dx(m1)) ]
    and the raw limit is -dx(m1).
    """
    mu = quad.nodes
    u_o = np.asarray(u_o, dtype=float)
    fluct = u_o - quad.average(u_o, axis=-1)[..., None]
    dx_fluct = apply_derivative(fluct, x_nodes, order=1, axis=0)
    m1 = quad.average(mu[None, :] * u_o, axis=-1)
    dx_m1 = apply_derivative(m1, x_nodes, order=1, axis=0)
    theta_o = mu[None, :] * np.asarray(dxU0_at0, dtype=float)[:, None]

    def evaluate(tau: float) -> np.ndarray:
        e = np.exp(-min(tau, 700.0))
        return e * (theta_o + dx_m1[:, None] - tau * (mu[None, :] * dx_fluct - dx_m1[:, None]))

    return evaluate


def rk4_oracle(
    theta_o: np.ndarray,
    source: Optional[Callable[[float], np.ndarray]],
    quad: Quadrature,
    tau_end: float,
    dtau: float = 0.005,
) -> np.ndarray:
    """Fixed-step RK4 integration of the relaxation problem; the
    independent oracle for the formula-based solvers."""
    theta = np.array(theta_o, dtype=float)

    def rhs(tau, th):
        out = -(th - quad.average(th, axis=-1)[..., None])
        if source is not None:
            out = out + source(tau)
        return out

    steps = int(np.ceil(tau_end / dtau))
    h = tau_end / steps
    t = 0.0
    for _ in range(steps):
        k1 = rhs(t, theta)
        k2 = rhs(t + 0.5 * h, theta + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, theta + 0.5 * h * k2)
        k4 = rhs(t + h, theta + h * k3)
        theta = theta + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return theta
