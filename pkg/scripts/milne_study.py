#!/usr/bin/env python3
"""Half-space layer study: limits, decay fits, and truncation stability.

Solves the wall-layer problem for a few incoming data, compares the linear
datum's limit against the Richardson-extrapolated fine-grid value, and
tabulates how the limit moves when the domain is doubled.

Usage: python scripts/milne_study.py
"""

import numpy as np

from difflab.milne import MilneProblem, milne_limit_oracle, solve_milne
from difflab.phase import build_quadrature


def main():
    quad = build_quadrature(16)
    cases = [
        ("constant 1", lambda mu: np.ones_like(mu)),
        ("mu", lambda mu: mu),
        ("mu^2", lambda mu: mu**2),
        ("1 + mu/2", lambda mu: 1 + 0.5 * mu),
        ("exp(-mu)", lambda mu: np.exp(-mu)),
    ]
    print(f"{'datum':>12s} {'limit':>14s} {'decay fit':>10s} {'residual':>10s} {'trunc':>10s}")
    for name, rho in cases:
        sol = solve_milne(MilneProblem(rho=rho, quadrature=quad))
        fit = f"{sol.decay_rate_raw:.3f}" if np.isfinite(sol.decay_rate_raw) else "-"
        print(
            f"{name:>12s} {sol.phi_inf:>14.9f} {fit:>10s} "
            f"{sol.residual:>10.2e} {sol.truncation_sensitivity:>10.2e}"
        )
    ref = milne_limit_oracle(lambda mu: mu, quad, eta_max=60.0, cells=800)
    sol = solve_milne(MilneProblem(rho=lambda mu: mu, quadrature=quad), check_truncation=False)
    print(f"\nlinear datum limit: production {sol.phi_inf!r}")
    print(f"                    oracle     {ref!r}")
    print(f"                    difference {abs(sol.phi_inf - ref):.3e}")


if __name__ == "__main__":
    main()
