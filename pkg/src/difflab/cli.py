"""Command-line front end.

    difflab run <config.toml> [--out DIR] [--jobs N] [--strict]
    difflab validate <config.toml> [--strict]
    difflab presets list
    difflab milne --data EXPR [--quad N] [--eta-max X] [--cells N] [--out DIR]

The default output directory comes from DIFFLAB_OUT when set.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="difflab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a sweep experiment from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory (default from config or DIFFLAB_OUT)")
    p_run.add_argument("--jobs", type=int, default=None, help="parallel eps jobs")
    p_run.add_argument("--strict", action="store_true", help="reject unknown config keys")

    p_val = sub.add_parser("validate", help="validate a config file and its preset")
    p_val.add_argument("config")
    p_val.add_argument("--strict", action="store_true")

    p_pre = sub.add_parser("presets", help="preset catalog")
    p_pre.add_argument("action", choices=["list"])

    p_mil = sub.add_parser("milne", help="standalone half-space layer solve")
    p_mil.add_argument("--data", required=True, help="incoming datum as an expression of mu")
    p_mil.add_argument("--quad", type=int, default=16)
    p_mil.add_argument("--eta-max", type=float, default=30.0)
    p_mil.add_argument("--cells", type=int, default=400)
    p_mil.add_argument("--out", default=None, help="write the profile CSV here")

    args = parser.parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "validate":
        return _cmd_validate(args)
    if args.command == "presets":
        return _cmd_presets(args)
    if args.command == "milne":
        return _cmd_milne(args)
    return 2


def _load(args):
    from .config import ConfigError, parse_config

    try:
        cfg = parse_config(args.config, strict=args.strict)
    except ConfigError as e:
        for p in e.problems:
            print(f"config error: {p}", file=sys.stderr)
        return None
    return cfg


def _cmd_run(args) -> int:
    cfg = _load(args)
    if cfg is None:
        return 2
    if args.jobs is not None:
        cfg.jobs = args.jobs
    out = args.out or cfg.out_dir
    try:
        from .experiment import run_experiment

        result = run_experiment(cfg, out_dir=out)
    except Exception as e:  # structured diagnostic, nonzero exit
        print(f"run failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    for name, (ok, detail) in result.checks.items():
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    print(f"artifacts in {out}")
    return result.exit_code


def _cmd_validate(args) -> int:
    cfg = _load(args)
    if cfg is None:
        return 2
    from .phase import build_quadrature
    from .experiment import _build_preset
    from .presets import CompatibilityError, validate_preset

    quad = build_quadrature(cfg.quadrature)
    try:
        preset = _build_preset(cfg, quad)
        info = validate_preset(preset, quad)
    except CompatibilityError as e:
        print(f"incompatible data: {e}", file=sys.stderr)
        return 1
    print(f"config ok: bc={cfg.bc} preset={cfg.preset} epsilons={list(cfg.epsilons)}")
    for k, v in info.items():
        print(f"  {k}: {v}")
    return 0


def _cmd_presets(args) -> int:
    from .phase import build_quadrature
    from .presets import get_preset, preset_names

    quad = build_quadrature(16)
    for name in preset_names():
        p = get_preset(name, quad)
        print(f"{name:18s} [{p.kind}] {p.description}")
    return 0


def _cmd_milne(args) -> int:
    from .config import ConfigError, compile_expr
    from .milne import MilneProblem, solve_milne
    from .phase import build_quadrature

    try:
        rho_fn = compile_expr(args.data, ("mu",))
    except ConfigError as e:
        print(f"bad expression: {e}", file=sys.stderr)
        return 2
    quad = build_quadrature(args.quad)
    sol = solve_milne(
        MilneProblem(
            rho=lambda mu: rho_fn(mu) * np.ones_like(mu),
            quadrature=quad,
            eta_max=args.eta_max,
            cells=args.cells,
        )
    )
    print(f"limit            : {sol.phi_inf!r}")
    print(f"decay rate (raw) : {sol.decay_rate_raw:.4f}")
    print(f"decay rate (cert): {sol.decay_rate:.4f}")
    print(f"relation residual: {sol.residual:.3e}")
    print(f"truncation shift : {sol.truncation_sensitivity:.3e}")
    if args.out:
        import csv
        import os

        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "milne_profile.csv")
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["eta", "mean"] + [f"mu_{m:+.4f}" for m in quad.nodes])
            for j in range(sol.eta.size):
                wr.writerow([repr(float(sol.eta[j])), repr(float(sol.phi_bar[j]))]
                            + [repr(float(v)) for v in sol.phi[j]])
        print(f"profile written to {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
