"""Experiment configuration: a small TOML dialect with strict validation.

Sections and keys (everything optional except the sweep):

    [experiment]  bc, preset, epsilons, checks, out_dir, seed, jobs
    [grid]        cells, grading, layer_cells, ratio, quadrature
    [time]        final, cfl, initial_substeps
    [solver]      scheme, flux
    [milne]       eta_max, cells
    [data]        u0, amp_time, amp_dtime, g_mu_left, g_mu_right / h_mu
                  (inline direction/time expressions replacing the preset)

Inline expressions may use x, mu, t, pi and the numpy math names; they are
evaluated with an empty builtin namespace.
"""

from __future__ import annotations

import math
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .transport import BC_KINDS

KNOWN_CHECKS = (
    "rate-main",
    "lemma-magnitudes",
    "remainder-bounded",
    "invariants",
    "identities",
    "budget",
)


class ConfigError(ValueError):
    """Carries the aggregated list of configuration problems."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class ExperimentConfig:
    bc: str = "inflow"
    preset: str = "inflow-layered"
    epsilons: tuple = (0.1, 0.05, 0.025, 0.0125)
    checks: tuple = ("rate-main", "remainder-bounded", "invariants")
    out_dir: str = "difflab-out"
    seed: int = 0
    jobs: int = 1
    cells: int = 200
    grading: bool = True
    layer_cells: int = 8
    ratio: float = 1.3
    quadrature: int = 16
    final_time: float = 0.5
    cfl: float = 1.0
    initial_substeps: bool = True
    scheme: str = "direct"
    flux: str = "weighted-diamond"
    milne_eta_max: float = 30.0
    milne_cells: int = 400
    identity_eps: float = 0.05
    identity_levels: int = 3
    identity_base_cells: int = 60
    data_exprs: Optional[dict] = None
    amplitude: float = 1.0


_SECTION_KEYS = {
    "experiment": {"bc", "preset", "epsilons", "checks", "out_dir", "seed", "jobs", "amplitude"},
    "grid": {"cells", "grading", "layer_cells", "ratio", "quadrature"},
    "time": {"final", "cfl", "initial_substeps"},
    "solver": {"scheme", "flux"},
    "milne": {"eta_max", "cells"},
    "identity": {"eps", "levels", "base_cells"},
    "data": {"u0", "amp_time", "amp_dtime", "g_mu_left", "g_mu_right", "h_mu"},
}

_RENAME = {
    ("time", "final"): "final_time",
    ("milne", "eta_max"): "milne_eta_max",
    ("milne", "cells"): "milne_cells",
    ("identity", "eps"): "identity_eps",
    ("identity", "levels"): "identity_levels",
    ("identity", "base_cells"): "identity_base_cells",
}

_EXPR_NAMES = {
    "pi": math.pi,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
    "log": np.log,
    "where": np.where,
    "sign": np.sign,
}


def compile_expr(expr: str, variables: tuple):
    """Compile a whitelisted math expression of the given variables."""
    code = compile(expr, "<config>", "eval")
    for name in code.co_names:
        if name not in _EXPR_NAMES and name not in variables:
            raise ConfigError([f"expression uses unknown name {name!r}: {expr!r}"])

    def fn(*args):
        env = dict(_EXPR_NAMES)
        env.update(zip(variables, args))
        out = eval(code, {"__builtins__": {}}, env)
        return out

    return fn


def default_out_dir() -> str:
    return os.environ.get("DIFFLAB_OUT", "difflab-out")


def parse_config(path: str, strict: bool = False) -> ExperimentConfig:
    """Read and validate a configuration file; aggregate every problem."""
    problems = []
    try:
        with open(path, "rb") as f:
            raw = _toml.load(f)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"])
    except _toml.TOMLDecodeError as e:
        raise ConfigError([f"config is not valid TOML: {e}"])

    cfg = ExperimentConfig(out_dir=default_out_dir())
    for section, content in raw.items():
        if section not in _SECTION_KEYS:
            msg = f"unknown section [{section}]"
            if strict:
                problems.append(msg)
            continue
        if not isinstance(content, dict):
            problems.append(f"section [{section}] must hold key = value pairs")
            continue
        for key, value in content.items():
            if key not in _SECTION_KEYS[section]:
                if strict:
                    problems.append(f"unknown key {key!r} in [{section}]")
                continue
            if section == "data":
                if cfg.data_exprs is None:
                    cfg.data_exprs = {}
                cfg.data_exprs[key] = value
                continue
            attr = _RENAME.get((section, key), key)
            setattr(cfg, attr, tuple(value) if isinstance(value, list) else value)

    problems.extend(validate_config(cfg))
    if problems:
        raise ConfigError(problems)
    return cfg


def validate_config(cfg: ExperimentConfig) -> list:
    problems = []
    if cfg.bc not in BC_KINDS:
        problems.append(f"bc must be one of {BC_KINDS}, got {cfg.bc!r}")
    eps = list(cfg.epsilons)
    if len(eps) < 3:
        problems.append(f"the sweep needs at least 3 epsilon values for rate fits, got {len(eps)}")
    if any(not (0 < e <= 0.5) for e in eps):
        problems.append("every epsilon must lie in (0, 0.5]")
    if list(eps) != sorted(eps, reverse=True) or len(set(eps)) != len(eps):
        problems.append("epsilons must be strictly decreasing")
    for c in cfg.checks:
        if c not in KNOWN_CHECKS:
            problems.append(f"unknown check {c!r}; known: {KNOWN_CHECKS}")
    if cfg.quadrature < 2 or cfg.quadrature % 2:
        problems.append("quadrature order must be an even integer >= 2")
    if cfg.cells < 8:
        problems.append("need at least 8 cells")
    if cfg.final_time <= 0 or cfg.cfl <= 0:
        problems.append("final time and cfl must be positive")
    if cfg.scheme not in ("direct", "source-iteration"):
        problems.append(f"unknown solver scheme {cfg.scheme!r}")
    if cfg.flux not in ("weighted-diamond", "upwind"):
        problems.append(f"unknown flux {cfg.flux!r}")
    if cfg.milne_eta_max < 20:
        problems.append("milne eta_max must be >= 20")
    if cfg.jobs < 1:
        problems.append("jobs must be >= 1")
    from .presets import preset_names

    if cfg.data_exprs is None and cfg.preset not in preset_names():
        problems.append(f"unknown preset {cfg.preset!r}; known: {preset_names()}")
    if cfg.data_exprs is not None:
        needed = {"u0", "amp_time", "amp_dtime"}
        missing = needed - set(cfg.data_exprs)
        if missing:
            problems.append(f"inline data needs keys {sorted(missing)}")
        if cfg.bc == "inflow" and not {"g_mu_left", "g_mu_right"} <= set(cfg.data_exprs):
            problems.append("inline in-flow data needs g_mu_left and g_mu_right")
        if cfg.bc in ("diffuse", "specular") and "h_mu" not in cfg.data_exprs:
            problems.append("inline reflecting data needs h_mu")
    return problems
