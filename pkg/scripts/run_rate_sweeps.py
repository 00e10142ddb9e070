#!/usr/bin/env python3
"""Run the three production rate sweeps and print the fitted slopes.

This drives the same harness as ``difflab run`` with the catalog presets at
the default resolution; expect a few minutes total.  Artifacts land under
the output directory (one subfolder per boundary kind).

Usage: python scripts/run_rate_sweeps.py [outdir]
"""

import sys
import time

from difflab.config import ExperimentConfig
from difflab.experiment import run_experiment


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "sweep-out"
    jobs = []
    jobs.append(
        ExperimentConfig(
            bc="inflow",
            preset="inflow-layered",
            checks=("rate-main", "lemma-magnitudes", "remainder-bounded", "invariants"),
            out_dir=f"{out}/inflow",
        )
    )
    jobs.append(
        ExperimentConfig(
            bc="diffuse",
            preset="diffuse-cosine",
            checks=("rate-main", "invariants"),
            out_dir=f"{out}/diffuse",
        )
    )
    jobs.append(
        ExperimentConfig(
            bc="specular",
            preset="specular-quiet",
            checks=("rate-main", "invariants"),
            out_dir=f"{out}/specular",
        )
    )
    worst = 0
    for cfg in jobs:
        t0 = time.time()
        result = run_experiment(cfg)
        print(f"== {cfg.bc} ({cfg.preset}), {time.time() - t0:.0f}s ==")
        for name, slope, se, lo, hi, ok in result.rates:
            band = f"[{lo}, {hi}]" if hi is not None else f">= {lo}"
            print(f"  {name:22s} slope {slope:+.3f} +- {se:.3f}  target {band}  {'ok' if ok else 'MISS'}")
        for name, (ok, detail) in result.checks.items():
            print(f"  [{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        worst = max(worst, result.exit_code)
    print(f"\nartifacts under {out}/")
    return worst


if __name__ == "__main__":
    raise SystemExit(main())
