import os
import subprocess
import sys

import numpy as np
import pytest

from difflab.cli import main as cli_main

SMOKE = """
[experiment]
bc = "{bc}"
preset = "{preset}"
epsilons = [0.1, 0.05, 0.025]
checks = [{checks}]
out_dir = "{out}"

[grid]
cells = 40

[time]
final = 0.08
"""


def _write(tmp_path, name, **kw):
    p = tmp_path / name
    p.write_text(SMOKE.format(**kw))
    return str(p)


def test_cli_presets_list(capsys):
    assert cli_main(["presets", "list"]) == 0
    out = capsys.readouterr().out
    assert "inflow-layered" in out and "diffuse-cosine" in out


def test_cli_validate_good_and_bad(tmp_path, capsys):
    good = _write(tmp_path, "good.toml", bc="inflow", preset="inflow-layered",
                  checks='"invariants"', out=tmp_path / "o")
    assert cli_main(["validate", good]) == 0
    bad = tmp_path / "bad.toml"
    bad.write_text('[experiment]\nbc = "inflow"\npreset = "nope"\n')
    assert cli_main(["validate", str(bad)]) == 2


def test_cli_milne_solve(tmp_path, capsys):
    code = cli_main(["milne", "--data", "mu", "--cells", "300", "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "limit" in out
    assert (tmp_path / "milne_profile.csv").exists()
    val = [l for l in out.splitlines() if l.startswith("limit")][0].split(":")[1]
    assert abs(float(val) - 0.70961) <= 1e-3


def test_cli_milne_rejects_bad_expression(capsys):
    assert cli_main(["milne", "--data", "__import__('os')"]) == 2


def test_run_constant_preset_all_quiet(tmp_path):
    cfg = _write(tmp_path, "quiet.toml", bc="inflow", preset="constant",
                 checks='"invariants"', out=tmp_path / "out")
    code = cli_main(["run", cfg])
    assert code == 0
    csv_path = tmp_path / "out" / "remainder.csv"
    lines = csv_path.read_text().splitlines()
    assert lines[0].startswith("epsilon,norm_sup_t_l2,norm_rbar,norm_fluct,norm_trace")
    import csv as csvmod

    rows = list(csvmod.DictReader(csv_path.open()))
    for row in rows:
        assert float(row["norm_rbar"]) <= 1e-9
        assert float(row["norm_u_minus_U0"]) <= 1e-9
    assert (tmp_path / "out" / "plot_sweep.py").exists()
    assert (tmp_path / "out" / "rates.csv").exists()
    assert (tmp_path / "out" / "summary.txt").exists()


def test_run_incompatible_inline_data_fails_with_diagnostic(tmp_path, capsys):
    body = """
[experiment]
bc = "diffuse"
preset = "diffuse-cosine"
epsilons = [0.1, 0.05, 0.025]
out_dir = "%s"

[data]
u0 = "1 + 0*x*mu"
amp_time = "1-exp(-t)"
amp_dtime = "exp(-t)"
h_mu = "abs(mu)"
""" % (tmp_path / "out")
    p = tmp_path / "bad.toml"
    p.write_text(body)
    code = cli_main(["run", str(p)])
    assert code == 3
    err = capsys.readouterr().err
    assert "zero incoming flux" in err


def test_serial_parallel_bitwise_identical(tmp_path):
    cfg1 = _write(tmp_path, "d1.toml", bc="diffuse", preset="diffuse-cosine",
                  checks='"invariants"', out=tmp_path / "o1")
    assert cli_main(["run", cfg1]) == 0
    cfg2 = _write(tmp_path, "d2.toml", bc="diffuse", preset="diffuse-cosine",
                  checks='"invariants"', out=tmp_path / "o2")
    assert cli_main(["run", cfg2, "--jobs", "3"]) == 0
    b1 = (tmp_path / "o1" / "remainder.csv").read_bytes()
    b2 = (tmp_path / "o2" / "remainder.csv").read_bytes()
    assert b1 == b2


def test_estimate_constants_do_not_blow_up(tmp_path):
    # the smallest admissible inequality constants may shrink as the
    # remainder beats its bound, but must never grow along the sweep
    cfg = _write(tmp_path, "e.toml", bc="inflow", preset="inflow-layered",
                 checks='"invariants"', out=tmp_path / "est")
    assert cli_main(["run", cfg]) == 0
    import csv as csvmod

    rows = list(csvmod.DictReader((tmp_path / "est" / "estimates.csv").open()))
    for kind in ("energy", "kernel"):
        cs = [float(r["smallest_C"]) for r in rows if r["inequality"] == kind]
        assert max(cs) <= 2.0 * cs[0] + 1e-300, f"{kind} constant grows along the sweep: {cs}"


def test_rerun_bitwise_identical(tmp_path):
    cfg1 = _write(tmp_path, "r1.toml", bc="specular", preset="specular-quiet",
                  checks='"invariants"', out=tmp_path / "r1")
    cfg2 = _write(tmp_path, "r2.toml", bc="specular", preset="specular-quiet",
                  checks='"invariants"', out=tmp_path / "r2")
    assert cli_main(["run", cfg1]) == 0
    assert cli_main(["run", cfg2]) == 0
    assert (tmp_path / "r1" / "remainder.csv").read_bytes() == (tmp_path / "r2" / "remainder.csv").read_bytes()


def test_entry_point_runs_as_module():
    proc = subprocess.run(
        [sys.executable, "-m", "difflab.cli", "presets", "list"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "specular-quiet" in proc.stdout
