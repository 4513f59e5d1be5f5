"""Command line subcommands on small configurations."""

from __future__ import annotations

import json

import numpy as np
import pytest

from thinrelax.cli import build_parser, main
from thinrelax.grid import load_field


def _config(tmp_path, cfg: dict):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_parser_requires_subcommand():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_envelope_command(tmp_path):
    out = tmp_path / "env"
    cfg = _config(tmp_path, {"target": [0.0, 0.0], "spacing": 0.125, "radius": 3.0})
    assert main(["envelope", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    print(summary["envelope_value"], summary["weights"])
    assert summary["envelope_value"] == 0.0 and summary["m"] == 1 and summary["problems"] == []
    assert sorted(summary["weights"]) == [0.5, 0.5]
    for name in ("envelope.csv", "decomposition.json", "envelope.png"):
        assert (out / name).stat().st_size > 0


def test_laminate_command(tmp_path):
    out = tmp_path / "lam"
    cfg = _config(tmp_path, {"eps": 0.125, "k": 4, "J": [0.0, 1.0], "spacing": 0.125, "radius": 3.0,
                             "cells_per_period": 4})
    assert main(["laminate", "--config", cfg, "--out", str(out), "--dump-fields"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["corrected_div_max"] <= 1e-12
    fr = summary["fractions"]["fractions"]
    assert abs(fr[0] - fr[1]) <= 1e-12
    y = load_field(out / "y_corrected.npz")
    assert y.geom.resolution == tuple(summary["resolution"])
    assert (out / "plan.json").exists() and (out / "laminate_y.png").exists()


def test_project_command(tmp_path):
    out = tmp_path / "proj"
    cfg = _config(tmp_path, {"resolution": [32, 32], "eps": 0.25, "seed": 3})
    assert main(["project", "--config", cfg, "--out", str(out), "--dump-fields"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["spectral_div_max"] <= 1e-10 and summary["projection_error"] > 0
    assert load_field(out / "projected.npz").geom.resolution == (32, 32)


def test_counterexample_command_exit_code(tmp_path):
    out = tmp_path / "ce"
    cfg = _config(tmp_path, {"schedule": {"eps": [0.25, 0.125]}, "k_policy": {"mode": "fixed", "k": 4}})
    assert main(["counterexample", "--config", cfg, "--out", str(out), "--no-figures"]) == 0
    for name in ("report.csv", "report.json", "gap_vs_eps.dat", "residuals.csv"):
        assert (out / name).exists()
    assert not (out / "gap_vs_eps.png").exists()
    # an unmet threshold flags the row and the exit code turns 1
    cfg = _config(tmp_path, {"schedule": {"eps": [0.25]}, "k_policy": {"mode": "fixed", "k": 1, "tau0": 1e-6}})
    assert main(["counterexample", "--config", cfg, "--out", str(out), "--no-figures"]) == 1


def test_gamma_command(tmp_path):
    out = tmp_path / "gamma"
    cfg = _config(tmp_path, {"density": {"type": "pnorm", "p": 2, "C": 1},
                             "target": {"type": "constant", "value": [0.2, 0.1]},
                             "schedule": {"eps": [0.25, 0.125]}})
    assert main(["gamma", "--config", cfg, "--out", str(out), "--dump-fields"]) == 0
    rows = json.loads((out / "report.json").read_text())["rows"]
    assert len(rows) == 2 and all(abs(r["gap"]) <= r["delta"] for r in rows)
    assert (out / "fields" / "u_eps_01.npz").exists() and (out / "gap_vs_eps.png").exists()
    data = np.loadtxt(out / "gap_vs_eps.dat")
    assert data.shape == (2, 5)
