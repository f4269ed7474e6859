"""End-to-end command-line tests: exit codes, flag precedence, output
files, and the serial determinism gate."""

import os

import numpy as np
import pytest

from octoflow import cli, io


def test_help_exits_zero(capsys):
    assert cli.main(["--help"]) == 0
    assert "mms" in capsys.readouterr().out


def test_no_subcommand_exits_two(capsys):
    assert cli.main([]) == 2


def test_unknown_subcommand_exits_two(capsys):
    assert cli.main(["frobnicate"]) == 2


def test_unknown_flag_exits_two(capsys):
    assert cli.main(["bubble", "--frobnicate", "3"]) == 2


def test_run_missing_config_exits_two(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "missing.toml")]) == 2
    assert "missing.toml" in capsys.readouterr().err


def test_bad_config_exits_two(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("[case]\nname = weir\n")
    assert cli.main(["run", str(path)]) == 2
    assert "unknown case" in capsys.readouterr().err


def test_inconsistent_levels_exit_two(capsys):
    assert cli.main(["bubble", "--max-level", "2"]) == 2
    assert "max_level" in capsys.readouterr().err


def test_flag_precedence_over_config(tmp_path):
    path = tmp_path / "base.cfg"
    path.write_text("[case]\nname = bubble2\n\n[time]\ndt = 0.5\n"
                    "\n[params]\ncn = 0.02\n")
    args = cli._build_parser().parse_args(
        ["bubble", "--config", str(path), "--dt", "0.125"])
    cfg = cli._config_for(args)
    assert cfg.case == "bubble2"  # file wins when no flag
    assert cfg.dt == 0.125  # flag wins over file
    assert cfg.params["cn"] == 0.02
    args = cli._build_parser().parse_args(
        ["bubble", "--config", str(path), "--case", "1", "--cn", "0.04"])
    cfg = cli._config_for(args)
    assert cfg.case == "bubble1"
    assert cfg.params["cn"] == 0.04


def test_atwood_flag_sets_phase_ratios():
    args = cli._build_parser().parse_args(["rt", "--atwood", "0.82"])
    cfg = cli._config_for(args)
    r = (1.0 - 0.82) / (1.0 + 0.82)
    assert cfg.params["rho_minus"] == pytest.approx(r, rel=1e-15)
    assert cfg.params["eta_minus"] == pytest.approx(r, rel=1e-15)


def test_mesh_stats_reports_counts(capsys):
    assert cli.main(["mesh-stats", "--case", "rt", "--min-level", "3",
                     "--max-level", "5"]) == 0
    rows = dict(line.split(",") for line in
                capsys.readouterr().out.strip().splitlines())
    assert rows["case"] == "rt"
    assert int(rows["elements"]) > 0
    assert int(rows["hanging"]) > 0
    total = sum(int(v) for k, v in rows.items() if k.startswith("level_"))
    assert total == int(rows["elements"])


def test_mms_sweep_prints_rate_table(tmp_path, capsys):
    out = tmp_path / "mms"
    assert cli.main(["mms", "--h-sweep", "8,16", "--dt", "0.05",
                     "--t-final", "0.1", "--out-dir", str(out)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "h,v1_err,v1_rate,v2_err,v2_rate,phi_err,phi_rate"
    assert len(lines) == 3
    first = [float(c) for c in lines[1].split(",")]
    second = [float(c) for c in lines[2].split(",")]
    assert first[0] == 0.125 and second[0] == 0.0625
    assert second[5] < first[5]  # phi error shrinks under refinement
    assert (out / "mms_rates.csv").exists()
    assert (out / "mms_convergence.png").exists()


def test_bubble_smoke_writes_outputs(tmp_path):
    out = tmp_path / "bub"
    code = cli.main(["bubble", "--case", "1", "--cn", "0.04",
                     "--min-level", "3", "--max-level", "6",
                     "--dt", "0.01", "--t-final", "0.02",
                     "--out-dir", str(out)])
    assert code == 0
    for name in ("diagnostics.csv", "frame_000000.vtk", "frame_final.vtk",
                 "checkpoint_final.ckpt", "centroid.png",
                 "diagnostics.png", "phase_final.png"):
        assert (out / name).exists(), name
    cols = io.read_diagnostics(str(out / "diagnostics.csv"))
    assert len(cols["t"]) == 2
    assert cols["t"][-1] == pytest.approx(0.02, rel=1e-12)
    assert np.all(np.abs(cols["total_phi_drift"]) <= 1e-10)


def test_rt_smoke_tracks_fronts(tmp_path):
    out = tmp_path / "rt"
    code = cli.main(["rt", "--cn", "0.04", "--min-level", "3",
                     "--max-level", "6", "--dt", "0.01",
                     "--t-final", "0.02", "--out-dir", str(out)])
    assert code == 0
    lines = (out / "fronts.csv").read_text().strip().splitlines()
    assert lines[0] == "t_prime,top,bottom"
    assert len(lines) == 4  # initial + 2 steps
    first = [float(c) for c in lines[1].split(",")]
    last = [float(c) for c in lines[-1].split(",")]
    assert first[0] == 0.0
    assert last[0] == pytest.approx(0.02 * np.sqrt(0.5), rel=1e-12)
    assert 1.8 < last[2] < 2.0 < last[1] < 2.2
    assert (out / "fronts.png").exists()


def test_config_run_matches_flags_and_is_deterministic(tmp_path):
    cfg_text = ("[case]\nname = bubble1\n\n[mesh]\nmin_level = 3\n"
                "max_level = 6\nremesh_interval = 2\n\n[time]\n"
                "dt = 0.01\nt_final = 0.03\n\n[params]\ncn = 0.04\n\n"
                "[output]\nvtk_interval = 2\ncheckpoint_interval = 2\n")
    path = tmp_path / "case.cfg"
    path.write_text(cfg_text)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", str(path), "--out-dir", str(out_a)]) == 0
    assert cli.main(["run", str(path), "--out-dir", str(out_b)]) == 0
    bytes_a = (out_a / "diagnostics.csv").read_bytes()
    assert bytes_a == (out_b / "diagnostics.csv").read_bytes()
    assert (out_a / "frame_000002.vtk").exists()
    assert (out_a / "checkpoint_000002.ckpt").exists()


def test_solver_failure_exits_one_with_checkpoint(tmp_path, capsys):
    cfg_text = ("[case]\nname = bubble1\n\n[mesh]\nmin_level = 3\n"
                "max_level = 6\n\n[time]\ndt = 0.01\nt_final = 0.05\n\n"
                "[params]\ncn = 0.04\n\n[solver.ns]\nrel_tol = 1e-30\n"
                "abs_tol = 0.0\nmax_iters = 1\n")
    path = tmp_path / "doomed.cfg"
    path.write_text(cfg_text)
    out = tmp_path / "doomed"
    assert cli.main(["run", str(path), "--out-dir", str(out)]) == 1
    assert "checkpoint written" in capsys.readouterr().err
    mesh, state = io.checkpoint_load(str(out / "failure.ckpt"))
    assert state.t == 0.0  # last good state is the initial one
    assert np.all(np.isfinite(state.phi))
    assert mesh.nnodes == len(state.phi)
