import subprocess
import sys

import numpy as np
import pytest

from anett import cli, grid, net
from anett.solver import soft_threshold


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_no_arguments_prints_usage(capsys):
    code, _, err = run([], capsys)
    assert code != 0 and "usage" in err


def test_unknown_subcommand(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_unknown_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["inspect", "--nope"])
    assert exc.value.code != 0


def test_benchmark_missing_model(tmp_path, capsys):
    code, _, err = run(["benchmark", "--scenario", "noise-free", "--data", str(tmp_path),
                        "--ae", str(tmp_path / "missing.net"), "--adapter", str(tmp_path / "a.net")], capsys)
    assert code == 1
    assert "model file not found" in err
    assert len(err.strip().splitlines()) == 1


def test_reconstruct_identity_fixture(tmp_path, capsys):
    y = np.random.default_rng(8).normal(size=(12, 12))
    grid.write_grid(y, tmp_path / "y.grd")
    code, _, _ = run(["reconstruct", "--input", str(tmp_path / "y.grd"), "--out", str(tmp_path / "u.grd"),
                      "--operator", "identity", "--prior", "identity", "--alpha", "0.4", "--stepsize", "0.2",
                      "--outer", "200"], capsys)
    assert code == 0
    u = grid.read_grid(tmp_path / "u.grd")
    assert np.max(np.abs(u - soft_threshold(grid.read_grid(tmp_path / "y.grd"), 0.2))) <= 1e-4
    assert (tmp_path / "u.log").read_text().startswith("iteration objective")


def test_config_file_and_flag_precedence(tmp_path, capsys):
    y = np.random.default_rng(9).normal(size=(8, 8))
    grid.write_grid(y, tmp_path / "y.grd")
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# identity fixture\ninput = {tmp_path / 'y.grd'}\noperator = identity\nprior = identity\n"
                   "alpha = 5.0\nstepsize = 0.2\nouter = 200\n")
    code, _, _ = run(["reconstruct", "--config", str(cfg), "--alpha", "0.6", "--out", str(tmp_path / "u.grd")], capsys)
    assert code == 0
    u = grid.read_grid(tmp_path / "u.grd")
    ref = grid.read_grid(tmp_path / "y.grd")
    assert np.max(np.abs(u - soft_threshold(ref, 0.3))) <= 1e-4


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    code, _, err = run(["inspect", "--config", str(cfg)], capsys)
    assert code == 1 and "unknown option 'colour'" in err


def test_config_missing_file(tmp_path, capsys):
    code, _, err = run(["inspect", "--config", str(tmp_path / "none.cfg")], capsys)
    assert code == 1 and "config file not found" in err


def test_inspect_summaries(tmp_path, capsys):
    net.save_params(net.init_params(net.DEFAULT_AE_ARCH, seed=5), tmp_path / "ae.net")
    grid.write_grid(np.zeros((4, 6)), tmp_path / "z.grd")
    code, out, _ = run(["inspect", "--model", str(tmp_path / "ae.net"), "--grid", str(tmp_path / "z.grd"),
                        "--scenario", "noisy-5pct"], capsys)
    assert code == 0
    assert '"kind": "autoencoder"' in out
    assert "seed 5" in out
    assert "alpha 0.0005" in out
    assert "(4, 6)" in out


def test_make_data_respects_env_output_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("ANETT_OUTPUT_DIR", str(tmp_path / "env"))
    code, _, _ = run(["make-data", "--train", "1", "--val", "1", "--test", "1", "--n", "16"], capsys)
    assert code == 0
    assert (tmp_path / "env" / "data" / "manifest.txt").exists()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "anett"], capture_output=True, text=True)
    assert proc.returncode != 0 and "usage" in proc.stderr
