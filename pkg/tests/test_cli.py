import json

import pytest

from orbifold_ma.cli import COMMANDS, build_parser, main
from orbifold_ma.config import RunConfig, dump_config


@pytest.fixture
def small_config(tmp_path):
    cfg = RunConfig(resolution=32, t_list=[1.0, 0.5], beta_list=[16.0, 32.0, 64.0, 128.0],
                    cert_betas=[64.0], random_members=5, level_count=64, v_samples=2)
    path = tmp_path / "small.toml"
    path.write_text(dump_config(cfg))
    return path


def test_parser_has_every_command():
    parser = build_parser()
    for name in ("grid", "ma-solve", "envelope", "alpha", "degiorgi", "linfty-check", "mv-check"):
        assert name in COMMANDS
        args = parser.parse_args([name, "--out", "x", "--seed", "3", "--tol", "1e-8"])
        assert (args.out, args.seed, args.tol) == ("x", 3, 1e-8)


@pytest.mark.parametrize("command", ["grid", "ma-solve", "alpha", "degiorgi"])
def test_commands_pass(command, small_config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main([command, str(small_config), "--out", str(out), "--mkdir"]) == 0
    assert "PASS" in capsys.readouterr().out
    stem = command.replace("-", "_")
    doc = json.loads((out / f"{stem}_report.json").read_text())
    assert doc["passed"] and (out / f"{stem}_timings.json").is_file()


def test_overrides_applied(small_config, tmp_path):
    out = tmp_path / "o"
    out.mkdir()
    assert main(["grid", str(small_config), "--out", str(out), "--seed", "9", "--tol", "1e-8"]) == 0
    cfg = json.loads((out / "grid_report.json").read_text())["config"]
    assert cfg["seed"] == 9 and cfg["tol"] == 1e-8 and cfg["out_dir"] == str(out)


def test_missing_out_dir_exit_2(small_config, tmp_path):
    assert main(["grid", str(small_config), "--out", str(tmp_path / "none")]) == 2
    assert not (tmp_path / "none").exists()


def test_bad_config_exit_2(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("bogus = 1\n")
    assert main(["grid", str(path), "--out", str(tmp_path)]) == 2
    assert main(["grid", str(tmp_path / "absent.toml"), "--out", str(tmp_path)]) == 2


def test_failing_assertion_exit_1(tmp_path):
    path = tmp_path / "c.toml"
    # tol far below the rounding floor: the residual assertion fails
    path.write_text(dump_config(RunConfig(resolution=16, t_list=[1.0], max_iter=2, tol=1e-16)))
    assert main(["ma-solve", str(path), "--out", str(tmp_path)]) == 1
    doc = json.loads((tmp_path / "ma_solve_report.json").read_text())
    assert doc["passed"] is False
