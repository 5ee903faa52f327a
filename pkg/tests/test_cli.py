import json

import pytest

from fractalwalk.cli import COMMANDS, main

BASE = ["--ifs", "builtin:gasket2", "--levels", "5", "--samples", "40", "--seed", "3"]


def run(tmp_path, *args):
    return main(list(args) + ["--out", str(tmp_path)])


def test_build_outputs(tmp_path):
    assert run(tmp_path, "build", "--ifs", "builtin:gasket2", "--levels", "4") == 0
    dot = (tmp_path / "tree.dot").read_text()
    assert dot.startswith("// ") and "config_hash" in dot
    stats = (tmp_path / "build_stats.txt").read_text()
    assert "horizontal_geodesic_bound_M" in stats and "delta_estimate" in stats


def test_build_interval_report(tmp_path, capsys):
    assert run(tmp_path, "build", "--ifs", "builtin:interval", "--gamma", "0.1", "--levels", "8") == 0
    out = capsys.readouterr().out
    assert "horizontal_geodesic_bound_M: 5" in out


@pytest.mark.parametrize("args", [
    ["build", "--gamma", "0"],
    ["build", "--ifs", "builtin:koch"],
    ["walk", "--lambda", "1.5"],
    ["build", "--weights", "0.5,0.5"],
    ["hitting", "--ifs", "builtin:carpet", "--levels", "4", "--weights", "0.3,0.1,0.1,0.1,0.1,0.1,0.1,0.1"],
    ["nonsense"],
])
def test_config_errors_exit_2(tmp_path, args):
    assert run(tmp_path, *args) == 2


def test_verify_default_passes(tmp_path):
    assert run(tmp_path, "verify", *BASE) == 0
    text = (tmp_path / "verify.txt").read_text()
    assert "FAIL" not in text


def test_verify_corrupted_conductance_fails(tmp_path, capsys):
    assert run(tmp_path, "verify", *BASE, "--corrupt-conductance", "1,0,2") == 1
    assert "FAIL reversibility" in capsys.readouterr().out


def test_verify_slow_lambda_warns(tmp_path, capsys):
    assert run(tmp_path, "verify", "--lambda", "0.999", "--levels", "6", "--samples", "30") == 0
    assert "slow convergence" in capsys.readouterr().out


def test_verify_acceptance_subset(tmp_path, capsys):
    assert run(tmp_path, "verify", "--acceptance", "--criteria", "2,9") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [ln.split(":")[0] for ln in lines] == ["criterion 2", "criterion 9"]
    assert run(tmp_path, "verify", "--acceptance", "--criteria", "12") == 2


@pytest.mark.parametrize("cmd", COMMANDS)
def test_outputs_are_byte_identical(tmp_path, cmd):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([cmd, *BASE, "--out", str(a)]) == 0
    assert main([cmd, *BASE, "--out", str(b)]) == 0
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir()) and files
    for name in files:
        data = (a / name).read_bytes()
        assert data == (b / name).read_bytes()
        assert b"config_hash: " in data


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"ifs": "builtin:interval", "levels": 4, "lambda": 0.5, "samples": 10}))
    assert main(["walk", "--config", str(cfg), "--levels", "6", "--out", str(tmp_path)]) == 0
    head = (tmp_path / "walk.csv").read_text()
    assert "# levels: 6" in head and "# ifs: interval" in head and "# lambda: 0.5" in head
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"colour": "red"}))
    assert main(["walk", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_seed_changes_walk(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["walk", *BASE, "--out", str(a)])
    main(["walk", *BASE[:-1], "4", "--out", str(b)])
    assert (a / "walk.csv").read_bytes() != (b / "walk.csv").read_bytes()
