import json
import subprocess
import sys

import pytest
from test_scenario import small_spec

from wimarket.cli import main


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(small_spec().to_dict()))
    return path


def test_validate_ok(config, capsys):
    assert main(["validate", "--config", str(config)]) == 0
    assert capsys.readouterr().out.startswith("ok: small")


def test_validate_rejects_unknown_key(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"population": 10, "typo_key": 1}))
    assert main(["validate", "--config", str(path)]) == 1
    assert "typo_key" in capsys.readouterr().err


def test_validate_rejects_broken_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{")
    assert main(["validate", "--config", str(path)]) == 1


def test_run_then_compare(config, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(config), "--out", str(a), "--points", "2"]) == 0
    assert main(["run", "--config", str(config), "--out", str(b), "--points", "2", "--jobs", "2"]) == 0
    # concurrency does not change results
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    assert json.loads((a / "config.json").read_text())["name"] == "small"
    capsys.readouterr()
    assert main(["compare", "--baseline", str(a), "--variant", str(b), "--out", str(tmp_path / "gain.csv")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("lambda_bar,") and len(out.splitlines()) == 3
    assert (tmp_path / "gain.csv").read_text() == out


def test_seed_override_changes_population(config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", str(config), "--out", str(a), "--points", "1"])
    main(["run", "--config", str(config), "--out", str(b), "--points", "1", "--seed", "7"])
    assert json.loads((b / "config.json").read_text())["seed"] == 7
    assert (a / "point_000.json").read_text() != (b / "point_000.json").read_text()


def test_missing_directory_is_an_error(tmp_path, capsys):
    assert main(["compare", "--baseline", str(tmp_path / "x"), "--variant", str(tmp_path / "y")]) == 2


def test_console_module_runs(config):
    out = subprocess.run([sys.executable, "-m", "wimarket.cli", "validate", "--config", str(config)],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "ok" in out.stdout
