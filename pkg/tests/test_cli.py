import json

import pytest

from isac_stackelberg.cli import main


@pytest.fixture(scope="module")
def cache_file(tmp_path_factory, desk_cache):
    p = tmp_path_factory.mktemp("cache") / "cache.json"
    p.write_text(json.dumps(desk_cache.to_json()))
    return p


def test_validate_config(tmp_path, capsys):
    assert main(["validate-config", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "scenario.toml").exists()
    assert main(["validate-config", "--scenario", str(tmp_path / "scenario.toml"), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "scenario.toml").read_text() == (tmp_path / "scenario.toml").read_text()


def test_validate_config_rejects_bad_file(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('profile = "desk"\n[game]\nlam = 2.0\n')
    assert main(["validate-config", "--scenario", str(bad), "--out", str(tmp_path)]) == 1


def test_solve_follower(tmp_path, capsys):
    assert main(["solve-follower", "--cell", "0", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "follower.json").read_text())
    assert summary["verified"] and summary["position"] == [-100.0, -100.0, 40.0]
    assert (tmp_path / "sca_trace.csv").read_text().startswith("iteration,")


def test_sweep_cnr(tmp_path, capsys):
    assert main(["sweep-cnr", "--cnr=-inf,0", "--out", str(tmp_path)]) == 0
    assert len((tmp_path / "cnr_sweep.csv").read_text().splitlines()) == 5
    assert "ratio=" in capsys.readouterr().out


def test_train_evaluate_oracle(tmp_path, cache_file, capsys):
    run = tmp_path / "run"
    assert main(["train", "--cache", str(cache_file), "--episodes", "3", "--out", str(run)]) == 0
    for name in ("manifest.json", "stats.csv", "trajectory.csv", "follower_cells.csv", "checkpoint.json"):
        assert (run / name).exists()
    assert main(["train", "--cache", str(cache_file), "--episodes", "3", "--min-goal-rate", "1.01",
                 "--out", str(tmp_path / "strict")]) == 1
    assert main(["evaluate", "--checkpoint", str(run / "checkpoint.json"), "--cache", str(cache_file),
                 "--out", str(tmp_path / "eval")]) == 0
    assert (tmp_path / "eval" / "trajectory.csv").read_text() == (run / "trajectory.csv").read_text()
    assert main(["oracle", "--horizon", "2", "--cache", str(cache_file), "--out", str(tmp_path / "o")]) == 0
    assert len(json.loads((tmp_path / "o" / "oracle.json").read_text())["actions"]) <= 2


def test_train_baseline(tmp_path, cache_file):
    assert main(["train", "--baseline", "--cache", str(cache_file), "--episodes", "2", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["scheme"] == "baseline"


def test_unknown_command():
    with pytest.raises(SystemExit):
        main(["fly"])
