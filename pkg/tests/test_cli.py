import numpy as np
import pytest

from battery_ppo import cli, data


SMALL = """data.length = 200
split.n_train = 100
split.n_val = 50
split.n_test = 50
policy.hidden_size = 3
ppo.epochs_per_update = 1
run.max_updates = 2
run.patience = 1
run.cases = 1,3
run.seeds = 0
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text(SMALL)
    return p


def test_synth_then_oracle(tmp_path, capsys):
    out = tmp_path / "p.csv"
    assert cli.main(["synth", "--length", "12", "--seed", "3", "--out", str(out)]) == 0
    assert len(data.load_csv(out)) == 12
    assert cli.main(["oracle", "--data", str(out), "--soc-grid", "9", "--action-grid", "5"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("profit_usd ")
    assert len(lines[2].split()) == 13


def test_train_and_evaluate(tmp_path, cfg_file, capsys):
    out = tmp_path / "res"
    assert cli.main(["train", "--config", str(cfg_file), "--case", "3", "--seed", "1", "--out", str(out)]) == 0
    assert (out / "metrics.csv").exists() and (out / "trajectory_3_1.csv").exists()
    assert not (out / "curve_1_1.csv").exists()
    series = data.synth_prices(30, 0)
    csv_path = tmp_path / "e.csv"
    data.write_csv(series, csv_path)
    capsys.readouterr()
    traj = tmp_path / "t.csv"
    assert cli.main(["evaluate", "--checkpoint", str(out / "checkpoint_3_1.bin"), "--data", str(csv_path),
                     "--trajectory", str(traj)]) == 0
    text = capsys.readouterr().out
    assert "total_profit" in text
    assert len(traj.read_text().splitlines()) == 31


def test_exit_codes(tmp_path, cfg_file):
    bad_cfg = tmp_path / "bad.txt"
    bad_cfg.write_text("ppo.gamma = 7\n")
    assert cli.main(["train", "--config", str(bad_cfg)]) == cli.EXIT_CONFIG
    bad_csv = tmp_path / "bad.csv"
    bad_csv.write_text("timestamp,price_usd_per_mwh\n2017-01-01T00:00:00,x\n")
    assert cli.main(["oracle", "--data", str(bad_csv)]) == cli.EXIT_DATA
    assert cli.main(["oracle", "--data", str(tmp_path / "none.csv")]) == cli.EXIT_DATA
    short = tmp_path / "cfg_short.txt"
    short.write_text(SMALL + "data.length = 50\n")
    assert cli.main(["train", "--config", str(short), "--out", str(tmp_path / "o")]) == cli.EXIT_DATA


def test_training_failure_exit_code(tmp_path, cfg_file, monkeypatch):
    from battery_ppo import ppo
    from battery_ppo.errors import TrainingFailure

    def boom(*a, **k):
        raise TrainingFailure("diverged")

    monkeypatch.setattr(ppo, "update", boom)
    assert cli.main(["train", "--config", str(cfg_file), "--out", str(tmp_path / "f")]) == cli.EXIT_TRAINING
    assert "failed" in (tmp_path / "f" / "metrics.csv").read_text()


def test_oracle_guard_is_a_config_error(tmp_path):
    out = tmp_path / "p.csv"
    cli.main(["synth", "--length", "50", "--seed", "0", "--out", str(out)])
    assert cli.main(["oracle", "--data", str(out), "--guard", "10"]) == cli.EXIT_CONFIG
