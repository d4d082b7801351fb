import numpy as np
import pytest

from graphwcs import cli, evaluation, report, trainer
from graphwcs.env import NumericalAbort
from graphwcs.scenarios import ScenarioConfig, format_config


@pytest.fixture
def tiny_config(tmp_path):
    cfg = ScenarioConfig.defaults("adhoc", m=4, T_train=8, T_eval=12, E_IL=2, E_RL=3, reps=2, seed=11)
    path = tmp_path / "tiny.cfg"
    path.write_text(format_config(cfg))
    return path


def test_usage_errors(capsys):
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["train"]) == cli.EXIT_USAGE
    assert cli.main(["eval", "--config", "x", "--baselines", "oracle"]) == cli.EXIT_USAGE
    assert cli.main(["transfer", "--checkpoint", "c", "--sizes", "0"]) == cli.EXIT_USAGE


def test_config_errors(tmp_path, tiny_config):
    assert cli.main(["train", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.cfg"
    bad.write_text("kind = adhoc\nlearning_rate = 3\n")
    assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    garbage = tmp_path / "ckpt.txt"
    garbage.write_text("not a checkpoint\n")
    assert cli.main(["eval", "--config", str(tiny_config), "--checkpoint", str(garbage),
                     "--out", str(tmp_path), "--no-plots"]) == cli.EXIT_CONFIG


def test_numerical_abort_exit(monkeypatch, tmp_path, tiny_config):
    def boom(*a, **k):
        raise NumericalAbort("state overflow")
    monkeypatch.setattr(trainer, "train", boom)
    assert cli.main(["train", "--config", str(tiny_config), "--out", str(tmp_path)]) == cli.EXIT_NUMERICAL


def test_train_writes_reproducible_outputs(tmp_path, tiny_config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["train", "--config", str(tiny_config), "--out", str(a)]) == 0
    assert cli.main(["train", "--config", str(tiny_config), "--out", str(b), "--no-plots"]) == 0
    for name in ("train.csv", "dagger.csv", "checkpoint.txt", "config.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "train.png").stat().st_size > 0 and (a / "dagger.png").exists()
    assert not (b / "train.png").exists()
    raw = (a / "train.csv").read_bytes()
    assert b"\r" not in raw
    header, rows = report.read_csv(a / "train.csv")
    assert tuple(header) == trainer.LOG_HEADER and len(rows) == 3
    assert all(r[-1] == "0" for r in rows)  # wall_ms without --timing


def test_single_rl_episode_row(tmp_path):
    cfg = ScenarioConfig.defaults("adhoc", m=3, T_train=6, E_IL=0, E_RL=1)
    path = tmp_path / "one.cfg"
    path.write_text(format_config(cfg))
    assert cli.main(["train", "--config", str(path), "--out", str(tmp_path), "--no-dagger", "--no-plots"]) == 0
    _, rows = report.read_csv(tmp_path / "train.csv")
    assert len(rows) == 1 and not (tmp_path / "dagger.csv").exists()


def test_float_format_round_trips():
    for v in (0.1, 1 / 3, 2.5e-310, -7.000000000000001, 1e300):
        s = report.fmt(v)
        assert float(s) == v and len(s.lstrip("-").split("e")[0].replace(".", "").lstrip("0")) <= 17
    assert report.fmt(np.float64(1 / 3)) == "0.33333333333333331"
    assert report.fmt(True) == "true" and report.fmt(np.int64(4)) == "4"


def test_eval_and_transfer_agree_at_training_size(tmp_path, tiny_config):
    assert cli.main(["train", "--config", str(tiny_config), "--out", str(tmp_path), "--no-plots"]) == 0
    ckpt = str(tmp_path / "checkpoint.txt")
    assert cli.main(["eval", "--config", str(tiny_config), "--checkpoint", ckpt, "--out", str(tmp_path),
                     "--baselines", "equal_power,random_access"]) == 0
    header, ev = report.read_csv(tmp_path / "eval.csv")
    assert tuple(header) == evaluation.EVAL_HEADER
    assert [r[0] for r in ev] == ["regnn", "equal_power", "random_access"]
    assert (tmp_path / "eval.png").exists()
    assert cli.main(["transfer", "--config", str(tiny_config), "--checkpoint", ckpt, "--sizes", "4,9",
                     "--baselines", "equal_power,random_access", "--out", str(tmp_path)]) == 0
    header, tr = report.read_csv(tmp_path / "transfer.csv")
    assert tuple(header) == cli.TRANSFER_HEADER
    assert [r[1:] for r in tr if r[0] == "4"] == ev
    assert {r[0] for r in tr} == {"4", "9"}
    assert all(np.isfinite(float(r[2])) for r in tr)


def test_report_rerenders(tmp_path, tiny_config):
    assert cli.main(["eval", "--config", str(tiny_config), "--out", str(tmp_path), "--no-plots",
                     "--baselines", "equal_power"]) == 0
    assert not (tmp_path / "eval.png").exists()
    assert cli.main(["report", str(tmp_path / "eval.csv")]) == 0
    assert (tmp_path / "eval.png").exists()
    (tmp_path / "odd.csv").write_text("what,ever\n1,2\n")
    assert cli.main(["report", str(tmp_path / "odd.csv")]) == cli.EXIT_CONFIG


def test_proptest_exit_codes(monkeypatch, capsys):
    assert cli.main(["proptest", "--suite", "equivariance", "--trials", "5"]) == 0
    assert "equivariance" in capsys.readouterr().out
    from graphwcs import proptest
    monkeypatch.setattr(proptest, "run_suite",
                        lambda *a: [proptest.SuiteResult("oracle", trials=1, failures=1, worst=0.0, seconds=0.0, messages=["forced"])])
    assert cli.main(["proptest", "--suite", "oracle"]) == cli.EXIT_PROPERTY
