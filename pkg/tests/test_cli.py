from __future__ import annotations

import json

import pandas as pd
import pytest

from saemabc.cli import build_parser, parse_overrides, run
from saemabc.const import EXIT_CONFIG_ERROR, EXIT_ESTIMATION_FAILURE, EXIT_OK
from saemabc.exceptions import ConfigError

SMALL_CONFIG = {
    "model": {"id": "nonlinear-gaussian", "theta": {"sigma_x": 2.0, "sigma_y": 2.0}},
    "grid": {"n": 12},
    "algorithm": {
        "name": "saem-abc",
        "M": 40,
        "M_bar": 10,
        "K": 4,
        "K1": 2,
        "schedule": [{"delta": 2.0, "iterations": 2}, {"delta": 1.0, "iterations": 2}],
    },
    "replicates": 2,
    "start": {"law": "fixed", "value": {"sigma_x": 1.5, "sigma_y": 1.5}},
    "seed": 3,
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL_CONFIG), encoding="utf-8")
    return path


def test_parse_overrides() -> None:
    assert parse_overrides(["--algorithm.M", "500", "--kernel=uniform", "--fisher", "false"]) == [
        ("algorithm.M", 500),
        ("kernel", "uniform"),
        ("fisher", False),
    ]
    assert parse_overrides([]) == []


def test_parse_overrides_rejects_stray_tokens() -> None:
    with pytest.raises(ConfigError):
        parse_overrides(["500"])
    with pytest.raises(ConfigError):
        parse_overrides(["--algorithm.M"])


def test_parser_requires_a_command() -> None:
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_generate_from_preset(tmp_path) -> None:
    assert run(["generate", "--preset", "nlg-benchmark", "--out", str(tmp_path)]) == EXIT_OK
    assert len(pd.read_csv(tmp_path / "dataset.csv")) == 50


def test_estimate_then_summarize(config_path, tmp_path, capsys) -> None:
    out = tmp_path / "run"
    assert run(["estimate", "--config", str(config_path), "--out", str(out)]) == EXIT_OK
    report = pd.read_csv(out / "report.csv")
    assert (report["status"] == "ok").all()

    assert run(["summarize", str(out / "report.csv")]) == EXIT_OK
    assert "saem-abc (40,10)" in capsys.readouterr().out


def test_overrides_reach_the_config(config_path, tmp_path) -> None:
    out = tmp_path / "run"
    assert run(["estimate", "--config", str(config_path), "--out", str(out), "--replicates", "1", "--seed", "5"]) == EXIT_OK
    report = pd.read_csv(out / "report.csv")
    assert report["seed"].tolist() == [5]


def test_invalid_override_is_a_config_error(config_path, tmp_path) -> None:
    code = run(["estimate", "--config", str(config_path), "--out", str(tmp_path), "--grid.substeps", "0"])
    assert code == EXIT_CONFIG_ERROR


def test_missing_config_file(tmp_path) -> None:
    assert run(["generate", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == EXIT_CONFIG_ERROR


def test_all_replicates_failing(config_path, tmp_path) -> None:
    args = [
        "estimate",
        "--config",
        str(config_path),
        "--out",
        str(tmp_path),
        "--algorithm.name",
        "rejection-saem",
        "--algorithm.max_attempts",
        "1",
        "--algorithm.K",
        "2",
        "--algorithm.K1",
        "1",
        "--algorithm.schedule",
        '[{"delta": 0.001, "iterations": 2}]',
    ]
    assert run(args) == EXIT_ESTIMATION_FAILURE
    report = pd.read_csv(tmp_path / "report.csv")
    assert (report["status"] == "failed").all()


def test_diagnose_with_repetitions(config_path, tmp_path, capsys) -> None:
    assert run(["diagnose", "--config", str(config_path), "--out", str(tmp_path), "--repetitions", "2"]) == EXIT_OK
    assert "ess_mean" in capsys.readouterr().out
    assert len(list((tmp_path / "diagnostics").glob("run_*.csv"))) == 2
