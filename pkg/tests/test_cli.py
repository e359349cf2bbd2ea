"""
命令行测试
"""
import json

import numpy as np
import pandas as pd
import pytest

import main as cli

from core.dgp import DGP1, sample_dgp
from core.exceptions import (
    EXIT_INPUT_ERROR,
    EXIT_INVARIANT_VIOLATION,
    EXIT_NUMERICAL_FAILURE,
    EXIT_OK,
    InputDataError,
)
from main import build_overrides, build_parser, main
from models.enums import NormalizationMode, StopRule
from services.estimation_service import load_sample_csv
from storage.simulation_store import HISTOGRAM_COLUMNS, SUMMARY_COLUMNS


# 不随运行变化的字段之外的时间相关字段
VOLATILE_KEYS = {"generated_at", "saved_at", "wall_time"}

FAST_FLOW = ["--max-iters", "5", "--seed", "3"]


def _strip_volatile(value):
    if isinstance(value, dict):
        return {k: _strip_volatile(v) for k, v in value.items() if k not in VOLATILE_KEYS}
    if isinstance(value, list):
        return [_strip_volatile(v) for v in value]
    return value


@pytest.fixture
def input_csv(tmp_path):
    sample = sample_dgp(DGP1, 30, seed=99)
    frame = pd.DataFrame({"x1": sample.x[:, 0], "a": sample.a, "y": sample.y})
    path = tmp_path / "obs.csv"
    frame.to_csv(path, index=False)
    return path


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(
        json.dumps(
            {
                "simulation": {
                    "quadrature_nodes": 100000,
                    "golden_dir": str(tmp_path / "golden"),
                }
            }
        ),
        encoding="utf-8",
    )
    return path


def _write_lines(tmp_path, lines):
    path = tmp_path / "bad.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_overrides_from_flags():
    args = build_parser().parse_args(
        [
            "estimate", "--input", "obs.csv", "--delta-n", "none", "--norm-mode", "xfixed",
            "--stopping", "sc1,sc3", "--sigma", "median", "--delta", "0.02",
        ]
    )
    overrides = build_overrides(args)

    assert overrides["flow"]["delta_n"] is None
    assert overrides["flow"]["delta"] == 0.02
    assert overrides["flow"]["mode"] == "xfixed"
    assert overrides["simulation"]["mode"] == "xfixed"
    assert overrides["flow"]["stopping"] == {"enabled": [StopRule.SC1, StopRule.SC3]}
    assert overrides["kernel"]["sigma"] == "median"
    assert "log" not in overrides


def test_iteration_limits_flag():
    args = build_parser().parse_args(["simulate", "--iteration-limits", "200,100,150"])
    overrides = build_overrides(args)
    assert overrides["simulation"]["iteration_limits"] == [200, 100, 150]

    from core.config import AppSettings

    settings = AppSettings.load(overrides=overrides)
    assert settings.simulation.iteration_limits == [100, 150, 200]


def test_flags_win_over_config_file(tmp_path):
    from core.config import AppSettings

    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"flow": {"delta": 0.5, "max_iters": 7}}), encoding="utf-8")
    args = build_parser().parse_args(["estimate", "--input", "x.csv", "--delta", "0.1"])
    settings = AppSettings.load(str(path), build_overrides(args))

    assert settings.flow.delta == 0.1
    assert settings.flow.max_iters == 7
    assert settings.flow.mode == NormalizationMode.GLOBAL


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "--dgp", "DGP3"],
        ["estimate", "--input", "x.csv", "--sigma", "-1"],
        ["estimate", "--input", "x.csv", "--stopping", "sc9"],
        ["simulate", "--iteration-limits", "100,0"],
        ["simulate", "--iteration-limits", "ten"],
    ],
)
def test_invalid_flags_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == EXIT_INPUT_ERROR


def test_invalid_config_value_exit_2(input_csv):
    assert main(["estimate", "--input", str(input_csv), "--delta", "-0.1"]) == EXIT_INPUT_ERROR


def test_zero_jobs_rejected(tmp_path, config_file):
    argv = ["simulate", "--jobs", "0", "--output", str(tmp_path / "out"), "--config", str(config_file)]
    assert main(argv) == EXIT_INPUT_ERROR
    assert not (tmp_path / "out").exists()


def test_unexpected_error_maps_to_numerical_failure(input_csv, monkeypatch):
    def singular(*args, **kwargs):
        raise np.linalg.LinAlgError("Singular matrix")

    monkeypatch.setattr(cli, "run_estimation", singular)
    assert main(["estimate", "--input", str(input_csv)]) == EXIT_NUMERICAL_FAILURE


def test_estimate_writes_report(tmp_path, input_csv):
    output = tmp_path / "report.json"
    density_path = tmp_path / "density.json"
    code = main(
        ["estimate", "--input", str(input_csv), "--output", str(output), "--save-density", str(density_path)]
        + FAST_FLOW
    )
    assert code == EXIT_OK

    report = json.loads(output.read_text(encoding="utf-8"))
    assert {"ate", "rr", "or"} <= set(report["targets"])
    assert report["iterations"] <= 5
    assert report["stop_reason"] in {r.value for r in StopRule}
    assert len(report["density"]["atoms"]) == 4 * 30
    assert density_path.exists()


def test_estimate_is_deterministic(tmp_path, input_csv):
    outputs = []
    for k in range(2):
        output = tmp_path / f"report{k}.json"
        assert main(["estimate", "--input", str(input_csv), "--output", str(output)] + FAST_FLOW) == EXIT_OK
        outputs.append(_strip_volatile(json.loads(output.read_text(encoding="utf-8"))))
    assert outputs[0] == outputs[1]


def test_non_binary_treatment_names_line(tmp_path):
    path = _write_lines(
        tmp_path,
        ["x1,a,y", "0.1,0,1", "0.2,1,0", "0.3,1,1", "0.4,2,0", "0.5,0,0"],
    )
    with pytest.raises(InputDataError) as exc:
        load_sample_csv(path)
    assert exc.value.line == 5
    assert "line 5" in str(exc.value)

    assert main(["estimate", "--input", str(path)]) == EXIT_INPUT_ERROR


@pytest.mark.parametrize(
    "lines, line",
    [
        (["x1,t,y", "0.1,0,1"], 1),
        (["a,y", "0,1"], 1),
        (["x1,a,y", "0.1,0,1", "abc,1,0"], 3),
        (["x1,a,y", "0.1,0,1", "0.2,1,0", "0.3,1,0,7"], 4),
        (["x1,x2,a,y", "0.1,0.2,1,1", "0.3,,0,1"], 3),
    ],
)
def test_malformed_csv_line_numbers(tmp_path, lines, line):
    with pytest.raises(InputDataError) as exc:
        load_sample_csv(_write_lines(tmp_path, lines))
    assert exc.value.line == line


def test_missing_input_exit_2(tmp_path):
    assert main(["estimate", "--input", str(tmp_path / "nope.csv")]) == EXIT_INPUT_ERROR


def test_diagnose_healthy_sample_passes(tmp_path, input_csv):
    output = tmp_path / "diag.json"
    code = main(["diagnose", "--input", str(input_csv), "--output", str(output), "--max-iters", "10"])
    assert code == EXIT_OK

    table = json.loads(output.read_text(encoding="utf-8"))
    assert table["passed"]
    assert all(row["failures"] == 0 for row in table["invariants"])


def test_diagnose_negated_direction_exit_4(tmp_path, input_csv):
    output = tmp_path / "diag.json"
    code = main(
        [
            "diagnose", "--input", str(input_csv), "--output", str(output),
            "--max-iters", "3", "--delta-n", "none", "--inject-negated-direction",
        ]
    )
    assert code == EXIT_INVARIANT_VIOLATION

    rows = {row["name"]: row for row in json.loads(output.read_text(encoding="utf-8"))["invariants"]}
    assert not rows["lyapunov_monotonicity"]["passed"]
    assert rows["lyapunov_monotonicity"]["first_failure_iteration"] == 1


def test_diagnose_zero_step_passes(input_csv, capsys):
    code = main(["diagnose", "--input", str(input_csv), "--delta", "0", "--max-iters", "3", "--delta-n", "none"])
    assert code == EXIT_OK
    assert json.loads(capsys.readouterr().out)["passed"]


def test_truths_prints_oracle(config_file, capsys):
    assert main(["truths", "--dgp", "DGP1", "--config", str(config_file)]) == EXIT_OK
    first = capsys.readouterr().out
    truth = json.loads(first)
    assert truth["dgp"] == "DGP1"
    assert truth["targets"]["ate"] == pytest.approx(0.37 / 3, abs=1e-9)

    assert main(["truths", "--dgp", "DGP1", "--config", str(config_file)]) == EXIT_OK
    assert capsys.readouterr().out == first


def test_simulate_smoke_and_byte_identical(tmp_path, config_file):
    outputs = []
    for k in range(2):
        out_dir = tmp_path / f"run{k}"
        code = main(
            [
                "simulate", "--dgp", "DGP1", "--n", "40", "--reps", "2", "--max-iters", "3",
                "--seed", "17", "--output", str(out_dir), "--config", str(config_file),
            ]
        )
        assert code == EXIT_OK
        outputs.append(out_dir)

    summary = pd.read_csv(outputs[0] / "summary.csv")
    assert list(summary.columns) == SUMMARY_COLUMNS
    assert list(pd.read_csv(outputs[0] / "histogram.csv").columns) == HISTOGRAM_COLUMNS
    assert (outputs[0] / "replicates.json").exists()

    for name in ("summary.csv", "histogram.csv"):
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()
