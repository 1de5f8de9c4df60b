import itertools
import json
import re
from collections.abc import Iterator
from pathlib import Path

import pytest
from loguru import logger

from lqlab.cli import EXIT_CONFIG, main
from lqlab.errors import Diverged, LqlabError, NoPositiveRoot, NotConverged
from tests import ConfigFiles

COARSE = {"grid.dx": 0.1}


@pytest.fixture(autouse=True)
def _detach_log_sink() -> Iterator[None]:
    # main() binds a sink to the captured stderr of the running test
    yield
    logger.remove()
    logger.disable("lqlab")


def test_analytic(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["analytic", "--alpha", "0.5", "--beta", "1.0"]) == 0

    out = capsys.readouterr().out
    match = re.fullmatch(r"gamma=(\S+) residual=(\S+) closed_loop_rate=(\S+)\n", out)
    assert match is not None
    assert float(match[1]) == pytest.approx(1.0)
    assert abs(float(match[2])) <= 1e-12
    # A - B^2 G / R
    assert float(match[3]) == pytest.approx(-0.5)


def test_analytic_bad_weights(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["analytic", "--alpha", "0.5", "--beta", "1.0", "--control-cost", "0"]) == (
        EXIT_CONFIG
    )
    assert "control_cost" in capsys.readouterr().err


def test_config_error(configs: ConfigFiles, capsys: pytest.CaptureFixture[str]) -> None:
    path = configs.write({"bogus": 1})

    assert main(["run", str(path), "--out", str(configs.root / "out")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "lqlab: config error: line 2: bogus: unknown key" in err
    assert not (configs.root / "out").exists()


def test_invalid_field_is_named(configs: ConfigFiles, capsys: pytest.CaptureFixture[str]) -> None:
    path = configs.write({"kind": "qlearn", "qlearn.epsilon": 1.5})

    assert main(["run", str(path), "--out", str(configs.root / "out")]) == EXIT_CONFIG
    assert "qlearn.epsilon" in capsys.readouterr().err


@pytest.mark.slow
def test_large_learning_rate_exits_diverged(configs: ConfigFiles) -> None:
    out = configs.root / "out"
    path = configs.write({"kind": "qlearn", "qlearn.learning_rate": 1.8})

    assert main(["run", str(path), "--out", str(out)]) == 2

    report = json.loads((out / "report.json").read_text())
    last = (out / "log.csv").read_text().splitlines()[-1].split(",")
    assert int(last[0]) == report["trip_iteration"]


def test_missing_config_file(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["run", str(tmp_path / "nope.json")]) == EXIT_CONFIG
    assert "<file>" in capsys.readouterr().err


def test_hjb_run_writes_artifacts(configs: ConfigFiles) -> None:
    out = configs.root / "out"
    path = configs.write({**COARSE, "kind": "hjb-vi"})

    assert main(["run", str(path), "--out", str(out)]) == 0

    for name in ("config.json", "log.csv", "fields.csv", "value.svg", "policy.svg", "report.json"):
        assert (out / name).is_file(), name

    assert (out / "log.csv").read_text().splitlines()[0] == "iteration,residual,sup_norm"
    fields = (out / "fields.csv").read_text().splitlines()
    assert fields[0] == "node,x,value,policy,analytic_value,analytic_policy"
    assert len(fields) == 42

    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "converged"
    assert report["sup_error"] < 1.0


def test_policy_iteration_run(configs: ConfigFiles) -> None:
    out = configs.root / "out"
    path = configs.write({**COARSE, "kind": "hjb-pi"})

    assert main(["run", str(path), "--out", str(out)]) == 0

    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "converged"
    assert report["sup_error"] < 1.0
    assert (out / "log.csv").read_text().splitlines()[0] == "iteration,residual,sup_norm"


@pytest.mark.parametrize(
    ("error", "code"),
    [(Diverged(4), 2), (NotConverged(9), 3), (NoPositiveRoot("no root"), EXIT_CONFIG)],
)
def test_solver_errors_map_to_exit_codes(
    configs: ConfigFiles,
    monkeypatch: pytest.MonkeyPatch,
    capsys: pytest.CaptureFixture[str],
    error: LqlabError,
    code: int,
) -> None:
    def fail(*_: object) -> None:
        raise error

    monkeypatch.setattr("lqlab.cli.run_experiment", fail)
    path = configs.write({})

    assert main(["run", str(path), "--out", str(configs.root / "out")]) == code
    assert str(error) in capsys.readouterr().err


def test_not_converged_exit_code(configs: ConfigFiles) -> None:
    out = configs.root / "out"
    path = configs.write({**COARSE, "scheme.max_iters": 5})

    assert main(["run", str(path), "--out", str(out)]) == 3

    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "not_converged"
    assert len((out / "log.csv").read_text().splitlines()) == 6


def test_diverged_exit_code(configs: ConfigFiles) -> None:
    out = configs.root / "out"
    path = configs.write({
        "kind": "linfa",
        "linfa.mode": "constant",
        "linfa.learning_rate": 1.0,
        "linfa.n_steps": 1000,
    })

    assert main(["run", str(path), "--out", str(out)]) == 2

    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "diverged"
    assert report["trip_iteration"] >= 1
    assert (out / "fields.csv").is_file()


@pytest.mark.parametrize(
    "values",
    [
        {**COARSE, "kind": "hjb-vi"},
        {"kind": "qlearn", "qlearn.n_episodes": 20, "seed": 5},
        {"kind": "linfa", "linfa.n_steps": 300, "seed": 5},
    ],
)
def test_runs_are_reproducible(configs: ConfigFiles, values: dict[str, object]) -> None:
    path = configs.write(values)
    first, second = configs.root / "first", configs.root / "second"

    assert main(["run", str(path), "--out", str(first)]) == 0
    assert main(["run", str(path), "--out", str(second)]) == 0

    for name in ("config.json", "log.csv", "fields.csv", "value.svg", "policy.svg"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_seed_override(configs: ConfigFiles) -> None:
    path = configs.write({"kind": "qlearn", "qlearn.n_episodes": 5})
    out = configs.root / "out"

    assert main(["run", str(path), "--out", str(out), "--seed", "7"]) == 0
    assert json.loads((out / "config.json").read_text())["seed"] == 7


def test_output_root_from_environment(
    configs: ConfigFiles, monkeypatch: pytest.MonkeyPatch
) -> None:
    path = configs.write({**COARSE, "scheme.max_iters": 2})
    monkeypatch.setenv("LQLAB_OUT", str(configs.root / "env-out"))

    assert main(["run", str(path)]) == 3
    assert (configs.root / "env-out" / "report.json").is_file()


def test_probe(configs: ConfigFiles, capsys: pytest.CaptureFixture[str]) -> None:
    out = configs.root / "out"
    path = configs.write({**COARSE, "probe.n_pairs": 50})

    assert main(["probe", str(path), "--out", str(out)]) == 0

    printed = capsys.readouterr().out
    assert re.fullmatch(
        r"frozen-policy violations=\d+ full-operator violations=\d+ negative coefficients=\d+\n",
        printed,
    )

    probe = json.loads((out / "probe.json").read_text())
    assert probe["differencing"] == "upwind"
    assert probe["frozen_policy"]["n_pairs_tested"] == 50
    assert json.loads((out / "report.json").read_text())["kind"] == "probe"


def test_central_probe_reports_violations(
    configs: ConfigFiles, capsys: pytest.CaptureFixture[str]
) -> None:
    out = configs.root / "out"
    path = configs.write({
        **COARSE, "scheme.differencing": "central", "probe.n_pairs": 200,
    })

    assert main(["probe", str(path), "--out", str(out)]) == 0

    probe = json.loads((out / "probe.json").read_text())
    assert probe["coefficients"]["n_violations"] > 0
    assert probe["frozen_policy"]["n_violations"] > 0


@pytest.mark.slow
def test_sweep_over_learning_rate(configs: ConfigFiles, capsys: pytest.CaptureFixture[str]) -> None:
    out = configs.root / "out"
    path = configs.write({"kind": "qlearn"})

    # run i gets seed i, so the large rate runs on seed 0
    argv = ["sweep", str(path), "--param", "qlearn.learning_rate", "--values", "1.8,0.8,1.3"]
    assert main([*argv, "--jobs", "3", "--out", str(out)]) == 0

    rows = [line.split(",") for line in (out / "sweep.csv").read_text().splitlines()]
    assert rows[0] == ["value", "converged", "sup_error", "trip_iteration", "status"]
    assert [row[0] for row in rows[1:]] == ["1.8", "0.8", "1.3"]
    assert rows[1][1:2] + rows[1][4:] == ["false", "diverged"]
    assert int(rows[1][3]) >= 1
    assert rows[2][1:2] + rows[2][3:] == ["true", "", "converged"]
    assert capsys.readouterr().out.splitlines() == [",".join(row) for row in rows[1:]]


@pytest.mark.slow
def test_sweep_over_mesh_spacing(configs: ConfigFiles) -> None:
    out = configs.root / "out"
    path = configs.write({"kind": "hjb-vi"})

    argv = ["sweep", str(path), "--param", "grid.dx", "--values", "0.04,0.02,0.01"]
    assert main([*argv, "--jobs", "3", "--out", str(out)]) == 0

    rows = [line.split(",") for line in (out / "sweep.csv").read_text().splitlines()[1:]]
    assert [row[4] for row in rows] == ["converged"] * 3

    errors = [float(row[2]) for row in rows]
    for coarse, fine in itertools.pairwise(errors):
        assert 1.5 <= coarse / fine <= 2.5


def test_help_documents_outputs(capsys: pytest.CaptureFixture[str]) -> None:
    with pytest.raises(SystemExit) as info:
        main(["--help"])

    assert info.value.code == 0
    out = capsys.readouterr().out
    assert "value,converged,sup_error,trip_iteration,status" in out
    assert "LQLAB_OUT" in out
