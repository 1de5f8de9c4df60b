from __future__ import annotations

import csv
import functools
import math
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import anyio
import anyio.to_process
import attr
from loguru import logger

from lqlab.config import OPTIONS, ExperimentConfig, check_sweep_param, parse_config
from lqlab.enums import ExperimentKind
from lqlab.errors import ConfigError
from lqlab.runner import RunStatus, format_number, run_experiment

#: Columns of ``sweep.csv``.
SWEEP_COLUMNS = ("value", "converged", "sup_error", "trip_iteration", "status")


@attr.define(frozen=True, slots=True, kw_only=True)
class SweepRow:
    """
    The outcome of one run of a sweep.
    """

    value: float = attr.field()
    status: RunStatus = attr.field()
    sup_error: float | None = attr.field(default=None)
    trip_iteration: int | None = attr.field(default=None)

    @property
    def converged(self) -> bool:
        return self.status is RunStatus.CONVERGED

    def cells(self) -> list[str]:
        sup = self.sup_error
        return [
            format_number(self.value),
            "true" if self.converged else "false",
            "" if sup is None else format_number(sup),
            "" if self.trip_iteration is None else str(self.trip_iteration),
            self.status.value,
        ]


def _coerce(param: str, value: float) -> float | int:
    # integer keys accept integral floats from the command line
    if OPTIONS[param].kinds == (int,):
        if not float(value).is_integer():
            raise ConfigError(param, f"expected an integer, got {value!r}")

        return int(value)

    return value


def sweep_configs(
    config: ExperimentConfig, param: str, values: Sequence[float]
) -> list[ExperimentConfig]:
    """
    Builds one configuration per value. Run ``i`` gets seed ``seed + i`` unless the seed itself
    is being swept.
    """

    check_sweep_param(param)
    if not values:
        raise ConfigError("sweep.values", "at least one value is required")

    base = config
    if config.kind is ExperimentKind.SWEEP:
        base = config.with_value("kind", config["sweep.kind"])

    configs: list[ExperimentConfig] = []
    for i, value in enumerate(values):
        run = base.with_value(param, _coerce(param, value))
        if param != "seed":
            run = run.with_value("seed", base.seed + i)

        configs.append(run)

    return configs


def _run_in_worker(config_json: str, out_dir: str) -> dict[str, Any]:
    record = run_experiment(parse_config(config_json), Path(out_dir))
    return record.to_json()


def _row(value: float, report: dict[str, Any]) -> SweepRow:
    sup = report["sup_error"]
    return SweepRow(
        value=value,
        status=RunStatus(report["status"]),
        sup_error=None if sup is None else float(sup),
        trip_iteration=report["trip_iteration"],
    )


def write_sweep_csv(path: Path, rows: Sequence[SweepRow]) -> None:
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        writer.writerows(row.cells() for row in rows)


async def run_sweep(
    config: ExperimentConfig,
    param: str,
    values: Sequence[float],
    out_root: Path,
    *,
    jobs: int = 1,
) -> list[SweepRow]:
    """
    Runs one experiment per value of ``param`` in worker processes, and writes ``sweep.csv``.

    Run ``i`` writes its artifacts into ``out_root/<i>-<param>=<value>/``. At most ``jobs`` runs
    execute at once; rows are written in the order of ``values`` whatever order runs finish in.

    :raises ConfigError: If ``param`` is not a numeric key or ``values`` is empty.
    """

    if jobs < 1:
        raise ConfigError("jobs", f"must be at least 1, got {jobs}")

    configs = sweep_configs(config, param, values)
    out_root.mkdir(parents=True, exist_ok=True)
    limiter = anyio.CapacityLimiter(jobs)
    rows: list[SweepRow | None] = [None] * len(configs)

    logger.info("sweeping {} over {} values with {} jobs", param, len(values), jobs)

    async def run_one(i: int) -> None:
        out_dir = out_root / f"{i:03d}-{param}={values[i]!r}"
        report = await anyio.to_process.run_sync(
            _run_in_worker, configs[i].canonical_json(), str(out_dir), limiter=limiter
        )
        rows[i] = _row(values[i], report)
        logger.debug("sweep run {} finished: {}", i, report["status"])

    async with anyio.create_task_group() as group:
        for i in range(len(configs)):
            group.start_soon(run_one, i)

    done = [row for row in rows if row is not None]
    write_sweep_csv(out_root / "sweep.csv", done)
    return done


def sweep(
    config: ExperimentConfig,
    param: str,
    values: Sequence[float],
    out_root: Path,
    *,
    jobs: int = 1,
) -> list[SweepRow]:
    """
    Synchronous wrapper around :func:`.run_sweep`.
    """

    return anyio.run(functools.partial(run_sweep, config, param, values, out_root, jobs=jobs))


def parse_values(text: str) -> list[float]:
    """
    Parses a comma-separated list of numbers, as given to ``--values``.
    """

    out: list[float] = []
    for part in text.split(","):
        if not (part := part.strip()):
            continue

        try:
            value = float(part)
        except ValueError:
            raise ConfigError("values", f"not a number: {part!r}") from None

        if not math.isfinite(value):
            raise ConfigError("values", f"not a finite number: {part!r}")

        out.append(value)

    return out
