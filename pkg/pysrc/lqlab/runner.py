from __future__ import annotations

import csv
import enum
import json
import time
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

import attr
import numpy as np
from loguru import logger

from lqlab.config import ExperimentConfig
from lqlab.enums import ExperimentKind
from lqlab.errors import Diverged, NotConverged
from lqlab.grid import Grid1D, PolicyField, ValueField
from lqlab.hjb import SolverResult, minimize_all_nodes, policy_iteration, value_iteration
from lqlab.linear_fa import FaTrainingResult, fa_train, greedy_action, q_tilde
from lqlab.model import RiccatiSolution, riccati_solve, sample_analytic
from lqlab.monotone import (
    MonotonicityReport,
    coefficient_check,
    probe_operator_monotonicity,
    scheme_operator,
    sup_error,
)
from lqlab.plotting import write_overlay
from lqlab.qlearning import INTERIOR_FRACTION, QTrainingResult, greedy_extract, policy_slope, train


class RunStatus(enum.Enum):
    """
    How a run ended.
    """

    #: The solver met its stopping threshold, or the learner finished every episode or step.
    CONVERGED = "converged"

    #: The divergence monitor tripped. Exit code 2.
    DIVERGED = "diverged"

    #: An iteration budget ran out. Exit code 3.
    NOT_CONVERGED = "not_converged"

    @property
    def exit_code(self) -> int:
        match self:
            case RunStatus.CONVERGED:
                return 0

            case RunStatus.DIVERGED:
                return 2

            case RunStatus.NOT_CONVERGED:
                return 3


@attr.define(slots=True, kw_only=True)
class RunRecord:
    """
    The summary of a single experiment run, as written to ``report.json``.
    """

    kind: ExperimentKind = attr.field()
    config_hash: str = attr.field()
    status: RunStatus = attr.field()
    sup_error: float | None = attr.field(default=None)
    trip_iteration: int | None = attr.field(default=None)
    iterations: int = attr.field(default=0)
    wall_time_s: float = attr.field(default=0.0)
    #: Kind-specific extras.
    metrics: dict[str, Any] = attr.field(factory=dict)

    @property
    def converged(self) -> bool:
        return self.status is RunStatus.CONVERGED

    def to_json(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "config_hash": self.config_hash,
            "status": self.status.value,
            "sup_error": _json_float(self.sup_error),
            "trip_iteration": self.trip_iteration,
            "iterations": self.iterations,
            "wall_time_s": self.wall_time_s,
            **self.metrics,
        }


def _json_float(value: float | None) -> float | str | None:
    # JSON has no nan/inf
    if value is None or np.isfinite(value):
        return value

    return repr(value)


def format_number(value: float | int) -> str:
    """
    Formats a number for CSV output, as its shortest round-trip representation.
    """

    if isinstance(value, int | np.integer):
        return str(int(value))

    return repr(float(value))


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[float | int]]) -> None:
    """
    Writes a CSV file with a header row, comma separators, and LF line endings.
    """

    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([format_number(v) for v in row] for row in rows)


@attr.define(slots=True, kw_only=True)
class _Outcome:
    value: ValueField
    policy: PolicyField
    log_header: tuple[str, ...]
    log_rows: list[tuple[float, ...]]
    status: RunStatus
    trip_iteration: int | None = None
    iterations: int = 0
    metrics: dict[str, Any] = attr.field(factory=dict)


def _solver_outcome(result: SolverResult, status: RunStatus, trip: int | None) -> _Outcome:
    return _Outcome(
        value=result.value,
        policy=result.policy,
        log_header=("iteration", "residual", "sup_norm"),
        log_rows=[tuple(row) for row in result.log.rows()],
        status=status,
        trip_iteration=trip,
        iterations=result.iterations,
        metrics={
            "improvements": [
                {"round": r.round, "evaluation_sweeps": r.evaluation_sweeps,
                 "policy_change": r.policy_change}
                for r in result.log.improvements
            ],
        },
    )


def _run_hjb(config: ExperimentConfig, kind: ExperimentKind) -> _Outcome:
    problem = config.problem()
    grid = config.grid()
    scheme = config.scheme()

    try:
        if kind is ExperimentKind.HJB_VI:
            result = value_iteration(problem, grid, scheme)
        else:
            u0 = PolicyField.constant(grid, config["scheme.initial_policy"])
            result = policy_iteration(problem, grid, scheme, u0)
    except Diverged as e:
        outcome = _solver_outcome(e.partial, RunStatus.DIVERGED, e.trip_iteration)
    except NotConverged as e:
        outcome = _solver_outcome(e.partial, RunStatus.NOT_CONVERGED, None)
    else:
        outcome = _solver_outcome(result, RunStatus.CONVERGED, None)

    outcome.metrics["relaxation_rate"] = scheme.relaxation_rate
    outcome.metrics["dx"] = grid.dx
    return outcome


def _q_outcome(result: QTrainingResult, status: RunStatus, trip: int | None) -> _Outcome:
    value, policy = greedy_extract(result.q_table)
    return _Outcome(
        value=value,
        policy=policy,
        log_header=result.log.columns,
        log_rows=result.log.rows,
        status=status,
        trip_iteration=trip,
        iterations=result.episodes_run,
        metrics={
            "policy_slope": policy_slope(policy) if status is RunStatus.CONVERGED else None,
            "max_abs_q": _json_float(result.q_table.max_abs()),
        },
    )


def _run_qlearn(config: ExperimentConfig) -> _Outcome:
    try:
        result = train(config.mdp(), config.qlearn())
    except Diverged as e:
        return _q_outcome(e.partial, RunStatus.DIVERGED, e.trip_iteration)

    return _q_outcome(result, RunStatus.CONVERGED, None)


def _fa_outcome(
    config: ExperimentConfig, result: FaTrainingResult, status: RunStatus, trip: int | None
) -> _Outcome:
    mdp = config.mdp()
    grid = mdp.state_grid
    p = mdp.problem
    w = result.weights

    controls = np.array([greedy_action(w, x, p.u_min, p.u_max) for x in grid.nodes.tolist()])
    values = np.array([
        q_tilde(w, x, u) for x, u in zip(grid.nodes.tolist(), controls.tolist(), strict=True)
    ])
    residuals = result.log.column("bellman_residual")

    return _Outcome(
        value=ValueField(grid=grid, values=values),
        policy=PolicyField(grid=grid, controls=controls),
        log_header=result.log.columns,
        log_rows=result.log.rows,
        status=status,
        trip_iteration=trip,
        iterations=int(result.log.rows[-1][0]) if result.log.rows else 0,
        metrics={
            "weights": [_json_float(float(c)) for c in w.w],
            "final_weight_norm": _json_float(w.norm()),
            "bellman_residual": _json_float(residuals[-1]) if residuals else None,
            "initial_bellman_residual": residuals[0] if residuals else None,
        },
    )


def _run_linfa(config: ExperimentConfig) -> _Outcome:
    try:
        result = fa_train(
            config.mdp(),
            config.step_size(),
            config["linfa.n_steps"],
            config.seed,
            n_probe=config["linfa.n_probe"],
            divergence_threshold=config["scheme.divergence_threshold"],
        )
    except Diverged as e:
        return _fa_outcome(config, e.partial, RunStatus.DIVERGED, e.trip_iteration)

    return _fa_outcome(config, result, RunStatus.CONVERGED, None)


def _write_fields(out_dir: Path, outcome: _Outcome, grid: Grid1D, sol: RiccatiSolution) -> None:
    exact_v, exact_u = sample_analytic(sol, grid)
    xs = grid.nodes.tolist()
    value = np.asarray(outcome.value.values).tolist()
    policy = np.asarray(outcome.policy.controls).tolist()

    write_csv(
        out_dir / "fields.csv",
        ("node", "x", "value", "policy", "analytic_value", "analytic_policy"),
        (
            (i, x, v, u, av, au)
            for i, (x, v, u, av, au) in enumerate(
                zip(xs, value, policy, exact_v.values.tolist(), exact_u.controls.tolist(),
                    strict=True)
            )
        ),
    )

    write_overlay(
        out_dir / "value.svg", xs, value, exact_v.values.tolist(),
        title="Value function", y_label="V(x)",
    )
    write_overlay(
        out_dir / "policy.svg", xs, policy, exact_u.controls.tolist(),
        title="Policy", y_label="u(x)",
    )


def write_report(out_dir: Path, record: RunRecord) -> None:
    (out_dir / "report.json").write_text(
        json.dumps(record.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def run_experiment(config: ExperimentConfig, out_dir: Path) -> RunRecord:
    """
    Runs a single (non-sweep) experiment and writes its artifacts into ``out_dir``.

    Artifacts are written whatever the outcome: ``config.json``, ``log.csv``, ``fields.csv``,
    ``value.svg``, ``policy.svg`` and ``report.json``. Probe experiments write ``probe.json``
    instead of the log, fields and plots.
    """

    kind = config.experiment_kind
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(config.canonical_json() + "\n", encoding="utf-8")

    started = time.perf_counter()
    logger.info("running {} into {}", kind.value, out_dir)

    if kind is ExperimentKind.PROBE:
        record = run_probe(config, out_dir)
        record.wall_time_s = time.perf_counter() - started
        write_report(out_dir, record)
        return record

    match kind:
        case ExperimentKind.HJB_VI | ExperimentKind.HJB_PI:
            outcome = _run_hjb(config, kind)

        case ExperimentKind.QLEARN:
            outcome = _run_qlearn(config)

        case ExperimentKind.LINFA:
            outcome = _run_linfa(config)

        case ExperimentKind.PROBE | ExperimentKind.SWEEP:  # pragma: no cover
            raise ValueError(f"{kind} is not a single run")

    sol = riccati_solve(config.problem())
    write_csv(out_dir / "log.csv", outcome.log_header, outcome.log_rows)
    _write_fields(out_dir, outcome, outcome.value.grid, sol)

    error = sup_error(outcome.value, sol, INTERIOR_FRACTION)
    record = RunRecord(
        kind=kind,
        config_hash=config.config_hash(),
        status=outcome.status,
        sup_error=error,
        trip_iteration=outcome.trip_iteration,
        iterations=outcome.iterations,
        wall_time_s=time.perf_counter() - started,
        metrics={"gamma": sol.gamma_coef, **outcome.metrics},
    )
    write_report(out_dir, record)

    logger.info(
        "{} finished: {} (sup_error={}, trip={})",
        kind.value, record.status.value, record.sup_error, record.trip_iteration,
    )
    return record


# the neighbour whose value a coefficient multiplies
_NEIGHBOUR_OFFSET = {"c_minus": -1, "c_center": 0, "c_plus": 1}


def _report_json(r: MonotonicityReport) -> dict[str, Any]:
    return {
        "n_pairs_tested": r.n_pairs_tested,
        "n_violations": r.n_violations,
        "worst_violation": r.worst_violation,
        "violating_node": r.violating_node,
    }


def run_probe(config: ExperimentConfig, out_dir: Path) -> RunRecord:
    """
    Probes the configured scheme for monotonicity and writes ``probe.json``.

    The value field the controls are minimised against is the exact solution sampled on the
    grid. Single-node bumps are targeted at the neighbours of any negative stencil coefficient.
    """

    problem = config.problem()
    grid = config.grid()
    scheme = config.scheme()
    sol = riccati_solve(problem)
    v, _ = sample_analytic(sol, grid)

    coefficients = coefficient_check(problem, grid, scheme, v)
    targets = sorted({
        min(max(c.node + _NEIGHBOUR_OFFSET[c.name], 0), grid.n_nodes - 1)
        for c in coefficients.violations
    })

    u_star, _, _ = minimize_all_nodes(problem, grid, np.asarray(v.values), scheme.differencing)
    frozen = scheme_operator(problem, grid, scheme, PolicyField(grid=grid, controls=u_star))
    full = scheme_operator(problem, grid, scheme)

    n_pairs = config["probe.n_pairs"]
    frozen_report = probe_operator_monotonicity(
        frozen, grid, config.seed, n_pairs, bump_nodes=targets or None
    )
    full_report = probe_operator_monotonicity(full, grid, config.seed, n_pairs)

    payload = {
        "differencing": scheme.differencing.value,
        "relaxation_rate": scheme.relaxation_rate,
        "frozen_policy": _report_json(frozen_report),
        "full_operator": _report_json(full_report),
        "coefficients": {
            "n_violations": len(coefficients.violations),
            "violations": [
                {"node": c.node, "name": c.name, "value": c.value}
                for c in coefficients.violations
            ],
        },
    }
    (out_dir / "probe.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    logger.info(
        "probe: {} frozen violations, {} negative coefficients",
        frozen_report.n_violations, len(coefficients.violations),
    )

    return RunRecord(
        kind=ExperimentKind.PROBE,
        config_hash=config.config_hash(),
        status=RunStatus.CONVERGED,
        iterations=n_pairs,
        metrics={
            "frozen_violations": frozen_report.n_violations,
            "full_violations": full_report.n_violations,
            "coefficient_violations": len(coefficients.violations),
        },
    )
