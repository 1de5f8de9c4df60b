from __future__ import annotations

from collections.abc import Iterator
from typing import Any

import attr
import numpy as np
import numpy.typing as npt
from loguru import logger

from lqlab.enums import Differencing, FixedPointForm, PolicyEvaluation, Region
from lqlab.errors import ConfigError, Diverged, NotConverged
from lqlab.grid import FloatArray, Grid1D, PolicyField, ValueField
from lqlab.model import LqProblem
from lqlab.monitor import DEFAULT_DIVERGENCE_THRESHOLD, DivergenceMonitor

type BoolArray = npt.NDArray[np.bool_]

#: Two candidate minima closer than this are treated as equal.
TIE_TOLERANCE = 1e-12

#: How often (in sweeps) progress is logged at DEBUG.
_LOG_EVERY = 1000


def _positive(name: str) -> Any:
    def check(_: Any, __: Any, value: float) -> None:
        if not value > 0:
            raise ConfigError(name, f"must be positive, got {value}")

    return check


def _at_least_one(name: str) -> Any:
    def check(_: Any, __: Any, value: int) -> None:
        if value < 1:
            raise ConfigError(name, f"must be at least 1, got {value}")

    return check


@attr.define(frozen=True, slots=True, kw_only=True)
class SchemeConfig:
    """
    Parameters of the relaxed fixed-point scheme and of its stopping rules.
    """

    #: The relaxation rate ``gamma_s`` of the fixed-point update. Must exceed the discount rate
    #: for the consistent form.
    relaxation_rate: float = attr.field(converter=float, validator=_positive("relaxation_rate"))

    differencing: Differencing = attr.field(default=Differencing.UPWIND)

    #: Value iteration stops once the sup-norm change of a sweep drops below this.
    theta: float = attr.field(default=1e-8, validator=_positive("theta"))
    max_iters: int = attr.field(default=1_000_000, validator=_at_least_one("max_iters"))

    #: Policy evaluation stops once the sup-norm change of a sweep drops below this.
    theta_v: float = attr.field(default=1e-8, validator=_positive("theta_v"))
    #: Policy iteration stops once the sup-norm change of the policy drops below this.
    theta_u: float = attr.field(default=1e-8, validator=_positive("theta_u"))
    max_policy_evals: int = attr.field(
        default=1_000_000, validator=_at_least_one("max_policy_evals")
    )
    max_policy_improvements: int = attr.field(
        default=100, validator=_at_least_one("max_policy_improvements")
    )

    policy_evaluation: PolicyEvaluation = attr.field(default=PolicyEvaluation.EXACT)

    fixed_point_form: FixedPointForm = attr.field(default=FixedPointForm.CONSISTENT)
    divergence_threshold: float = attr.field(
        default=DEFAULT_DIVERGENCE_THRESHOLD, validator=_positive("divergence_threshold")
    )

    def check_against(self, problem: LqProblem) -> None:
        """
        Raises :class:`.ConfigError` if this scheme cannot be used on ``problem``.
        """

        if (
            self.fixed_point_form is FixedPointForm.CONSISTENT
            and not self.relaxation_rate > problem.discount_rate
        ):
            raise ConfigError(
                "relaxation_rate",
                f"must exceed the discount rate {problem.discount_rate}, "
                f"got {self.relaxation_rate}",
            )

    def self_coefficient(self, problem: LqProblem) -> float:
        """
        Gets the weight of ``V[i]`` itself in the update, before the stencil contributes.
        """

        g = self.relaxation_rate
        match self.fixed_point_form:
            case FixedPointForm.CONSISTENT:
                return (g - problem.discount_rate) / g

            case FixedPointForm.LITERAL:
                return (g + problem.discount_rate) / g

    def fixed_point_discount(self, problem: LqProblem) -> float:
        """
        Gets the discount rate whose equation ``rate V = H`` the update's fixed points solve:
        ``beta`` for the consistent form and ``-beta`` for the literal one.
        """

        match self.fixed_point_form:
            case FixedPointForm.CONSISTENT:
                return problem.discount_rate

            case FixedPointForm.LITERAL:
                return -problem.discount_rate


@attr.define(frozen=True, slots=True, kw_only=True)
class HamiltonianResult:
    """
    The minimiser of the discrete Hamiltonian at a single node.
    """

    u_star: float = attr.field()
    h_star: float = attr.field()
    #: The drift-sign region ``u_star`` belongs to.
    region: Region = attr.field()


@attr.define(frozen=True, slots=True)
class ImprovementRow:
    """
    One policy-improvement round of policy iteration.
    """

    round: int
    evaluation_sweeps: int
    policy_change: float


@attr.define(slots=True, kw_only=True)
class ConvergenceLog:
    """
    Per-sweep record of a solver run.
    """

    #: ``max |V_new - V_old|`` for each sweep.
    residuals: list[float] = attr.field(factory=list)
    #: ``max |V_new|`` for each sweep.
    sup_norms: list[float] = attr.field(factory=list)
    #: Filled in by policy iteration only.
    improvements: list[ImprovementRow] = attr.field(factory=list)

    def record(self, residual: float, sup_norm: float) -> None:
        self.residuals.append(residual)
        self.sup_norms.append(sup_norm)

    def __len__(self) -> int:
        return len(self.residuals)

    def rows(self) -> Iterator[tuple[int, float, float]]:
        """
        Yields ``(sweep, residual, sup_norm)``, with sweeps counted from 1.
        """

        for n, (r, s) in enumerate(zip(self.residuals, self.sup_norms, strict=True), start=1):
            yield n, r, s

    def trailing_increases(self) -> int:
        """
        Counts how many of the last sweeps each had a larger residual than the sweep before.
        """

        count = 0
        for prev, cur in zip(self.residuals[-2::-1], self.residuals[::-1], strict=False):
            if not cur > prev:
                break

            count += 1

        return count

    def longest_increasing_run(self) -> int:
        """
        Gets the longest run of consecutive sweeps whose residual grew.
        """

        best = run = 0
        for prev, cur in zip(self.residuals, self.residuals[1:], strict=False):
            run = run + 1 if cur > prev else 0
            best = max(best, run)

        return best


@attr.define(frozen=True, slots=True, kw_only=True)
class SolverResult:
    """
    The outcome of :func:`.value_iteration` or :func:`.policy_iteration`.

    Unpacks as ``value, policy, log``.
    """

    value: ValueField = attr.field()
    policy: PolicyField = attr.field()
    log: ConvergenceLog = attr.field()
    iterations: int = attr.field()
    converged: bool = attr.field()

    def __iter__(self) -> Iterator[Any]:
        yield self.value
        yield self.policy
        yield self.log


def region_slopes(
    values: FloatArray, dx: float, differencing: Differencing
) -> tuple[FloatArray, FloatArray]:
    """
    Gets the difference quotient applied on R1 and on R2 at every node.

    The two boundary nodes use the one one-sided quotient they have on both regions.
    """

    d = np.diff(values) / dx
    forward = np.append(d, d[-1])
    backward = np.insert(d, 0, d[0])

    match differencing:
        case Differencing.UPWIND:
            on_r1, on_r2 = forward, backward.copy()

        case Differencing.DOWNWIND:
            on_r1, on_r2 = backward, forward.copy()

        case Differencing.CENTRAL:
            central = np.empty_like(values)
            central[1:-1] = (values[2:] - values[:-2]) / (2 * dx)
            on_r1, on_r2 = central, central.copy()

    on_r1[0] = on_r2[0] = d[0]
    on_r1[-1] = on_r2[-1] = d[-1]
    return on_r1, on_r2


def minimize_all_nodes(
    problem: LqProblem, grid: Grid1D, values: FloatArray, differencing: Differencing
) -> tuple[FloatArray, FloatArray, BoolArray]:
    """
    Minimises the discrete Hamiltonian at every node at once.

    On each region the Hamiltonian ``D (A x + B u) + Q x^2 + R u^2`` is a convex quadratic in
    ``u`` with unconstrained minimiser ``-D B / (2 R)``; that minimiser is projected onto the
    region intersected with ``[u_min, u_max]`` and the smaller of the two region minima wins.

    :return: ``(u_star, h_star, in_r1)`` arrays over the nodes.
    """

    p = problem
    xs = grid.nodes
    s1, s2 = region_slopes(values, grid.dx, differencing)

    ax = p.drift * xs
    state_part = p.state_cost * xs * xs
    # controls with zero drift
    u_b = -ax / p.control_gain

    if p.control_gain > 0:
        lo1, hi1 = np.maximum(u_b, p.u_min), np.full_like(xs, p.u_max)
        lo2, hi2 = np.full_like(xs, p.u_min), np.minimum(u_b, p.u_max)
        empty1 = u_b > p.u_max
        empty2 = u_b <= p.u_min
    else:
        lo1, hi1 = np.full_like(xs, p.u_min), np.minimum(u_b, p.u_max)
        lo2, hi2 = np.maximum(u_b, p.u_min), np.full_like(xs, p.u_max)
        empty1 = u_b < p.u_min
        empty2 = u_b >= p.u_max

    scale = p.control_gain / (2 * p.control_cost)
    with np.errstate(invalid="ignore", over="ignore"):
        u1 = np.clip(-s1 * scale, lo1, np.maximum(lo1, hi1))
        u2 = np.clip(-s2 * scale, np.minimum(lo2, hi2), hi2)

        y1 = np.where(empty1, np.inf, s1 * (ax + p.control_gain * u1) + state_part
                      + p.control_cost * u1 * u1)
        y2 = np.where(empty2, np.inf, s2 * (ax + p.control_gain * u2) + state_part
                      + p.control_cost * u2 * u2)

        tie = np.abs(y1 - y2) <= TIE_TOLERANCE
        pick2 = np.where(tie, np.abs(u2) < np.abs(u1), y2 < y1)

    u_star = np.where(pick2, u2, u1)
    h_star = np.where(pick2, y2, y1)
    # R2 is open; a minimiser sitting on its boundary has zero drift and belongs to R1
    in_r1 = ~pick2 | (u2 == u_b)
    return u_star, h_star, in_r1


def hamiltonian_minimize(
    problem: LqProblem, grid: Grid1D, v: ValueField, i: int, differencing: Differencing
) -> HamiltonianResult:
    """
    Minimises the discrete Hamiltonian at node ``i``.

    :param v: The current value field.
    :param i: The node index.
    :param differencing: Which one-sided quotient goes with which drift region.
    :return: The minimising control, the minimum, and the region of the minimiser.
    """

    if not 0 <= i < grid.n_nodes:
        raise IndexError(f"node {i} outside grid of {grid.n_nodes} nodes")

    u, h, in_r1 = minimize_all_nodes(problem, grid, np.asarray(v.values), differencing)
    return HamiltonianResult(
        u_star=float(u[i]),
        h_star=float(h[i]),
        region=Region.R1 if in_r1[i] else Region.R2,
    )


def policy_hamiltonian(
    problem: LqProblem,
    grid: Grid1D,
    values: FloatArray,
    controls: FloatArray,
    differencing: Differencing,
) -> FloatArray:
    """
    Evaluates the discrete Hamiltonian under fixed ``controls``, picking each node's quotient by
    the sign of its drift.
    """

    p = problem
    xs = grid.nodes
    s1, s2 = region_slopes(values, grid.dx, differencing)
    drift = p.drift * xs + p.control_gain * controls
    slope = np.where(drift >= 0, s1, s2)
    return slope * drift + p.state_cost * xs * xs + p.control_cost * controls * controls


def hjb_residual(
    problem: LqProblem, grid: Grid1D, v: ValueField, differencing: Differencing
) -> FloatArray:
    """
    Gets ``-beta V[i] + min_u H(x_i, u, V)`` at every node. Zero at an exact discrete solution.
    """

    values = np.asarray(v.values)
    _, h, _ = minimize_all_nodes(problem, grid, values, differencing)
    return -problem.discount_rate * values + h


def monotone_mesh_bound(
    problem: LqProblem, cfg: SchemeConfig, x_i: float, u_star: float
) -> float:
    """
    Gets the smallest mesh spacing for which the weight of ``V[i]`` in the upwind update stays
    nonnegative at a node.

    Equality is admissible: a zero weight is still nonnegative.
    """

    drift = abs(problem.drift_of(x_i, u_star))
    match cfg.fixed_point_form:
        case FixedPointForm.CONSISTENT:
            return drift / (cfg.relaxation_rate - problem.discount_rate)

        case FixedPointForm.LITERAL:
            return drift / (cfg.relaxation_rate + problem.discount_rate)


def required_relaxation_rate(problem: LqProblem, grid: Grid1D) -> float:
    """
    Gets the smallest relaxation rate for which ``grid`` satisfies the mesh bound at every node
    for every control in ``[u_min, u_max]``, so any admissible policy can be evaluated.
    """

    reach = max(abs(grid.x_min), abs(grid.x_max))
    control = max(abs(problem.u_min), abs(problem.u_max))
    drift = abs(problem.drift) * reach + abs(problem.control_gain) * control
    return problem.discount_rate + drift / grid.dx


def _initial_values(grid: Grid1D, v0: ValueField | None) -> FloatArray:
    if v0 is None:
        return np.zeros(grid.n_nodes)

    if v0.grid != grid:
        raise ValueError("initial value field lives on a different grid")

    return np.array(v0.values, dtype=np.float64)


def _result(
    grid: Grid1D,
    values: FloatArray,
    controls: FloatArray,
    log: ConvergenceLog,
    iterations: int,
    converged: bool,
) -> SolverResult:
    return SolverResult(
        value=ValueField(grid=grid, values=values),
        policy=PolicyField(grid=grid, controls=controls),
        log=log,
        iterations=iterations,
        converged=converged,
    )


def value_iteration(
    problem: LqProblem,
    grid: Grid1D,
    cfg: SchemeConfig,
    v0: ValueField | None = None,
) -> SolverResult:
    """
    Runs value iteration on the HJB grid.

    Each sweep applies ``V[i] <- c V[i] + min_u H(x_i, u, V) / gamma_s`` at every node, reading
    only the previous iterate (Jacobi sweeps), where ``c`` is
    :meth:`.SchemeConfig.self_coefficient`.

    :param v0: The starting value field. Defaults to zero.
    :return: The final value and policy fields with the per-sweep log.
    :raises Diverged: If an iterate's sup-norm passes the divergence threshold or goes non-finite.
    :raises NotConverged: If ``cfg.max_iters`` sweeps pass without meeting ``cfg.theta``.
    """

    cfg.check_against(problem)
    c_self = cfg.self_coefficient(problem)
    gamma = cfg.relaxation_rate

    values = _initial_values(grid, v0)
    controls = np.zeros(grid.n_nodes)
    log = ConvergenceLog()
    monitor = DivergenceMonitor(threshold=cfg.divergence_threshold)

    logger.info(
        "value iteration: {} nodes, dx={}, gamma_s={}, {}",
        grid.n_nodes, grid.dx, gamma, cfg.differencing.value,
    )

    for n in range(1, cfg.max_iters + 1):
        controls, h, _ = minimize_all_nodes(problem, grid, values, cfg.differencing)
        with np.errstate(all="ignore"):
            new = c_self * values + h / gamma
            residual = float(np.max(np.abs(new - values)))
            sup_norm = float(np.max(np.abs(new)))

        values = new
        log.record(residual, sup_norm)

        if monitor.observe(n, values):
            raise Diverged(n, partial=_result(grid, values, controls, log, n, False))

        if n % _LOG_EVERY == 0:
            logger.debug("sweep {} residual={:.3e} sup={:.4g}", n, residual, sup_norm)

        if residual < cfg.theta:
            controls, _, _ = minimize_all_nodes(problem, grid, values, cfg.differencing)
            logger.info("value iteration converged after {} sweeps", n)
            return _result(grid, values, controls, log, n, True)

    raise NotConverged(
        cfg.max_iters, partial=_result(grid, values, controls, log, cfg.max_iters, False)
    )


def frozen_policy_system(
    problem: LqProblem,
    grid: Grid1D,
    controls: FloatArray,
    differencing: Differencing,
) -> tuple[FloatArray, FloatArray]:
    """
    Writes the frozen-policy Hamiltonian as ``H(V) = M V + cost``.

    With the controls fixed, the quotient each node uses no longer depends on ``V``, so the
    Hamiltonian is affine in the values.

    :return: ``(M, cost)``.
    """

    cost = policy_hamiltonian(problem, grid, np.zeros(grid.n_nodes), controls, differencing)
    columns = [
        policy_hamiltonian(problem, grid, unit, controls, differencing) - cost
        for unit in np.eye(grid.n_nodes)
    ]
    return np.column_stack(columns), cost


def _solve_frozen_policy(
    problem: LqProblem,
    grid: Grid1D,
    cfg: SchemeConfig,
    controls: FloatArray,
    values: FloatArray,
) -> FloatArray:
    matrix, cost = frozen_policy_system(problem, grid, controls, cfg.differencing)
    system = cfg.fixed_point_discount(problem) * np.eye(grid.n_nodes) - matrix

    try:
        return np.linalg.solve(system, cost)
    except np.linalg.LinAlgError:
        logger.warning("frozen-policy system is singular, evaluating by sweeps only")
        return values


def _evaluate(
    problem: LqProblem,
    grid: Grid1D,
    cfg: SchemeConfig,
    controls: FloatArray,
    values: FloatArray,
    log: ConvergenceLog,
    monitor: DivergenceMonitor,
) -> tuple[FloatArray, int]:
    c_self = cfg.self_coefficient(problem)
    gamma = cfg.relaxation_rate

    if cfg.policy_evaluation is PolicyEvaluation.EXACT:
        values = _solve_frozen_policy(problem, grid, cfg, controls, values)

    for n in range(1, cfg.max_policy_evals + 1):
        h = policy_hamiltonian(problem, grid, values, controls, cfg.differencing)
        with np.errstate(all="ignore"):
            new = c_self * values + h / gamma
            residual = float(np.max(np.abs(new - values)))
            sup_norm = float(np.max(np.abs(new)))

        values = new
        log.record(residual, sup_norm)

        if monitor.observe(len(log), values):
            raise Diverged(
                len(log), partial=_result(grid, values, controls, log, len(log), False)
            )

        if residual < cfg.theta_v:
            return values, n

    raise NotConverged(
        cfg.max_policy_evals,
        partial=_result(grid, values, controls, log, len(log), False),
    )


def evaluate_policy(
    problem: LqProblem,
    grid: Grid1D,
    cfg: SchemeConfig,
    policy: PolicyField,
    v0: ValueField | None = None,
) -> SolverResult:
    """
    Evaluates a fixed policy with the relaxed fixed-point update.

    This is the inner loop of :func:`.policy_iteration`; it stops once a sweep changes the values
    by less than ``cfg.theta_v``. With :attr:`.PolicyEvaluation.EXACT` the sweeps start from the
    solution of :func:`.frozen_policy_system`, so one sweep normally suffices.
    """

    cfg.check_against(problem)
    policy.check_bounds(problem.u_min, problem.u_max)

    log = ConvergenceLog()
    monitor = DivergenceMonitor(threshold=cfg.divergence_threshold)
    controls = np.asarray(policy.controls, dtype=np.float64)
    values, sweeps = _evaluate(
        problem, grid, cfg, controls, _initial_values(grid, v0), log, monitor
    )
    return _result(grid, values, controls, log, sweeps, True)


def policy_iteration(
    problem: LqProblem,
    grid: Grid1D,
    cfg: SchemeConfig,
    u0: PolicyField | None = None,
    v0: ValueField | None = None,
) -> SolverResult:
    """
    Runs policy iteration on the HJB grid.

    Alternates policy evaluation (see :func:`.evaluate_policy`) with policy improvement through
    :func:`.minimize_all_nodes`, until the policy changes by less than ``cfg.theta_u``. Each
    evaluation starts from the previous round's values.

    :param u0: The starting policy. Defaults to ``u = 1`` everywhere.
    :param v0: The value field the first evaluation starts from. Defaults to zero.
    :raises Diverged: If an evaluation sweep trips the divergence monitor.
    :raises NotConverged: If an evaluation or the improvement loop runs out of budget.
    """

    cfg.check_against(problem)
    policy = u0 if u0 is not None else PolicyField.constant(grid, 1.0)
    policy.check_bounds(problem.u_min, problem.u_max)

    controls = np.array(policy.controls, dtype=np.float64)
    values = _initial_values(grid, v0)
    log = ConvergenceLog()
    monitor = DivergenceMonitor(threshold=cfg.divergence_threshold)

    for rnd in range(1, cfg.max_policy_improvements + 1):
        values, sweeps = _evaluate(problem, grid, cfg, controls, values, log, monitor)
        improved, _, _ = minimize_all_nodes(problem, grid, values, cfg.differencing)

        change = float(np.max(np.abs(improved - controls)))
        log.improvements.append(ImprovementRow(rnd, sweeps, change))
        logger.debug("improvement round {}: {} sweeps, |du|={:.3e}", rnd, sweeps, change)
        controls = improved

        if change < cfg.theta_u:
            logger.info("policy iteration converged after {} improvement rounds", rnd)
            return _result(grid, values, controls, log, len(log), True)

    raise NotConverged(
        cfg.max_policy_improvements,
        partial=_result(grid, values, controls, log, len(log), False),
    )
