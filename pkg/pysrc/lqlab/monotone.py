"""
Monotonicity tests for update operators, and error metrics against the exact solution.

An update ``S`` is monotone if ``v <= w`` componentwise implies ``S(v) <= S(w)``. For a linear
stencil this is the same as every coefficient being nonnegative, so the two checks here (probing
with ordered pairs, and reading off the stencil coefficients) should agree.
"""

from __future__ import annotations

from collections.abc import Sequence
from typing import Protocol, final, override

import attr
import numpy as np
from loguru import logger

from lqlab.enums import Region, Stencil, stencil_for
from lqlab.grid import FloatArray, Grid1D, PolicyField, ValueField
from lqlab.hjb import SchemeConfig, minimize_all_nodes, policy_hamiltonian
from lqlab.model import LqProblem, RiccatiSolution
from lqlab.monitor import DivergenceMonitor as DivergenceMonitor

#: Componentwise decreases smaller than this are rounding, not violations.
VIOLATION_TOLERANCE = 1e-12


class ValueOperator(Protocol):
    """
    Anything mapping a vector of values to a vector of the same length.
    """

    def __call__(self, values: FloatArray, /) -> FloatArray:
        """
        Applies the operator.
        """

        ...


@final
@attr.define(frozen=True, slots=True, kw_only=True)
class SchemeOperator(ValueOperator):
    """
    One sweep of the relaxed fixed-point update on the HJB grid.

    With ``frozen_controls`` set, the minimisation over ``u`` is skipped and the operator is
    linear in the values (plus a constant).
    """

    problem: LqProblem = attr.field()
    grid: Grid1D = attr.field()
    cfg: SchemeConfig = attr.field()
    frozen_controls: FloatArray | None = attr.field(default=None)

    @override
    def __call__(self, values: FloatArray, /) -> FloatArray:
        if self.frozen_controls is None:
            _, h, _ = minimize_all_nodes(self.problem, self.grid, values, self.cfg.differencing)
        else:
            h = policy_hamiltonian(
                self.problem, self.grid, values, self.frozen_controls, self.cfg.differencing
            )

        return self.cfg.self_coefficient(self.problem) * values + h / self.cfg.relaxation_rate


def scheme_operator(
    problem: LqProblem,
    grid: Grid1D,
    cfg: SchemeConfig,
    frozen_policy: PolicyField | None = None,
) -> SchemeOperator:
    """
    Builds the value-iteration sweep as a :class:`.ValueOperator`.

    :param frozen_policy: If provided, the controls are held at this policy instead of being
        re-minimised. This gives the linear operator whose coefficients
        :func:`.coefficient_check` reports.
    """

    frozen = None if frozen_policy is None else np.asarray(frozen_policy.controls)
    return SchemeOperator(problem=problem, grid=grid, cfg=cfg, frozen_controls=frozen)


@attr.define(frozen=True, slots=True, kw_only=True)
class MonotonicityReport:
    """
    The result of probing an operator with ordered pairs.
    """

    n_pairs_tested: int = attr.field()
    #: The number of components, over all pairs, where ``S(v + d) < S(v)`` beyond tolerance.
    n_violations: int = attr.field()
    #: The most negative componentwise gap ``S(v + d) - S(v)`` seen.
    worst_violation: float = attr.field()
    #: The component where ``worst_violation`` occurred, if it is a violation.
    violating_node: int | None = attr.field(default=None)

    @property
    def monotone(self) -> bool:
        return self.n_violations == 0


def _draw_pair(
    size: int, seed: int, k: int, bump_nodes: Sequence[int] | None
) -> tuple[FloatArray, FloatArray]:
    # one stream per pair, so results do not depend on the order pairs are evaluated in
    rng = np.random.default_rng([seed, k])
    v = rng.normal(size=size)
    d = np.zeros(size)

    match k % 3:
        case 0:
            nodes = bump_nodes if bump_nodes else range(size)
            d[nodes[int(rng.integers(len(nodes)))]] = rng.uniform(0.0, 1.0)

        case 1:
            d[:] = rng.uniform(0.0, 1.0)

        case _:
            d = rng.uniform(0.0, 1.0, size=size)

    return v, d


def probe_vector_monotonicity(
    apply_s: ValueOperator,
    size: int,
    seed: int,
    n_pairs: int,
    bump_nodes: Sequence[int] | None = None,
) -> MonotonicityReport:
    """
    Probes ``apply_s`` on vectors of length ``size``. See :func:`.probe_operator_monotonicity`.
    """

    n_violations = 0
    worst = 0.0
    worst_node: int | None = None

    for k in range(n_pairs):
        v, d = _draw_pair(size, seed, k, bump_nodes)
        gap = np.asarray(apply_s(v + d)) - np.asarray(apply_s(v))

        n_violations += int(np.count_nonzero(gap < -VIOLATION_TOLERANCE))
        i = int(np.argmin(gap))
        if gap[i] < worst:
            worst = float(gap[i])
            worst_node = i

    report = MonotonicityReport(
        n_pairs_tested=n_pairs,
        n_violations=n_violations,
        worst_violation=worst,
        violating_node=worst_node if n_violations else None,
    )
    logger.debug("monotonicity probe: {}", report)
    return report


def probe_operator_monotonicity(
    apply_s: ValueOperator,
    grid: Grid1D,
    seed: int,
    n_pairs: int,
    bump_nodes: Sequence[int] | None = None,
) -> MonotonicityReport:
    """
    Checks ``apply_s`` for order preservation with randomly drawn ordered pairs.

    Every pair is ``(v, v + d)`` with ``d >= 0`` componentwise. Pairs cycle through three kinds of
    bump: a single node, a constant shift, and an independent nonnegative bump at every node.

    :param apply_s: The operator. Must be deterministic.
    :param grid: The grid the operator acts on.
    :param seed: Seeds the pair streams. Pair ``k`` is drawn from its own stream keyed on
        ``(seed, k)``.
    :param n_pairs: The number of pairs to draw.
    :param bump_nodes: If provided, single-node bumps are only placed on these nodes.
    """

    return probe_vector_monotonicity(apply_s, grid.n_nodes, seed, n_pairs, bump_nodes)


@attr.define(frozen=True, slots=True)
class CoefficientViolation:
    node: int
    #: One of ``c_minus``, ``c_center`` or ``c_plus``.
    name: str
    value: float


@attr.define(frozen=True, slots=True, kw_only=True)
class CoefficientReport:
    """
    The stencil weights of ``V[i-1]``, ``V[i]`` and ``V[i+1]`` in each node's update.
    """

    #: An ``(n_nodes, 3)`` array of ``(c_minus, c_center, c_plus)`` rows.
    coefficients: FloatArray = attr.field()
    #: Every coefficient below ``-VIOLATION_TOLERANCE``.
    violations: list[CoefficientViolation] = attr.field(factory=list)

    @property
    def monotone(self) -> bool:
        return not self.violations


_COEFFICIENT_NAMES = ("c_minus", "c_center", "c_plus")


def coefficient_check(
    problem: LqProblem, grid: Grid1D, cfg: SchemeConfig, v: ValueField
) -> CoefficientReport:
    """
    Extracts the linear stencil of the update at every node with the minimising control frozen,
    and reports the negative coefficients.

    :param v: The value field the controls are minimised against.
    """

    values = np.asarray(v.values)
    u_star, _, in_r1 = minimize_all_nodes(problem, grid, values, cfg.differencing)
    xs = grid.nodes
    c0 = cfg.self_coefficient(problem)
    scale = cfg.relaxation_rate * grid.dx

    coefficients = np.zeros((grid.n_nodes, 3))
    violations: list[CoefficientViolation] = []

    for i in range(grid.n_nodes):
        region = Region.R1 if in_r1[i] else Region.R2
        b = problem.drift_of(float(xs[i]), float(u_star[i]))

        match stencil_for(cfg.differencing, region, i, grid.n_nodes):
            case Stencil.FORWARD:
                row = (0.0, c0 - b / scale, b / scale)

            case Stencil.BACKWARD:
                row = (-b / scale, c0 + b / scale, 0.0)

            case Stencil.CENTRAL:
                row = (-b / (2 * scale), c0, b / (2 * scale))

        coefficients[i] = row
        violations.extend(
            CoefficientViolation(i, name, value)
            for name, value in zip(_COEFFICIENT_NAMES, row, strict=True)
            if value < -VIOLATION_TOLERANCE
        )

    if violations:
        logger.debug("{} negative stencil coefficients", len(violations))

    return CoefficientReport(coefficients=coefficients, violations=violations)


def sup_error(v: ValueField, sol: RiccatiSolution, interior_fraction: float) -> float:
    """
    Gets the largest deviation from the exact value function over the central
    ``interior_fraction`` of the nodes.
    """

    grid = v.grid
    window = grid.interior(interior_fraction)
    xs = grid.nodes[window]
    exact = sol.gamma_coef * xs * xs + 2 * sol.kappa * xs + sol.lambda_const
    return float(np.max(np.abs(np.asarray(v.values)[window] - exact)))
