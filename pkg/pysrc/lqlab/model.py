"""
The linear-quadratic control problem, its closed-form Riccati solution, and the Euler-discretised
MDP shared by the learning modules.
"""

from __future__ import annotations

import math
from typing import Self

import attr
import numpy as np
import numpy.typing as npt
from loguru import logger

from lqlab.errors import ConfigError, NoPositiveRoot
from lqlab.grid import FloatArray, Grid1D, PolicyField, ValueField

#: Tolerance on the residual of the Riccati quadratic.
RICCATI_TOLERANCE = 1e-12


@attr.define(frozen=True, slots=True, kw_only=True)
class LqProblem:
    """
    The continuous-time problem ``dx/dt = A x + B u`` with running cost ``Q x^2 + R u^2``,
    discounted at rate ``beta``, posed on a bounded state and control box.
    """

    #: The drift coefficient ``A`` (often written alpha), in 1/time.
    drift: float = attr.field(converter=float)
    #: The discount rate ``beta``, in 1/time.
    discount_rate: float = attr.field(converter=float)
    #: ``Q``, the weight on ``x^2``.
    state_cost: float = attr.field(default=1.0, converter=float)
    #: ``R``, the weight on ``u^2``.
    control_cost: float = attr.field(default=1.0, converter=float)
    #: ``B``, the gain of the control in the dynamics.
    control_gain: float = attr.field(default=1.0, converter=float)

    x_min: float = attr.field(default=-2.0, converter=float)
    x_max: float = attr.field(default=2.0, converter=float)
    u_min: float = attr.field(default=-4.0, converter=float)
    u_max: float = attr.field(default=4.0, converter=float)

    def __attrs_post_init__(self) -> None:
        if not self.discount_rate > 0:
            raise ConfigError("discount_rate", f"must be positive, got {self.discount_rate}")

        if not self.state_cost > 0:
            raise ConfigError("state_cost", f"must be positive, got {self.state_cost}")

        if not self.control_cost > 0:
            raise ConfigError("control_cost", f"must be positive, got {self.control_cost}")

        if self.control_gain == 0:
            raise ConfigError("control_gain", "must be nonzero")

        if not self.x_min < 0 < self.x_max:
            raise ConfigError("x_min", f"state box [{self.x_min}, {self.x_max}] must contain 0")

        if not self.u_min < 0 < self.u_max:
            raise ConfigError("u_min", f"control box [{self.u_min}, {self.u_max}] must contain 0")

    def drift_of(self, x: float, u: float) -> float:
        """
        Gets ``A x + B u``.
        """

        return self.drift * x + self.control_gain * u

    def running_cost(self, x: float, u: float) -> float:
        return self.state_cost * x * x + self.control_cost * u * u

    def state_grid(self, n_nodes: int) -> Grid1D:
        return Grid1D(x_min=self.x_min, x_max=self.x_max, n_nodes=n_nodes)

    def action_grid(self, n_nodes: int) -> Grid1D:
        return Grid1D(x_min=self.u_min, x_max=self.u_max, n_nodes=n_nodes)


@attr.define(frozen=True, slots=True, kw_only=True)
class RiccatiSolution:
    """
    The coefficients of the quadratic value function ``V(x) = gamma x^2 + 2 kappa x + lambda``.

    For the problem without affine terms, ``kappa`` and ``lambda`` are both zero.
    """

    #: The positive root of the Riccati quadratic.
    gamma_coef: float = attr.field(converter=float)
    kappa: float = attr.field(default=0.0, converter=float)
    lambda_const: float = attr.field(default=0.0, converter=float)

    #: ``B / R``, the factor turning the value gradient into the optimal control.
    feedback_scale: float = attr.field(default=1.0, converter=float)

    def __attrs_post_init__(self) -> None:
        if not self.gamma_coef > 0:
            raise NoPositiveRoot(f"Riccati coefficient must be positive, got {self.gamma_coef}")


def riccati_solve(problem: LqProblem) -> RiccatiSolution:
    """
    Solves ``(B^2 / R) G^2 + (beta - 2 A) G - Q = 0`` for its positive root ``G``.

    The product of the roots is ``-Q R / B^2 < 0`` so exactly one root is positive. It is computed
    with the cancellation-free form of the quadratic formula.
    """

    a = problem.control_gain**2 / problem.control_cost
    b = problem.discount_rate - 2 * problem.drift
    c = -problem.state_cost

    disc = b * b - 4 * a * c
    if disc < 0:  # pragma: no cover
        raise NoPositiveRoot(f"negative discriminant {disc}")

    root = math.sqrt(disc)
    gamma = (2 * -c) / (b + root) if b >= 0 else (-b + root) / (2 * a)

    if not gamma > 0:  # pragma: no cover
        raise NoPositiveRoot(f"no positive root for {problem!r}")

    logger.debug(
        "riccati root={} residual={:.3e}", gamma, a * gamma * gamma + b * gamma + c
    )

    return RiccatiSolution(
        gamma_coef=gamma,
        feedback_scale=problem.control_gain / problem.control_cost,
    )


def riccati_residual(problem: LqProblem, sol: RiccatiSolution) -> float:
    """
    Evaluates the Riccati quadratic at ``sol.gamma_coef``. Zero up to rounding for a solution.
    """

    g = sol.gamma_coef
    return (
        (problem.control_gain**2 / problem.control_cost) * g * g
        + (problem.discount_rate - 2 * problem.drift) * g
        - problem.state_cost
    )


def closed_loop_rate(problem: LqProblem, sol: RiccatiSolution) -> float:
    """
    Gets the rate of the closed-loop system ``dx/dt = (A - B^2 G / R) x``.

    Always below ``beta / 2``, but not always negative: ``A = 1, beta = 2`` gives exactly zero.
    """

    return problem.drift - problem.control_gain * sol.feedback_scale * sol.gamma_coef


def analytic_value(sol: RiccatiSolution, x: float) -> float:
    """
    Evaluates the exact value function at ``x``.
    """

    return sol.gamma_coef * x * x + 2 * sol.kappa * x + sol.lambda_const


def analytic_policy(sol: RiccatiSolution, x: float) -> float:
    """
    Evaluates the exact optimal control ``-(B / R)(G x + kappa)`` at ``x``.
    """

    return -sol.feedback_scale * (sol.gamma_coef * x + sol.kappa)


def sample_analytic(sol: RiccatiSolution, grid: Grid1D) -> tuple[ValueField, PolicyField]:
    """
    Samples the exact value function and optimal control at every node of ``grid``.
    """

    xs = grid.nodes
    values = sol.gamma_coef * xs * xs + 2 * sol.kappa * xs + sol.lambda_const
    controls = -sol.feedback_scale * (sol.gamma_coef * xs + sol.kappa)
    return ValueField(grid=grid, values=values), PolicyField(grid=grid, controls=controls)


def check_unconstrained_optimum(problem: LqProblem) -> None:
    """
    Raises :class:`.ConfigError` if the exact optimal control would leave the control box
    somewhere on the state box.

    The solvers impose ``[u_min, u_max]`` on an otherwise unconstrained problem, so the box has to
    be wide enough not to change the answer.
    """

    sol = riccati_solve(problem)
    ends = (analytic_policy(sol, problem.x_min), analytic_policy(sol, problem.x_max))
    if min(ends) < problem.u_min or max(ends) > problem.u_max:
        raise ConfigError(
            "u_min",
            f"optimal control spans [{min(ends):.4g}, {max(ends):.4g}], "
            f"outside [{problem.u_min}, {problem.u_max}]",
        )


@attr.define(frozen=True, slots=True, kw_only=True)
class DiscreteMdp:
    """
    The explicit-Euler discretisation of an :class:`.LqProblem` with step ``dt``.

    Successor states are snapped to the nearest node of ``state_grid``; costs are the running cost
    times ``dt``.
    """

    problem: LqProblem = attr.field()
    #: The Euler step.
    dt: float = attr.field(converter=float)
    #: The per-step discount factor. ``exp(-beta dt)`` when built by :meth:`from_problem`.
    discount_factor: float = attr.field(converter=float)
    state_grid: Grid1D = attr.field()
    action_grid: Grid1D = attr.field()

    def __attrs_post_init__(self) -> None:
        if not self.dt > 0:
            raise ConfigError("dt", f"must be positive, got {self.dt}")

        if not 0 < self.discount_factor < 1:
            raise ConfigError(
                "discount_factor", f"must lie in (0, 1), got {self.discount_factor}"
            )

    @classmethod
    def from_problem(
        cls,
        problem: LqProblem,
        *,
        dt: float = 0.1,
        state_nodes: int = 41,
        action_nodes: int = 81,
    ) -> Self:
        """
        Discretises ``problem`` with discount factor ``exp(-beta dt)``.

        :param dt: The Euler step.
        :param state_nodes: The number of nodes spanning ``[x_min, x_max]``.
        :param action_nodes: The number of nodes spanning ``[u_min, u_max]``.
        """

        return cls(
            problem=problem,
            dt=dt,
            discount_factor=math.exp(-problem.discount_rate * dt),
            state_grid=problem.state_grid(state_nodes),
            action_grid=problem.action_grid(action_nodes),
        )

    def transition_table(self) -> tuple[npt.NDArray[np.intp], FloatArray]:
        """
        Tabulates :func:`mdp_step` over every (state node, action node) pair.

        :return: A pair of ``(n_states, n_actions)`` arrays: successor state indices and costs.
        """

        p = self.problem
        xs = self.state_grid.nodes[:, None]
        us = self.action_grid.nodes[None, :]
        raw = xs + self.dt * (p.drift * xs + p.control_gain * us)
        costs = self.dt * (p.state_cost * xs * xs + p.control_cost * us * us)
        return self.state_grid.snap_indices(raw), costs


def mdp_raw_step(mdp: DiscreteMdp, x: float, u: float) -> float:
    """
    Gets the unsnapped Euler successor ``x + dt (A x + B u)``.
    """

    return x + mdp.dt * mdp.problem.drift_of(x, u)


def mdp_step(mdp: DiscreteMdp, x: float, u: float) -> tuple[float, float]:
    """
    Advances the MDP by one step.

    :return: ``(next_x, cost)`` where ``next_x`` is the grid node nearest the Euler successor
        (clamped to the state box) and ``cost`` is ``dt`` times the running cost at ``(x, u)``.
    """

    grid = mdp.state_grid
    next_x = grid.node(grid.snap_index(mdp_raw_step(mdp, x, u)))
    return next_x, mdp.dt * mdp.problem.running_cost(x, u)


def discrete_riccati_solve(mdp: DiscreteMdp) -> float:
    """
    Solves the scalar discounted discrete Riccati equation of the unsnapped Euler MDP.

    With ``a = 1 + dt A``, ``b = dt B``, ``q = dt Q``, ``r = dt R`` and discount ``g`` the value
    coefficient ``P`` is the positive root of ``g b^2 P^2 + (r (1 - g a^2) - g q b^2) P - q r``.

    :return: ``P``, such that the discrete-time optimal value is ``P x^2``.
    """

    p = mdp.problem
    g = mdp.discount_factor
    a = 1 + mdp.dt * p.drift
    b = mdp.dt * p.control_gain
    q = mdp.dt * p.state_cost
    r = mdp.dt * p.control_cost

    qa = g * b * b
    qb = r * (1 - g * a * a) - g * q * b * b
    qc = -q * r

    root = math.sqrt(qb * qb - 4 * qa * qc)
    return (2 * -qc) / (qb + root) if qb >= 0 else (-qb + root) / (2 * qa)
