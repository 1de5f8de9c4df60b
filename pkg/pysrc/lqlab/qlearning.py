from __future__ import annotations

import math
from collections.abc import Iterator
from typing import Any, Self, final, override

import attr
import numpy as np
import numpy.typing as npt
from loguru import logger

from lqlab.enums import LearningRateSchedule
from lqlab.errors import ConfigError, Diverged
from lqlab.grid import FloatArray, Grid1D, PolicyField, ValueField
from lqlab.model import DiscreteMdp, mdp_step, riccati_solve
from lqlab.monitor import DEFAULT_DIVERGENCE_THRESHOLD, DivergenceMonitor, TrainingLog
from lqlab.monotone import (
    MonotonicityReport,
    ValueOperator,
    probe_vector_monotonicity,
    sup_error,
)

#: The central fraction of states used for accuracy metrics.
INTERIOR_FRACTION = 2 / 3


@attr.define(slots=True, kw_only=True)
class QTable:
    """
    Action values over every (state node, action node) pair, with per-pair visit counts.
    """

    state_grid: Grid1D = attr.field()
    action_grid: Grid1D = attr.field()
    q: FloatArray = attr.field()
    visits: npt.NDArray[np.int64] = attr.field()

    def __attrs_post_init__(self) -> None:
        shape = (self.state_grid.n_nodes, self.action_grid.n_nodes)
        if self.q.shape != shape or self.visits.shape != shape:
            raise ValueError(f"Q table has shape {self.q.shape}, grids need {shape}")

    @classmethod
    def zeros(cls, mdp: DiscreteMdp) -> Self:
        shape = (mdp.state_grid.n_nodes, mdp.action_grid.n_nodes)
        return cls(
            state_grid=mdp.state_grid,
            action_grid=mdp.action_grid,
            q=np.zeros(shape),
            visits=np.zeros(shape, dtype=np.int64),
        )

    def copy(self) -> QTable:
        return QTable(
            state_grid=self.state_grid,
            action_grid=self.action_grid,
            q=self.q.copy(),
            visits=self.visits.copy(),
        )

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.q)))


@attr.define(frozen=True, slots=True, kw_only=True)
class QLearnConfig:
    """
    Hyperparameters of a tabular Q-learning run.

    Episodes start from a state node drawn uniformly at random.
    """

    #: The learning rate for :attr:`.LearningRateSchedule.CONSTANT`. Ignored otherwise.
    learning_rate: float = attr.field(default=0.8, converter=float)
    schedule: LearningRateSchedule = attr.field(default=LearningRateSchedule.CONSTANT)
    #: The probability of taking a uniformly random action instead of the greedy one.
    epsilon: float = attr.field(default=0.1, converter=float)
    n_episodes: int = attr.field(default=5000)
    episode_len: int = attr.field(default=50)
    seed: int = attr.field(default=0)
    divergence_threshold: float = attr.field(default=DEFAULT_DIVERGENCE_THRESHOLD)

    def __attrs_post_init__(self) -> None:
        if not 0 <= self.epsilon <= 1:
            raise ConfigError("epsilon", f"must lie in [0, 1], got {self.epsilon}")

        if self.n_episodes < 1:
            raise ConfigError("n_episodes", f"must be at least 1, got {self.n_episodes}")

        if self.episode_len < 1:
            raise ConfigError("episode_len", f"must be at least 1, got {self.episode_len}")

        if not math.isfinite(self.learning_rate):
            raise ConfigError("learning_rate", "must be finite")


def _apply_update(
    qt: QTable, s: int, a: int, next_s: int, cost: float, lr: float, discount: float
) -> float:
    target = cost + discount * float(np.min(qt.q[next_s]))
    qt.q[s, a] = (1 - lr) * qt.q[s, a] + lr * target
    return float(qt.q[s, a])


def q_update(qt: QTable, mdp: DiscreteMdp, s: int, a: int, lr: float) -> float:
    """
    Applies one Q-learning update to the pair ``(s, a)``, in place.

    ``Q(s, a) <- (1 - lr) Q(s, a) + lr (cost + discount * min_b Q(s', b))`` where ``s'`` and
    ``cost`` come from :func:`.mdp_step`.

    :return: The updated entry.
    """

    x = qt.state_grid.node(s)
    u = qt.action_grid.node(a)
    next_x, cost = mdp_step(mdp, x, u)
    return _apply_update(qt, s, a, qt.state_grid.snap_index(next_x), cost, lr, mdp.discount_factor)


def q_update_coefficients(lr: float, discount_factor: float) -> tuple[float, float]:
    """
    Gets the weights of ``Q(s, a)`` and of ``min_b Q(s', b)`` in a single update.

    Both are nonnegative exactly when ``0 <= lr <= 1``.
    """

    return 1 - lr, lr * discount_factor


@final
@attr.define(frozen=True, slots=True, kw_only=True)
class FrozenUpdateOperator(ValueOperator):
    """
    The single-pair update at ``(s, a)`` seen as a map over the flattened Q table.

    Every other entry passes through unchanged.
    """

    n_actions: int = attr.field()
    s: int = attr.field()
    a: int = attr.field()
    next_s: int = attr.field()
    cost: float = attr.field()
    lr: float = attr.field()
    discount: float = attr.field()

    @override
    def __call__(self, values: FloatArray, /) -> FloatArray:
        q = np.array(values, dtype=np.float64).reshape(-1, self.n_actions)
        flat = self.s * self.n_actions + self.a
        target = self.cost + self.discount * float(np.min(q[self.next_s]))
        out = q.reshape(-1)
        out[flat] = (1 - self.lr) * values[flat] + self.lr * target
        return out


def frozen_update_operator(
    mdp: DiscreteMdp, s: int, a: int, lr: float
) -> FrozenUpdateOperator:
    x = mdp.state_grid.node(s)
    next_x, cost = mdp_step(mdp, x, mdp.action_grid.node(a))
    return FrozenUpdateOperator(
        n_actions=mdp.action_grid.n_nodes,
        s=s,
        a=a,
        next_s=mdp.state_grid.snap_index(next_x),
        cost=cost,
        lr=lr,
        discount=mdp.discount_factor,
    )


def probe_q_update_monotonicity(
    mdp: DiscreteMdp, s: int, a: int, lr: float, seed: int, n_pairs: int
) -> MonotonicityReport:
    """
    Probes the single-pair update at ``(s, a)`` with ordered pairs of Q tables.

    Single-entry bumps are placed on ``(s, a)`` itself, the entry whose weight is ``1 - lr``.
    """

    op = frozen_update_operator(mdp, s, a, lr)
    size = mdp.state_grid.n_nodes * mdp.action_grid.n_nodes
    return probe_vector_monotonicity(
        op, size, seed, n_pairs, bump_nodes=[s * mdp.action_grid.n_nodes + a]
    )


def _greedy_order(action_grid: Grid1D) -> npt.NDArray[np.intp]:
    # action indices sorted by |u|, then by index
    us = action_grid.nodes
    return np.lexsort((np.arange(action_grid.n_nodes), np.abs(us)))


def greedy_extract(qt: QTable) -> tuple[ValueField, PolicyField]:
    """
    Gets the greedy value ``min_a Q(s, a)`` and the action achieving it at every state.

    Ties go to the action with the smaller ``|u|``, then to the smaller index.
    """

    order = _greedy_order(qt.action_grid)
    ranked = qt.q[:, order]
    best = order[np.argmin(ranked, axis=1)]
    rows = np.arange(qt.state_grid.n_nodes)

    value = ValueField(grid=qt.state_grid, values=qt.q[rows, best])
    policy = PolicyField(grid=qt.state_grid, controls=qt.action_grid.nodes[best])
    return value, policy


def policy_slope(pi: PolicyField, interior_fraction: float = INTERIOR_FRACTION) -> float:
    """
    Gets the least-squares slope of ``pi`` over the central ``interior_fraction`` of its grid.

    The exact optimal control is linear with slope ``-G``.
    """

    window = pi.grid.interior(interior_fraction)
    xs = pi.grid.nodes[window]
    design = np.column_stack((xs, np.ones_like(xs)))
    coef, *_ = np.linalg.lstsq(design, np.asarray(pi.controls)[window])
    return float(coef[0])


def default_horizon(mdp: DiscreteMdp, tail: float = 1e-10) -> int:
    """
    Gets the smallest horizon whose remaining discount weight is below ``tail``.
    """

    return math.ceil(math.log(tail) / math.log(mdp.discount_factor)) + 1


def rollout_return(mdp: DiscreteMdp, pi: PolicyField, x0: float, horizon: int) -> float:
    """
    Accumulates the discounted cost of following ``pi`` from ``x0`` for ``horizon`` steps.

    The policy is read at the state node nearest each visited state.
    """

    total = 0.0
    weight = 1.0
    x = x0
    for _ in range(horizon):
        x, cost = mdp_step(mdp, x, pi(x))
        total += weight * cost
        weight *= mdp.discount_factor

    return total


def q_sweep(qt: QTable, mdp: DiscreteMdp, lr: float = 1.0) -> float:
    """
    Updates every (s, a) pair synchronously from a frozen copy of the table, in place.

    :return: The sup-norm change of the table.
    """

    next_s, costs = mdp.transition_table()
    old = qt.q.copy()
    target = costs + mdp.discount_factor * np.min(old, axis=1)[next_s]
    qt.q[:] = (1 - lr) * old + lr * target
    return float(np.max(np.abs(qt.q - old)))


def q_value_iteration(mdp: DiscreteMdp, theta: float = 1e-12, max_sweeps: int = 100_000) -> QTable:
    """
    Solves the tabular Bellman equation by repeated synchronous sweeps with ``lr = 1``.
    """

    qt = QTable.zeros(mdp)
    for n in range(1, max_sweeps + 1):
        if q_sweep(qt, mdp) < theta:
            logger.debug("tabular value iteration converged after {} sweeps", n)
            break

    return qt


@attr.define(frozen=True, slots=True, kw_only=True)
class QTrainingResult:
    """
    The outcome of :func:`.train`. Unpacks as ``q_table, log``.
    """

    q_table: QTable = attr.field()
    #: Columns ``episode``, ``max_abs_q`` and ``sup_error``.
    log: TrainingLog = attr.field()
    episodes_run: int = attr.field()

    def __iter__(self) -> Iterator[Any]:
        yield self.q_table
        yield self.log


def train(mdp: DiscreteMdp, cfg: QLearnConfig) -> QTrainingResult:
    """
    Runs epsilon-greedy tabular Q-learning.

    :param mdp: The discretised problem.
    :param cfg: The run's hyperparameters.
    :return: The learned table and the per-episode log.
    :raises Diverged: If the table's sup-norm passes ``cfg.divergence_threshold`` or goes
        non-finite. The partial result is attached.
    """

    rng = np.random.default_rng(cfg.seed)
    qt = QTable.zeros(mdp)
    next_s, costs = mdp.transition_table()
    order = _greedy_order(mdp.action_grid)
    sol = riccati_solve(mdp.problem)

    log = TrainingLog(columns=("episode", "max_abs_q", "sup_error"))
    monitor = DivergenceMonitor(threshold=cfg.divergence_threshold)
    n_states = mdp.state_grid.n_nodes
    n_actions = mdp.action_grid.n_nodes
    discount = mdp.discount_factor

    logger.info(
        "q-learning: lr={} ({}), eps={}, {} episodes of {}, seed {}",
        cfg.learning_rate, cfg.schedule.value, cfg.epsilon,
        cfg.n_episodes, cfg.episode_len, cfg.seed,
    )

    with np.errstate(all="ignore"):
        for episode in range(1, cfg.n_episodes + 1):
            s = int(rng.integers(n_states))
            for _ in range(cfg.episode_len):
                if rng.random() < cfg.epsilon:
                    a = int(rng.integers(n_actions))
                else:
                    a = int(order[np.argmin(qt.q[s, order])])

                match cfg.schedule:
                    case LearningRateSchedule.CONSTANT:
                        lr = cfg.learning_rate

                    case LearningRateSchedule.VISIT_COUNT:
                        lr = 1.0 / (1 + qt.visits[s, a])

                qt.visits[s, a] += 1
                nxt = int(next_s[s, a])
                _apply_update(qt, s, a, nxt, float(costs[s, a]), lr, discount)
                s = nxt

            max_abs = qt.max_abs()
            value, _ = greedy_extract(qt)
            log.append(episode, max_abs, sup_error(value, sol, INTERIOR_FRACTION))

            if monitor.observe(episode, qt.q):
                raise Diverged(
                    episode,
                    partial=QTrainingResult(q_table=qt, log=log, episodes_run=episode),
                )

            if episode % 500 == 0:
                logger.debug("episode {}: max|Q|={:.4g}", episode, max_abs)

    return QTrainingResult(q_table=qt, log=log, episodes_run=cfg.n_episodes)
