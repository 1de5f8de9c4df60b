"""
Semi-gradient Q-learning with a linear approximator over quadratic features.

The approximator is ``Q(x, u, w) = X(x, u) . w`` with ``X(x, u) = [1, x, u, x^2, x u, u^2]``. A
semi-gradient step of size ``lr`` at ``(x, u)`` moves ``Q(x, u, w)`` to
``lr |X|^2 target + (1 - lr |X|^2) Q(x, u, w)``, so the update only keeps nonnegative weights
while ``lr <= 1 / |X|^2``.
"""

from __future__ import annotations

from collections.abc import Iterator
from typing import Any, Self

import attr
import numpy as np
import numpy.typing as npt
from loguru import logger

from lqlab.enums import StepSizeMode
from lqlab.errors import ConfigError, Diverged
from lqlab.grid import FloatArray, frozen_array
from lqlab.model import DiscreteMdp, mdp_raw_step
from lqlab.monitor import DEFAULT_DIVERGENCE_THRESHOLD, DivergenceMonitor, TrainingLog

#: The number of features.
N_FEATURES = 6

#: The names of the features, in order.
FEATURE_NAMES = ("1", "x", "u", "x^2", "xu", "u^2")


@attr.define(frozen=True, slots=True)
class FeatureVector:
    """
    ``[1, x, u, x^2, x u, u^2]`` at a single point.
    """

    components: FloatArray = attr.field(converter=frozen_array)

    @property
    def squared_norm(self) -> float:
        return float(self.components @ self.components)


@attr.define(frozen=True, slots=True)
class FeatureWeights:
    """
    The weight vector of the linear approximator, ordered like :class:`.FeatureVector`.
    """

    w: FloatArray = attr.field(converter=frozen_array)

    def __attrs_post_init__(self) -> None:
        if self.w.shape != (N_FEATURES,):
            raise ValueError(f"expected {N_FEATURES} weights, got shape {self.w.shape}")

    @classmethod
    def zeros(cls) -> Self:
        return cls(np.zeros(N_FEATURES))

    def norm(self) -> float:
        return float(np.linalg.norm(self.w))


def _feature_array(x: float, u: float) -> FloatArray:
    return np.array([1.0, x, u, x * x, x * u, u * u])


def features(x: float, u: float) -> FeatureVector:
    return FeatureVector(_feature_array(x, u))


def feature_matrix(xs: npt.ArrayLike, us: npt.ArrayLike) -> FloatArray:
    """
    Stacks the feature vectors of many points as rows.
    """

    x = np.asarray(xs, dtype=np.float64)
    u = np.asarray(us, dtype=np.float64)
    return np.column_stack((np.ones_like(x), x, u, x * x, x * u, u * u))


def q_tilde(w: FeatureWeights, x: float, u: float) -> float:
    return float(_feature_array(x, u) @ w.w)


def greedy_action(w: FeatureWeights, x: float, u_min: float, u_max: float) -> float:
    """
    Minimises ``Q(x, ., w)`` over ``[u_min, u_max]``.

    With positive curvature this is the first-order condition, clamped to the interval. Otherwise
    the minimum is at an endpoint; ties go to ``u_min``.
    """

    _, _, w_u, _, w_xu, w_uu = (float(c) for c in w.w)

    if w_uu > 0:
        return min(max(-(w_u + w_xu * x) / (2 * w_uu), u_min), u_max)

    return u_min if q_tilde(w, x, u_min) <= q_tilde(w, x, u_max) else u_max


def step_bound(x: float, u: float) -> float:
    """
    Gets ``1 / |X(x, u)|^2``, the largest learning rate keeping the update's self-weight
    nonnegative at ``(x, u)``.
    """

    x2 = x * x
    u2 = u * u
    return 1.0 / (1 + x2 + u2 + x2 * x2 + x2 * u2 + u2 * u2)


def coefficient_nonnegative(lr: float, x: float, u: float, tol: float = 1e-12) -> bool:
    """
    Checks ``1 - lr |X(x, u)|^2 >= 0``.
    """

    return 1 - lr / step_bound(x, u) >= -tol


def bellman_target(w: FeatureWeights, mdp: DiscreteMdp, x: float, u: float) -> float:
    """
    Gets ``cost + discount * min_b Q(x', b, w)`` with the unsnapped Euler successor ``x'``.
    """

    p = mdp.problem
    next_x = mdp_raw_step(mdp, x, u)
    next_u = greedy_action(w, next_x, p.u_min, p.u_max)
    return mdp.dt * p.running_cost(x, u) + mdp.discount_factor * q_tilde(w, next_x, next_u)


def fa_update(w: FeatureWeights, mdp: DiscreteMdp, x: float, u: float, lr: float) -> FeatureWeights:
    """
    Takes one semi-gradient step at ``(x, u)``.

    :return: ``w + lr (target - Q(x, u, w)) X(x, u)``.
    """

    phi = _feature_array(x, u)
    td = bellman_target(w, mdp, x, u) - float(phi @ w.w)
    return FeatureWeights(w.w + lr * td * phi)


def bellman_residual(
    w: FeatureWeights, mdp: DiscreteMdp, xs: npt.ArrayLike, us: npt.ArrayLike
) -> float:
    """
    Gets the mean absolute Bellman residual over the points ``zip(xs, us)``.
    """

    total = 0.0
    count = 0
    for x, u in zip(np.asarray(xs).tolist(), np.asarray(us).tolist(), strict=True):
        total += abs(bellman_target(w, mdp, x, u) - q_tilde(w, x, u))
        count += 1

    return total / count if count else 0.0


def fit_weights(xs: npt.ArrayLike, us: npt.ArrayLike, targets: npt.ArrayLike) -> FeatureWeights:
    """
    Fits the weights to ``targets`` by least squares.
    """

    coef, *_ = np.linalg.lstsq(feature_matrix(xs, us), np.asarray(targets, dtype=np.float64))
    return FeatureWeights(coef)


def one_step_target_weights(mdp: DiscreteMdp, value_coef: float) -> FeatureWeights:
    """
    Gets the exact weights of ``dt (Q x^2 + R u^2) + discount * P (x + dt (A x + B u))^2``.

    :param value_coef: ``P``, the coefficient of the discrete-time value function ``P x^2``.
    """

    p = mdp.problem
    a = 1 + mdp.dt * p.drift
    b = mdp.dt * p.control_gain
    scale = mdp.discount_factor * value_coef
    return FeatureWeights(
        np.array([
            0.0,
            0.0,
            0.0,
            mdp.dt * p.state_cost + scale * a * a,
            2 * scale * a * b,
            mdp.dt * p.control_cost + scale * b * b,
        ])
    )


def one_step_target(mdp: DiscreteMdp, value_coef: float, x: float, u: float) -> float:
    """
    Evaluates the target whose weights :func:`.one_step_target_weights` gives, directly.
    """

    next_x = mdp_raw_step(mdp, x, u)
    return (
        mdp.dt * mdp.problem.running_cost(x, u)
        + mdp.discount_factor * value_coef * next_x * next_x
    )


@attr.define(frozen=True, slots=True, kw_only=True)
class StepSize:
    """
    How the learning rate of :func:`.fa_train` is chosen at each sample.
    """

    mode: StepSizeMode = attr.field()
    #: The constant rate, or the fraction of :func:`.step_bound`.
    value: float = attr.field(converter=float)

    def __attrs_post_init__(self) -> None:
        match self.mode:
            case StepSizeMode.CONSTANT:
                if not np.isfinite(self.value):
                    raise ConfigError("learning_rate", "must be finite")

            case StepSizeMode.BOUND_SCALED:
                if not 0 < self.value <= 1:
                    raise ConfigError("fraction", f"must lie in (0, 1], got {self.value}")

    @classmethod
    def constant(cls, c: float) -> Self:
        return cls(mode=StepSizeMode.CONSTANT, value=c)

    @classmethod
    def bound_scaled(cls, fraction: float) -> Self:
        return cls(mode=StepSizeMode.BOUND_SCALED, value=fraction)

    def at(self, x: float, u: float) -> float:
        match self.mode:
            case StepSizeMode.CONSTANT:
                return self.value

            case StepSizeMode.BOUND_SCALED:
                return self.value * step_bound(x, u)


@attr.define(frozen=True, slots=True, kw_only=True)
class FaTrainingResult:
    """
    The outcome of :func:`.fa_train`. Unpacks as ``weights, log``.
    """

    weights: FeatureWeights = attr.field()
    #: Columns ``step``, ``weight_norm`` and ``bellman_residual``.
    log: TrainingLog = attr.field()

    def __iter__(self) -> Iterator[Any]:
        yield self.weights
        yield self.log


def probe_points(mdp: DiscreteMdp, n_probe: int, seed: int) -> tuple[FloatArray, FloatArray]:
    """
    Draws the fixed set of ``(x, u)`` points the Bellman residual is tracked on.
    """

    p = mdp.problem
    rng = np.random.default_rng([seed, 0])
    return rng.uniform(p.x_min, p.x_max, n_probe), rng.uniform(p.u_min, p.u_max, n_probe)


def fa_train(
    mdp: DiscreteMdp,
    step_size: StepSize,
    n_steps: int,
    seed: int,
    *,
    n_probe: int = 64,
    log_every: int | None = None,
    divergence_threshold: float = DEFAULT_DIVERGENCE_THRESHOLD,
    check_coefficients: bool = False,
) -> FaTrainingResult:
    """
    Trains the linear approximator on points drawn uniformly from the state-control box.

    :param step_size: The learning-rate rule.
    :param n_steps: The number of updates.
    :param seed: Seeds both the training samples and the probe set.
    :param n_probe: The size of the probe set the Bellman residual is averaged over.
    :param log_every: Log every this many steps. Defaults to about a thousand rows per run.
    :param check_coefficients: Assert ``1 - lr |X|^2 >= 0`` at every sample.
    :raises Diverged: If the weight norm passes ``divergence_threshold`` or goes non-finite.
    """

    if n_steps < 0:
        raise ConfigError("n_steps", f"must be nonnegative, got {n_steps}")

    p = mdp.problem
    every = log_every or max(1, n_steps // 1000)
    probe_x, probe_u = probe_points(mdp, n_probe, seed)
    rng = np.random.default_rng([seed, 1])

    w = FeatureWeights.zeros()
    log = TrainingLog(columns=("step", "weight_norm", "bellman_residual"))
    log.append(0, w.norm(), bellman_residual(w, mdp, probe_x, probe_u))
    monitor = DivergenceMonitor(threshold=divergence_threshold)

    logger.info(
        "linear fa: {} {} for {} steps, seed {}",
        step_size.mode.value, step_size.value, n_steps, seed,
    )

    with np.errstate(all="ignore"):
        for step in range(1, n_steps + 1):
            x = float(rng.uniform(p.x_min, p.x_max))
            u = float(rng.uniform(p.u_min, p.u_max))
            lr = step_size.at(x, u)
            if check_coefficients and not coefficient_nonnegative(lr, x, u):
                raise AssertionError(f"negative self-weight at ({x}, {u}) with lr={lr}")

            w = fa_update(w, mdp, x, u, lr)

            if monitor.observe_norm(step, w.norm()):
                log.append(step, w.norm(), float("nan"))
                raise Diverged(step, partial=FaTrainingResult(weights=w, log=log))

            if step % every == 0 or step == n_steps:
                log.append(step, w.norm(), bellman_residual(w, mdp, probe_x, probe_u))

    return FaTrainingResult(weights=w, log=log)
