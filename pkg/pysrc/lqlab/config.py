"""
Experiment configuration files.

A configuration file is a flat JSON object whose keys name sub-configurations with dots, e.g.
``"problem.drift": 0.5``. Every key has a default; unknown keys are errors.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from collections.abc import Callable, Mapping
from pathlib import Path
from typing import Any, Self

import attr

from lqlab.enums import (
    Differencing,
    ExperimentKind,
    FixedPointForm,
    LearningRateSchedule,
    PolicyEvaluation,
    StepSizeMode,
)
from lqlab.errors import ConfigError
from lqlab.grid import Grid1D
from lqlab.hjb import SchemeConfig, required_relaxation_rate
from lqlab.linear_fa import StepSize
from lqlab.model import DiscreteMdp, LqProblem, check_unconstrained_optimum
from lqlab.qlearning import QLearnConfig

#: The environment variable naming the default output root.
OUTPUT_ENV_VAR = "LQLAB_OUT"

#: Where output goes when nothing else says.
FALLBACK_OUTPUT = "lqlab-out"


@attr.define(frozen=True, slots=True)
class Option:
    """
    A single configuration key.
    """

    default: Any
    kinds: tuple[type, ...]
    #: For string options, the accepted values.
    choices: tuple[str, ...] | None = None
    nullable: bool = False

    @property
    def numeric(self) -> bool:
        return float in self.kinds or int in self.kinds


def _enum_option(default: str, cls: type[Any]) -> Option:
    return Option(default, (str,), tuple(m.value for m in cls))


_FLOAT = (float, int)

#: Every accepted key, with its default.
OPTIONS: dict[str, Option] = {
    "kind": _enum_option("hjb-vi", ExperimentKind),
    "seed": Option(0, (int,)),
    "out": Option(None, (str,), nullable=True),
    "problem.drift": Option(0.5, _FLOAT),
    "problem.discount_rate": Option(1.0, _FLOAT),
    "problem.state_cost": Option(1.0, _FLOAT),
    "problem.control_cost": Option(1.0, _FLOAT),
    "problem.control_gain": Option(1.0, _FLOAT),
    "problem.x_min": Option(-2.0, _FLOAT),
    "problem.x_max": Option(2.0, _FLOAT),
    "problem.u_min": Option(-4.0, _FLOAT),
    "problem.u_max": Option(4.0, _FLOAT),
    "grid.dx": Option(0.01, _FLOAT),
    "grid.n_nodes": Option(None, (int,), nullable=True),
    # "auto" resolves to the smallest rate satisfying the mesh bound
    "scheme.relaxation_rate": Option("auto", (*_FLOAT, str), ("auto",)),
    "scheme.differencing": _enum_option("upwind", Differencing),
    "scheme.theta": Option(1e-8, _FLOAT),
    "scheme.max_iters": Option(1_000_000, (int,)),
    "scheme.theta_v": Option(1e-8, _FLOAT),
    "scheme.theta_u": Option(1e-8, _FLOAT),
    "scheme.max_policy_evals": Option(1_000_000, (int,)),
    "scheme.max_policy_improvements": Option(100, (int,)),
    "scheme.policy_evaluation": _enum_option("exact", PolicyEvaluation),
    "scheme.fixed_point_form": _enum_option("consistent", FixedPointForm),
    "scheme.divergence_threshold": Option(1e6, _FLOAT),
    "scheme.initial_policy": Option(1.0, _FLOAT),
    "mdp.dt": Option(0.1, _FLOAT),
    "mdp.state_nodes": Option(41, (int,)),
    "mdp.action_nodes": Option(81, (int,)),
    "qlearn.learning_rate": Option(0.8, _FLOAT),
    "qlearn.schedule": _enum_option("constant", LearningRateSchedule),
    "qlearn.epsilon": Option(0.1, _FLOAT),
    "qlearn.n_episodes": Option(5000, (int,)),
    "qlearn.episode_len": Option(50, (int,)),
    "linfa.mode": _enum_option("bound-scaled", StepSizeMode),
    "linfa.learning_rate": Option(1e-3, _FLOAT),
    "linfa.fraction": Option(0.5, _FLOAT),
    "linfa.n_steps": Option(100_000, (int,)),
    "linfa.n_probe": Option(64, (int,)),
    "probe.n_pairs": Option(1000, (int,)),
    "sweep.kind": Option("hjb-vi", (str,), tuple(
        k.value for k in ExperimentKind if k is not ExperimentKind.SWEEP
    )),
    "sweep.param": Option(None, (str,), nullable=True),
    "sweep.values": Option([], (list,)),
}


def _line_of(text: str | None, key: str) -> int | None:
    if text is None:
        return None

    pattern = re.compile(rf'"{re.escape(key)}"\s*:')
    for lineno, line in enumerate(text.splitlines(), start=1):
        if pattern.search(line):
            return lineno

    return None


def _check_value(key: str, value: Any, text: str | None) -> Any:
    opt = OPTIONS[key]
    line = _line_of(text, key)

    if value is None:
        if opt.nullable:
            return None

        raise ConfigError(key, "may not be null", line=line)

    # bool is an int subclass, but never a valid number here
    if isinstance(value, bool) or not isinstance(value, opt.kinds):
        expected = "/".join(k.__name__ for k in opt.kinds)
        raise ConfigError(key, f"expected {expected}, got {value!r}", line=line)

    if isinstance(value, str) and opt.choices is not None and value not in opt.choices:
        raise ConfigError(
            key, f"expected one of {', '.join(opt.choices)}, got {value!r}", line=line
        )

    if key == "sweep.values":
        for item in value:
            if isinstance(item, bool) or not isinstance(item, (int, float)):
                raise ConfigError(key, f"sweep values must be numbers, got {item!r}", line=line)

    if isinstance(value, int) and float in opt.kinds:
        return float(value)

    return value


@attr.define(frozen=True, slots=True, kw_only=True)
class ExperimentConfig:
    """
    A validated, fully defaulted experiment configuration.
    """

    #: Every key in :data:`OPTIONS`, with its value.
    values: Mapping[str, Any] = attr.field()

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any], *, text: str | None = None) -> Self:
        """
        Validates a flat mapping of dotted keys.

        :param text: The JSON source, used to attach line numbers to diagnostics.
        :raises ConfigError: On unknown keys, wrong types, or failing invariants.
        """

        unknown = sorted(set(raw) - set(OPTIONS))
        if unknown:
            raise ConfigError(unknown[0], "unknown key", line=_line_of(text, unknown[0]))

        values = {key: opt.default for key, opt in OPTIONS.items()}
        for key, value in raw.items():
            values[key] = _check_value(key, value, text)

        config = cls(values=values)
        config._validate(text)
        return config

    def _validate(self, text: str | None) -> None:
        for prefix, build in self._builders():
            try:
                build()
            except ConfigError as e:
                key = e.field if e.field in OPTIONS else f"{prefix}.{e.field}"
                if key not in OPTIONS:
                    key = prefix

                raise ConfigError(key, e.message, line=_line_of(text, key)) from e

        if self.kind is ExperimentKind.SWEEP and self.values["sweep.param"] is not None:
            check_sweep_param(self.values["sweep.param"])

    def _builders(self) -> list[tuple[str, Callable[[], object]]]:
        builders: list[tuple[str, Callable[[], object]]] = [
            ("problem", self.problem),
            ("grid", self.grid),
            ("scheme", self.scheme),
            ("mdp", self.mdp),
            ("qlearn", self.qlearn),
            ("linfa", self.step_size),
        ]

        if self.experiment_kind in (ExperimentKind.HJB_VI, ExperimentKind.HJB_PI):
            builders.append(("problem", lambda: check_unconstrained_optimum(self.problem())))

        return builders

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def kind(self) -> ExperimentKind:
        return ExperimentKind(self.values["kind"])

    @property
    def experiment_kind(self) -> ExperimentKind:
        """
        The kind of a single run: :attr:`kind`, or ``sweep.kind`` for sweeps.
        """

        if self.kind is ExperimentKind.SWEEP:
            return ExperimentKind(self.values["sweep.kind"])

        return self.kind

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    def problem(self) -> LqProblem:
        v = self.values
        return LqProblem(
            drift=v["problem.drift"],
            discount_rate=v["problem.discount_rate"],
            state_cost=v["problem.state_cost"],
            control_cost=v["problem.control_cost"],
            control_gain=v["problem.control_gain"],
            x_min=v["problem.x_min"],
            x_max=v["problem.x_max"],
            u_min=v["problem.u_min"],
            u_max=v["problem.u_max"],
        )

    def grid(self) -> Grid1D:
        p = self.problem()
        if (n := self.values["grid.n_nodes"]) is not None:
            return Grid1D(x_min=p.x_min, x_max=p.x_max, n_nodes=n)

        return Grid1D.from_spacing(p.x_min, p.x_max, self.values["grid.dx"])

    def scheme(self) -> SchemeConfig:
        v = self.values
        rate = v["scheme.relaxation_rate"]
        if rate == "auto":
            rate = required_relaxation_rate(self.problem(), self.grid())

        scheme = SchemeConfig(
            relaxation_rate=rate,
            differencing=Differencing(v["scheme.differencing"]),
            theta=v["scheme.theta"],
            max_iters=v["scheme.max_iters"],
            theta_v=v["scheme.theta_v"],
            theta_u=v["scheme.theta_u"],
            max_policy_evals=v["scheme.max_policy_evals"],
            max_policy_improvements=v["scheme.max_policy_improvements"],
            policy_evaluation=PolicyEvaluation(v["scheme.policy_evaluation"]),
            fixed_point_form=FixedPointForm(v["scheme.fixed_point_form"]),
            divergence_threshold=v["scheme.divergence_threshold"],
        )
        scheme.check_against(self.problem())
        return scheme

    def mdp(self) -> DiscreteMdp:
        v = self.values
        return DiscreteMdp.from_problem(
            self.problem(),
            dt=v["mdp.dt"],
            state_nodes=v["mdp.state_nodes"],
            action_nodes=v["mdp.action_nodes"],
        )

    def qlearn(self) -> QLearnConfig:
        v = self.values
        return QLearnConfig(
            learning_rate=v["qlearn.learning_rate"],
            schedule=LearningRateSchedule(v["qlearn.schedule"]),
            epsilon=v["qlearn.epsilon"],
            n_episodes=v["qlearn.n_episodes"],
            episode_len=v["qlearn.episode_len"],
            seed=self.seed,
            divergence_threshold=v["scheme.divergence_threshold"],
        )

    def step_size(self) -> StepSize:
        v = self.values
        match StepSizeMode(v["linfa.mode"]):
            case StepSizeMode.CONSTANT:
                return StepSize.constant(v["linfa.learning_rate"])

            case StepSizeMode.BOUND_SCALED:
                return StepSize.bound_scaled(v["linfa.fraction"])

    def with_value(self, key: str, value: Any) -> ExperimentConfig:
        """
        Gets a re-validated copy with ``key`` set to ``value``.
        """

        if key not in OPTIONS:
            raise ConfigError(key, "unknown key")

        raw = dict(self.values)
        raw[key] = value
        return ExperimentConfig.from_mapping(raw)

    def canonical_json(self) -> str:
        """
        Serialises every key, sorted, without whitespace. Floats use their shortest round-trip
        representation.
        """

        return json.dumps(dict(self.values), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def check_sweep_param(param: str) -> None:
    """
    Raises :class:`.ConfigError` unless ``param`` names a numeric key.
    """

    opt = OPTIONS.get(param)
    if opt is None or not opt.numeric:
        raise ConfigError("sweep.param", f"{param!r} does not name a numeric config key")


def parse_config(text: str) -> ExperimentConfig:
    """
    Parses and validates the JSON text of a configuration file.
    """

    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("<json>", e.msg, line=e.lineno) from e

    if not isinstance(raw, dict):
        raise ConfigError("<json>", "top level must be an object", line=1)

    mapping: dict[str, Any] = raw  # pyright: ignore[reportUnknownVariableType]
    return ExperimentConfig.from_mapping(mapping, text=text)


def load_config(path: str | os.PathLike[str]) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError("<file>", f"cannot read {os.fspath(path)}: {e.strerror}") from e

    return parse_config(text)


def resolve_output_root(cli_out: str | None, config: ExperimentConfig) -> Path:
    """
    Picks the output root: ``--out``, then ``$LQLAB_OUT``, then the config's ``out``, then
    ``./lqlab-out``.
    """

    for candidate in (cli_out, os.environ.get(OUTPUT_ENV_VAR), config.values["out"]):
        if candidate:
            return Path(candidate)

    return Path(FALLBACK_OUTPUT)
