from __future__ import annotations

from typing import Any


class LqlabError(Exception):
    """
    Base class for every error raised by this library.
    """


class ConfigError(LqlabError, ValueError):
    """
    Raised when a problem, scheme or experiment configuration fails validation.
    """

    def __init__(self, field: str, message: str, *, line: int | None = None) -> None:
        #: The dotted name of the offending field.
        self.field = field
        #: The line of the configuration file, when known.
        self.line = line
        #: The diagnostic, without the location prefix.
        self.message = message

        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{field}: {message}")


class NoPositiveRoot(LqlabError, ArithmeticError):
    """
    Raised when the Riccati quadratic has no positive root.

    This cannot happen for positive cost weights; seeing it means the problem bypassed
    validation.
    """


class SolverError(LqlabError):
    """
    Base class for unsuccessful solver or learner outcomes.

    The partial result is carried along so that callers can still write out what was computed.
    """

    def __init__(self, message: str, *, partial: Any = None) -> None:
        super().__init__(message)

        #: Whatever the solver had computed when it stopped. The concrete type depends on the
        #: raising function: a ``SolverResult``, a ``QTrainingResult`` or an ``FaTrainingResult``.
        self.partial = partial


class Diverged(SolverError):
    """
    Raised when the divergence monitor trips.
    """

    def __init__(self, trip_iteration: int, *, partial: Any = None) -> None:
        super().__init__(f"diverged at iteration {trip_iteration}", partial=partial)

        #: The iteration (or episode, or step) on which the monitor tripped.
        self.trip_iteration = trip_iteration


class NotConverged(SolverError):
    """
    Raised when an iteration budget runs out before the convergence threshold is met.
    """

    def __init__(self, iterations: int, *, partial: Any = None) -> None:
        super().__init__(f"no convergence after {iterations} iterations", partial=partial)

        #: The number of iterations performed.
        self.iterations = iterations
