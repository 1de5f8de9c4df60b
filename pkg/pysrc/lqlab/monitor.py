import math

import attr
import numpy as np
import numpy.typing as npt
from loguru import logger

#: The sup-norm above which an iterate counts as diverged. Far above any exact value on the
#: default domain.
DEFAULT_DIVERGENCE_THRESHOLD = 1e6


@attr.define(slots=True, kw_only=True)
class DivergenceMonitor:
    """
    Trips the first time an iterate's norm exceeds ``threshold`` or an iterate contains a
    non-finite value.

    Once tripped, the monitor stays tripped.
    """

    threshold: float = attr.field(default=DEFAULT_DIVERGENCE_THRESHOLD)
    tripped: bool = attr.field(default=False, init=False)
    trip_iteration: int | None = attr.field(default=None, init=False)

    def __attrs_post_init__(self) -> None:
        if not self.threshold > 0:
            raise ValueError(f"divergence threshold must be positive, got {self.threshold}")

    def _trip(self, iteration: int, norm: float) -> None:
        self.tripped = True
        self.trip_iteration = iteration
        logger.warning("divergence at iteration {}: norm={}", iteration, norm)

    def observe(self, iteration: int, values: npt.ArrayLike) -> bool:
        """
        Checks the sup-norm of ``values``.

        :return: Whether the monitor is tripped after this observation.
        """

        if self.tripped:
            return True

        arr = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            self._trip(iteration, math.inf)
            return True

        norm = float(np.max(np.abs(arr))) if arr.size else 0.0
        if norm > self.threshold:
            self._trip(iteration, norm)

        return self.tripped

    def observe_norm(self, iteration: int, norm: float) -> bool:
        """
        Like :meth:`observe`, but for a precomputed norm (e.g. the Euclidean norm of a weight
        vector).
        """

        if self.tripped:
            return True

        if not math.isfinite(norm) or norm > self.threshold:
            self._trip(iteration, norm)

        return self.tripped


@attr.define(slots=True, kw_only=True)
class TrainingLog:
    """
    Per-episode (or per-step) metrics of a learning run, as named columns.
    """

    columns: tuple[str, ...] = attr.field()
    rows: list[tuple[float, ...]] = attr.field(factory=list)

    def append(self, *values: float) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")

        self.rows.append(values)

    def column(self, name: str) -> list[float]:
        """
        Gets every value recorded for the column ``name``.
        """

        idx = self.columns.index(name)
        return [row[idx] for row in self.rows]

    def __len__(self) -> int:
        return len(self.rows)
