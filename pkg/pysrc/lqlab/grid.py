from __future__ import annotations

import math
from typing import Self

import attr
import numpy as np
import numpy.typing as npt

from lqlab.errors import ConfigError

type FloatArray = npt.NDArray[np.float64]


def frozen_array(values: npt.ArrayLike) -> FloatArray:
    """
    Copies ``values`` into a read-only ``float64`` array.
    """

    arr = np.array(values, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@attr.define(frozen=True, slots=True, kw_only=True)
class Grid1D:
    """
    A uniform mesh over ``[x_min, x_max]``.

    Node ``i`` sits at ``x_min + i * dx`` for ``0 <= i < n_nodes``. Every field type in this
    library is indexed the same way.
    """

    #: The leftmost node.
    x_min: float = attr.field(converter=float)

    #: The rightmost node.
    x_max: float = attr.field(converter=float)

    #: The number of nodes, including both ends.
    n_nodes: int = attr.field()

    def __attrs_post_init__(self) -> None:
        if not self.x_min < self.x_max:
            raise ConfigError("x_max", f"must exceed x_min ({self.x_min}), got {self.x_max}")

        if self.n_nodes < 3:
            raise ConfigError("n_nodes", f"need at least 3 nodes, got {self.n_nodes}")

    @classmethod
    def from_spacing(cls, x_min: float, x_max: float, dx: float) -> Self:
        """
        Creates a grid from a target spacing instead of a node count.

        :param dx: The spacing. ``(x_max - x_min) / dx`` must be (close to) a whole number.
        """

        if dx <= 0:
            raise ConfigError("dx", f"must be positive, got {dx}")

        cells = (x_max - x_min) / dx
        n_cells = round(cells)
        if n_cells < 1 or not math.isclose(cells, n_cells, rel_tol=1e-9):
            raise ConfigError("dx", f"{dx} does not divide [{x_min}, {x_max}] evenly")

        return cls(x_min=x_min, x_max=x_max, n_nodes=n_cells + 1)

    @property
    def dx(self) -> float:
        """
        The node spacing, ``(x_max - x_min) / (n_nodes - 1)``.
        """

        return (self.x_max - self.x_min) / (self.n_nodes - 1)

    @property
    def nodes(self) -> FloatArray:
        """
        Every node position, in index order.
        """

        return self.x_min + np.arange(self.n_nodes, dtype=np.float64) * self.dx

    def node(self, i: int) -> float:
        """
        Gets the position of node ``i``.
        """

        if not 0 <= i < self.n_nodes:
            raise IndexError(f"node {i} outside grid of {self.n_nodes} nodes")

        return self.x_min + i * self.dx

    def snap_index(self, x: float) -> int:
        """
        Gets the index of the node nearest to ``x``, clamped to the grid.

        An exact midpoint goes to the node with the smaller index.
        """

        t = (x - self.x_min) / self.dx
        if t <= 0:
            return 0

        if t >= self.n_nodes - 1:
            return self.n_nodes - 1

        lower = math.floor(t)
        return lower + 1 if t - lower > 0.5 else lower

    def snap_indices(self, xs: npt.ArrayLike) -> npt.NDArray[np.intp]:
        """
        Vectorised :meth:`snap_index`.
        """

        t = np.clip((np.asarray(xs, dtype=np.float64) - self.x_min) / self.dx, 0, self.n_nodes - 1)
        lower = np.floor(t)
        return (lower + (t - lower > 0.5)).astype(np.intp)

    def interior(self, fraction: float) -> slice:
        """
        Gets the slice of nodes making up the central ``fraction`` of the grid.

        Acceptance metrics use ``fraction = 2/3``, i.e. the outer sixth at each end is dropped.
        """

        if not 0 < fraction <= 1:
            raise ValueError(f"interior fraction must lie in (0, 1], got {fraction}")

        cut = math.floor(self.n_nodes * (1 - fraction) / 2)
        return slice(cut, self.n_nodes - cut)

    def is_symmetric(self) -> bool:
        """
        Checks if the grid is symmetric about zero.
        """

        return math.isclose(self.x_min, -self.x_max)


@attr.define(frozen=True, slots=True, kw_only=True)
class ValueField:
    """
    A value estimate at every node of a grid.
    """

    grid: Grid1D = attr.field()
    values: FloatArray = attr.field(converter=frozen_array)

    def __attrs_post_init__(self) -> None:
        if self.values.shape != (self.grid.n_nodes,):
            raise ValueError(
                f"value field has shape {self.values.shape}, grid has {self.grid.n_nodes} nodes"
            )

    @classmethod
    def zeros(cls, grid: Grid1D) -> Self:
        return cls(grid=grid, values=np.zeros(grid.n_nodes))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


@attr.define(frozen=True, slots=True, kw_only=True)
class PolicyField:
    """
    A control at every node of a grid.
    """

    grid: Grid1D = attr.field()
    controls: FloatArray = attr.field(converter=frozen_array)

    def __attrs_post_init__(self) -> None:
        if self.controls.shape != (self.grid.n_nodes,):
            raise ValueError(
                f"policy field has shape {self.controls.shape}, "
                f"grid has {self.grid.n_nodes} nodes"
            )

    @classmethod
    def constant(cls, grid: Grid1D, u: float) -> Self:
        """
        Creates a policy applying ``u`` everywhere. Policy iteration starts from ``u = 1``.
        """

        return cls(grid=grid, controls=np.full(grid.n_nodes, u, dtype=np.float64))

    def check_bounds(self, u_min: float, u_max: float) -> None:
        """
        Raises :class:`.ConfigError` if any control falls outside ``[u_min, u_max]``.
        """

        if np.any(self.controls < u_min) or np.any(self.controls > u_max):
            raise ConfigError(
                "policy", f"controls must lie in [{u_min}, {u_max}]"
            )

    def __call__(self, x: float) -> float:
        """
        Evaluates the policy at the node nearest ``x``.
        """

        return float(self.controls[self.grid.snap_index(x)])
