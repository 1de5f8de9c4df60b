import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lqlab import ConfigError, Grid1D, PolicyField, ValueField
from lqlab.enums import Differencing, Region, Stencil, stencil_for


def test_from_spacing() -> None:
    grid = Grid1D.from_spacing(-2.0, 2.0, 0.01)

    assert grid.n_nodes == 401
    assert grid.dx == pytest.approx(0.01)
    assert grid.node(0) == -2.0
    assert grid.node(400) == pytest.approx(2.0)
    assert grid.is_symmetric()


def test_grid_validation() -> None:
    with pytest.raises(ConfigError, match="n_nodes"):
        Grid1D(x_min=-1.0, x_max=1.0, n_nodes=2)

    with pytest.raises(ConfigError, match="x_max"):
        Grid1D(x_min=1.0, x_max=-1.0, n_nodes=5)

    with pytest.raises(ConfigError, match="evenly"):
        Grid1D.from_spacing(-2.0, 2.0, 0.3)

    with pytest.raises(ConfigError, match="dx"):
        Grid1D.from_spacing(-2.0, 2.0, -0.1)


def test_node_out_of_range() -> None:
    grid = Grid1D(x_min=-1.0, x_max=1.0, n_nodes=5)

    with pytest.raises(IndexError):
        grid.node(5)


def test_snapping() -> None:
    grid = Grid1D(x_min=-1.0, x_max=1.0, n_nodes=5)

    assert grid.snap_index(0.1) == 2
    assert grid.snap_index(0.26) == 3
    # midpoints go to the smaller index
    assert grid.snap_index(0.25) == 2
    assert grid.snap_index(-0.25) == 1
    # clamped
    assert grid.snap_index(7.0) == 4
    assert grid.snap_index(-7.0) == 0


@given(st.lists(st.floats(min_value=-3.0, max_value=3.0), min_size=1, max_size=50))
def test_vectorised_snapping_agrees(xs: list[float]) -> None:
    grid = Grid1D(x_min=-2.0, x_max=2.0, n_nodes=41)

    assert grid.snap_indices(xs).tolist() == [grid.snap_index(x) for x in xs]


def test_interior() -> None:
    grid = Grid1D.from_spacing(-2.0, 2.0, 0.01)
    window = grid.interior(2 / 3)

    assert window == slice(66, 335)
    assert grid.nodes[window][0] == pytest.approx(-1.34)
    assert grid.interior(1.0) == slice(0, 401)

    with pytest.raises(ValueError):
        grid.interior(0.0)


def test_fields() -> None:
    grid = Grid1D(x_min=-1.0, x_max=1.0, n_nodes=5)
    v = ValueField(grid=grid, values=[1.0, -3.0, 0.0, 2.0, 0.5])

    assert v.sup_norm() == 3.0
    assert ValueField.zeros(grid).sup_norm() == 0.0

    with pytest.raises(ValueError):
        v.values[0] = 4.0

    with pytest.raises(ValueError, match="shape"):
        ValueField(grid=grid, values=np.zeros(4))


def test_policy_field() -> None:
    grid = Grid1D(x_min=-1.0, x_max=1.0, n_nodes=5)
    pi = PolicyField(grid=grid, controls=[0.5, 0.25, 0.0, -0.25, -0.5])

    assert pi(0.9) == -0.5
    assert pi(0.0) == 0.0
    assert PolicyField.constant(grid, 1.0).controls.tolist() == [1.0] * 5

    pi.check_bounds(-1.0, 1.0)
    with pytest.raises(ConfigError, match="policy"):
        pi.check_bounds(-0.1, 0.1)


def test_boundary_stencils() -> None:
    for mode in Differencing:
        for region in Region:
            assert stencil_for(mode, region, 0, 10) is Stencil.FORWARD
            assert stencil_for(mode, region, 9, 10) is Stencil.BACKWARD


def test_interior_stencils() -> None:
    assert stencil_for(Differencing.UPWIND, Region.R1, 4, 10) is Stencil.FORWARD
    assert stencil_for(Differencing.UPWIND, Region.R2, 4, 10) is Stencil.BACKWARD
    assert stencil_for(Differencing.DOWNWIND, Region.R1, 4, 10) is Stencil.BACKWARD
    assert stencil_for(Differencing.DOWNWIND, Region.R2, 4, 10) is Stencil.FORWARD
    assert stencil_for(Differencing.CENTRAL, Region.R1, 4, 10) is Stencil.CENTRAL
