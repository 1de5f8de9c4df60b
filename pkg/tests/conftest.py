import pytest

from lqlab import DiscreteMdp, Grid1D, LqProblem, SchemeConfig, required_relaxation_rate
from tests import ConfigFiles


@pytest.fixture
def problem() -> LqProblem:
    # G = 1
    return LqProblem(drift=0.5, discount_rate=1.0)


@pytest.fixture
def grid(problem: LqProblem) -> Grid1D:
    return Grid1D.from_spacing(problem.x_min, problem.x_max, 0.01)


@pytest.fixture
def coarse_grid(problem: LqProblem) -> Grid1D:
    return Grid1D.from_spacing(problem.x_min, problem.x_max, 0.1)


@pytest.fixture
def scheme(problem: LqProblem, grid: Grid1D) -> SchemeConfig:
    return SchemeConfig(relaxation_rate=required_relaxation_rate(problem, grid))


@pytest.fixture
def mdp(problem: LqProblem) -> DiscreteMdp:
    return DiscreteMdp.from_problem(problem)


@pytest.fixture
def configs(tmp_path) -> ConfigFiles:
    return ConfigFiles(tmp_path)
