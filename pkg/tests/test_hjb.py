import numpy as np
import pytest

from lqlab import (
    ConfigError,
    Diverged,
    Grid1D,
    LqProblem,
    NotConverged,
    PolicyField,
    SchemeConfig,
    ValueField,
    evaluate_policy,
    hamiltonian_minimize,
    hjb_residual,
    monotone_mesh_bound,
    policy_iteration,
    required_relaxation_rate,
    riccati_solve,
    value_iteration,
)
from lqlab.enums import Differencing, FixedPointForm, PolicyEvaluation, Region
from lqlab.hjb import ConvergenceLog, frozen_policy_system, policy_hamiltonian
from lqlab.model import sample_analytic
from lqlab.monotone import sup_error

INTERIOR = 2 / 3


def test_zero_value_minimiser(problem: LqProblem, coarse_grid: Grid1D) -> None:
    v = ValueField.zeros(coarse_grid)

    for i in range(coarse_grid.n_nodes):
        result = hamiltonian_minimize(problem, coarse_grid, v, i, Differencing.UPWIND)
        x = coarse_grid.node(i)

        assert result.u_star == 0.0
        assert result.h_star == pytest.approx(x * x, abs=1e-15)


def test_region_split_minimiser() -> None:
    problem = LqProblem(drift=0.0, discount_rate=1.0, x_min=-1.0, x_max=1.0)
    grid = Grid1D(x_min=-1.0, x_max=1.0, n_nodes=5)
    # slope 2 on both sides of x = 0
    v = ValueField(grid=grid, values=2 * grid.nodes)

    result = hamiltonian_minimize(problem, grid, v, 2, Differencing.UPWIND)

    assert result.u_star == pytest.approx(-1.0)
    assert result.h_star == pytest.approx(-1.0)
    assert result.region is Region.R2


def test_region_boundary_belongs_to_r1() -> None:
    problem = LqProblem(drift=0.0, discount_rate=1.0, x_min=-1.0, x_max=1.0)
    grid = Grid1D(x_min=-1.0, x_max=1.0, n_nodes=5)
    # both regions are minimised at u = 0, which has zero drift
    v = ValueField(grid=grid, values=2 * np.abs(grid.nodes))

    result = hamiltonian_minimize(problem, grid, v, 2, Differencing.UPWIND)

    assert result.u_star == 0.0
    assert result.h_star == 0.0
    assert result.region is Region.R1


def test_minimiser_tracks_analytic_policy(problem: LqProblem, grid: Grid1D) -> None:
    sol = riccati_solve(problem)
    v, exact = sample_analytic(sol, grid)

    for i in range(grid.interior(INTERIOR).start, grid.interior(INTERIOR).stop, 17):
        result = hamiltonian_minimize(problem, grid, v, i, Differencing.UPWIND)
        assert result.u_star == pytest.approx(exact.controls[i], abs=2 * grid.dx)


def test_hamiltonian_index_check(problem: LqProblem, coarse_grid: Grid1D) -> None:
    with pytest.raises(IndexError):
        hamiltonian_minimize(
            problem, coarse_grid, ValueField.zeros(coarse_grid), 41, Differencing.UPWIND
        )


def test_mesh_bound_examples(problem: LqProblem) -> None:
    unit = LqProblem(drift=0.0, discount_rate=1.0)
    cfg = SchemeConfig(relaxation_rate=5.0)

    assert monotone_mesh_bound(unit, cfg, 1.0, 0.0) == 0.0
    assert monotone_mesh_bound(unit, cfg, 0.5, 0.3) == pytest.approx(0.075)
    assert monotone_mesh_bound(unit, SchemeConfig(relaxation_rate=9.0), 0.5, 0.3) == (
        pytest.approx(0.0375)
    )

    literal = SchemeConfig(relaxation_rate=5.0, fixed_point_form=FixedPointForm.LITERAL)
    assert monotone_mesh_bound(problem, literal, 1.0, -0.2) == pytest.approx(0.3 / 6)


def test_required_relaxation_rate(
    problem: LqProblem, grid: Grid1D, coarse_grid: Grid1D
) -> None:
    # beta + (|A| max|x| + |B| max|u|) / dx
    assert required_relaxation_rate(problem, grid) == pytest.approx(501.0)
    assert required_relaxation_rate(problem, coarse_grid) == pytest.approx(51.0)


def test_required_rate_covers_every_control(problem: LqProblem, coarse_grid: Grid1D) -> None:
    cfg = SchemeConfig(relaxation_rate=required_relaxation_rate(problem, coarse_grid))

    for x in coarse_grid.nodes:
        for u in (problem.u_min, 0.0, 1.0, problem.u_max):
            assert monotone_mesh_bound(problem, cfg, float(x), u) <= coarse_grid.dx + 1e-12


def test_scheme_validation(problem: LqProblem) -> None:
    with pytest.raises(ConfigError, match="relaxation_rate"):
        SchemeConfig(relaxation_rate=0.0)

    with pytest.raises(ConfigError, match="max_iters"):
        SchemeConfig(relaxation_rate=10.0, max_iters=0)

    with pytest.raises(ConfigError, match="must exceed the discount rate"):
        SchemeConfig(relaxation_rate=0.5).check_against(problem)

    SchemeConfig(relaxation_rate=0.5, fixed_point_form=FixedPointForm.LITERAL).check_against(
        problem
    )


def test_convergence_log_runs() -> None:
    log = ConvergenceLog()
    for r in (5.0, 4.0, 4.5, 4.6, 4.7, 1.0, 2.0, 3.0):
        log.record(r, 0.0)

    assert log.longest_increasing_run() == 3
    assert log.trailing_increases() == 2
    assert [row[0] for row in log.rows()] == list(range(1, 9))


def test_value_iteration_coarse(problem: LqProblem, coarse_grid: Grid1D) -> None:
    cfg = SchemeConfig(relaxation_rate=required_relaxation_rate(problem, coarse_grid))
    value, policy, log = value_iteration(problem, coarse_grid, cfg)

    assert log.residuals[-1] < cfg.theta
    assert len(log) == len(log.sup_norms)
    assert sup_error(value, riccati_solve(problem), INTERIOR) < 10 * coarse_grid.dx
    policy.check_bounds(problem.u_min, problem.u_max)


def test_value_iteration_upwind(problem: LqProblem, grid: Grid1D, scheme: SchemeConfig) -> None:
    result = value_iteration(problem, grid, scheme)
    sol = riccati_solve(problem)

    assert result.converged
    assert sup_error(result.value, sol, INTERIOR) <= 0.05

    window = grid.interior(INTERIOR)
    residual = hjb_residual(problem, grid, result.value, Differencing.UPWIND)
    assert np.max(np.abs(residual[window])) <= 10 * scheme.theta * scheme.relaxation_rate


def test_value_iteration_symmetry(problem: LqProblem, grid: Grid1D, scheme: SchemeConfig) -> None:
    value, policy, _ = value_iteration(problem, grid, scheme)

    assert np.allclose(value.values, value.values[::-1], atol=1e-6)
    assert np.allclose(policy.controls, -policy.controls[::-1], atol=1e-6)


def test_near_fixed_point_start(problem: LqProblem, grid: Grid1D, scheme: SchemeConfig) -> None:
    sol = riccati_solve(problem)
    v0, _ = sample_analytic(sol, grid)
    cfg = SchemeConfig(relaxation_rate=scheme.relaxation_rate, max_iters=1)

    with pytest.raises(NotConverged) as info:
        value_iteration(problem, grid, cfg, v0=v0)

    first = info.value.partial.log.residuals[0]
    # one sweep moves by (H - beta V) / gamma_s, with H - beta V = O(dx) on the exact solution
    assert first <= 10 * grid.dx / scheme.relaxation_rate


@pytest.mark.slow
def test_mesh_refinement(problem: LqProblem) -> None:
    errors: list[float] = []
    sol = riccati_solve(problem)

    for dx in (0.02, 0.01):
        grid = Grid1D.from_spacing(problem.x_min, problem.x_max, dx)
        cfg = SchemeConfig(relaxation_rate=required_relaxation_rate(problem, grid))
        result = value_iteration(problem, grid, cfg)
        errors.append(sup_error(result.value, sol, INTERIOR))

    assert 1.5 <= errors[0] / errors[1] <= 2.5


def test_downwind_instability(problem: LqProblem, grid: Grid1D, scheme: SchemeConfig) -> None:
    cfg = SchemeConfig(
        relaxation_rate=scheme.relaxation_rate,
        differencing=Differencing.DOWNWIND,
        max_iters=20_000,
    )

    try:
        value_iteration(problem, grid, cfg)
    except Diverged as e:
        assert e.trip_iteration <= cfg.max_iters
        assert e.partial.log.sup_norms[-1] > cfg.divergence_threshold or not np.isfinite(
            e.partial.log.sup_norms[-1]
        )
    except NotConverged as e:
        assert e.partial.log.longest_increasing_run() >= 50
    else:
        pytest.fail("downwind value iteration converged")


def test_not_converged_carries_partial(problem: LqProblem, coarse_grid: Grid1D) -> None:
    cfg = SchemeConfig(relaxation_rate=50.0, max_iters=3)

    with pytest.raises(NotConverged) as info:
        value_iteration(problem, coarse_grid, cfg)

    assert info.value.iterations == 3
    assert len(info.value.partial.log) == 3
    assert not info.value.partial.converged


def test_divergence_threshold(problem: LqProblem, coarse_grid: Grid1D) -> None:
    cfg = SchemeConfig(relaxation_rate=50.0, divergence_threshold=1.0)

    with pytest.raises(Diverged) as info:
        value_iteration(problem, coarse_grid, cfg)

    assert info.value.trip_iteration >= 1
    assert info.value.partial.value.sup_norm() > 1.0


def test_evaluate_policy(problem: LqProblem, coarse_grid: Grid1D) -> None:
    cfg = SchemeConfig(relaxation_rate=required_relaxation_rate(problem, coarse_grid))
    sol = riccati_solve(problem)
    _, optimal = sample_analytic(sol, coarse_grid)
    result = evaluate_policy(problem, coarse_grid, cfg, optimal)

    assert result.converged
    assert result.value.values[coarse_grid.snap_index(0.0)] == pytest.approx(0.0, abs=1e-6)
    assert sup_error(result.value, sol, INTERIOR) < 10 * coarse_grid.dx

    with pytest.raises(ConfigError, match="policy"):
        evaluate_policy(problem, coarse_grid, cfg, PolicyField.constant(coarse_grid, 10.0))


@pytest.mark.slow
def test_value_and_policy_iteration_agree(problem: LqProblem, grid: Grid1D) -> None:
    rate = required_relaxation_rate(problem, grid)
    vi = value_iteration(problem, grid, SchemeConfig(relaxation_rate=rate, theta=1e-12))
    pi = policy_iteration(problem, grid, SchemeConfig(relaxation_rate=rate))

    assert pi.converged
    assert np.max(np.abs(vi.value.values - pi.value.values)) <= 1e-6
    assert np.max(np.abs(vi.policy.controls - pi.policy.controls)) <= 1e-6


def test_policy_iteration_from_analytic_policy(
    problem: LqProblem, grid: Grid1D, scheme: SchemeConfig
) -> None:
    _, u0 = sample_analytic(riccati_solve(problem), grid)
    result = policy_iteration(problem, grid, scheme, u0)

    assert result.converged
    assert len(result.log.improvements) <= 5

    # the analytic policy is already within a grid spacing of the discrete optimum
    cfg = SchemeConfig(relaxation_rate=scheme.relaxation_rate, theta_u=5e-3)
    assert len(policy_iteration(problem, grid, cfg, u0).log.improvements) <= 2


def test_policy_iteration_default_start(problem: LqProblem, coarse_grid: Grid1D) -> None:
    cfg = SchemeConfig(relaxation_rate=required_relaxation_rate(problem, coarse_grid))
    pi = policy_iteration(problem, coarse_grid, cfg)
    vi = value_iteration(
        problem, coarse_grid, SchemeConfig(relaxation_rate=cfg.relaxation_rate, theta=1e-12)
    )

    assert pi.converged
    assert pi.log.improvements[-1].policy_change < cfg.theta_u
    assert len(pi.log.improvements) < cfg.max_policy_improvements
    assert np.max(np.abs(vi.value.values - pi.value.values)) <= 1e-6
    assert np.max(np.abs(vi.policy.controls - pi.policy.controls)) <= 1e-6


def test_policy_iteration_by_sweeps(problem: LqProblem, coarse_grid: Grid1D) -> None:
    rate = required_relaxation_rate(problem, coarse_grid)
    exact = policy_iteration(problem, coarse_grid, SchemeConfig(relaxation_rate=rate))
    # sweeps alone leave a value error of about theta_v * gamma_s / beta
    cfg = SchemeConfig(
        relaxation_rate=rate, policy_evaluation=PolicyEvaluation.SWEEPS, theta_u=1e-4
    )
    swept = policy_iteration(problem, coarse_grid, cfg)

    assert swept.converged
    assert sum(row.evaluation_sweeps for row in swept.log.improvements) > len(
        swept.log.improvements
    )
    assert np.max(np.abs(exact.value.values - swept.value.values)) <= 1e-5


def test_frozen_policy_system(problem: LqProblem, coarse_grid: Grid1D) -> None:
    rng = np.random.default_rng(3)
    controls = rng.uniform(problem.u_min, problem.u_max, coarse_grid.n_nodes)
    values = rng.normal(size=coarse_grid.n_nodes)

    for differencing in Differencing:
        matrix, cost = frozen_policy_system(problem, coarse_grid, controls, differencing)
        expected = policy_hamiltonian(problem, coarse_grid, values, controls, differencing)

        assert np.allclose(matrix @ values + cost, expected, atol=1e-9)
        assert np.allclose(cost, coarse_grid.nodes**2 + controls**2)


def test_policy_iteration_large_threshold(problem: LqProblem, coarse_grid: Grid1D) -> None:
    cfg = SchemeConfig(
        relaxation_rate=required_relaxation_rate(problem, coarse_grid), theta_u=10.0
    )
    result = policy_iteration(problem, coarse_grid, cfg)

    assert len(result.log.improvements) == 1
    assert result.log.improvements[0].round == 1
    assert result.log.improvements[0].evaluation_sweeps > 0


def test_policy_iteration_rejects_bad_start(problem: LqProblem, coarse_grid: Grid1D) -> None:
    cfg = SchemeConfig(relaxation_rate=50.0)

    with pytest.raises(ConfigError, match="policy"):
        policy_iteration(problem, coarse_grid, cfg, PolicyField.constant(coarse_grid, -5.0))
