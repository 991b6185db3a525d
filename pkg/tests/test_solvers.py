import math

import numpy as np
import pytest

from aaolearn.grid import Grid, laplacian, time_derivative
from aaolearn.model import MeasurementSpec, Observation, ObservationSet, PdeParams
from aaolearn.neural import NetParams
from aaolearn.solvers import (AdamOptions, Gradient, ObjectiveWeights, Problem, SolveState, SolverAbort, StoppingRule,
                              adam_minimize, adam_run, landweber_run, objective, objective_gradient, objective_terms,
                              write_trace)

from conftest import smooth_field

ZERO_REG = ObjectiveWeights(r_u=0.0, r_psi=0.0, r_theta=0.0)


def manufactured(grid, rng, weights=ZERO_REG):
    """Exact state and network with the space-time source that makes the residual vanish."""
    th = NetParams.random(rng=rng)
    u = smooth_field(grid, rng)
    phi = time_derivative(u, grid) - laplacian(u, grid) - th.value(u)
    phi[:, [0, -1]] = 0.0
    data = ObservationSet(MeasurementSpec.full(), [Observation(u.copy())])
    return Problem(grid, PdeParams.heat(grid, phi), data, weights), SolveState(u=u[None].copy(), theta=th)


def zero_problem(grid, spec=None, weights=ObjectiveWeights()):
    spec = spec or MeasurementSpec.full()
    data = ObservationSet(spec, [Observation(np.zeros(spec.data_shape(grid)))])
    state = SolveState(u=np.zeros((1,) + grid.shape), theta=NetParams.zeros())
    return Problem(grid, PdeParams.heat(grid), data, weights), state


def test_weights_and_rule_validation():
    with pytest.raises(ValueError):
        ObjectiveWeights(beta_e=0.0)
    with pytest.raises(ValueError):
        ObjectiveWeights(r_u=-1.0)
    with pytest.raises(ValueError):
        StoppingRule(tau=0.5)
    with pytest.raises(ValueError):
        StoppingRule(max_iters=0)


def test_objective_zero(small_grid):
    problem, state = zero_problem(small_grid)
    assert objective(state, problem) == 0.0
    g = objective_gradient(state, problem)
    assert np.all(g.u == 0.0) and np.all(g.theta == 0.0)


def test_objective_exact_manufactured(small_grid, rng):
    problem, state = manufactured(small_grid, rng)
    assert objective(state, problem) <= 1e-18


def test_objective_single_snapshot(grid):
    g = np.sin(np.pi * grid.x) + 0.5
    spec = MeasurementSpec(snapshot_indices=(10,))
    data = ObservationSet(spec, [Observation(g[None, :])])
    problem = Problem(grid, PdeParams.heat(grid), data, ObjectiveWeights(1.0, 1.0, 1.0, 1.0, 1.0))
    state = SolveState(u=np.zeros((1,) + grid.shape), theta=NetParams.zeros())
    expect = float(np.sum(grid.wx * g * g))
    assert math.isclose(objective(state, problem), expect, rel_tol=1e-14)


def test_theta_gradient_affine_closed_form(small_grid, rng):
    grid = small_grid
    th = NetParams([[[0.7]]], [[-0.3]])
    u = smooth_field(grid, rng)
    phi = rng.normal(size=grid.nx)
    w = ObjectiveWeights(beta_e=1.5, r_theta=0.1)
    data = ObservationSet(MeasurementSpec.full(), [Observation(u)])
    problem = Problem(grid, PdeParams.heat(grid, phi), data, w)
    state = SolveState(u=u[None], theta=th)
    r = time_derivative(u, grid) - laplacian(u, grid) - phi - (0.7 * u - 0.3)
    r[:, [0, -1]] = 0.0
    q = np.outer(grid.wt, grid.wx)
    expect = -2 * 1.5 * np.array([np.sum(q * r * u), np.sum(q * r)]) + 2 * 0.1 * th.params
    for backend in ("function", "flat"):
        assert np.allclose(objective_gradient(state, problem, backend).theta, expect, rtol=1e-12)


def test_objective_offset_invariance(small_grid, rng):
    grid = small_grid
    spec = MeasurementSpec(snapshot_indices=(0, 20))
    data = ObservationSet(spec, [Observation(rng.normal(size=(2, grid.nx)))])
    w = ObjectiveWeights(r_u=1e-3, r_psi=0.0, r_theta=0.0)
    problem = Problem(grid, PdeParams.heat(grid), data, w, estimate_source=True)
    th = NetParams.random(rng=rng)
    psi = rng.normal(size=(1, grid.nx))
    state = SolveState(u=smooth_field(grid, rng)[None], theta=th, psi=psi)
    j0 = objective(state, problem)
    for c in rng.normal(size=5):
        v = th.params.copy()
        v[th.offset_index] += c
        shifted = SolveState(u=state.u, theta=th.with_params(v), psi=psi - c)
        assert math.isclose(objective(shifted, problem), j0, rel_tol=1e-12)


def test_trace_columns(tmp_path, small_grid):
    problem, state = zero_problem(small_grid)
    _, trace = landweber_run(state, problem, StoppingRule(max_iters=3))
    write_trace(trace, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "iter,objective,pde_residual_W,data_misfit_Y,step_size"


def test_landweber_zero_stays_zero(small_grid):
    problem, state = zero_problem(small_grid)
    out, _ = landweber_run(state, problem, StoppingRule(max_iters=10))
    assert np.all(out.u == 0.0) and out.stop_reason == "stationary" and out.iteration == 0


def test_landweber_exact_solution_is_stationary(small_grid, rng):
    problem, state = manufactured(small_grid, rng)
    out, _ = landweber_run(state, problem, StoppingRule(max_iters=10, gtol=1e-10))
    assert out.stop_reason == "stationary" and out.iteration == 0
    assert np.array_equal(out.u, state.u)


def test_landweber_residual_nonincreasing(small_grid, rng):
    problem, state = manufactured(small_grid, rng)
    start = SolveState(u=state.u + 0.05 * smooth_field(small_grid, rng)[None], theta=NetParams.random(rng=rng))
    out, trace = landweber_run(start, problem, StoppingRule(max_iters=200))
    h = np.array(out.residual_history)
    assert len(h) == out.iteration + 1 == len(trace)
    assert np.all(np.diff(h) <= 0.0) and h[-1] < h[0]


def test_landweber_discrepancy_and_stall(small_grid, rng):
    problem, state = manufactured(small_grid, rng)
    start = SolveState(u=state.u + 0.05, theta=state.theta)
    out, _ = landweber_run(start, problem, StoppingRule(delta=1e3))
    assert out.stop_reason == "discrepancy" and out.iteration == 0
    out, _ = landweber_run(start, problem, StoppingRule(max_iters=5), step0=1e-13)
    assert out.stop_reason == "stalled"


def test_landweber_residual_target(small_grid, rng):
    problem, state = manufactured(small_grid, rng)
    start = SolveState(u=state.u, theta=NetParams.random(rng=rng))
    out, _ = landweber_run(start, problem, StoppingRule(max_iters=20_000, residual_tol=0.05))
    assert out.stop_reason == "residual" and out.residual_history[-1] <= 0.05


def test_adam_scalar_quadratic():
    x = adam_minimize(lambda x: ((x[0] - 3) ** 2, 2 * (x - 3)), [0.0], AdamOptions(lr=0.01, iters=2000))
    assert abs(x[0] - 3) < 1e-3


def test_adam_lr_zero_is_identity(small_grid, rng):
    problem, state = manufactured(small_grid, rng, ObjectiveWeights())
    start = SolveState(u=state.u + 0.1, theta=NetParams.random(rng=rng))
    out, _ = adam_run(start, problem, AdamOptions(lr=0.0, iters=20))
    assert np.array_equal(out.u[:, :, 1:-1], start.u[:, :, 1:-1])
    assert np.array_equal(out.theta.params, start.theta.params)
    out, _ = adam_run(start, problem, AdamOptions(lr=0.0, iters=20, smoothing=1e-3))
    assert np.allclose(out.u[:, :, 1:-1], start.u[:, :, 1:-1], atol=1e-13)


def test_adam_zero_gradient_fixed_point(small_grid):
    problem, state = zero_problem(small_grid)
    out, _ = adam_run(state, problem, AdamOptions(iters=50))
    assert np.all(out.u == 0.0) and np.all(out.theta.params == 0.0)


def test_adam_decreases_objective(small_grid, rng):
    problem, state = manufactured(small_grid, rng, ObjectiveWeights())
    start = SolveState(u=state.u, theta=NetParams.random(rng=rng))
    for opts in (AdamOptions(iters=300), AdamOptions(iters=300, state_lr=1e-4, smoothing=1e-3)):
        out, trace = adam_run(start, problem, opts)
        assert trace[-1]["objective"] < trace[0]["objective"]
        assert trace[-1]["iter"] == 300


def test_adam_aborts_on_nan(small_grid):
    problem, state = zero_problem(small_grid)
    problem.data.samples[0].data[3, 3] = np.nan
    with pytest.raises(SolverAbort):
        adam_run(state, problem, AdamOptions(iters=5))


def test_gradient_container_arithmetic():
    a = Gradient(np.ones((1, 3, 3)), np.ones(2), None)
    b = 2.0 * a + a
    assert np.all(b.u == 3.0) and np.all(b.theta == 3.0) and b.psi is None
