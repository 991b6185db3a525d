import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aaolearn.grid import (Grid, discrete_eigenvalue, inner_L2, laplacian, norm_V_state, norm_W,
                           solve_helmholtz_dirichlet, solve_poisson_dirichlet, time_derivative, trapz_space,
                           trapz_time)

from conftest import smooth_field


def test_grid_rejects_degenerate_sizes():
    with pytest.raises(ValueError):
        Grid(nx=2)
    with pytest.raises(ValueError):
        Grid(nt=1)
    with pytest.raises(ValueError):
        Grid(t_hi=0.0)


def test_laplacian_zero(grid):
    assert np.all(laplacian(np.zeros(grid.nx), grid) == 0.0)


def test_laplacian_sine_taylor_bound(grid):
    x = grid.x
    err = np.abs(laplacian(np.sin(np.pi * x), grid) + np.pi**2 * np.sin(np.pi * x))[1:-1]
    assert err.max() <= np.pi**4 * grid.dx**2 / 12 * 1.01


def test_laplacian_exact_on_quadratic(grid):
    x = grid.x
    assert np.allclose(laplacian(x * (1 - x), grid)[1:-1], -2.0, atol=1e-9)


def test_laplacian_is_symmetric(grid, rng):
    u, v = rng.normal(size=(2, grid.nx))
    u[[0, -1]] = v[[0, -1]] = 0.0
    w = grid.dx * np.ones(grid.nx)
    assert np.isclose(np.sum(w * laplacian(u, grid) * v), np.sum(w * u * laplacian(v, grid)), rtol=1e-12)


def test_time_derivative_constant_and_linear(grid, rng):
    g = rng.normal(size=grid.nx)
    assert np.allclose(time_derivative(np.tile(g, (grid.nt + 1, 1)), grid), 0.0, atol=1e-10)
    u = np.outer(grid.t, g)
    assert np.allclose(time_derivative(u, grid), np.tile(g, (grid.nt + 1, 1)), atol=1e-10)


def test_time_derivative_exact_on_quadratic(grid):
    u = np.tile((grid.t**2)[:, None], (1, grid.nx))
    assert np.allclose(time_derivative(u, grid), 2 * grid.t[:, None], atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1))
def test_operators_are_linear(alpha, beta, seed):
    grid = Grid(nx=21, nt=20)
    r = np.random.default_rng(seed)
    u, v = r.normal(size=(2,) + grid.shape)
    for op in (laplacian, time_derivative):
        lhs = op(alpha * u + beta * v, grid)
        rhs = alpha * op(u, grid) + beta * op(v, grid)
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-9 * np.abs(rhs).max())


def test_trapz_examples(grid):
    assert np.isclose(trapz_time(np.ones(grid.nt + 1), grid), 0.1)
    assert abs(trapz_time(grid.t, grid) - 0.005) < 1e-16
    assert abs(trapz_space(np.sin(np.pi * grid.x), grid) - 2 / np.pi) < 1e-3


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_trapz_exact_on_linear(a, b):
    grid = Grid(nx=17, nt=9)
    assert np.isclose(trapz_space(a + b * grid.x, grid), a + b / 2, atol=1e-12)
    assert np.isclose(trapz_time(a + b * grid.t, grid), a * 0.1 + b * 0.005, atol=1e-12)


def test_elliptic_solves_zero_and_eigen(grid):
    s = np.sin(np.pi * grid.x)
    assert np.all(solve_poisson_dirichlet(np.zeros(grid.nx), grid) == 0.0)
    lam = discrete_eigenvalue(1, grid)
    assert np.allclose(solve_poisson_dirichlet(s, grid), s * grid.dx**2 / (2 - 2 * np.cos(np.pi * grid.dx)), atol=1e-13)
    assert np.allclose(solve_helmholtz_dirichlet(s, grid), s / (lam + 1), atol=1e-13)
    m = grid.nx - 2
    dense = (2 * np.eye(m) - np.eye(m, k=1) - np.eye(m, k=-1)) / grid.dx**2
    assert np.allclose(solve_poisson_dirichlet(s, grid)[1:-1], np.linalg.solve(dense, s[1:-1]), atol=1e-13)


def test_poisson_inverts_laplacian(grid, rng):
    z = rng.normal(size=grid.nx)
    z[[0, -1]] = 0.0
    assert np.allclose(solve_poisson_dirichlet(-laplacian(z, grid), grid), z, atol=1e-12)


def test_norms(grid):
    assert norm_W(np.zeros(grid.shape), grid) == 0.0
    assert np.isclose(norm_W(np.ones(grid.shape), grid), np.sqrt(0.1))
    u = np.tile(np.sin(np.pi * grid.x), (grid.nt + 1, 1))
    exact = np.sqrt(np.pi**4 * 0.5 + np.pi**2 * 0.5)
    assert abs(norm_V_state(u, grid) - exact) / exact < 5 * grid.dx**2 * np.pi**2


def test_inner_L2_uses_trapezoid(grid):
    assert np.isclose(inner_L2(np.ones(grid.nx), grid.x, grid), 0.5)


def test_smooth_field_helper_is_dirichlet(small_grid, rng):
    f = smooth_field(small_grid, rng)
    assert np.allclose(f[:, [0, -1]], 0.0)
