"""
Uniform 1-D space-time grids and the finite-difference machinery on them.

Fields are plain numpy arrays: a *slice* has shape ``(nx,)`` and a
*space-time* field has shape ``(nt + 1, nx)`` with row ``j`` holding time
``t_j = j * dt``. Dirichlet fields carry zeros in the first and last column.

Two discrete inner products are used throughout:

* ``L2`` / ``W``: trapezoidal weights in space (and time).
* ``V`` / ``𝒱``: ``(Δ_h u, Δ_h v) + (D⁺u, D⁺v)`` in space, where ``D⁺`` is the
  staggered forward difference, and in time
  ``Σ_cells dt (δu, δv)_V + (u(0), v(0))_V`` with ``δ`` the forward difference.
  Both choices make summation by parts exact, which is what lets the
  closed-form adjoints in :mod:`aaolearn.adjoint` pass pairing tests to
  round-off.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform grid on ``(0, t_hi) x (x_lo, x_hi)``.

    Parameters
    ----------
    nx : int
        Number of spatial points including both boundary points.
    nt : int
        Number of time steps; there are ``nt + 1`` time levels.
    """

    nx: int = 51
    nt: int = 50
    x_lo: float = 0.0
    x_hi: float = 1.0
    t_hi: float = 0.1

    def __post_init__(self):
        if self.nx < 3:
            raise ValueError(f"nx must be >= 3, got {self.nx}")
        if self.nt < 2:
            raise ValueError(f"nt must be >= 2, got {self.nt}")
        if not self.x_hi > self.x_lo:
            raise ValueError("empty spatial interval")
        if not self.t_hi > 0:
            raise ValueError("t_hi must be positive")

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / (self.nx - 1)

    @property
    def dt(self) -> float:
        return self.t_hi / self.nt

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nt + 1, self.nx)

    @cached_property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.nx)

    @cached_property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.t_hi, self.nt + 1)

    @cached_property
    def wx(self) -> np.ndarray:
        """Trapezoidal quadrature weights in space."""
        return _trapz_weights(self.nx, self.dx)

    @cached_property
    def wt(self) -> np.ndarray:
        """Trapezoidal quadrature weights in time."""
        return _trapz_weights(self.nt + 1, self.dt)

    @cached_property
    def time_derivative_matrix(self) -> np.ndarray:
        """Dense ``(nt+1, nt+1)`` matrix of :func:`time_derivative`."""
        n = self.nt + 1
        D = np.zeros((n, n))
        h = 2.0 * self.dt
        for j in range(1, n - 1):
            D[j, j - 1] = -1.0 / h
            D[j, j + 1] = 1.0 / h
        D[0, :3] = np.array([-3.0, 4.0, -1.0]) / h
        D[-1, -3:] = np.array([1.0, -4.0, 3.0]) / h
        return D

    @cached_property
    def helmholtz_factor(self) -> "TridiagonalFactor":
        m = self.nx - 2
        off = np.full(m, -1.0 / self.dx**2)
        return TridiagonalFactor(off, np.full(m, 2.0 / self.dx**2 + 1.0), off)

    @cached_property
    def poisson_factor(self) -> "TridiagonalFactor":
        m = self.nx - 2
        off = np.full(m, -1.0 / self.dx**2)
        return TridiagonalFactor(off, np.full(m, 2.0 / self.dx**2), off)

    def interior_mask(self) -> np.ndarray:
        mask = np.ones(self.nx, dtype=bool)
        mask[[0, -1]] = False
        return mask

    def check_slice(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.nx:
            raise ValueError(f"expected last axis of length {self.nx}, got shape {v.shape}")
        return v

    def check_space_time(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != self.shape:
            raise ValueError(f"expected space-time field of shape {self.shape}, got {u.shape}")
        return u


def _trapz_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[[0, -1]] = h / 2.0
    return w


class TridiagonalFactor:
    """LU factorization of a tridiagonal matrix for repeated Thomas solves.

    ``lower[0]`` and ``upper[-1]`` are ignored. Right-hand sides may carry
    extra trailing axes, so many systems sharing one matrix are solved in a
    single sweep.
    """

    def __init__(self, lower: np.ndarray, diag: np.ndarray, upper: np.ndarray):
        lower = np.asarray(lower, dtype=float)
        diag = np.asarray(diag, dtype=float)
        upper = np.asarray(upper, dtype=float)
        n = diag.size
        self.n = n
        self.lower, self.diag, self.upper = lower, diag, upper
        self._l = np.zeros(n)
        self._d = np.zeros(n)
        self._d[0] = diag[0]
        if self._d[0] == 0.0:
            raise ZeroDivisionError("tridiagonal factorization broke down at row 0")
        for i in range(1, n):
            self._l[i] = lower[i] / self._d[i - 1]
            self._d[i] = diag[i] - self._l[i] * upper[i - 1]
            if self._d[i] == 0.0 or not np.isfinite(self._d[i]):
                raise ZeroDivisionError(f"tridiagonal factorization broke down at row {i}")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.n:
            raise ValueError(f"rhs has {rhs.shape[0]} rows, system has {self.n}")
        y = np.empty_like(rhs)
        y[0] = rhs[0]
        for i in range(1, self.n):
            y[i] = rhs[i] - self._l[i] * y[i - 1]
        x = np.empty_like(rhs)
        x[-1] = y[-1] / self._d[-1]
        for i in range(self.n - 2, -1, -1):
            x[i] = (y[i] - self.upper[i] * x[i + 1]) / self._d[i]
        return x

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = self.diag.reshape((-1,) + (1,) * (x.ndim - 1)) * x
        out[1:] += self.lower[1:].reshape((-1,) + (1,) * (x.ndim - 1)) * x[:-1]
        out[:-1] += self.upper[:-1].reshape((-1,) + (1,) * (x.ndim - 1)) * x[1:]
        return out


# --------------------------------------------------------------------------
# spatial operators (act on the last axis)
# --------------------------------------------------------------------------

def laplacian(v: np.ndarray, grid: Grid) -> np.ndarray:
    """Three-point Laplacian; boundary entries are set to zero."""
    v = grid.check_slice(v)
    out = np.zeros_like(v)
    out[..., 1:-1] = (v[..., :-2] - 2.0 * v[..., 1:-1] + v[..., 2:]) / grid.dx**2
    return out


def gradient(v: np.ndarray, grid: Grid) -> np.ndarray:
    """Central differences inside, second-order one-sided at the ends."""
    v = grid.check_slice(v)
    h = grid.dx
    out = np.empty_like(v)
    out[..., 1:-1] = (v[..., 2:] - v[..., :-2]) / (2 * h)
    out[..., 0] = (-3 * v[..., 0] + 4 * v[..., 1] - v[..., 2]) / (2 * h)
    out[..., -1] = (3 * v[..., -1] - 4 * v[..., -2] + v[..., -3]) / (2 * h)
    return out


def staggered_difference(v: np.ndarray, grid: Grid) -> np.ndarray:
    """Forward differences on the ``nx - 1`` cells."""
    v = grid.check_slice(v)
    return np.diff(v, axis=-1) / grid.dx


def diffusion(v: np.ndarray, a: np.ndarray, grid: Grid) -> np.ndarray:
    """``∇·(a∇v)`` discretized as ``a Δ_h v + ∇_h a · ∇_h v`` at interior nodes."""
    lo, di, up = _diffusion_stencil(a, grid)
    v = grid.check_slice(v)
    out = np.zeros_like(v)
    out[..., 1:-1] = lo * v[..., :-2] + di * v[..., 1:-1] + up * v[..., 2:]
    return out


def diffusion_transpose(w: np.ndarray, a: np.ndarray, grid: Grid) -> np.ndarray:
    """Transpose of :func:`diffusion` restricted to interior nodes."""
    lo, di, up = _diffusion_stencil(a, grid)
    w = grid.check_slice(w)
    wi = w[..., 1:-1]
    out = np.zeros_like(w)
    out[..., 1:-1] = di * wi
    out[..., 2:-1] += up[:-1] * wi[..., :-1]
    out[..., 1:-2] += lo[1:] * wi[..., 1:]
    return out


def _diffusion_stencil(a: np.ndarray, grid: Grid):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = np.full(grid.nx, float(a))
    ga = gradient(a, grid)[1:-1]
    ai = a[1:-1]
    h2 = grid.dx**2
    return ai / h2 - ga / (2 * grid.dx), -2 * ai / h2, ai / h2 + ga / (2 * grid.dx)


# --------------------------------------------------------------------------
# time operators (act on axis 0 of space-time fields)
# --------------------------------------------------------------------------

def time_derivative(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Central differences in time, three-point one-sided at ``t = 0, T``."""
    u = grid.check_space_time(u)
    return grid.time_derivative_matrix @ u


def time_derivative_transpose(w: np.ndarray, grid: Grid) -> np.ndarray:
    w = grid.check_space_time(w)
    return grid.time_derivative_matrix.T @ w


# --------------------------------------------------------------------------
# quadrature and norms
# --------------------------------------------------------------------------

def trapz_time(values: np.ndarray, grid: Grid) -> np.ndarray | float:
    """Trapezoidal rule over axis 0 (length ``nt + 1``)."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != grid.nt + 1:
        raise ValueError(f"expected {grid.nt + 1} time values, got {values.shape[0]}")
    return np.tensordot(grid.wt, values, axes=(0, 0))


def trapz_space(values: np.ndarray, grid: Grid) -> np.ndarray | float:
    """Trapezoidal rule over the last axis (length ``nx``)."""
    values = grid.check_slice(values)
    return values @ grid.wx


def inner_L2(v: np.ndarray, w: np.ndarray, grid: Grid) -> float:
    return float(trapz_space(np.asarray(v) * np.asarray(w), grid))


def inner_W(r: np.ndarray, s: np.ndarray, grid: Grid) -> float:
    r = grid.check_space_time(r)
    s = grid.check_space_time(s)
    return float(grid.wt @ (r * s) @ grid.wx)


def norm_W(r: np.ndarray, grid: Grid) -> float:
    """``sqrt(∫∫ r² dx dt)`` with the trapezoidal rule in both variables."""
    return float(np.sqrt(max(inner_W(r, r, grid), 0.0)))


def inner_V(v: np.ndarray, w: np.ndarray, grid: Grid) -> float:
    """Discrete ``H²∩H¹₀`` inner product of two Dirichlet slices."""
    return float(np.sum(_v_products(v, w, grid)))


def _v_products(v, w, grid):
    lv, lw = laplacian(v, grid), laplacian(w, grid)
    dv, dw = staggered_difference(v, grid), staggered_difference(w, grid)
    return trapz_space(lv * lw, grid) + grid.dx * np.sum(dv * dw, axis=-1)


def inner_V_state(u: np.ndarray, v: np.ndarray, grid: Grid) -> float:
    """``∫₀ᵀ (u̇, v̇)_V dt + (u(0), v(0))_V`` with ``u`` piecewise linear in time."""
    u = grid.check_space_time(u)
    v = grid.check_space_time(v)
    cells = np.sum(_v_products(np.diff(u, axis=0), np.diff(v, axis=0), grid)) / grid.dt
    return float(cells + _v_products(u[0], v[0], grid))


def norm_V_state(u: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(max(inner_V_state(u, u, grid), 0.0)))


def space_gram(v: np.ndarray, grid: Grid) -> np.ndarray:
    """Euclidean gradient of ``½‖v‖²_V`` for Dirichlet ``v``: ``dx (Δ_h² − Δ_h) v``."""
    lv = laplacian(v, grid)
    out = grid.dx * (laplacian(lv, grid) - lv)
    out[..., [0, -1]] = 0.0
    return out


def state_gram(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Euclidean gradient of ``½‖u‖²_𝒱`` (the Gram matrix of ``inner_V_state`` applied to ``u``)."""
    u = grid.check_space_time(u)
    s = space_gram(u, grid)
    ds = np.diff(s, axis=0) / grid.dt
    out = np.zeros_like(u)
    out[:-1] -= ds
    out[1:] += ds
    out[0] += s[0]
    return out


# --------------------------------------------------------------------------
# elliptic solves
# --------------------------------------------------------------------------

def solve_helmholtz_dirichlet(rhs: np.ndarray, grid: Grid) -> np.ndarray:
    """Solve ``-Δ_h z + z = rhs`` with ``z = 0`` on the boundary.

    Boundary entries of ``rhs`` are ignored. Accepts a batch of slices
    stacked along leading axes.
    """
    return _dirichlet_solve(grid.helmholtz_factor, rhs, grid)


def solve_poisson_dirichlet(rhs: np.ndarray, grid: Grid) -> np.ndarray:
    """Solve ``-Δ_h z = rhs`` with ``z = 0`` on the boundary."""
    return _dirichlet_solve(grid.poisson_factor, rhs, grid)


def _dirichlet_solve(factor: TridiagonalFactor, rhs: np.ndarray, grid: Grid) -> np.ndarray:
    rhs = grid.check_slice(rhs)
    inner = np.moveaxis(rhs[..., 1:-1], -1, 0)
    sol = factor.solve(inner)
    out = np.zeros_like(rhs)
    out[..., 1:-1] = np.moveaxis(sol, 0, -1)
    return out


def discrete_eigenvalue(n: int, grid: Grid) -> float:
    """Eigenvalue of ``-Δ_h`` for the mode ``sin(nπx)`` on the unit interval."""
    return (2.0 - 2.0 * np.cos(n * np.pi * grid.dx)) / grid.dx**2


def sup_embedding_constant(grid: Grid) -> float:
    """Smallest ``C`` with ``max |u| <= C ‖u‖_𝒱`` over Dirichlet grid fields.

    Point evaluation at ``(t_n, x_i)`` has 𝒱-representer
    ``(1 + min(t, t_n)) A e_i / dx`` whose squared norm is
    ``(1 + t_n) (A e_i)_i / dx``; the maximum sits at ``t_n = T``.
    """
    m = grid.nx - 2
    eye = np.eye(m)
    a_diag = np.diag(grid.poisson_factor.solve(grid.helmholtz_factor.solve(eye)))
    return float(np.sqrt((1.0 + grid.t_hi) * a_diag.max() / grid.dx))
