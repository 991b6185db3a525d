"""
Adjoints of the derivative blocks of the forward operator.

All state-space adjoints return 𝒱-representers: fields ``R`` with
``⟨R, v⟩_𝒱 = ℓ(v)`` for the functional ``ℓ`` at hand. Every such functional
here has the form ``ℓ(v) = Σ_m (k_m, v(t_m))_{L²}``, and its representer is

    R(t) = A Σ_m k_m (1 + min(t, t_m)),     A = (−Δ)⁻¹(−Δ + Id)⁻¹.

``A`` turns an ``L²`` pairing into a ``V`` pairing, and ``1 + min(t, s)``
is the Green's function of ``−ü = δ_s`` with ``u̇(T) = 0``, ``u̇(0) = u(0)``.
With ``k_m = w_m z̃_m`` (trapezoid weights) this is exactly

    (t + 1) ∫₀ᵀ A z̃ ds − ∫₀ᵗ (t − s) A z̃(s) ds,

evaluated with the trapezoidal rule on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid import (Grid, diffusion_transpose, gradient, laplacian, solve_helmholtz_dirichlet,
                   solve_poisson_dirichlet, time_derivative_transpose)
from .model import PdeParams


def apply_A(k: np.ndarray, grid: Grid) -> np.ndarray:
    """``(−Δ_h)⁻¹(−Δ_h + Id)⁻¹ k`` via two Dirichlet solves (batched over leading axes)."""
    return solve_poisson_dirichlet(solve_helmholtz_dirichlet(k, grid), grid)


def green_kernel(grid: Grid) -> np.ndarray:
    t = grid.t
    return 1.0 + np.minimum.outer(t, t)


def state_representer(k: np.ndarray, grid: Grid, kernel: np.ndarray | None = None) -> np.ndarray:
    """𝒱-representer of ``v ↦ Σ_m (k_m, v(t_m))_{L²}`` for rows ``k`` of shape ``(nt+1, nx)``."""
    kernel = green_kernel(grid) if kernel is None else kernel
    return apply_A(kernel @ k, grid)


@dataclass(frozen=True)
class AdjointContext:
    """Linearization point for the adjoint blocks."""

    grid: Grid
    params: PdeParams
    u: np.ndarray
    theta: object

    def __post_init__(self):
        self.grid.check_space_time(self.u)
        self.grid.check_slice(self.params.phi)

    @cached_property
    def kernel(self) -> np.ndarray:
        return green_kernel(self.grid)

    @cached_property
    def nn_slope(self) -> np.ndarray:
        return self.theta.dz(self.u)


def adjoint_M_full(z: np.ndarray, ctx: AdjointContext) -> np.ndarray:
    """Adjoint of the full observation ``M = Id: 𝒱 → 𝒴``."""
    g = ctx.grid
    z = g.check_space_time(z)
    return state_representer(g.wt[:, None] * z, g, ctx.kernel)


def adjoint_M_snapshot(h: np.ndarray, t_index: int, scale: float, ctx: AdjointContext) -> np.ndarray:
    """Adjoint of ``M_i u = scale · u(t_i)``.

    ``scale · A h (1 + t)`` up to ``t_i`` and ``scale · A h (1 + t_i)`` after.
    """
    g = ctx.grid
    if not 0 <= t_index <= g.nt:
        raise ValueError(f"snapshot index {t_index} outside [0, {g.nt}]")
    ah = apply_A(g.check_slice(h), g)
    ramp = 1.0 + np.minimum(g.t, g.t[t_index])
    return scale * ramp[:, None] * ah[None, :]


def transport_transpose(z: np.ndarray, ctx: AdjointContext) -> np.ndarray:
    """``K̃ z = −(∇·(a∇·))ᵀ z + c z − N'(u) z`` at interior nodes."""
    p = ctx.params
    return -diffusion_transpose(z, p.a, ctx.grid) + (p.c - ctx.nn_slope) * z


def time_antiderivative(z: np.ndarray, grid: Grid) -> np.ndarray:
    """Antiderivative ``Z(t) ≈ ∫₀ᵗ z ds`` matched to the discrete time derivative.

    ``Z`` is the unique grid function with ``(ż, v̇)``-pairings reproducing
    ``Σ_m w_m (z_m, (Dv)_m)`` for the three-point time stencil ``D``; it agrees
    with the cumulative trapezoidal rule up to ``O(dt²)`` terms at the ends.
    """
    c = time_derivative_transpose(grid.wt[:, None] * z, grid)
    return np.minimum.outer(grid.t, grid.t) @ c


def adjoint_transport(z: np.ndarray, ctx: AdjointContext) -> np.ndarray:
    """Adjoint of ``v ↦ v̇ − F'_u v − N'_u v`` from ``𝒲`` to ``𝒱``.

    Equals ``(t+1)∫₀ᵀ A K̃z ds − ∫₀ᵗ A[(t−s) K̃z(s)] ds + A Z(t)`` where ``Z`` is
    :func:`time_antiderivative` of ``z``.
    """
    g = ctx.grid
    z = g.check_space_time(z)
    k = g.wt[:, None] * transport_transpose(z, ctx) + time_derivative_transpose(g.wt[:, None] * z, g)
    return state_representer(k, g, ctx.kernel)


def adjoint_param(z: np.ndarray, which: str, ctx: AdjointContext) -> np.ndarray:
    """The block ``−F'_λ(λ, u)*`` for ``λ ∈ {c, phi, a}``.

    ``c`` and ``phi`` return ``L²`` representers; ``a`` returns the
    ``H²∩H¹₀`` representer (valid for directions vanishing on ``∂Ω``).
    """
    g = ctx.grid
    z = g.check_space_time(z)
    if which == "phi":
        return -(g.wt @ z)
    if which == "c":
        return g.wt @ (z * ctx.u)
    if which == "a":
        u = ctx.u
        lap = laplacian(u, g)
        q = z * gradient(u, g)
        q[:, [0, -1]] = 0.0
        tz = z * lap
        tz[:, [0, -1]] = 0.0
        tz[:, :-1] -= q[:, 1:] / (2 * g.dx)
        tz[:, 1:] += q[:, :-1] / (2 * g.dx)
        return apply_A(-(g.wt @ tz), g)
    raise ValueError(f"unknown parameter {which!r}; expected one of 'c', 'phi', 'a'")


def adjoint_nn(z: np.ndarray, ctx: AdjointContext) -> np.ndarray:
    """``N'_θ(u)* z = ∫∫ ∂N(u)/∂θ · z dx dt`` as a flat vector (sign left to the caller)."""
    g = ctx.grid
    z = g.check_space_time(z)
    return ctx.theta.param_vjp(ctx.u, g.wt[:, None] * z * g.wx[None, :])


def adjoint_trace(h: np.ndarray, grid: Grid) -> np.ndarray:
    """Adjoint of ``u ↦ u(0)``: the constant-in-time extension of ``h``."""
    h = grid.check_slice(h)
    return np.broadcast_to(h, grid.shape).copy()
