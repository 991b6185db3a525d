"""
Randomized consistency checks: adjoint pairings and gradient finite
differences. Used by the ``adjoint-check`` subcommand and the test suite.

A pairing defect is ``|⟨K v, z⟩ − ⟨v, K* z⟩| / (‖v‖ ‖K* z‖)``, both norms
taken in the domain space of ``K``; by Cauchy-Schwarz the denominator bounds
``|⟨v, K* z⟩|`` so the defect is a relative error.
"""

from __future__ import annotations

import math

import numpy as np

from .adjoint import (AdjointContext, adjoint_M_full, adjoint_M_snapshot, adjoint_nn, adjoint_param,
                      adjoint_trace, adjoint_transport)
from .grid import Grid, inner_L2, inner_V, inner_V_state, inner_W, norm_V_state
from .model import MeasurementSpec, PdeParams, jvp
from .neural import NetParams

BLOCKS = ("M_full", "M_snapshot", "transport", "param_c", "param_phi", "param_a", "nn", "trace")


def _smooth_slice(grid: Grid, rng, modes: int = 5) -> np.ndarray:
    s = (grid.x - grid.x_lo) / (grid.x_hi - grid.x_lo)
    out = sum(rng.normal() / k**2 * np.sin(k * np.pi * s) for k in range(1, modes + 1))
    return np.asarray(out, dtype=float)


def _smooth_field(grid: Grid, rng, modes: int = 5) -> np.ndarray:
    tau = grid.t / grid.t_hi
    out = np.zeros(grid.shape)
    for _ in range(3):
        out += np.outer(rng.normal() + rng.normal() * tau + rng.normal() * tau**2, _smooth_slice(grid, rng, modes))
    return out


def _interior(r: np.ndarray) -> np.ndarray:
    r = np.array(r, dtype=float)
    r[..., [0, -1]] = 0.0
    return r


def _defect(lhs: float, rhs: float, scale: float) -> float:
    return abs(lhs - rhs) / scale if scale > 0 else abs(lhs - rhs)


def random_context(grid: Grid, rng) -> AdjointContext:
    """Linearization point with a random state, coefficients and network."""
    p = PdeParams(phi=_smooth_slice(grid, rng), c=0.5 + 0.1 * _smooth_slice(grid, rng),
                  a=1.0 + 0.2 * np.abs(_smooth_slice(grid, rng)))
    return AdjointContext(grid, p, _smooth_field(grid, rng), NetParams.random(rng=rng))


def pairing_defects(grid: Grid, draws: int = 20, seed: int = 0) -> dict:
    """Largest pairing defect of every adjoint block over ``draws`` random draws."""
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(BLOCKS, 0.0)
    full = MeasurementSpec.full()
    for _ in range(draws):
        ctx = random_context(grid, rng)
        p, u, th = ctx.params, ctx.u, ctx.theta
        v = _smooth_field(grid, rng)
        v[:, [0, -1]] = 0.0
        z = _interior(_smooth_field(grid, rng))

        r = adjoint_M_full(z, ctx)
        worst["M_full"] = max(worst["M_full"], _defect(inner_W(v, z, grid), inner_V_state(v, r, grid),
                                                       norm_V_state(v, grid) * norm_V_state(r, grid)))

        i = int(rng.integers(0, grid.nt + 1))
        scale = float(rng.uniform(0.5, 2.0))
        h = _smooth_slice(grid, rng)
        r = adjoint_M_snapshot(h, i, scale, ctx)
        worst["M_snapshot"] = max(worst["M_snapshot"],
                                  _defect(scale * inner_L2(v[i], h, grid), inner_V_state(v, r, grid),
                                          norm_V_state(v, grid) * norm_V_state(r, grid)))

        dr, _ = jvp(p, u, th, grid, full, du=v)
        r = adjoint_transport(z, ctx)
        worst["transport"] = max(worst["transport"], _defect(inner_W(dr, z, grid), inner_V_state(v, r, grid),
                                                             norm_V_state(v, grid) * norm_V_state(r, grid)))

        for name, inner in (("c", inner_L2), ("phi", inner_L2), ("a", inner_V)):
            d = _smooth_slice(grid, rng)  # vanishes on the boundary, as the a-block requires
            dr, _ = jvp(p, u, th, grid, full, dp={name: d})
            r = adjoint_param(z, name, ctx)
            scale = math.sqrt(inner(d, d, grid) * inner(r, r, grid))
            worst[f"param_{name}"] = max(worst[f"param_{name}"],
                                         _defect(inner_W(dr, z, grid), inner(d, r, grid), scale))

        dth = rng.normal(size=th.size)
        dr, _ = jvp(p, u, th, grid, full, dtheta=dth)
        r = -adjoint_nn(z, ctx)
        worst["nn"] = max(worst["nn"], _defect(inner_W(dr, z, grid), float(dth @ r),
                                               float(np.linalg.norm(dth) * np.linalg.norm(r))))

        r = adjoint_trace(h, grid)
        worst["trace"] = max(worst["trace"], _defect(inner_V(h, v[0], grid), inner_V_state(r, v, grid),
                                                     math.sqrt(inner_V(h, h, grid)) * norm_V_state(v, grid)))
    return worst


def gradient_check(problem, state, backend: str, directions: int = 10, h: float = 1e-5, seed: int = 0) -> float:
    """Largest relative gap between central differences and ``⟨∇J, d⟩`` over random ``d``."""
    from .solvers import Gradient, apply_step, objective, objective_gradient, pair

    rng = np.random.default_rng(seed)
    g = objective_gradient(state, problem, backend)
    grid = problem.grid
    worst = 0.0
    for _ in range(directions):
        du = np.stack([_smooth_field(grid, rng) for _ in range(problem.K)])
        du[..., [0, -1]] = 0.0
        dpsi = None
        if state.psi is not None:
            dpsi = np.stack([_smooth_slice(grid, rng) for _ in range(problem.K)])
        d = Gradient(du, rng.normal(size=state.theta.size), dpsi)
        fd = (objective(apply_step(state, d, h), problem) - objective(apply_step(state, d, -h), problem)) / (2 * h)
        an = pair(g, d, grid, backend)
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-300))
    return worst
