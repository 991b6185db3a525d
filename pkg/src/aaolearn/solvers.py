"""
Objective, gradients and the two optimizers.

The objective for ``K`` samples is

    Σ_k β_e ‖e(u^k, ψ^k, θ)‖²_𝒲 + β_M ‖M u^k − y^k‖²_𝒴 + r_u ‖u^k‖²_𝒱 + r_ψ ‖ψ^k‖²_{L²}
        + r_θ ‖θ‖²₂

Two gradient backends share it:

``"function"``
    Riesz representers in ``𝒱 × L² × Θ`` assembled from the analytic
    adjoint blocks (used by Landweber).
``"flat"``
    Euclidean gradient of the discretized objective with respect to the
    interior grid values and the network parameters (used by ADAM).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .adjoint import AdjointContext, adjoint_nn, adjoint_param, adjoint_transport, state_representer
from .adjoint import green_kernel
from .grid import (Grid, TridiagonalFactor, diffusion, diffusion_transpose, inner_V_state, state_gram, time_derivative,
                   time_derivative_transpose)
from .model import ObservationSet, PdeParams, measure, pde_residual

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("iter", "objective", "pde_residual_W", "data_misfit_Y", "step_size")


class SolverAbort(RuntimeError):
    """Raised when an optimizer hits a non-finite objective."""


@dataclass(frozen=True)
class ObjectiveWeights:
    beta_e: float = 1.0
    beta_M: float = 1.0
    r_u: float = 1e-4
    r_psi: float = 1e-4
    r_theta: float = 1e-6

    def __post_init__(self):
        for name in ("beta_e", "beta_M", "r_u", "r_psi", "r_theta"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite non-negative number, got {v}")
        if not (self.beta_e > 0 and self.beta_M > 0):
            raise ValueError("beta_e and beta_M must be positive")


@dataclass
class Problem:
    """Everything fixed during a solve.

    ``params[k].phi`` is the known part of the source for sample ``k``; when
    ``estimate_source`` is set, the unknown ``ψ^k`` is added to it.
    """

    grid: Grid
    params: list
    data: ObservationSet
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    estimate_source: bool = False

    def __post_init__(self):
        if isinstance(self.params, PdeParams):
            self.params = [self.params] * len(self.data)
        if len(self.params) != len(self.data):
            raise ValueError(f"{len(self.params)} parameter sets for {len(self.data)} samples")
        self.data.validate(self.grid)

    @property
    def K(self) -> int:
        return len(self.data)

    @property
    def spec(self):
        return self.data.spec


@dataclass
class SolveState:
    """Unknowns of the learning problem plus optimizer bookkeeping."""

    u: np.ndarray
    theta: object
    psi: np.ndarray | None = None
    iteration: int = 0
    residual_history: list = field(default_factory=list)
    step: float | None = None
    stop_reason: str | None = None

    def copy(self) -> "SolveState":
        return replace(self, u=self.u.copy(), psi=None if self.psi is None else self.psi.copy(),
                       residual_history=list(self.residual_history))


@dataclass
class Gradient:
    """Gradient or direction with the shape of :class:`SolveState`."""

    u: np.ndarray
    theta: np.ndarray
    psi: np.ndarray | None = None

    def __add__(self, other):
        return Gradient(self.u + other.u, self.theta + other.theta,
                        None if self.psi is None else self.psi + other.psi)

    def __mul__(self, s: float):
        return Gradient(s * self.u, s * self.theta, None if self.psi is None else s * self.psi)

    __rmul__ = __mul__


def apply_step(state: SolveState, d: Gradient, mu: float) -> SolveState:
    """``state + mu · d`` (new object, bookkeeping copied)."""
    new = state.copy()
    new.u = state.u + mu * d.u
    new.theta = state.theta.with_params(state.theta.params + mu * d.theta)
    if state.psi is not None:
        new.psi = state.psi + mu * d.psi
    return new


def pair(g: Gradient, d: Gradient, grid: Grid, backend: str) -> float:
    """Duality pairing matching ``backend``: 𝒱 × L² × ℓ² or Euclidean."""
    if backend == "flat":
        s = float(np.sum(g.u * d.u)) + float(g.theta @ d.theta)
        if g.psi is not None:
            s += float(np.sum(g.psi * d.psi))
        return s
    s = sum(inner_V_state(gu, du, grid) for gu, du in zip(g.u, d.u)) + float(g.theta @ d.theta)
    if g.psi is not None:
        s += float(np.sum((g.psi * d.psi) @ grid.wx))
    return s


# --------------------------------------------------------------------------
# objective
# --------------------------------------------------------------------------

def _source(problem: Problem, state: SolveState, k: int) -> PdeParams:
    p = problem.params[k]
    if problem.estimate_source:
        return p.with_phi(p.phi + state.psi[k])
    return p


def residuals(state: SolveState, problem: Problem) -> list:
    return [pde_residual(_source(problem, state, k), state.u[k], state.theta, problem.grid)
            for k in range(problem.K)]


def _misfit(state: SolveState, problem: Problem, k: int) -> np.ndarray:
    return measure(state.u[k], problem.spec, problem.grid) - problem.data.samples[k].data


def _sq_data_norm(res: np.ndarray, problem: Problem) -> float:
    g = problem.grid
    return float(problem.spec.row_weights(g) @ (res * res) @ g.wx)


def objective_terms(state: SolveState, problem: Problem) -> dict:
    """Unweighted pieces of the objective plus the weighted total."""
    g, w = problem.grid, problem.weights
    res = residuals(state, problem)
    pde = sum(float(g.wt @ (r * r) @ g.wx) for r in res)
    data = sum(_sq_data_norm(_misfit(state, problem, k), problem) for k in range(problem.K))
    reg_u = sum(inner_V_state(u, u, g) for u in state.u)
    reg_psi = 0.0
    if problem.estimate_source:
        reg_psi = float(np.sum((state.psi * state.psi) @ g.wx))
    reg_theta = float(state.theta.params @ state.theta.params)
    total = w.beta_e * pde + w.beta_M * data + w.r_u * reg_u + w.r_psi * reg_psi + w.r_theta * reg_theta
    return {"objective": total, "pde_sq": pde, "data_sq": data, "reg_u": reg_u,
            "reg_psi": reg_psi, "reg_theta": reg_theta,
            "pde_residual_W": math.sqrt(pde), "data_misfit_Y": math.sqrt(data)}


def objective(state: SolveState, problem: Problem) -> float:
    return objective_terms(state, problem)["objective"]


def pde_residual_norm(state: SolveState, problem: Problem) -> float:
    g = problem.grid
    return math.sqrt(sum(float(g.wt @ (r * r) @ g.wx) for r in residuals(state, problem)))


# --------------------------------------------------------------------------
# gradients
# --------------------------------------------------------------------------

def objective_gradient(state: SolveState, problem: Problem, backend: str = "function") -> Gradient:
    if backend == "function":
        return _gradient_function(state, problem)
    if backend == "flat":
        return _gradient_flat(state, problem)
    raise ValueError(f"unknown gradient backend {backend!r}")


def _gradient_function(state: SolveState, problem: Problem) -> Gradient:
    g, w, spec = problem.grid, problem.weights, problem.spec
    kernel = green_kernel(g)
    gu = np.zeros_like(state.u)
    gth = 2.0 * w.r_theta * state.theta.params
    gpsi = None if state.psi is None else np.zeros_like(state.psi)
    for k in range(problem.K):
        p = _source(problem, state, k)
        r = pde_residual(p, state.u[k], state.theta, g)
        ctx = AdjointContext(g, p, state.u[k], state.theta)
        # residual block and data block share one pass of A
        miss = _misfit(state, problem, k)
        kd = np.zeros(g.shape)
        if spec.mode == "full":
            kd += g.wt[:, None] * miss
        else:
            kd[list(spec.snapshot_indices)] += spec.scale * miss
        gu[k] = 2.0 * w.beta_e * adjoint_transport(r, ctx)
        gu[k] += 2.0 * w.beta_M * state_representer(kd, g, kernel)
        gu[k] += 2.0 * w.r_u * state.u[k]
        gth = gth - 2.0 * w.beta_e * adjoint_nn(r, ctx)
        if gpsi is not None:
            gpsi[k] = 2.0 * w.beta_e * adjoint_param(r, "phi", ctx) + 2.0 * w.r_psi * state.psi[k]
            gpsi[k][[0, -1]] = 0.0
    gu[:, :, [0, -1]] = 0.0
    return Gradient(gu, gth, gpsi)


def _gradient_flat(state: SolveState, problem: Problem) -> Gradient:
    g, w, spec = problem.grid, problem.weights, problem.spec
    wtx = np.outer(g.wt, g.wx)
    gu = np.zeros_like(state.u)
    gth = 2.0 * w.r_theta * state.theta.params
    gpsi = None if state.psi is None else np.zeros_like(state.psi)
    for k in range(problem.K):
        p = _source(problem, state, k)
        p.check_diffusion()
        u = state.u[k]
        nval, nslope, nvjp = state.theta.linearize(u)
        r = time_derivative(u, g) - diffusion(u, p.a, g) + p.c * u - p.phi - nval
        r[:, [0, -1]] = 0.0
        rho = 2.0 * w.beta_e * wtx * r
        gu[k] = (time_derivative_transpose(rho, g) - diffusion_transpose(rho, p.a, g)
                 + (p.c - nslope) * rho)
        miss = _misfit(state, problem, k)
        if spec.mode == "full":
            gu[k] += 2.0 * w.beta_M * wtx * miss
        else:
            gu[k][list(spec.snapshot_indices)] += 2.0 * w.beta_M * spec.scale * g.wx * miss
        gu[k] += 2.0 * w.r_u * state_gram(u, g)
        gth = gth - nvjp(rho)
        if gpsi is not None:
            gpsi[k] = -rho.sum(axis=0) + 2.0 * w.r_psi * g.wx * state.psi[k]
            gpsi[k][[0, -1]] = 0.0
    gu[:, :, [0, -1]] = 0.0
    return Gradient(gu, gth, gpsi)


# --------------------------------------------------------------------------
# Landweber
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StoppingRule:
    """Stop on ``max_iters``, on step underflow, or by the discrepancy principle.

    The discrepancy test compares the all-at-once residual
    ``sqrt(β_e‖e‖² + β_M‖Mu − y‖²)`` with ``tau · delta``; ``delta = None``
    disables it. ``residual_tol`` optionally stops once the PDE residual
    norm reaches that level (reason ``"residual"``).
    """

    max_iters: int = 10_000
    tau: float = 1.5
    delta: float | None = None
    min_step: float = 1e-12
    gtol: float = 1e-12
    residual_tol: float | None = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.delta is not None and self.delta < 0:
            raise ValueError("delta must be non-negative")


def _trace_row(it, terms, mu):
    return {"iter": it, "objective": terms["objective"], "pde_residual_W": terms["pde_residual_W"],
            "data_misfit_Y": terms["data_misfit_Y"], "step_size": mu}


def landweber_run(init: SolveState, problem: Problem, rule: StoppingRule = StoppingRule(),
                  step0: float = 1.0):
    """Gradient descent in 𝒱 × L² × Θ with residual-driven step control.

    A trial step is accepted when the PDE residual norm does not increase
    (ties accept); otherwise the step size is halved and the trial redone.
    Returns ``(state, trace)``.
    """
    if not step0 > 0:
        raise ValueError("initial step must be positive")
    w = problem.weights
    x = init.copy()
    mu = step0
    terms = objective_terms(x, problem)
    res = terms["pde_residual_W"]
    x.residual_history = [res]
    trace = [_trace_row(0, terms, mu)]
    reason = "max_iters"
    for it in range(1, rule.max_iters + 1):
        if rule.residual_tol is not None and res <= rule.residual_tol:
            reason = "residual"
            break
        if rule.delta is not None:
            combined = math.sqrt(w.beta_e * terms["pde_sq"] + w.beta_M * terms["data_sq"])
            if combined <= rule.tau * rule.delta:
                reason = "discrepancy"
                break
        grad = objective_gradient(x, problem, "function")
        gnorm = math.sqrt(max(pair(grad, grad, problem.grid, "function"), 0.0))
        if gnorm <= rule.gtol:
            reason = "stationary"
            break
        while True:
            trial = apply_step(x, grad, -mu)
            t_res = pde_residual_norm(trial, problem)
            if t_res <= res:
                break
            mu *= 0.5
            if mu < rule.min_step:
                break
        if mu < rule.min_step:
            reason = "stalled"
            break
        x = trial
        x.iteration = it
        res = t_res
        x.residual_history.append(res)
        terms = objective_terms(x, problem)
        trace.append(_trace_row(it, terms, mu))
        if not math.isfinite(terms["objective"]):
            raise SolverAbort(f"non-finite objective at Landweber iteration {it}")
    x.step = mu
    x.stop_reason = reason
    log.info("landweber stopped after %d iterations (%s), residual %.3e", x.iteration, reason, res)
    return x, trace


# --------------------------------------------------------------------------
# ADAM
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamOptions:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iters: int = 10_000
    trace_every: int = 100
    state_lr: float | None = None
    smoothing: float = 0.0

    def rates(self, packer: "_Packer") -> np.ndarray | float:
        """Per-entry learning rates: ``state_lr`` on the state block, ``lr`` elsewhere."""
        if self.state_lr is None:
            return self.lr
        r = np.full(packer.size, self.lr)
        r[:packer.nu] = self.state_lr
        return r


class _Packer:
    """Maps a state to the flat vector of free unknowns and back.

    With ``smoothing = ℓ² > 0`` the state block holds ``v = (I − ℓ²Δ_h) u``
    row by row instead of ``u`` itself.
    """

    def __init__(self, state: SolveState, grid: Grid | None = None, smoothing: float = 0.0):
        self.smooth = None
        if smoothing > 0:
            m = grid.nx - 2
            off = np.full(m, -smoothing / grid.dx**2)
            self.smooth = TridiagonalFactor(off, np.full(m, 1.0 + 2.0 * smoothing / grid.dx**2), off)
        self.ushape = state.u.shape
        self.nu = state.u[:, :, 1:-1].size
        self.npsi = 0 if state.psi is None else state.psi[:, 1:-1].size
        self.theta = state.theta
        self.size = self.nu + self.npsi + state.theta.size

    def to_free(self, u):
        if self.smooth is None:
            return u[:, :, 1:-1]
        return np.moveaxis(self.smooth.matvec(np.moveaxis(u[:, :, 1:-1], -1, 0)), 0, -1)

    def from_free(self, v):
        if self.smooth is None:
            return v
        return np.moveaxis(self.smooth.solve(np.moveaxis(v, -1, 0)), 0, -1)

    def pack(self, u, theta_vec, psi, gradient: bool = False) -> np.ndarray:
        # gradients transform with the transpose of from_free, which is from_free itself
        ub = self.from_free(u[:, :, 1:-1]) if gradient else self.to_free(u)
        parts = [ub.ravel()]
        if self.npsi:
            parts.append(psi[:, 1:-1].ravel())
        parts.append(theta_vec)
        return np.concatenate(parts)

    def unpack(self, x: np.ndarray, template: SolveState) -> SolveState:
        s = template.copy()
        s.u = np.zeros(self.ushape)
        s.u[:, :, 1:-1] = self.from_free(x[:self.nu].reshape(self.ushape[0], self.ushape[1], -1))
        pos = self.nu
        if self.npsi:
            s.psi = np.zeros_like(template.psi)
            s.psi[:, 1:-1] = x[pos:pos + self.npsi].reshape(s.psi.shape[0], -1)
            pos += self.npsi
        s.theta = template.theta.with_params(x[pos:])
        return s


def adam_run(init: SolveState, problem: Problem, opts: AdamOptions = AdamOptions()):
    """ADAM on the flattened interior unknowns with the ``"flat"`` gradient.

    Returns ``(state, trace)``; the trace holds every ``trace_every``-th
    iterate plus the last one.
    """
    packer = _Packer(init, problem.grid, opts.smoothing)
    x = packer.pack(init.u, init.theta.params, init.psi)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    lr = opts.rates(packer)
    trace = []
    state = init.copy()
    for it in range(opts.iters + 1):
        state = packer.unpack(x, init)
        last = it == opts.iters
        if it % opts.trace_every == 0 or last:
            terms = objective_terms(state, problem)
            if not math.isfinite(terms["objective"]):
                raise SolverAbort(f"non-finite objective at ADAM iteration {it}")
            trace.append(_trace_row(it, terms, opts.lr))
        if last:
            break
        grad = _gradient_flat(state, problem)
        gx = packer.pack(grad.u, grad.theta, grad.psi, gradient=True)
        if not np.all(np.isfinite(gx)):
            raise SolverAbort(f"non-finite gradient at ADAM iteration {it}")
        m = opts.beta1 * m + (1 - opts.beta1) * gx
        v = opts.beta2 * v + (1 - opts.beta2) * gx * gx
        mhat = m / (1 - opts.beta1 ** (it + 1))
        vhat = v / (1 - opts.beta2 ** (it + 1))
        x = x - lr * mhat / (np.sqrt(vhat) + opts.eps)
    state.iteration = opts.iters
    state.stop_reason = "max_iters"
    state.step = opts.lr
    return state, trace


def adam_minimize(fun_grad, x0, opts: AdamOptions = AdamOptions()) -> np.ndarray:
    """Plain ADAM on a function returning ``(value, gradient)``."""
    x = np.array(x0, dtype=float)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for it in range(opts.iters):
        f, gx = fun_grad(x)
        if not math.isfinite(f):
            raise SolverAbort(f"non-finite objective at ADAM iteration {it}")
        m = opts.beta1 * m + (1 - opts.beta1) * gx
        v = opts.beta2 * v + (1 - opts.beta2) * gx * gx
        x = x - opts.lr * (m / (1 - opts.beta1 ** (it + 1))) / (np.sqrt(v / (1 - opts.beta2 ** (it + 1))) + opts.eps)
    return x


def write_trace(trace: list, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        wr.writeheader()
        for row in trace:
            wr.writerow({k: (f"{row[k]:.17g}" if isinstance(row[k], float) else row[k]) for k in TRACE_COLUMNS})
