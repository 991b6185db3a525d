"""
End-to-end experiments: synthesize ground truth, observe it with noise,
solve the learning problem, undo the offset ambiguity and score.

A run is described by an :class:`ExperimentConfig`, which is read from a
JSON document with the sections ``grid``, ``truth``, ``measurement``,
``noise``, ``solver``, ``weights``, ``baseline`` and ``output`` plus an
optional top-level ``seed``. Unknown keys anywhere are errors.
"""

from __future__ import annotations

import copy
import dataclasses
import itertools
import json
import logging
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import DEFAULT_DOF, Polynomial, Trig
from .grid import Grid, laplacian, norm_W, time_derivative
from .model import MeasurementSpec, Observation, ObservationSet, PdeParams, measure
from .neural import NetParams
from .solvers import (AdamOptions, ObjectiveWeights, Problem, SolveState, SolverAbort, StoppingRule,
                      adam_run, landweber_run, residuals, write_trace)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


# --------------------------------------------------------------------------
# ground-truth nonlinearities
# --------------------------------------------------------------------------

def _cubic(u):
    return (u - 0.1) * (u - 0.5) * (141.6 * u - 30.0)


TRUTHS = {
    "linear": lambda u: 2.0 - u,
    "square": lambda u: u * u - 1.0,
    "cubic_poly": _cubic,
    "cosine": lambda u: np.cos(3.0 * np.pi * u),
}

# monomial coefficients (lowest order first) of the polynomial truths
TRUTH_COEFFS = {
    "linear": [2.0, -1.0],
    "square": [-1.0, 0.0, 1.0],
    "cubic_poly": [-1.5, 25.08, -114.96, 141.6],
}


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GridConfig:
    nx: int = 51
    nt: int = 50
    T: float = 0.1

    def build(self) -> Grid:
        return Grid(nx=self.nx, nt=self.nt, t_hi=self.T)


@dataclass(frozen=True)
class TruthConfig:
    """Ground truth: nonlinearity, ``K`` samples, sources and initial states.

    Sample ``k`` uses the source ``b + amp_k exp(-(x - c_k)² / (2 w²))``
    and the initial state ``u0_k sin(πx)``; the lists are cycled when
    ``samples`` exceeds their length. The level ``b`` defaults to
    ``-f(0)``, which makes ``u̇ = 0`` on the boundary at ``t = 0`` and so
    avoids an initial boundary layer that the coarse time grid cannot
    resolve. ``synthesis='manufactured'`` keeps the
    synthesized state but replaces the source by the space-time field that
    makes the discrete residual vanish exactly.
    """

    nonlinearity: str = "square"
    samples: int = 1
    phi_amplitudes: tuple = (2.0, -1.5, 3.0)
    phi_centers: tuple = (0.5, 0.3, 0.7)
    phi_width: float = 0.1
    phi_level: float | None = None
    u0_amplitudes: tuple = (1.0, 0.8, 1.2)
    refine: int = 16
    synthesis: str = "imex"


@dataclass(frozen=True)
class MeasurementConfig:
    """``tmeas`` evenly spaced snapshots from ``t=0`` (``tmeas > nt`` or
    ``mode='full'`` observes everything); ``indices`` overrides ``tmeas``."""

    mode: str = "snapshots"
    tmeas: int | None = 50
    indices: tuple | None = None
    scale: float = 1.0

    def build(self, grid: Grid) -> MeasurementSpec:
        if self.mode == "full":
            return MeasurementSpec(mode="full", scale=self.scale)
        if self.indices is not None:
            spec = MeasurementSpec(snapshot_indices=tuple(self.indices), scale=self.scale)
            spec.validate(grid)
            return spec
        if self.tmeas is None:
            raise ConfigError("measurement: snapshot mode needs 'tmeas' or 'indices'")
        if self.tmeas >= grid.nt:
            return MeasurementSpec(mode="full", scale=self.scale)
        return MeasurementSpec.evenly_spaced(self.tmeas, grid, self.scale)


@dataclass(frozen=True)
class NoiseConfig:
    """Absolute standard deviation ``sigma`` or relative level ``percent``
    (of the root-mean-square data value); at most one may be set."""

    sigma: float | None = None
    percent: float | None = None


@dataclass(frozen=True)
class SolverConfig:
    method: str = "adam"
    estimate_source: bool = False
    init: str = "data"
    lr: float = 0.01
    state_lr: float | None = 3e-4
    smoothing: float = 4e-4
    iters: int = 10_000
    trace_every: int = 100
    max_iters: int = 10_000
    tau: float = 1.5
    step0: float = 1.0
    min_step: float = 1e-12
    residual_tol: float | None = None
    discrepancy: bool = True


@dataclass(frozen=True)
class BaselineConfig:
    kind: str = "network"
    arch: tuple = (1, 2, 4, 2, 1)
    init_scale: float = 0.5
    dof: int = DEFAULT_DOF


@dataclass(frozen=True)
class OutputConfig:
    format: str = "csv"
    fields: bool = True
    plots: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    truth: TruthConfig = field(default_factory=TruthConfig)
    measurement: MeasurementConfig = field(default_factory=MeasurementConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        t, m, n, s, b, o = self.truth, self.measurement, self.noise, self.solver, self.baseline, self.output
        if self.grid.nx < 3 or self.grid.nt < 2 or not self.grid.T > 0:
            raise ConfigError("grid: need nx >= 3, nt >= 2 and T > 0")
        if t.nonlinearity not in TRUTHS:
            raise ConfigError(f"truth.nonlinearity: expected one of {sorted(TRUTHS)}, got {t.nonlinearity!r}")
        if t.samples < 1:
            raise ConfigError("truth.samples: K must be >= 1")
        if t.refine < 1:
            raise ConfigError("truth.refine: must be >= 1")
        if t.synthesis not in ("imex", "manufactured"):
            raise ConfigError("truth.synthesis: expected 'imex' or 'manufactured'")
        if not (t.phi_amplitudes and t.phi_centers and t.u0_amplitudes) or not t.phi_width > 0:
            raise ConfigError("truth: source and initial-state lists must be nonempty, width positive")
        if m.mode not in ("full", "snapshots"):
            raise ConfigError(f"measurement.mode: expected 'full' or 'snapshots', got {m.mode!r}")
        try:
            m.build(self.grid.build())
        except ValueError as exc:
            raise ConfigError(f"measurement: {exc}") from exc
        if n.sigma is not None and n.percent is not None:
            raise ConfigError("noise: set either 'sigma' or 'percent', not both")
        for name in ("sigma", "percent"):
            v = getattr(n, name)
            if v is not None and not v >= 0:
                raise ConfigError(f"noise.{name}: must be non-negative")
        if s.method not in ("adam", "landweber"):
            raise ConfigError(f"solver.method: expected 'adam' or 'landweber', got {s.method!r}")
        if s.init not in ("data", "truth"):
            raise ConfigError("solver.init: expected 'data' or 'truth'")
        if s.estimate_source and t.synthesis == "manufactured":
            raise ConfigError("solver.estimate_source: not available with a manufactured source field")
        if s.iters < 0 or s.max_iters < 1 or s.trace_every < 1 or s.tau < 1 or not s.step0 > 0 or s.lr < 0:
            raise ConfigError("solver: invalid iteration counts, tau < 1, or non-positive step")
        if b.kind not in ("network", "polynomial", "trig"):
            raise ConfigError(f"baseline.kind: expected network/polynomial/trig, got {b.kind!r}")
        if b.dof < 1:
            raise ConfigError("baseline.dof: must be >= 1")
        if o.format not in ("csv", "binary"):
            raise ConfigError("output.format: expected 'csv' or 'binary'")

    # -- JSON -------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        sections = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for name, value in data.items():
            if name == "seed":
                if not isinstance(value, int) or isinstance(value, bool):
                    raise ConfigError("seed: must be an integer")
                kwargs[name] = value
                continue
            kwargs[name] = _build_section(sections[name].default_factory, value, name)
        try:
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with section fields overridden: ``replace(noise={'sigma': 0.1})``."""
        d = self.to_dict()
        for name, value in sections.items():
            if isinstance(value, dict):
                d[name].update(value)
            else:
                d[name] = value
        return ExperimentConfig.from_dict(d)


def _build_section(factory, value, name):
    if not isinstance(value, dict):
        raise ConfigError(f"{name}: expected an object")
    cls = factory
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(value) - set(known)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# --------------------------------------------------------------------------
# ground truth
# --------------------------------------------------------------------------

class SynthesisError(SolverAbort):
    """Ground-truth time stepping blew up or failed its self-convergence check."""


def _imex_steps(f_true, phi, u0, grid: Grid, refine: int) -> np.ndarray:
    """Crank-Nicolson diffusion with a Heun-averaged explicit reaction term."""
    m = grid.nx - 2
    h = grid.dt / refine
    lap = (np.diag(np.full(m, -2.0)) + np.diag(np.ones(m - 1), 1) + np.diag(np.ones(m - 1), -1)) / grid.dx**2
    eye = np.eye(m)
    solve = np.linalg.inv(eye - 0.5 * h * lap)
    explicit = eye + 0.5 * h * lap
    src = np.asarray(phi, dtype=float)[1:-1]
    v = np.asarray(u0, dtype=float)[1:-1].copy()
    out = np.zeros(grid.shape)
    out[0, 1:-1] = v
    for n in range(grid.nt):
        for _ in range(refine):
            fv = f_true(v)
            base = explicit @ v + h * src
            pred = solve @ (base + h * fv)
            v = solve @ (base + 0.5 * h * (fv + f_true(pred)))
            if not np.all(np.isfinite(v)) or np.abs(v).max() > 1e6:
                raise SynthesisError(f"ground-truth state blew up before t = {grid.t[n + 1]:.4g}")
        out[n + 1, 1:-1] = v
    return out


def synthesize_state(f_true, phi, u0, grid: Grid, refine: int = 16, check: bool = True,
                     tol: float = 1e-6) -> np.ndarray:
    """Solve ``u̇ = Δ_h u + φ + f(u)`` with ``u(0) = u0`` and Dirichlet data.

    Time stepping runs on the experiment's spatial grid with ``refine``
    substeps per coarse step; the result is sampled at the coarse times.
    With ``check`` the run is repeated at twice the refinement and must agree
    to ``tol`` in the 𝒲 norm.
    """
    u = _imex_steps(f_true, phi, u0, grid, refine)
    if check:
        u2 = _imex_steps(f_true, phi, u0, grid, 2 * refine)
        gap = norm_W(u - u2, grid)
        if gap > tol:
            raise SynthesisError(f"ground truth not converged in time: refinement changes it by {gap:.3g}")
    return u


@dataclass
class GroundTruth:
    grid: Grid
    nonlinearity: str
    phi: list
    u0: list
    states: list

    @property
    def f(self):
        return TRUTHS[self.nonlinearity]


def build_truth(cfg: ExperimentConfig) -> GroundTruth:
    t = cfg.truth
    grid = cfg.grid.build()
    f = TRUTHS[t.nonlinearity]
    x = grid.x
    phis, u0s, states = [], [], []
    for k in range(t.samples):
        amp = t.phi_amplitudes[k % len(t.phi_amplitudes)]
        ctr = t.phi_centers[k % len(t.phi_centers)]
        level = -float(f(0.0)) if t.phi_level is None else t.phi_level
        phi = level + amp * np.exp(-((x - ctr) ** 2) / (2 * t.phi_width**2))
        phi[[0, -1]] = 0.0
        u0 = t.u0_amplitudes[k % len(t.u0_amplitudes)] * np.sin(np.pi * x)
        u0[[0, -1]] = 0.0
        u = synthesize_state(f, phi, u0, grid, refine=t.refine)
        if t.synthesis == "manufactured":
            phi = time_derivative(u, grid) - laplacian(u, grid) - f(u)
            phi[:, [0, -1]] = 0.0
        phis.append(phi)
        u0s.append(u0)
        states.append(u)
    return GroundTruth(grid, t.nonlinearity, phis, u0s, states)


# --------------------------------------------------------------------------
# noise and offsets
# --------------------------------------------------------------------------

def add_noise(y: ObservationSet, grid: Grid, sigma: float | None = None, percent: float | None = None,
              seed: int = 0) -> ObservationSet:
    """Add i.i.d. Gaussian noise to every observed value.

    ``sigma`` is an absolute standard deviation; ``percent`` sets it to
    ``percent/100`` times the root-mean-square data value (per sample).
    The realized noise and its 𝒴 norm are recorded on each sample.
    """
    if sigma is not None and percent is not None:
        raise ValueError("give sigma or percent, not both")
    if (sigma is not None and sigma < 0) or (percent is not None and percent < 0):
        raise ValueError("noise level must be non-negative")
    rng = np.random.default_rng(seed)
    out = []
    for obs in y.samples:
        clean = obs.data
        if percent is not None:
            s = percent / 100.0 * float(np.sqrt(np.mean(clean**2)))
        else:
            s = 0.0 if sigma is None else float(sigma)
        noise = s * rng.standard_normal(clean.shape)
        nrm = math.sqrt(float(y.spec.row_weights(grid) @ (noise * noise) @ grid.wx))
        out.append(Observation(clean + noise, noise_norm=nrm,
                               noise={"sigma": s, "percent": percent}, seed=seed))
    return ObservationSet(y.spec, out)


@dataclass
class OffsetResult:
    c: float
    f: np.ndarray
    phi: list | None


def offset_correction(f_samples, y_range, f_true_samples, grid: Grid, phi_rec=None, phi_true=None) -> OffsetResult:
    """Shift a constant from the recovered nonlinearity to the source.

    Minimizes ``‖f − c − f_true‖²_{L²(Ω_y)} + Σ_k ‖φ^k + c − φ^k_true‖²_{L²(Ω)}``
    over ``c``; without sources only the first term is used. ``f_samples``
    are values on the uniform points ``y_range`` spanning ``Ω_y``.
    """
    f = np.asarray(f_samples, dtype=float)
    ft = np.asarray(f_true_samples, dtype=float)
    y = np.asarray(y_range, dtype=float)
    width = float(y[-1] - y[0])
    if y.size < 2 or width <= 0:
        diff_f = float(np.mean(f - ft))
        width = 0.0
        int_f = 0.0
    else:
        int_f = float(np.trapezoid(f - ft, y))
        diff_f = int_f / width
    if phi_rec is None:
        c = diff_f
        return OffsetResult(c, f - c, None)
    int_phi = sum(float(np.trapezoid(np.asarray(p) - np.asarray(q), grid.x, axis=-1))
                  for p, q in zip(phi_rec, phi_true))
    length = len(phi_rec) * (grid.x_hi - grid.x_lo)
    c = (int_f - int_phi) / (width + length)
    return OffsetResult(c, f - c, [np.asarray(p) + c for p in phi_rec])


# --------------------------------------------------------------------------
# surrogates and initialization
# --------------------------------------------------------------------------

def make_surrogate(cfg: ExperimentConfig, rng, value_range=(0.0, 1.0)):
    b = cfg.baseline
    if b.kind == "network":
        return NetParams.random(b.arch, rng, scale=b.init_scale)
    if b.kind == "polynomial":
        return Polynomial.zeros(b.dof)
    return Trig.for_range(value_range[0], value_range[1], dof=b.dof)


def interpolate_snapshots(data: np.ndarray, spec: MeasurementSpec, grid: Grid) -> np.ndarray:
    """Linear-in-time interpolation of observed rows (held constant outside them)."""
    if spec.mode == "full":
        u = np.array(data, dtype=float)
    else:
        rows = np.asarray(spec.snapshot_indices)
        vals = np.asarray(data, dtype=float) / spec.scale
        u = np.empty(grid.shape)
        for i in range(grid.nx):
            u[:, i] = np.interp(grid.t, grid.t[rows], vals[:, i])
    u[:, [0, -1]] = 0.0
    return u


# --------------------------------------------------------------------------
# scoring
# --------------------------------------------------------------------------

N_SCORE_POINTS = 201


@dataclass
class ErrorReport:
    """Offset-corrected errors of a reconstruction.

    The four primary fields are mean-squared errors (``pde_residual`` is the
    𝒲 norm of the recovered residual). Relative ``L²`` errors and the
    applied offset are carried alongside.
    """

    nonlinearity_error: float
    state_error: float
    parameter_error: float
    pde_residual: float
    nonlinearity_rel_l2: float = 0.0
    state_rel_l2: float = 0.0
    parameter_rel_l2: float = 0.0
    offset: float = 0.0
    value_range: tuple = (0.0, 0.0)

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))


def _rel(num: float, den: float) -> float:
    return num / den if den > 0 else num


def score(truth: GroundTruth, state: SolveState, problem: Problem) -> tuple[ErrorReport, dict]:
    """Error report plus the sampled curves used for plot data."""
    g = truth.grid
    lo, hi = float(state.u.min()), float(state.u.max())
    ys = np.linspace(lo, hi, N_SCORE_POINTS)
    f_rec = state.theta.value(ys)
    f_true = truth.f(ys)
    phi_rec = phi_true = None
    if problem.estimate_source:
        phi_rec = [problem.params[k].phi + state.psi[k] for k in range(problem.K)]
        phi_true = [np.asarray(p, dtype=float) for p in truth.phi]
        for p in phi_rec + phi_true:
            p[..., [0, -1]] = 0.0
    off = offset_correction(f_rec, ys, f_true, g, phi_rec, phi_true)
    df = off.f - f_true
    nl_mse = float(np.mean(df**2))
    nl_rel = _rel(math.sqrt(float(np.trapezoid(df**2, ys))), math.sqrt(float(np.trapezoid(f_true**2, ys))))
    du = np.stack([state.u[k] - truth.states[k] for k in range(problem.K)])
    st_mse = float(np.mean(du**2))
    st_rel = _rel(math.sqrt(sum(norm_W(d, g) ** 2 for d in du)),
                  math.sqrt(sum(norm_W(u, g) ** 2 for u in truth.states)))
    par_mse = par_rel = 0.0
    if off.phi is not None:
        dp = np.stack([a - b for a, b in zip(off.phi, phi_true)])
        par_mse = float(np.mean(dp[:, 1:-1] ** 2))
        par_rel = _rel(math.sqrt(sum(float(np.trapezoid(d**2, g.x)) for d in dp)),
                       math.sqrt(sum(float(np.trapezoid(p**2, g.x)) for p in phi_true)))
    res = math.sqrt(sum(norm_W(r, g) ** 2 for r in residuals(state, problem)))
    report = ErrorReport(nl_mse, st_mse, par_mse, res, nl_rel, st_rel, par_rel, off.c, (lo, hi))
    curves = {"y": ys, "f_true": f_true, "f_rec": f_rec, "f_corrected": off.f,
              "phi_rec": off.phi, "phi_true": phi_true}
    return report, curves


# --------------------------------------------------------------------------
# orchestration
# --------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    report: ErrorReport
    truth: GroundTruth
    data: ObservationSet
    state: SolveState
    trace: list
    curves: dict
    problem: Problem

    def report_dict(self) -> dict:
        s = self.state
        return {"errors": self.report.to_dict(),
                "solver": {"method": self.config.solver.method, "iterations": s.iteration,
                           "stop_reason": s.stop_reason,
                           "noise_norms": [o.noise_norm for o in self.data.samples]},
                "config": self.config.to_dict()}


def observe(truth: GroundTruth, cfg: ExperimentConfig) -> ObservationSet:
    g = truth.grid
    spec = cfg.measurement.build(g)
    clean = ObservationSet(spec, [measure(u, spec, g) for u in truth.states])
    return add_noise(clean, g, sigma=cfg.noise.sigma, percent=cfg.noise.percent,
                     seed=int(np.random.SeedSequence([cfg.seed, 1]).generate_state(1)[0]))


def setup(cfg: ExperimentConfig):
    """Truth, noisy data, problem and initial state for ``cfg``."""
    truth = build_truth(cfg)
    g = truth.grid
    data = observe(truth, cfg)
    spec = data.spec
    K = cfg.truth.samples
    est = cfg.solver.estimate_source
    params = [PdeParams.heat(g, np.zeros(g.nx) if est else truth.phi[k]) for k in range(K)]
    problem = Problem(g, params, data, cfg.weights, estimate_source=est)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    if cfg.solver.init == "truth":
        u = np.stack(truth.states)
    else:
        u = np.stack([interpolate_snapshots(o.data, spec, g) for o in data.samples])
    theta = make_surrogate(cfg, rng, (float(u.min()), float(u.max())))
    if cfg.solver.init == "truth" and cfg.baseline.kind == "polynomial" and cfg.truth.nonlinearity in TRUTH_COEFFS:
        coeffs = np.zeros(theta.size)
        tc = TRUTH_COEFFS[cfg.truth.nonlinearity]
        coeffs[:len(tc)] = tc
        theta = theta.with_params(coeffs)
    psi = np.zeros((K, g.nx)) if est else None
    if est and cfg.solver.init == "truth":
        psi = np.stack(truth.phi)
    return truth, data, problem, SolveState(u=u, theta=theta, psi=psi)


def run_experiment(cfg: ExperimentConfig, out_dir=None, binary: bool | None = None) -> ExperimentResult:
    """Synthesize, observe, solve and score; write artifacts if ``out_dir`` is given.

    A :class:`SolverAbort` propagates after whatever was written so far.
    """
    truth, data, problem, init = setup(cfg)
    s = cfg.solver
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    if s.method == "adam":
        state, trace = adam_run(init, problem, AdamOptions(lr=s.lr, iters=s.iters, trace_every=s.trace_every,
                                                                    state_lr=s.state_lr, smoothing=s.smoothing))
    else:
        delta = None
        noise_sq = sum(o.noise_norm**2 for o in data.samples)
        if s.discrepancy and noise_sq > 0:
            delta = math.sqrt(cfg.weights.beta_M * noise_sq)
        rule = StoppingRule(max_iters=s.max_iters, tau=s.tau, delta=delta, min_step=s.min_step,
                            residual_tol=s.residual_tol)
        state, trace = landweber_run(init, problem, rule, step0=s.step0)
    report, curves = score(truth, state, problem)
    result = ExperimentResult(cfg, report, truth, data, state, trace, curves, problem)
    if out is not None:
        write_artifacts(result, out, binary=cfg.output.format == "binary" if binary is None else binary)
    return result


# --------------------------------------------------------------------------
# artifacts
# --------------------------------------------------------------------------

FIELD_MAGIC = b"AAOFLD01"


def write_field(path, values: np.ndarray, binary: bool = False) -> Path:
    """Write a 2-D field as CSV or as raw little-endian float64.

    The binary layout is a 16-byte header (8-byte magic, ``nt`` and ``nx``
    as little-endian uint32, where the field has ``nt + 1`` rows) followed
    by the values in row-major order.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    path = Path(path)
    if binary:
        path = path.with_suffix(".bin")
        with open(path, "wb") as fh:
            fh.write(FIELD_MAGIC + struct.pack("<II", values.shape[0] - 1, values.shape[1]))
            fh.write(values.astype("<f8").tobytes())
    else:
        path = path.with_suffix(".csv")
        np.savetxt(path, values, delimiter=",", fmt="%.17g")
    return path


def read_field(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".bin":
        raw = path.read_bytes()
        if raw[:8] != FIELD_MAGIC:
            raise ValueError(f"{path}: not a field file")
        nt, nx = struct.unpack("<II", raw[8:16])
        return np.frombuffer(raw[16:], dtype="<f8").reshape(nt + 1, nx).copy()
    return np.atleast_2d(np.loadtxt(path, delimiter=","))


def _write_csv(path, header, columns) -> None:
    arr = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, arr, delimiter=",", fmt="%.17g", header=",".join(header), comments="")


def write_artifacts(result: ExperimentResult, out: Path, binary: bool = False) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(result.report_dict(), indent=2, sort_keys=True) + "\n")
    write_trace(result.trace, out / "trace.csv")
    g = result.truth.grid
    K = result.problem.K
    if result.config.output.fields:
        fdir = out / "fields"
        fdir.mkdir(exist_ok=True)
        for k in range(K):
            write_field(fdir / f"u_rec_{k}", result.state.u[k], binary)
            write_field(fdir / f"u_true_{k}", result.truth.states[k], binary)
            write_field(fdir / f"data_{k}", result.data.samples[k].data, binary)
    pdir = out / "plotdata"
    pdir.mkdir(exist_ok=True)
    c = result.curves
    _write_csv(pdir / "nonlinearity.csv", ["u", "f_true", "f_recovered", "f_corrected"],
               [c["y"], c["f_true"], c["f_rec"], c["f_corrected"]])
    rows = result.data.spec.observed_rows(g)
    for k in range(K):
        cols, head = [g.x], ["x"]
        for n in rows:
            head += [f"true_t{n}", f"recovered_t{n}"]
            cols += [result.truth.states[k][n], result.state.u[k][n]]
        _write_csv(pdir / f"state_slices_{k}.csv", head, cols)
    if c["phi_rec"] is not None:
        head, cols = ["x"], [g.x]
        for k in range(K):
            head += [f"phi_true_{k}", f"phi_recovered_{k}"]
            cols += [c["phi_true"][k], c["phi_rec"][k]]
        _write_csv(pdir / "parameter.csv", head, cols)
    if result.config.output.plots:
        from .plotting import render_figures
        render_figures(out)


# --------------------------------------------------------------------------
# grid search
# --------------------------------------------------------------------------

def log_range(lo: float, hi: float, n: int) -> list:
    """``n`` logarithmically spaced values from ``lo`` to ``hi`` (inclusive)."""
    return np.geomspace(lo, hi, n).tolist()


def _run_cell(args):
    cfg_dict, metric = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    try:
        r = run_experiment(cfg)
        return getattr(r.report, metric)
    except SolverAbort as exc:
        log.warning("grid-search cell aborted: %s", exc)
        return math.inf


def grid_search(cfg: ExperimentConfig, weight_grid: dict, metric: str = "nonlinearity_error",
                jobs: int = 1) -> dict:
    """Evaluate every combination of ``weights`` overrides; returns all cells and the best.

    ``weight_grid`` maps :class:`ObjectiveWeights` field names to candidate
    values. Cells are independent runs and may execute in a process pool.
    """
    names = sorted(weight_grid)
    combos = list(itertools.product(*(weight_grid[n] for n in names)))
    base = cfg.to_dict()
    base["output"] = dict(base["output"], plots=False, fields=False)
    tasks = []
    for combo in combos:
        d = copy.deepcopy(base)
        d["weights"].update(dict(zip(names, combo)))
        tasks.append((d, metric))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(_run_cell, tasks))
    else:
        scores = [_run_cell(t) for t in tasks]
    cells = [{"weights": dict(zip(names, combo)), metric: sc} for combo, sc in zip(combos, scores)]
    best = min(range(len(cells)), key=lambda i: (scores[i], i))
    return {"metric": metric, "cells": cells, "best": cells[best]}
