"""
The learning-informed parabolic model

    u̇ − ∇·(a∇u) + c u − φ − N(u) = 0   in (0, T) × Ω,   u = 0 on ∂Ω,

in all-at-once form: the state ``u`` is an unknown next to the physical
parameters and the nonlinearity, and the PDE enters only through its residual.

``theta`` is any parametrized nonlinearity exposing ``value``, ``dz``,
``param_jvp`` and ``param_vjp`` (a :class:`~aaolearn.neural.NetParams` or a
baseline family).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .grid import Grid, diffusion, time_derivative

PARAM_NAMES = ("phi", "c", "a")


@dataclass
class PdeParams:
    """Source ``φ``, reaction ``c`` and diffusion ``a`` as slices.

    ``unknown`` lists the parameters treated as optimization variables.
    """

    phi: np.ndarray
    c: np.ndarray
    a: np.ndarray
    unknown: frozenset = field(default_factory=frozenset)
    a_lower: float = 1e-6

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        n = self.phi.shape[-1]
        self.c = np.broadcast_to(np.asarray(self.c, dtype=float), (n,)).copy()
        self.a = np.broadcast_to(np.asarray(self.a, dtype=float), (n,)).copy()
        self.unknown = frozenset(self.unknown)
        bad = self.unknown - set(PARAM_NAMES)
        if bad:
            raise ValueError(f"unknown parameter names {sorted(bad)}")
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite entries in {name}")

    @classmethod
    def heat(cls, grid: Grid, phi=None) -> "PdeParams":
        """``a ≡ 1``, ``c ≡ 0``: the setting of the numerical case study."""
        phi = np.zeros(grid.nx) if phi is None else phi
        return cls(phi=phi, c=np.zeros(grid.nx), a=np.ones(grid.nx))

    def check_diffusion(self) -> None:
        if np.any(self.a < self.a_lower):
            raise ValueError(f"diffusion coefficient violates a >= {self.a_lower} (min {self.a.min():.3g})")

    def with_phi(self, phi) -> "PdeParams":
        return replace(self, phi=np.asarray(phi, dtype=float))


@dataclass(frozen=True)
class MeasurementSpec:
    """Which time levels are observed and with which scale.

    ``mode='full'`` observes the whole space-time field; ``'snapshots'``
    observes ``scale * u(t_i)`` at ``snapshot_indices``. Index 0 (the
    initial state) is allowed.
    """

    mode: str = "snapshots"
    snapshot_indices: tuple = ()
    scale: float = 1.0

    def __post_init__(self):
        if self.mode not in ("full", "snapshots"):
            raise ValueError(f"measurement mode must be 'full' or 'snapshots', got {self.mode!r}")
        if not self.scale > 0:
            raise ValueError("measurement scale must be positive")
        idx = tuple(int(i) for i in self.snapshot_indices)
        object.__setattr__(self, "snapshot_indices", idx)
        if self.mode == "snapshots":
            if not idx:
                raise ValueError("snapshot mode needs at least one index")
            if any(b <= a for a, b in zip(idx, idx[1:])):
                raise ValueError("snapshot indices must be strictly increasing")
            if idx[0] < 0:
                raise ValueError("snapshot indices must be non-negative")

    @classmethod
    def full(cls) -> "MeasurementSpec":
        return cls(mode="full", snapshot_indices=())

    @classmethod
    def evenly_spaced(cls, count: int, grid: Grid, scale: float = 1.0) -> "MeasurementSpec":
        """``count`` snapshots from ``t = 0`` to ``t = T``; ``count > nt`` means full."""
        if count > grid.nt:
            return cls(mode="full", scale=scale)
        if count < 2:
            raise ValueError("need at least two snapshots")
        idx = np.unique(np.rint(np.linspace(0, grid.nt, count)).astype(int))
        return cls(mode="snapshots", snapshot_indices=tuple(idx.tolist()), scale=scale)

    def validate(self, grid: Grid) -> None:
        if self.mode == "snapshots" and self.snapshot_indices[-1] > grid.nt:
            raise ValueError(f"snapshot index {self.snapshot_indices[-1]} beyond nt={grid.nt}")

    def observed_rows(self, grid: Grid) -> np.ndarray:
        if self.mode == "full":
            return np.arange(grid.nt + 1)
        return np.asarray(self.snapshot_indices)

    def data_shape(self, grid: Grid) -> tuple[int, int]:
        if self.mode == "full":
            return grid.shape
        return (len(self.snapshot_indices), grid.nx)

    def row_weights(self, grid: Grid) -> np.ndarray:
        """Weights of the data norm per observed row (time quadrature or 1)."""
        if self.mode == "full":
            return grid.wt
        return np.ones(len(self.snapshot_indices))


@dataclass
class Observation:
    data: np.ndarray
    noise_norm: float = 0.0
    noise: dict = field(default_factory=dict)
    seed: int | None = None


@dataclass
class ObservationSet:
    """Noisy data ``y^k`` for ``K`` samples under one measurement spec."""

    spec: MeasurementSpec
    samples: list

    def __post_init__(self):
        self.samples = [s if isinstance(s, Observation) else Observation(np.asarray(s, dtype=float))
                        for s in self.samples]
        if not self.samples:
            raise ValueError("need at least one sample")

    def __len__(self):
        return len(self.samples)

    def validate(self, grid: Grid) -> None:
        self.spec.validate(grid)
        shape = self.spec.data_shape(grid)
        for k, s in enumerate(self.samples):
            if s.data.shape != shape:
                raise ValueError(f"sample {k}: data shape {s.data.shape}, expected {shape}")

    @property
    def data(self) -> list:
        return [s.data for s in self.samples]


# --------------------------------------------------------------------------

def pde_residual(p: PdeParams, u: np.ndarray, theta, grid: Grid) -> np.ndarray:
    """Residual ``u̇ − ∇·(a∇u) + c u − φ − N(u)`` at interior nodes (zero on the boundary)."""
    u = grid.check_space_time(u)
    p.check_diffusion()
    r = time_derivative(u, grid) - diffusion(u, p.a, grid) + p.c * u - p.phi - theta.value(u)
    r[:, [0, -1]] = 0.0
    return r


def measure(u: np.ndarray, spec: MeasurementSpec, grid: Grid) -> np.ndarray:
    u = grid.check_space_time(u)
    if spec.mode == "full":
        return u.copy()
    spec.validate(grid)
    return spec.scale * u[list(spec.snapshot_indices)]


def forward_G(p: PdeParams, u: np.ndarray, theta, spec: MeasurementSpec, grid: Grid):
    """The all-at-once forward operator: ``(residual, M u)``."""
    return pde_residual(p, u, theta, grid), measure(u, spec, grid)


def jvp(p: PdeParams, u: np.ndarray, theta, grid: Grid, spec: MeasurementSpec,
        dp: dict | None = None, du: np.ndarray | None = None, dtheta: np.ndarray | None = None):
    """Directional derivative of :func:`forward_G`.

    ``dp`` maps any of ``'phi'``, ``'c'``, ``'a'`` to a slice direction.
    Returns ``(dresidual, dobserved)``.
    """
    u = grid.check_space_time(u)
    dp = dp or {}
    bad = set(dp) - set(PARAM_NAMES)
    if bad:
        raise ValueError(f"unknown parameter directions {sorted(bad)}")
    dr = np.zeros(grid.shape)
    if du is not None:
        du = grid.check_space_time(du)
        dr += time_derivative(du, grid) - diffusion(du, p.a, grid) + p.c * du - theta.dz(u) * du
    if "a" in dp:
        dr -= diffusion(u, np.asarray(dp["a"], dtype=float), grid)
    if "c" in dp:
        dr += np.asarray(dp["c"], dtype=float) * u
    if "phi" in dp:
        dr -= np.asarray(dp["phi"], dtype=float)
    if dtheta is not None:
        dr -= theta.param_jvp(u, dtheta)
    dr[:, [0, -1]] = 0.0
    dobs = measure(du, spec, grid) if du is not None else np.zeros(spec.data_shape(grid))
    return dr, dobs
