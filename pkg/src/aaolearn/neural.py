"""
Dense scalar networks ``R -> R`` with tanh hidden layers and an affine output.

:class:`NetParams` holds the layer weights and doubles as a parametrized
nonlinearity: it exposes ``value``, ``dz``, ``param_vjp`` and ``param_jvp``
over flat parameter vectors, the same surface offered by the polynomial and
trigonometric families in :mod:`aaolearn.baselines`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import Grid, norm_V_state, norm_W, sup_embedding_constant

DEFAULT_ARCH = (1, 2, 4, 2, 1)

# sup |tanh''| = sup |2 tanh (tanh² - 1)|, attained at tanh(x) = 1/sqrt(3)
TANH_SECOND_DERIVATIVE_SUP = 4.0 / (3.0 * math.sqrt(3.0))


@dataclass
class NetParams:
    """Weights ``ω^l`` (``n_l x n_{l-1}``) and biases ``β^l`` (``n_l``)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.weights = [np.atleast_2d(np.asarray(w, dtype=float)) for w in self.weights]
        self.biases = [np.atleast_1d(np.asarray(b, dtype=float)) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        prev = 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases), start=1):
            if w.shape[1] != prev or b.shape != (w.shape[0],):
                raise ValueError(f"layer {l}: weight {w.shape} / bias {b.shape} do not chain from width {prev}")
            prev = w.shape[0]
        if prev != 1:
            raise ValueError("network output must be scalar")
        if not all(np.all(np.isfinite(a)) for a in self.weights + self.biases):
            raise ValueError("non-finite network parameter")

    # -- construction -----------------------------------------------------

    @classmethod
    def zeros(cls, arch=DEFAULT_ARCH) -> "NetParams":
        arch = tuple(arch)
        return cls([np.zeros((arch[l], arch[l - 1])) for l in range(1, len(arch))],
                   [np.zeros(arch[l]) for l in range(1, len(arch))])

    @classmethod
    def random(cls, arch=DEFAULT_ARCH, rng=None, scale: float = 0.5) -> "NetParams":
        """Entries i.i.d. uniform on ``[-scale, scale]``."""
        rng = np.random.default_rng(rng)
        arch = tuple(arch)
        ws, bs = [], []
        for l in range(1, len(arch)):
            ws.append(rng.uniform(-scale, scale, (arch[l], arch[l - 1])))
            bs.append(rng.uniform(-scale, scale, arch[l]))
        return cls(ws, bs)

    @classmethod
    def from_vector(cls, arch, vec: np.ndarray) -> "NetParams":
        arch = tuple(arch)
        vec = np.asarray(vec, dtype=float)
        ws, bs, pos = [], [], 0
        for l in range(1, len(arch)):
            n = arch[l] * arch[l - 1]
            ws.append(vec[pos:pos + n].reshape(arch[l], arch[l - 1]))
            pos += n
            bs.append(vec[pos:pos + arch[l]].copy())
            pos += arch[l]
        if pos != vec.size:
            raise ValueError(f"vector of length {vec.size} does not match architecture {arch}")
        return cls(ws, bs)

    # -- bookkeeping ------------------------------------------------------

    @property
    def arch(self) -> tuple[int, ...]:
        return (1,) + tuple(w.shape[0] for w in self.weights)

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    @property
    def size(self) -> int:
        return self.params.size

    @property
    def offset_index(self) -> int:
        """Position of the output bias ``β^L`` in :attr:`params`."""
        return self.size - 1

    def with_params(self, vec: np.ndarray) -> "NetParams":
        return NetParams.from_vector(self.arch, vec)

    def to_dict(self) -> dict:
        return {
            "arch": list(self.arch),
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetParams":
        try:
            arch = [int(n) for n in data["arch"]]
            ws = [np.asarray(w, dtype=float).reshape(arch[l + 1], arch[l]) for l, w in enumerate(data["weights"])]
            bs = [np.asarray(b, dtype=float) for b in data["biases"]]
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ValueError(f"malformed network description: {exc}") from exc
        if arch[0] != 1 or len(ws) != len(arch) - 1:
            raise ValueError("malformed network description: architecture mismatch")
        return cls(ws, bs)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "NetParams":
        return cls.from_dict(json.loads(Path(path).read_text()))

    # -- evaluation over arrays ------------------------------------------

    def _forward(self, z):
        a = np.asarray(z, dtype=float).reshape(1, -1)
        acts, slopes = [a], []
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = w @ a + b[:, None]
            if l < self.depth - 1:
                a = np.tanh(h)
                slopes.append(1.0 - a * a)
            else:
                a = h
            acts.append(a)
        return acts, slopes

    def value(self, z) -> np.ndarray:
        """Pointwise evaluation; ``z`` may have any shape."""
        z = np.asarray(z, dtype=float)
        acts, _ = self._forward(z)
        return acts[-1].reshape(z.shape)

    def dz(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        _, slopes = self._forward(z)
        g = np.ones((1, z.size))
        for l, w in enumerate(self.weights):
            g = w @ g
            if l < self.depth - 1:
                g = g * slopes[l]
        return g.reshape(z.shape)

    def linearize(self, z):
        """Value, input slope and a parameter-VJP closure from one forward pass."""
        z = np.asarray(z, dtype=float)
        acts, slopes = self._forward(z)
        g = np.ones((1, z.size))
        for l, w in enumerate(self.weights):
            g = w @ g
            if l < self.depth - 1:
                g = g * slopes[l]

        def vjp(weight):
            delta = np.broadcast_to(np.asarray(weight, dtype=float), z.shape).reshape(1, -1)
            grads = [None] * self.depth
            for l in range(self.depth - 1, -1, -1):
                grads[l] = (delta @ acts[l].T, delta.sum(axis=1))
                if l > 0:
                    delta = (self.weights[l].T @ delta) * slopes[l - 1]
            return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])

        return acts[-1].reshape(z.shape), g.reshape(z.shape), vjp

    def param_vjp(self, z, weight) -> np.ndarray:
        """``Σ_p weight_p ∂N(z_p)/∂θ`` as a flat vector (backpropagation)."""
        return self.linearize(z)[2](weight)

    def param_jvp(self, z, dparams: np.ndarray) -> np.ndarray:
        """Directional derivative ``∂N(z)/∂θ · dθ`` pointwise."""
        z = np.asarray(z, dtype=float)
        d = NetParams.from_vector(self.arch, dparams)
        acts, slopes = self._forward(z)
        da = np.zeros_like(acts[0])
        for l in range(self.depth):
            dh = d.weights[l] @ acts[l] + self.weights[l] @ da + d.biases[l][:, None]
            da = dh * slopes[l] if l < self.depth - 1 else dh
        return da.reshape(z.shape)


# --------------------------------------------------------------------------
# scalar operations
# --------------------------------------------------------------------------

def nn_forward(theta: NetParams, z: float) -> float:
    return float(theta.value(np.asarray(z, dtype=float)))


def nn_input_derivative(theta: NetParams, z: float) -> float:
    return float(theta.dz(np.asarray(z, dtype=float)))


def nn_param_gradient(theta: NetParams, z: float, weight: float = 1.0) -> NetParams:
    """Gradient of ``weight * N(z)`` with respect to every ``ω^l`` and ``β^l``.

    Follows the backward recursion ``δ_L = 1``, ``δ_{l-1} = a'_{l-1} ⊙ ω_lᵀ δ_l``
    with ``∂N/∂ω^l = δ_l a_{l-1}ᵀ`` and ``∂N/∂β^l = δ_l``.
    """
    return NetParams.from_vector(theta.arch, theta.param_vjp(np.asarray([z], dtype=float), weight))


def nn_nemytskii(theta: NetParams, u: np.ndarray) -> np.ndarray:
    return theta.value(u)


# --------------------------------------------------------------------------
# Lipschitz certification
# --------------------------------------------------------------------------

@dataclass
class LipschitzReport:
    """Constants of the Lipschitz estimates for a network on an input box.

    Indices are 1-based in the mathematical sense: ``Cz[i - 1]`` is ``C^z_i``
    for ``i = 1..L+1`` and ``Cw[l - 1][i - 1]`` is ``C^{ω^l}_i``.
    """

    box: tuple[float, float]
    s: np.ndarray
    C_sigma: float
    C_sigma_prime: float
    weight_norms: np.ndarray
    Cz: np.ndarray
    Cw: list[np.ndarray]
    Cb: list[np.ndarray]
    value_lip: float
    derivative_lip: float
    layer_input_sup: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_dict(self) -> dict:
        return {
            "box": list(self.box),
            "s": self.s.tolist(),
            "C_sigma": self.C_sigma,
            "C_sigma_prime": self.C_sigma_prime,
            "weight_norms": self.weight_norms.tolist(),
            "Cz": self.Cz.tolist(),
            "Cw": [c.tolist() for c in self.Cw],
            "Cb": [c.tolist() for c in self.Cb],
            "value_lip": self.value_lip,
            "derivative_lip": self.derivative_lip,
        }


def nn_lipschitz_constants(theta: NetParams, box=(-2.0, 2.0), n_samples: int = 20001) -> LipschitzReport:
    """Evaluate the layerwise Lipschitz recursion for ``theta`` on ``box``.

    The suprema ``s_i = sup |σ'(ω^i N^{i-1}(z) + β^i)|`` are taken over a
    uniform sample of the box (``n_samples`` points, endpoints included) and
    capped at 1, the global bound for tanh. The output layer is affine, so
    its activation slope is 1 and its curvature term vanishes.
    """
    lo, hi = float(box[0]), float(box[1])
    if not hi > lo:
        raise ValueError(f"empty box [{lo}, {hi}]")
    if n_samples < 10_000:
        raise ValueError("need at least 10^4 samples of the box")
    L = theta.depth
    z = np.linspace(lo, hi, n_samples)
    acts, slopes = theta._forward(z)
    s = np.ones(L)
    for i in range(L - 1):
        s[i] = min(1.0, float(np.max(slopes[i])))
    layer_input_sup = np.array([float(np.max(np.linalg.norm(acts[l], axis=0))) for l in range(L)])
    norms = np.array([np.linalg.norm(w, 2) for w in theta.weights])
    c_s, c_sp = 1.0, TANH_SECOND_DERIVATIVE_SUP

    def tail_s(i):  # prod_{k=i+1}^{L} s_k  (1-based i)
        return float(np.prod(s[i:]))

    def norm_prod(a, b):  # prod_{k=a}^{b} |ω^k|
        return float(np.prod(norms[a - 1:b])) if b >= a else 1.0

    Cz = np.zeros(L + 1)
    for i in range(L - 1, 0, -1):
        Cz[i - 1] = c_sp * c_s ** (i - 1) * tail_s(i) * norm_prod(1, L) + Cz[i] * s[i - 1] * norms[i]

    Cw, Cb = [], []
    for l in range(1, L + 1):
        cw = np.zeros(L + 1)
        cb = np.zeros(L + 1)
        for i in range(L - 1, l - 1, -1):
            base = c_sp * c_s ** (i - l) * tail_s(i) * norm_prod(l + 1, L)
            cw[i - 1] = base * layer_input_sup[l - 1] + cw[i] * s[i - 1] * norms[i]
            cb[i - 1] = base + cb[i] * s[i - 1] * norms[i]
        Cw.append(cw)
        Cb.append(cb)

    value_lip = c_s ** (L - 1) * norm_prod(1, L)
    return LipschitzReport(
        box=(lo, hi), s=s, C_sigma=c_s, C_sigma_prime=c_sp, weight_norms=norms,
        Cz=Cz, Cw=Cw, Cb=Cb, value_lip=value_lip,
        derivative_lip=float(Cz[0] * norms[0]), layer_input_sup=layer_input_sup,
    )


def verify_lipschitz(theta: NetParams, report: LipschitzReport, n_pairs: int = 100_000, rng=None) -> dict:
    """Sample pairs in the box and compare difference quotients with the bounds.

    Returns the largest observed ratio of quotient to bound for the value
    and the input derivative (``<= 1`` means no violation) and the verdict.
    """
    rng = np.random.default_rng(rng)
    lo, hi = report.box
    z = rng.uniform(lo, hi, n_pairs)
    zt = rng.uniform(lo, hi, n_pairs)
    gap = np.abs(z - zt)
    keep = gap > 0
    z, zt, gap = z[keep], zt[keep], gap[keep]
    dv = np.abs(theta.value(z) - theta.value(zt))
    dd = np.abs(theta.dz(z) - theta.dz(zt))
    ratio_v = _max_ratio(dv, report.value_lip * gap)
    ratio_d = _max_ratio(dd, report.derivative_lip * gap)
    return {
        "pairs": int(z.size),
        "value_ratio": ratio_v,
        "derivative_ratio": ratio_d,
        "passed": bool(ratio_v <= 1.0 and ratio_d <= 1.0),
    }


def _max_ratio(num: np.ndarray, bound: np.ndarray) -> float:
    tiny = 1e-300
    if np.any((bound <= tiny) & (num > 1e-14)):
        return math.inf
    ok = bound > tiny
    return float(np.max(num[ok] / bound[ok], initial=0.0))


# --------------------------------------------------------------------------
# tangential cone condition
# --------------------------------------------------------------------------

def tcc_radius(theta: NetParams, embedding_constants: float = 1.0, box=(-2.0, 2.0),
               report: LipschitzReport | None = None) -> float:
    """Largest 𝒱-ball radius for which the Taylor-defect factor stays below 1.

    ``ρ_max = 1 / (embedding_constants · C^z_1 · |ω¹|)``; ``math.inf`` when the
    network has no curvature on the box (zero or affine network).
    """
    if not embedding_constants > 0:
        raise ValueError("embedding constants must be positive")
    report = report or nn_lipschitz_constants(theta, box)
    denom = embedding_constants * report.derivative_lip
    return math.inf if denom == 0.0 else 1.0 / denom


def verify_tcc(theta: NetParams, grid: Grid, box=(-2.0, 2.0), n_pairs: int = 200,
               rho_fraction: float = 0.5, rng=None) -> dict:
    """Sample field pairs ``u, ũ`` and check the Taylor-defect bound.

    With ``ρ = rho_fraction · ρ_max`` (capped so every sampled value stays in
    ``box``), checks ``‖N(u) − N(ũ) − N'(u)(u − ũ)‖_𝒲 <= (ρ/ρ_max) ‖u − ũ‖_𝒲``
    for pairs with ``‖u − ũ‖_𝒱 <= ρ``.
    """
    rng = np.random.default_rng(rng)
    lo, hi = float(box[0]), float(box[1])
    report = nn_lipschitz_constants(theta, box)
    emb = sup_embedding_constant(grid)
    rho_max = tcc_radius(theta, emb, report=report)
    margin = 0.25 * (hi - lo)
    rho = min(rho_fraction * rho_max, margin / emb) if math.isfinite(rho_max) else margin / emb
    c_tc = rho / rho_max if math.isfinite(rho_max) else 0.0
    worst = 0.0
    for _ in range(n_pairs):
        base = _random_smooth_field(grid, rng)
        base = lo + margin + (hi - lo - 2 * margin) * (base - base.min()) / max(np.ptp(base), 1e-12)
        d = _random_smooth_field(grid, rng, dirichlet=True)
        d *= rng.uniform(0.05, 1.0) * rho / norm_V_state(d, grid)
        u, ut = base, base - d
        defect = theta.value(u) - theta.value(ut) - theta.dz(u) * d
        dist = norm_W(d, grid)
        if dist > 0:
            worst = max(worst, norm_W(defect, grid) / dist)
    return {
        "rho_max": rho_max,
        "rho": rho,
        "c_tc": c_tc,
        "embedding_constant": emb,
        "max_defect_ratio": worst,
        "passed": bool(worst <= c_tc + 1e-15),
    }


def _random_smooth_field(grid: Grid, rng, dirichlet: bool = False, modes: int = 4) -> np.ndarray:
    x, t = grid.x, grid.t
    L = grid.x_hi - grid.x_lo
    out = np.zeros(grid.shape)
    for k in range(1, modes + 1):
        amp = rng.normal(size=3) / k**2
        tshape = amp[0] + amp[1] * t / grid.t_hi + amp[2] * (t / grid.t_hi) ** 2
        out += np.outer(tshape, np.sin(k * np.pi * (x - grid.x_lo) / L))
    if not dirichlet:
        out += rng.normal() * 0.3
    return out
