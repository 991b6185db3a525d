"""
Linear-in-parameters surrogates for the nonlinearity, with the same
interface as :class:`~aaolearn.neural.NetParams` so they plug into the
residual, the adjoints and both optimizers unchanged.

Both families default to 29 degrees of freedom, the parameter count of the
``[1, 2, 4, 2, 1]`` network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DOF = 29


class _LinearFamily:
    """``f(z) = Σ_j p_j b_j(z)``; subclasses supply the basis and its derivative."""

    coeffs: np.ndarray

    def basis(self, z: np.ndarray) -> np.ndarray:  # (..., size)
        raise NotImplementedError

    @property
    def params(self) -> np.ndarray:
        return self.coeffs

    @property
    def size(self) -> int:
        return self.coeffs.size

    @property
    def offset_index(self) -> int:
        return 0

    def param_vjp(self, z, weight) -> np.ndarray:
        b = self.basis(np.asarray(z, dtype=float).ravel())
        return np.asarray(weight, dtype=float).ravel() @ b

    def param_jvp(self, z, dparams) -> np.ndarray:
        return self.with_params(dparams).value(z)

    def linearize(self, z):
        z = np.asarray(z, dtype=float)
        return self.value(z), self.dz(z), lambda weight: self.param_vjp(z, weight)


@dataclass
class Polynomial(_LinearFamily):
    """``Σ_{j=0}^{dof-1} c_j z^j``, evaluated by Horner's scheme."""

    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float).ravel().copy()
        if self.coeffs.size < 1:
            raise ValueError("need at least one coefficient")

    @classmethod
    def zeros(cls, dof: int = DEFAULT_DOF) -> "Polynomial":
        return cls(np.zeros(dof))

    def with_params(self, vec) -> "Polynomial":
        return Polynomial(vec)

    def value(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = np.full(z.shape, self.coeffs[-1])
        for c in self.coeffs[-2::-1]:
            out = out * z + c
        return out

    def dz(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        d = self.coeffs[1:] * np.arange(1, self.coeffs.size)
        if d.size == 0:
            return np.zeros(z.shape)
        out = np.full(z.shape, d[-1])
        for c in d[-2::-1]:
            out = out * z + c
        return out

    def basis(self, z):
        return z[:, None] ** np.arange(self.coeffs.size)


@dataclass
class Trig(_LinearFamily):
    """``a₀ + Σ_k a_k cos(kω(z − lo)) + b_k sin(kω(z − lo))``.

    Parameters are ordered ``[a₀, a₁..a_m, b₁..b_m]``. ``lo`` and
    ``period`` come from the expected value range (see :meth:`for_range`).
    """

    coeffs: np.ndarray
    lo: float = 0.0
    period: float = 1.0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float).ravel().copy()
        if self.coeffs.size % 2 != 1:
            raise ValueError("trig family needs an odd number of coefficients")
        if not self.period > 0:
            raise ValueError("period must be positive")

    @classmethod
    def for_range(cls, lo: float, hi: float, dof: int = DEFAULT_DOF, margin: float = 0.1) -> "Trig":
        """Zero coefficients with period equal to the range width plus ``margin``."""
        width = max(hi - lo, 1e-12)
        return cls(np.zeros(dof), lo=lo - 0.5 * margin * width, period=(1 + margin) * width)

    @property
    def modes(self) -> int:
        return (self.coeffs.size - 1) // 2

    @property
    def omega(self) -> float:
        return 2 * np.pi / self.period

    def with_params(self, vec) -> "Trig":
        return Trig(vec, self.lo, self.period)

    def _angles(self, z):
        return np.multiply.outer(self.omega * (np.asarray(z, dtype=float) - self.lo), np.arange(1, self.modes + 1))

    def value(self, z) -> np.ndarray:
        ang = self._angles(z)
        m = self.modes
        return self.coeffs[0] + np.cos(ang) @ self.coeffs[1:m + 1] + np.sin(ang) @ self.coeffs[m + 1:]

    def dz(self, z) -> np.ndarray:
        ang = self._angles(z)
        m = self.modes
        k = self.omega * np.arange(1, m + 1)
        return -np.sin(ang) @ (k * self.coeffs[1:m + 1]) + np.cos(ang) @ (k * self.coeffs[m + 1:])

    def basis(self, z):
        ang = self._angles(z)
        return np.concatenate([np.ones((z.size, 1)), np.cos(ang), np.sin(ang)], axis=1)

    def linearize(self, z):
        z = np.asarray(z, dtype=float)
        ang = self._angles(z.ravel())
        c, s = np.cos(ang), np.sin(ang)
        m = self.modes
        a, b = self.coeffs[1:m + 1], self.coeffs[m + 1:]
        k = self.omega * np.arange(1, m + 1)
        value = (self.coeffs[0] + c @ a + s @ b).reshape(z.shape)
        slope = (-s @ (k * a) + c @ (k * b)).reshape(z.shape)

        def vjp(weight):
            w = np.asarray(weight, dtype=float).ravel()
            return np.concatenate([[w.sum()], w @ c, w @ s])

        return value, slope, vjp
