import numpy as np
import pytest

from aaolearn.baselines import DEFAULT_DOF, Polynomial, Trig


def test_default_dof_matches_network():
    from aaolearn.neural import NetParams
    assert NetParams.zeros().size == DEFAULT_DOF == 29


def test_zero_coefficients_give_zero(rng):
    z = rng.uniform(-1, 2, 40)
    assert np.all(Polynomial.zeros().value(z) == 0.0)
    assert np.all(Trig.for_range(-1, 2).value(z) == 0.0)


def test_polynomial_horner_and_derivative(rng):
    p = Polynomial([-1.0, 0.0, 1.0])
    z = rng.uniform(-2, 2, 30)
    assert np.allclose(p.value(z), z**2 - 1)
    assert np.allclose(p.dz(z), 2 * z)
    c = rng.normal(size=DEFAULT_DOF)
    assert np.allclose(Polynomial(c).value(z), np.polynomial.polynomial.polyval(z, c), rtol=1e-12)


def test_trig_layout_and_period():
    t = Trig.for_range(0.0, 1.0)
    assert t.modes == 14 and t.size == 29
    assert np.isclose(t.period, 1.1) and np.isclose(t.lo, -0.05)
    with pytest.raises(ValueError):
        Trig(np.zeros(4))


@pytest.mark.parametrize("family", ["poly", "trig"])
def test_derivatives_match_finite_differences(family, rng):
    fam = Polynomial(rng.normal(size=6) / 10) if family == "poly" else Trig.for_range(0, 1).with_params(
        rng.normal(size=29) / 10)
    z = rng.uniform(0, 1, (4, 5))
    h = 1e-6
    assert np.allclose(fam.dz(z), (fam.value(z + h) - fam.value(z - h)) / (2 * h), rtol=1e-6, atol=1e-7)
    w = rng.normal(size=z.shape)
    p = fam.params
    g = fam.param_vjp(z, w)
    for j in range(p.size):
        e = np.zeros_like(p)
        e[j] = h
        fd = np.sum(w * (fam.with_params(p + e).value(z) - fam.with_params(p - e).value(z))) / (2 * h)
        assert abs(fd - g[j]) <= 1e-6 * max(1.0, abs(g[j]))
    d = rng.normal(size=p.size)
    assert np.isclose(np.sum(fam.param_jvp(z, d) * w), d @ g)


def test_trig_linearize_agrees(rng):
    t = Trig.for_range(0, 0.6).with_params(rng.normal(size=29))
    z = rng.uniform(0, 0.6, (3, 8))
    w = rng.normal(size=z.shape)
    v, d, vjp = t.linearize(z)
    assert np.allclose(v, t.value(z)) and np.allclose(d, t.dz(z))
    assert np.allclose(vjp(w), t.param_vjp(z, w))
