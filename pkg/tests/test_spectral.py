import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from thermokac import ModelParams, NumericFailure
from thermokac.density import gaussian_table, invert_to_density
from thermokac.metrics import w2_tables
from thermokac.spectral import (DriftResolvent, SpectralField, _anderson, b2_hat, default_grid, evolve_gauge,
                                evolve_path, field_diagnostics, gamma_hat, ode_residual, property_p,
                                second_moment, stationary_fourier, tail_integral)

XI, N = 1.2, 1024


def gauss_field(T, xi_max=XI, n=N):
    return SpectralField.gaussian(T, xi_max, n)


def mixture(weights, temps, xi_max=XI, n=N):
    w = np.asarray(weights) / np.sum(weights)
    return SpectralField.from_function(lambda x: sum(a * gamma_hat(x, t) for a, t in zip(w, temps)), xi_max, n)


# --- fields ------------------------------------------------------------------------

def test_gamma_hat_basics():
    assert gamma_hat(0.0, 3.0) == 1.0
    x = np.linspace(0, 1, 11)
    assert np.allclose(gamma_hat(x, 2.0), gamma_hat(math.sqrt(2) * x, 1.0))
    assert second_moment(gauss_field(1.0)) == pytest.approx(1.0, abs=1e-8)
    assert second_moment(gauss_field(0.5, 1.6, 2048)) == pytest.approx(0.5, abs=1e-8)


def test_field_validation_and_interpolation():
    with pytest.raises(ValueError):
        SpectralField(np.arange(6.0), np.ones(6))
    with pytest.raises(ValueError):
        SpectralField(np.array([0, 1, 2, 3, 4, 5, 6.0]) - 3 + 0.1, np.ones(7))
    f = gauss_field(1.0)
    x = np.array([0.0, 0.1234, -0.5, 2 * XI])
    ref = gamma_hat(x, 1.0)
    ref[-1] = 0.0
    assert np.allclose(f(x), ref, atol=1e-9)


def test_field_csv_roundtrip(tmp_path):
    f = gauss_field(1.0, n=64)
    f.to_csv(tmp_path / "f.csv", ModelParams(1, 1, 1, 1))
    g = SpectralField.from_csv(tmp_path / "f.csv")
    assert np.array_equal(f.xi, g.xi) and np.array_equal(f.values, g.values)
    assert "e^{-2 pi i v xi}" in (tmp_path / "f.json").read_text()


# --- collision operator ---------------------------------------------------------------

def test_b2_fixes_gaussians_and_constants():
    # cubic interpolation error is O(h^4): use the default grid for each T
    for T in (0.5, 1.0, 3.0):
        f = gauss_field(T, *default_grid(ModelParams(1, 1, T, T), 4096))
        assert np.max(np.abs(b2_hat(f, f).values - f.values)) <= 1e-10
    one = SpectralField.from_function(np.ones_like, XI, 64)
    assert np.allclose(b2_hat(one, one).values, 1.0, atol=1e-14)


def test_b2_mixed_gaussians():
    # z = gamma_T1, w = gamma_T2: B2 is the mean of exp(-2 pi^2 xi^2 (T1 c^2 + T2 s^2))
    f, g = gauss_field(0.5), gauss_field(2.0)
    out = b2_hat(f, g).half
    xi = f.h * np.arange(f.n_half + 1)
    th = np.linspace(0, 2 * np.pi, 4001)[:-1]
    ref = np.mean(np.exp(-2 * np.pi**2 * xi[:, None] ** 2
                         * (0.5 * np.cos(th) ** 2 + 2.0 * np.sin(th) ** 2)), axis=1)
    assert np.max(np.abs(out - ref)) <= 1e-9


@given(st.lists(st.floats(0.05, 1.0), min_size=1, max_size=4),
       st.lists(st.floats(0.2, 4.0), min_size=4, max_size=4))
def test_b2_preserves_property_p(weights, temps):
    f = mixture(weights, temps[:len(weights)])
    assert property_p(f)
    out = b2_hat(f, f)
    assert out.is_real_even(1e-14) and property_p(out, 1e-12)


# --- linear resolvent ---------------------------------------------------------------

@pytest.mark.parametrize("A, D, T", [(0.25, 1.0, 1.0), (-0.25, 3.0, 1.5), (0.0, 3.0, 1.0), (0.4, 5.0, 1.0)])
def test_resolvent_manufactured_solution(A, D, T):
    p = ModelParams(0.0, 1.0, 1.0, T) if A == 0 else None
    xi_max, n = (6.0, 8192) if A < 0 else (1.2, 4096)
    h = xi_max / n
    xi = h * np.arange(n + 1)
    s = 0.8
    y = gamma_hat(xi, s)
    q = -A * xi * (-4 * np.pi**2 * s * xi * y) + D * y
    out = DriftResolvent(n, h, A, D, s).solve(q)
    assert np.max(np.abs(out - y)) <= 1e-8


# --- stationary problem ----------------------------------------------------------------

def test_stationary_gaussian_when_energy_equals_temperature():
    p = ModelParams(1.0, 1.0, 1.0, 1.0)
    y = stationary_fourier(p)
    assert np.max(np.abs(y.half - gamma_hat(y.xi[y.n_half:], 1.0))) <= 1e-8


@pytest.mark.parametrize("p", [ModelParams(1, 1, 2, 1), ModelParams(2, 1, 2, 1), ModelParams(0.5, 1, 1.5, 1),
                               ModelParams(0, 1, 2, 1), ModelParams(1, 2, 1.25, 1)])
def test_stationary_structure_above_temperature(p):
    y = stationary_fourier(p)
    d = field_diagnostics(y, p)
    assert d.propertyP
    assert d.ode_residual <= 1e-6
    assert np.max(y.half - gamma_hat(y.xi[y.n_half:], p.T)) <= 1e-10


def test_stationary_structure_below_temperature():
    p = ModelParams(1, 1, 1, 2)
    y = stationary_fourier(p)
    assert property_p(y)
    assert ode_residual(y, p) <= 1e-6


def test_anderson_matches_plain_iteration():
    p = ModelParams(1, 1, 1.5, 1)
    xi_max, n = default_grid(p, 1024)
    a = stationary_fourier(p, xi_max, n)
    assert a.meta["method"] == "anderson"
    h = xi_max / n
    res = DriftResolvent(n, h, p.A, p.D, p.T)
    from thermokac.spectral import _b2_half
    g = gamma_hat(h * np.arange(n + 1), p.T)
    y = g.copy()
    for _ in range(400):
        y = res.solve(p.mu * g + 2 * p.lam * _b2_half(y, y, 128, True))
    # a sweep change below 1e-10 with contraction near 0.9 leaves ~1e-9
    assert np.max(np.abs(a.half - y)) <= 1e-8


def test_anderson_on_scalar_map():
    x, it, change = _anderson(np.cos, np.array([1.0]), 1e-14, 100)
    assert it > 0 and x[0] == pytest.approx(0.7390851332151607, abs=1e-13)
    _, it, _ = _anderson(lambda v: 2 * v + 1, np.array([1.0, 2.0]), 1e-300, 3, depth=0)
    assert it == -1


@pytest.mark.parametrize("p", [ModelParams(1, 1, 2, 1), ModelParams(1, 1, 1.25, 1), ModelParams(0.5, 1, 2, 1)])
def test_stationary_second_moment(p):
    y = stationary_fourier(p, n_half=8192)
    assert field_diagnostics(y, p).second_moment == pytest.approx(p.E, rel=1e-6)


def test_second_moment_needs_singular_terms_at_low_critical_moment():
    # r* = 5.37: the |xi|^r* term biases a plain polynomial fit
    p = ModelParams(0.5, 1, 2, 1)
    y = stationary_fourier(p, n_half=8192)
    plain = second_moment(y)
    assert abs(plain / p.E - 1) > 1e-5
    assert abs(field_diagnostics(y, p).second_moment / p.E - 1) < 1e-6


def test_tail_integral_threshold():
    # lambda = 0, T = 2.5 E: |y| ~ xi^(-D/|A|) with D/|A| = 4/3
    p = ModelParams(0, 1, 1, 2.5)
    y = stationary_fourier(p)
    assert tail_integral(y, 0.0).converges
    assert not tail_integral(y, 1.0).converges
    small = stationary_fourier(p, n_half=32768)
    assert tail_integral(small, 0.0).value == pytest.approx(tail_integral(y, 0.0).value, rel=0.05)


# --- transient equation ------------------------------------------------------------------

def test_evolve_keeps_gaussian_equilibrium():
    p = ModelParams(1, 1, 1, 1)
    f0 = gauss_field(1.0)
    ft = evolve_gauge(f0, p, 2.0)
    assert np.max(np.abs(ft.values - f0.values)) <= 1e-8
    assert ft.meta["mass_deviation"] <= 1e-9


@pytest.mark.parametrize("p, m0", [(ModelParams(1, 1, 1, 1), 2.0), (ModelParams(1, 1, 2, 1), 1.0)])
def test_evolve_second_moment_law(p, m0):
    f0 = SpectralField.gaussian(m0, *default_grid(p, 2048, T_ref=min(m0, p.T)))
    times = [0.5, 1.0, 2.0]
    path = evolve_path(f0, p, times)
    for t, f in zip(times, path):
        law = p.E + (m0 - p.E) * math.exp(-p.mu * p.T / p.E * t)
        assert second_moment(f) == pytest.approx(law, rel=1e-6)
        assert property_p(f, 1e-10) and f.half[0] == 1.0


def test_evolve_zero_horizon_and_validation():
    p = ModelParams(1, 1, 1, 1)
    f0 = gauss_field(1.0, n=64)
    assert evolve_gauge(f0, p, 0.0) is f0
    with pytest.raises(ValueError):
        evolve_gauge(f0, p, -1.0)
    with pytest.raises(NumericFailure):
        evolve_gauge(f0, ModelParams(1, 1, 2, 1), 1.0, n_steps=1, tol=1e-300, max_doublings=1)


def test_evolve_converges_to_stationary():
    p = ModelParams(1, 1, 1, 1)
    f0 = gauss_field(2.0)
    ft = evolve_gauge(f0, p, 12.0)
    y = stationary_fourier(p, XI, N)
    assert np.max(np.abs(ft.values - y.values)) <= 1e-4


def test_equation_contraction_in_w2():
    p = ModelParams(1, 1, 1, 1)
    xi_max, n = 2.4, 2048
    v = np.linspace(-12, 12, 8001)
    f0, g0 = SpectralField.gaussian(1.0, xi_max, n), SpectralField.gaussian(0.25, xi_max, n)
    d0 = w2_tables(invert_to_density(f0, v), invert_to_density(g0, v))
    times = [1.0, 2.0, 3.0]
    for t, f, g in zip(times, evolve_path(f0, p, times), evolve_path(g0, p, times)):
        d = w2_tables(invert_to_density(f, v), invert_to_density(g, v))
        assert d <= d0 * math.exp(-p.mu * p.T / (2 * p.E) * t)
