import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from thermokac import (ConfigError, ModelParams, c_r, critical_moment, derived_constants, g_n,
                       kbar_constants, moment_condition_holds, smoothness_class)


def quad_c_r(r):
    val, _ = integrate.quad(lambda t: abs(math.cos(t)) ** r, 0, 2 * math.pi, limit=200,
                            epsabs=1e-14, epsrel=1e-13)
    return 1 - 2 * val / (2 * math.pi)


# --- parameters and derived constants ---------------------------------------

@pytest.mark.parametrize("p, A, D", [
    ((1, 1, 1, 1), 0.0, 3.0),
    ((0, 1, 2, 1), 0.25, 1.0),
    ((2, 0, 1, 5), 0.0, 4.0),
])
def test_derived_constants(p, A, D):
    dc = derived_constants(ModelParams(*p))
    assert dc.A == pytest.approx(A, abs=1e-15)
    assert dc.D == D


@pytest.mark.parametrize("bad", [(-1, 1, 1, 1), (1, -1, 1, 1), (1, 1, 0, 1), (1, 1, 1, 0),
                                 (0, 0, 1, 1), (math.nan, 1, 1, 1), (1, math.inf, 1, 1)])
def test_params_reject_invalid(bad):
    with pytest.raises(ConfigError):
        ModelParams(*bad)


@given(st.floats(0, 5), st.floats(0, 5), st.floats(0.1, 5), st.floats(0.1, 5))
def test_drift_vanishes_exactly_when_expected(lam, mu, E, T):
    if 2 * lam + mu <= 0:
        return
    p = ModelParams(lam, mu, E, T)
    assert p.D > 0
    assert (p.A == 0) == (E == T or mu == 0)


# --- C_r --------------------------------------------------------------------

def test_c_r_values():
    assert c_r(2) == pytest.approx(0, abs=1e-15)
    # oracle: quadrature of |cos|^4 gives 3/8
    assert quad_c_r(4) == pytest.approx(0.25, abs=1e-12)
    assert c_r(4) == pytest.approx(0.25, abs=1e-14)
    assert c_r(200) > 0.88 and c_r(1e6) == pytest.approx(1, abs=2e-3)


@given(st.floats(0.05, 60))
def test_c_r_matches_quadrature(r):
    assert c_r(r) == pytest.approx(quad_c_r(r), abs=1e-10)


@given(st.floats(0.05, 80), st.floats(0.01, 10))
def test_c_r_strictly_increasing(r, dr):
    assert c_r(r + dr) > c_r(r)
    assert (c_r(r) > 0) == (r > 2) or abs(r - 2) < 1e-12


def test_c_r_rejects_nonpositive():
    for r in (0, -1):
        with pytest.raises(ValueError):
            c_r(r)


# --- moment condition and critical moment -------------------------------------

def test_moment_condition_examples():
    assert moment_condition_holds(ModelParams(1, 1, 1, 1), 10)
    p = ModelParams(0, 1, 2, 1)
    assert moment_condition_holds(p, 3) and not moment_condition_holds(p, 5)
    assert moment_condition_holds(ModelParams(1, 0, 3, 1), 3)
    with pytest.raises(ValueError):
        moment_condition_holds(p, 2)


def test_critical_moment_examples():
    assert critical_moment(ModelParams(1, 1, 1, 2)) == math.inf
    assert critical_moment(ModelParams(1, 1, 1, 1)) == math.inf
    assert critical_moment(ModelParams(0, 1, 2, 1)) == pytest.approx(4, abs=1e-8)


@given(st.floats(1.05, 20), st.floats(0.1, 1))
def test_critical_moment_lambda0_closed_form(E, frac):
    T = E * frac
    if E - T < 1e-3:
        return
    assert critical_moment(ModelParams(0, 1, E, T)) == pytest.approx(2 * E / (E - T), rel=1e-8)


@given(st.floats(0, 4), st.floats(0.1, 4), st.floats(1.1, 4), st.floats(0.05, 100))
def test_moment_condition_monotone_around_critical(lam, mu, E, r):
    p = ModelParams(lam, mu, E, 1.0)
    rs = critical_moment(p)
    r = 2 + r
    if abs(r - rs) < 1e-6:
        return
    assert moment_condition_holds(p, r) == (r < rs)


# --- smoothness classes --------------------------------------------------------

def test_smoothness_examples():
    assert str(smoothness_class(ModelParams(1, 1, 1, 1))) == "Analytic"
    assert str(smoothness_class(ModelParams(0, 1, 1, 3))) == "BlowUpAtOrigin"
    c = smoothness_class(ModelParams(1, 1, 1, 4))
    assert c.kind == "FinitelyDifferentiable" and c.p_max == 0


@pytest.mark.parametrize("p", [0, 1, 2, 5])
def test_smoothness_boundary_is_excluded(p):
    # at T/E = 1 + 2D/((p+1) mu) the order p itself fails; D = (p+1)/2 puts
    # the boundary at T/E = 2, which is exact in binary
    mu, E = 1.0, 1.0
    lam, TE = (0.0, 3.0) if p == 0 else ((p + 1) / 4 - 0.5, 2.0)
    c = smoothness_class(ModelParams(lam, mu, E, TE * E))
    if p == 0:
        assert c.kind == "BlowUpAtOrigin"
    else:
        assert c.kind == "FinitelyDifferentiable" and c.p_max == p - 1


@given(st.floats(0, 3), st.floats(0.1, 3), st.floats(1.001, 12))
def test_smoothness_pmax_is_largest(lam, mu, TE):
    p = ModelParams(lam, mu, 1.0, TE)
    c = smoothness_class(p)
    F = Fraction
    D = 2 * F(lam) + F(mu)

    def holds(k):
        return (F(TE) - 1) * (k + 1) * F(mu) < 2 * D

    if c.kind == "BlowUpAtOrigin":
        assert not holds(0)
    else:
        assert c.kind == "FinitelyDifferentiable"
        assert holds(c.p_max) and not holds(c.p_max + 1)


# --- G_N -------------------------------------------------------------------------

def test_g_n_limit_and_lower_bound():
    p = ModelParams(1, 1, 1, 1)
    assert g_n(p, 10**8) == pytest.approx(1.0, abs=1e-6)
    low = integrate.quad(lambda w: 2 * w * w / (2 + w * w) * math.exp(-w * w / 2) / math.sqrt(2 * math.pi),
                         -40, 40, epsabs=1e-13)[0]
    for N in (2, 3, 10, 1000):
        assert g_n(p, N) >= low > 0


def test_g_n_matches_adaptive_quadrature():
    p = ModelParams(1, 1, 2.0, 0.7)
    N = 64
    dens = lambda w: math.exp(-w * w / (2 * p.T)) / math.sqrt(2 * math.pi * p.T)  # noqa: E731
    ref = integrate.quad(lambda w: N * w * w / (N * p.E - p.E + w * w) * dens(w), -np.inf, np.inf,
                         epsabs=1e-14, epsrel=1e-12)[0]
    assert g_n(p, N) == pytest.approx(ref, rel=1e-10)


NS = [2**k for k in range(1, 17)]


@pytest.mark.parametrize("p", [ModelParams(1, 1, 1, 1), ModelParams(0.5, 2, 1, 3), ModelParams(1, 1, 1, 1.2)])
def test_g_n_increasing_when_energy_below_temperature(p):
    vals = [g_n(p, N) for N in NS]
    assert np.all(np.diff(vals) > 0)


@pytest.mark.parametrize("p", [ModelParams(1, 1, 1, 1), ModelParams(1, 1, 2, 1), ModelParams(0.5, 2, 1, 3),
                               ModelParams(1, 1, 4, 1)])
def test_g_n_bounded(p):
    vals = [g_n(p, N) for N in NS]
    cap = max(p.T / p.E, vals[0])
    assert all(0 < v <= cap + 1e-12 for v in vals)
    assert vals[-1] == pytest.approx(p.T / p.E, rel=1e-3)


def test_g_n_not_monotone_for_energy_above_temperature():
    # d/dN of N w^2 / (N E - E + w^2) has the sign of w^2 - E, so small
    # thermostat draws pull G_N down as N grows when E exceeds T
    p = ModelParams(1, 1, 2, 1)
    dens = lambda w: math.exp(-w * w / 2) / math.sqrt(2 * math.pi)  # noqa: E731
    ref = [integrate.quad(lambda w: N * w * w / (N * 2 - 2 + w * w) * dens(w), -40, 40, epsabs=1e-14)[0]
           for N in (2, 4)]
    assert ref[1] < ref[0]
    assert g_n(p, 2) == pytest.approx(ref[0], rel=1e-10)
    assert g_n(p, 4) == pytest.approx(ref[1], rel=1e-10)


def test_g_n_rejects_small_n():
    with pytest.raises(ValueError):
        g_n(ModelParams(1, 1, 1, 1), 1)


# --- K-bar -------------------------------------------------------------------------

def test_kbar_scaled_sum_bounded():
    p = ModelParams(1, 1, 2, 1)
    Ns = [10, 100, 1000, 10**4, 10**5]
    s = [N * (a + b + abs(c)) for N, (a, b, c) in ((N, kbar_constants(p, N)) for N in Ns)]
    assert all(np.isfinite(s))
    assert s[-1] <= 1.05 * s[-2]
    assert max(s) < 10 * s[-1]


def test_kbar3_vanishes_for_equal_energy():
    p = ModelParams(1, 1, 1, 1)
    k3 = [abs(kbar_constants(p, N)[2]) for N in (10, 100, 1000, 10**4)]
    assert np.all(np.diff(k3) < 0) and k3[-1] < 1e-3


def test_kbar_nongaussian_fourth_moment():
    p = ModelParams(1, 1, 1, 1)
    g = kbar_constants(p, 100)
    assert kbar_constants(p, 100, fourth=3.0) == pytest.approx(g)
    other = kbar_constants(p, 100, fourth=5.0)
    assert all(np.isfinite(other)) and other != pytest.approx(g)
    with pytest.raises(ValueError):
        kbar_constants(p, 100, fourth=0.5)
