import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from thermokac import ModelParams
from thermokac.density import DensityTable, gaussian_table, lambda0_stationary
from thermokac.metrics import (EmpiricalSample, TruncationWarning, empirical_moment, epsilon_n,
                               epsilon_n_samples, fit_loglog_slope, has_power_tail, tail_index,
                               tail_report, w2_empirical, w2_tables, w2_vs_table)
from thermokac.particles import gaussian_sampler

finite = st.floats(-1e3, 1e3, allow_nan=False)


def sample(n):
    return arrays(np.float64, n, elements=finite)


# --- empirical W2 ----------------------------------------------------------------

def test_w2_empirical_basics():
    assert w2_empirical([1.0, 2.0, 3.0], [3.0, 1.0, 2.0]) == 0.0
    assert w2_empirical([0.0, 0.0], [1.0, 1.0]) == 1.0
    assert w2_empirical(EmpiricalSample([0.0, 2.0]), [0.0, 0.0]) == pytest.approx(math.sqrt(2))
    with pytest.raises(ValueError):
        w2_empirical([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        EmpiricalSample([])


@given(st.integers(1, 30).flatmap(lambda n: st.tuples(sample(n), sample(n), sample(n))))
def test_w2_empirical_is_a_metric(xyz):
    x, y, z = xyz
    dxy, dyx = w2_empirical(x, y), w2_empirical(y, x)
    assert dxy == dyx and w2_empirical(x, x) == 0.0
    assert w2_empirical(x, z) <= dxy + w2_empirical(y, z) + 1e-9


@given(st.integers(1, 30).flatmap(lambda n: st.tuples(sample(n), sample(n))), st.floats(-10, 10), finite)
def test_w2_empirical_scale_and_shift(xy, a, b):
    x, y = xy
    assert w2_empirical(a * x + b, a * y + b) == pytest.approx(abs(a) * w2_empirical(x, y), rel=1e-9, abs=1e-9)


# --- against a tabulated law -----------------------------------------------------------

def test_w2_point_mass_against_gaussian_is_its_variance():
    # W2^2(delta_0, N(0, s^2)) = s^2
    for var in (0.5, 1.0, 3.0):
        t = gaussian_table(var, n=16001)
        assert w2_vs_table([0.0], t) ** 2 == pytest.approx(var, rel=1e-6)


def test_w2_between_gaussian_tables():
    a, b = gaussian_table(1.0, 14.0, 16001), gaussian_table(4.0, 14.0, 16001)
    # for centred Gaussians W2 = |sigma1 - sigma2|
    assert w2_tables(a, b) == pytest.approx(1.0, rel=1e-6)
    shifted = DensityTable(a.v + 0.5, a.density, a.truncated_mass)
    assert w2_tables(a, shifted) == pytest.approx(0.5, rel=1e-9)
    assert w2_tables(a, a) == 0.0


def test_w2_vs_table_small_for_a_quantile_sample():
    t = gaussian_table(1.0, n=4001)
    k = 400
    x = np.array([t.quantile((i + 0.5) / k) for i in range(k)])
    # moving each atom across its own cell costs at most the cell's spread
    assert w2_vs_table(x, t) < w2_vs_table(x + 0.05, t)
    assert w2_vs_table(x, t) ** 2 <= np.mean(np.diff(x) ** 2) + 1e-12


def test_truncation_warning():
    t = gaussian_table(1.0, V=2.0)
    with pytest.warns(TruncationWarning):
        w2_vs_table(np.zeros(10), t)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        w2_vs_table(np.zeros(10), gaussian_table(1.0))


def test_epsilon_n_rate_for_gaussian(rng):
    ref = gaussian_table(1.0, n=16001)
    Ns = [64, 256, 1024, 4096]
    eps = [epsilon_n(gaussian_sampler(1.0), N, 60, rng, ref) for N in Ns]
    slope = fit_loglog_slope(Ns, eps)
    # N^-1 up to a log factor for the Gaussian
    assert -1.1 <= slope <= -0.45
    assert epsilon_n_samples(gaussian_sampler(1.0), 16, 5, rng, ref).shape == (5,)


# --- moments and tails -------------------------------------------------------------------

def test_empirical_moment():
    x = np.array([-2.0, 1.0, 1.0])
    assert empirical_moment(x, 2) == 2.0
    assert EmpiricalSample(x).moment(1) == pytest.approx(4 / 3)


def test_hill_estimate_on_lambda0_law(rng):
    law = lambda0_stationary(ModelParams(0, 1, 2, 1))
    y = law.sample(rng, 1_000_000)
    assert tail_index(y) == pytest.approx(law.tail_index, rel=0.15)
    rep = tail_report(y)
    assert rep["power_tail"] and rep["exponent"] == pytest.approx(4.0, rel=0.15)


def test_gaussian_has_no_power_tail(rng):
    y = rng.standard_normal(200_000)
    assert not has_power_tail(y)
    assert tail_report(y)["exponent"] == math.inf


def test_tail_index_rejects_bad_samples():
    with pytest.raises(ValueError):
        tail_index(np.ones(10))
    with pytest.raises(ValueError):
        tail_index(np.ones(100))
