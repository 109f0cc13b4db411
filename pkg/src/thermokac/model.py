"""Model parameters, derived constants and closed-form quantities.

Everything here is a pure function of value inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.optimize import brentq
from scipy.special import gammaln, roots_hermite

from .errors import ConfigError, NumericFailure

GH_NODES = 200
GH_RTOL = 1e-10


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters.

    lam: Kac collision rate, mu: thermostat rate, E: target energy per
    particle, T: thermostat temperature.
    """

    lam: float
    mu: float
    E: float
    T: float

    def __post_init__(self):
        for name in ("lam", "mu", "E", "T"):
            v = getattr(self, name)
            if not isinstance(v, (int, float, np.floating, np.integer)) or not math.isfinite(v):
                raise ConfigError(f"{name} must be a finite real, got {v!r}")
        if self.lam < 0 or self.mu < 0:
            raise ConfigError("lam and mu must be non-negative")
        if self.E <= 0 or self.T <= 0:
            raise ConfigError("E and T must be positive")
        if 2 * self.lam + self.mu <= 0:
            raise ConfigError("2*lam + mu must be positive")

    @property
    def A(self) -> float:
        return self.mu * (self.E - self.T) / (2.0 * self.E)

    @property
    def D(self) -> float:
        return 2.0 * self.lam + self.mu

    def as_dict(self) -> dict:
        return {"lambda": self.lam, "mu": self.mu, "E": self.E, "T": self.T}


@dataclass(frozen=True)
class DerivedConstants:
    A: float
    D: float


def derived_constants(params: ModelParams) -> DerivedConstants:
    return DerivedConstants(A=params.A, D=params.D)


@dataclass(frozen=True)
class SmoothnessClass:
    """Regularity of the equilibrium density at the origin.

    ``kind`` is ``"Analytic"``, ``"FinitelyDifferentiable"`` or
    ``"BlowUpAtOrigin"``; ``p_max`` is set only for the middle case.
    """

    kind: str
    p_max: int | None = None

    def __str__(self) -> str:
        if self.kind == "FinitelyDifferentiable":
            return f"FinitelyDifferentiable({self.p_max})"
        return self.kind


def c_r(r: float) -> float:
    """1 - 2 * mean of |cos θ|^r over a full period."""
    if not r > 0:
        raise ValueError(f"c_r requires r > 0, got {r}")
    log_mean = gammaln((r + 1) / 2) - 0.5 * math.log(math.pi) - gammaln(r / 2 + 1)
    return 1.0 - 2.0 * math.exp(log_mean)


def _moment_gap(params: ModelParams, r: float) -> float:
    return r * params.A - 2 * params.lam * c_r(r) - params.mu


def moment_condition_holds(params: ModelParams, r: float) -> bool:
    """Whether the r-th moment of the equilibrium is finite (r > 2)."""
    if not r > 2:
        raise ValueError(f"moment condition is stated for r > 2, got {r}")
    return _moment_gap(params, r) < 0


def critical_moment(params: ModelParams, xtol: float = 1e-9) -> float:
    """Supremum of the r > 2 with a finite r-th moment; ``inf`` when A <= 0."""
    if params.A <= 0:
        return math.inf
    lo, hi = 2.0 + 1e-6, 1e6
    # rA grows linearly while the right side stays below 2*lam + mu
    while _moment_gap(params, hi) <= 0:
        hi *= 10.0
        if hi > 1e300:
            return math.inf
    if _moment_gap(params, lo) >= 0:
        return lo
    return brentq(lambda r: _moment_gap(params, r), lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps)


def _cp_holds(params: ModelParams, p: int) -> bool:
    # T/E < 1 + 2D/((p+1) mu), evaluated exactly on the binary values
    E, T = Fraction(params.E), Fraction(params.T)
    mu, D = Fraction(params.mu), 2 * Fraction(params.lam) + Fraction(params.mu)
    return (T - E) * (p + 1) * mu < 2 * D * E


def smoothness_class(params: ModelParams) -> SmoothnessClass:
    if params.E >= params.T or params.mu == 0:
        return SmoothnessClass("Analytic")
    if not _cp_holds(params, 0):
        return SmoothnessClass("BlowUpAtOrigin")
    # (T-E)(p+1)mu < 2DE  <=>  p + 1 < x
    x = 2 * params.D * params.E / ((params.T - params.E) * params.mu)
    p = max(int(math.ceil(x)) - 1, 0)
    while p > 0 and not _cp_holds(params, p):
        p -= 1
    while _cp_holds(params, p + 1):
        p += 1
    return SmoothnessClass("FinitelyDifferentiable", p)


def gaussian_expectation(fn: Callable[[np.ndarray], np.ndarray], T: float,
                         n: int = GH_NODES, rtol: float = GH_RTOL) -> float:
    """E[fn(W)] for W ~ N(0, T).

    Gauss-Hermite with ``n`` nodes, validated against ``2n`` nodes. Integrands
    with poles close to the real axis converge slowly under that rule; they
    fall back to adaptive quadrature, and only its failure is reported.
    """

    def rule(m):
        x, w = roots_hermite(m)
        vals = fn(math.sqrt(2.0 * T) * x)
        sq = math.sqrt(math.pi)
        return float(np.dot(w, vals)) / sq, float(np.dot(w, np.abs(vals))) / sq

    (a, _), (b, size) = rule(n), rule(2 * n)
    # cancellation in signed integrands limits what can be resolved
    floor = 256 * np.finfo(float).eps * size
    if abs(a - b) <= max(rtol * abs(b), floor):
        return b
    s = math.sqrt(T)

    def integrand(x):
        return float(fn(np.array([s * x]))[0]) * math.exp(-0.5 * x * x)

    val, err = integrate.quad(integrand, -np.inf, np.inf, epsabs=floor, epsrel=rtol, limit=400)
    val /= math.sqrt(2 * math.pi)
    err /= math.sqrt(2 * math.pi)
    if not err <= max(rtol * abs(val), floor, 1e2 * abs(val) * np.finfo(float).eps):
        raise NumericFailure("Gaussian expectation did not converge", residual=abs(a - b))
    return float(val)


def g_n(params: ModelParams, N: int) -> float:
    """Contraction rate constant of the mean-field rescaled particle system."""
    if N < 2:
        raise ValueError("N must be at least 2")
    NE, E = N * params.E, params.E
    return gaussian_expectation(lambda w: N * w**2 / (NE - E + w**2), params.T)


def _nu_rule(T: float, fourth: float | None):
    """Nodes and weights for the law against which the K-bar integrals are taken."""
    if fourth is None or math.isclose(fourth, 3 * T * T, rel_tol=1e-14):
        return None
    if fourth < T * T:
        raise ValueError("fourth moment must be at least the squared second moment")
    # symmetric three-point law {0, +-a} with the prescribed second and fourth moments
    a = math.sqrt(fourth / T)
    p = T * T / fourth
    return np.array([-a, 0.0, a]), np.array([p / 2, 1 - p, p / 2])


def kbar_constants(params: ModelParams, N: int,
                   fourth: float | None = None) -> tuple[float, float, float]:
    """The three K-bar constants whose sum is O(1/N).

    By default the integrals are against the thermostat Gaussian. Passing a
    ``fourth`` moment other than 3T^2 switches to the symmetric three-point law
    with those moments.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    T, E = params.T, params.E
    NE = N * E

    def terms(w):
        den = NE - E + w**2
        beta = np.sqrt(NE / den)
        one_minus = ((w**2 - E) / den) / (1.0 + beta)
        return one_minus, beta

    def k1(w):
        om, _ = terms(w)
        return (N - 1) * om**2

    def k2(w):
        om, _ = terms(w)
        return om**2 * w**2

    def k3(w):
        om, beta = terms(w)
        return -2.0 * (N - 1) * beta * om

    rule = _nu_rule(T, fourth)
    if rule is None:
        vals = [gaussian_expectation(f, T) for f in (k1, k2, k3)]
    else:
        x, w = rule
        vals = [float(np.dot(w, f(x))) for f in (k1, k2, k3)]
    vals[2] -= (E - T) / E
    return vals[0], vals[1], vals[2]
