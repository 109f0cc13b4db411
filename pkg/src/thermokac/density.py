"""Velocity-space densities: inversion of transforms, quantiles, the lambda = 0 law."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.special import gammainc, gammaln

from . import _spectral_kernels as SK
from .errors import OutOfSupportError
from .model import ModelParams
from .spectral import CONVENTION, SpectralField

CDF_CONVENTION = "cdf(-V) = truncated_mass / 2"


@dataclass(frozen=True)
class DensityTable:
    """Density on a uniform grid [-V, V] with its cumulative distribution.

    Mass outside the grid is recorded in ``truncated_mass`` and split evenly
    between the two tails.
    """

    v: np.ndarray
    density: np.ndarray
    truncated_mass: float = 0.0
    clipped_mass: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)
    cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64)
        d = np.asarray(self.density, dtype=np.float64)
        if v.ndim != 1 or v.shape != d.shape or v.size < 2:
            raise ValueError("grid and density must be matching 1-d arrays")
        if np.any(np.diff(v) <= 0):
            raise ValueError("velocity grid must be increasing")
        if np.any(d < 0):
            raise ValueError("density must be non-negative")
        if not 0 <= self.truncated_mass < 1:
            raise ValueError("truncated mass must lie in [0, 1)")
        cdf = self.truncated_mass / 2 + integrate.cumulative_trapezoid(d, v, initial=0.0)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "density", d)
        object.__setattr__(self, "cdf", cdf)

    @classmethod
    def from_pdf(cls, pdf, V: float, n: int, truncated_mass: float | None = None, **meta) -> "DensityTable":
        v = np.linspace(-V, V, n)
        d = np.asarray(pdf(v), dtype=np.float64)
        if truncated_mass is None:
            truncated_mass = max(0.0, 1.0 - integrate.trapezoid(d, v))
        return cls(v, d, truncated_mass, 0.0, meta)

    @property
    def mass(self) -> float:
        return float(integrate.trapezoid(self.density, self.v))

    def quantile(self, u) -> np.ndarray:
        return quantile(self, u)

    def moment(self, r: float) -> float:
        return float(integrate.trapezoid(np.abs(self.v) ** r * self.density, self.v))

    def to_csv(self, path, params: ModelParams | None = None) -> None:
        path = Path(path)
        np.savetxt(path, np.column_stack([self.v, self.density, self.cdf]), delimiter=",",
                   header="v,density,cdf", comments="", fmt="%.17g")
        meta = {"convention": CONVENTION, "cdf_convention": CDF_CONVENTION,
                "truncated_mass": self.truncated_mass, "clipped_mass": self.clipped_mass,
                "V": float(self.v[-1]), "n_v": int(self.v.size), **self.meta}
        if params is not None:
            meta["params"] = params.as_dict()
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, default=float))

    @classmethod
    def from_csv(cls, path) -> "DensityTable":
        path = Path(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta = json.loads(path.with_suffix(".json").read_text())
        return cls(data[:, 0], data[:, 1], float(meta["truncated_mass"]), float(meta["clipped_mass"]))


def gaussian_table(var: float, V: float | None = None, n: int = 8001) -> DensityTable:
    if V is None:
        V = 12 * math.sqrt(var)
    sd = math.sqrt(var)
    tail = math.erfc(V / (sd * math.sqrt(2)))
    return DensityTable.from_pdf(lambda v: np.exp(-v * v / (2 * var)) / math.sqrt(2 * math.pi * var),
                                 V, n, truncated_mass=tail, law="gaussian", var=var)


def quantile(table: DensityTable, u, rtol: float = 1e-12):
    """Piecewise-linear inverse of the table's cdf."""
    u_arr = np.asarray(u, dtype=np.float64)
    lo, hi = table.cdf[0], table.cdf[-1]
    slack = rtol + 1e-12
    if np.any(u_arr < lo - slack) or np.any(u_arr > hi + slack) or np.any((u_arr <= 0) | (u_arr >= 1)):
        raise OutOfSupportError(
            f"quantile level outside the represented mass [{lo:.3g}, {hi:.3g}]")
    out = np.interp(np.clip(u_arr, lo, hi), table.cdf, table.v)
    return out if out.ndim else float(out)


def invert_to_density(field: SpectralField, v_grid, fejer: bool = False) -> DensityTable:
    """Inverse transform of an even real field by trapezoid quadrature.

    Negative ringing is clipped to zero. The table is then rescaled so its
    trapezoid mass equals the mass the field assigns to [-V, V].
    """
    if field.gauge_time != 0:
        raise ValueError("invert_to_density needs a physical field")
    if not field.is_real_even(1e-14):
        raise ValueError("invert_to_density supports real even fields")
    v = np.asarray(v_grid, dtype=np.float64)
    y = np.ascontiguousarray(field.half)
    h = field.h
    dens = np.empty(v.size)
    SK.cos_transform(y, h, v, bool(fejer), dens)

    # mass on [-V, V] is the integral of y(xi) sin(2 pi V xi) / (pi xi)
    V = float(np.max(np.abs(v)))
    xi = h * np.arange(y.size)
    wts = y * (1.0 - xi / xi[-1]) if fejer else y
    kern = np.empty_like(xi)
    kern[0] = 2 * V
    kern[1:] = np.sin(2 * math.pi * V * xi[1:]) / (math.pi * xi[1:])
    inside = 2 * integrate.trapezoid(wts * kern, xi)
    truncated = min(max(0.0, 1.0 - inside), 1.0 - 1e-15)

    neg = dens < 0
    clipped = float(integrate.trapezoid(np.where(neg, -dens, 0.0), v))
    dens = np.where(neg, 0.0, dens)
    mass = integrate.trapezoid(dens, v)
    if clipped > 0 and mass > 0:
        dens *= (1.0 - truncated) / mass
    meta = {"fejer": bool(fejer), "xi_max": field.xi_max}
    return DensityTable(v, dens, truncated, clipped, meta)


# --- lambda = 0 closed form ---------------------------------------------------

def _gauss(x, T):
    return np.exp(-x * x / (2 * T)) / math.sqrt(2 * math.pi * T)


@dataclass(frozen=True)
class Lambda0Law:
    """Equilibrium without collisions: the law of X exp(c tau).

    X is the thermostat Gaussian, tau a unit exponential and
    c = (E - T)/(2E), independent.
    """

    c: float
    T: float

    def density_at(self, v) -> np.ndarray:
        v = np.abs(np.atleast_1d(np.asarray(v, dtype=np.float64)))
        out = np.array([self._density_point(x) for x in v])
        return out

    def _density_point(self, v: float) -> float:
        c, T = self.c, self.T
        if c == 0:
            return float(_gauss(v, T))
        p = 1.0 / abs(c)
        if c > 0:
            # (1/c) int_0^1 x^p gamma(x v) dx, a lower incomplete gamma after x = s / v
            a = (p + 1) / 2
            if v < 1e-100:
                return float(_gauss(0.0, T) / (c * (p + 1)))
            log_pref = 0.5 * p * math.log(2 * T) + gammaln(a) - 0.5 * math.log(4 * math.pi) - (p + 1) * math.log(v)
            return math.exp(log_pref) * float(gammainc(a, v * v / (2 * T))) / c
        if v == 0:
            return float(_gauss(0.0, T) / (1 - abs(c))) if p > 1 else math.inf
        # (1/|c|) |v|^(p-1) int_{|v|}^inf y^(-p) gamma(y) dy, with y = exp(s)
        lo = math.log(v)
        hi = max(lo, 0.5 * math.log(T)) + math.log(40.0)

        def f(s):
            return math.exp(s * (1.0 - p)) * _gauss(math.exp(s), T)

        val, _ = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-13, limit=400)
        return math.exp((p - 1) * lo) * val / abs(c)

    def sample(self, rng, size) -> np.ndarray:
        x = math.sqrt(self.T) * rng.standard_normal(size)
        return x * np.exp(self.c * rng.standard_exponential(size))

    def moment(self, r: float) -> float:
        """E|Y|^r, infinite when r c >= 1."""
        if r * self.c >= 1:
            return math.inf
        gauss = math.exp(0.5 * r * math.log(2 * self.T) + gammaln((r + 1) / 2) - 0.5 * math.log(math.pi))
        return gauss / (1 - r * self.c)

    @property
    def tail_index(self) -> float:
        return 1.0 / self.c if self.c > 0 else math.inf


def lambda0_stationary(params: ModelParams) -> Lambda0Law:
    if params.lam != 0 or params.mu <= 0:
        raise ValueError("the closed form needs lam = 0 and mu > 0")
    return Lambda0Law((params.E - params.T) / (2 * params.E), params.T)
