"""Thermostated Kac model: particle simulation, kinetic-equation solver, diagnostics."""

__version__ = "0.1.0"

from .errors import ConfigError, DomainError, NumericFailure, OutOfSupportError
from .model import (
    DerivedConstants,
    ModelParams,
    SmoothnessClass,
    c_r,
    critical_moment,
    derived_constants,
    g_n,
    kbar_constants,
    moment_condition_holds,
    smoothness_class,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "NumericFailure",
    "OutOfSupportError",
    "DerivedConstants",
    "ModelParams",
    "SmoothnessClass",
    "c_r",
    "critical_moment",
    "derived_constants",
    "g_n",
    "kbar_constants",
    "moment_condition_holds",
    "smoothness_class",
]
