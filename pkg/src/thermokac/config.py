"""Experiment configuration: per-experiment defaults, JSON files, key=value overrides.

A configuration file is a flat JSON object. Recognised keys:

    lambda, mu, E, T          model parameters
    mode                      NoRescale | AlphaExact | BetaMeanField
    N_list                    list of particle numbers (an int is accepted)
    horizon, replicas, seed, n_checkpoints
    n_half, xi_max, n_theta   Fourier grid (null = automatic)
    out                       output directory

Any other key must be one of the experiment's thresholds or options (see
``DEFAULTS``); unknown keys are rejected.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

from .errors import ConfigError
from .experiments import ExperimentConfig, GridSettings
from .model import ModelParams
from .particles import RescalingMode

CORE_KEYS = {"lambda", "mu", "E", "T", "mode", "N_list", "horizon", "replicas", "seed",
             "n_checkpoints", "n_half", "xi_max", "n_theta", "out"}

_UNIT = {"lambda": 1.0, "mu": 1.0, "E": 1.0, "T": 1.0}

DEFAULTS: dict[str, dict] = {
    "simulate": {"core": {**_UNIT, "N_list": [64], "horizon": 1.0, "replicas": 1, "n_checkpoints": 11},
                 "thresholds": {}, "options": {"init": "iid", "init_law": "gaussian"}},
    "contract": {"core": {**_UNIT, "N_list": [64], "horizon": 4.0, "replicas": 10000, "n_checkpoints": 21},
                 "thresholds": {"rate_rtol": 0.05},
                 "options": {"init_law": "gaussian", "bootstrap": 200}},
    "energy": {"core": {**_UNIT, "N_list": [32], "horizon": 5.0, "replicas": 10000, "n_checkpoints": 10},
               "thresholds": {"alpha_rtol": 1e-9, "beta_sigmas": 3.0, "solver_rtol": 1e-6,
                              "half_life_rtol": 1e-5},
               "options": {"audit_events": 1_000_000, "audit_N": 64, "init_law": "uniform",
                           "solver_m0_ratio": 2.0, "solver_tol": 1e-7,
                           "solver_times": [0.5 * k for k in range(1, 11)]}},
    "poc": {"core": {**_UNIT, "N_list": [32, 64, 128, 256, 512, 1024], "horizon": 3.0, "replicas": 200,
                     "n_checkpoints": 7, "n_half": 1024},
            "thresholds": {"initial_sigmas": 3.0},
            "options": {"f0_var_ratio": 1.0, "init": "iid", "V_sd": 12.0, "n_v": 8001,
                        "check_initial": True}},
    "equilibrate": {"core": {**_UNIT, "N_list": [16, 64, 256], "horizon": 6.0, "replicas": 40,
                             "n_half": 1024},
                    "thresholds": {"slope_tol": 0.1, "noise_floor": 1e-6},
                    "options": {"f0_var_ratio": 4.0, "times": [0.5 * k for k in range(1, 13)],
                                "fit_middle": 1.0, "V_sd": 12.0, "n_v": 16001,
                                "particle_times": [6.0, 7.0, 8.0]}},
    "phase": {"core": {**_UNIT, "lambda": 0.0},
              "thresholds": {"tail_rtol": 0.02},
              "options": {"TE_grid": [0.5 + 0.25 * k for k in range(20)],
                          "rho_grid": [0.05 * (k + 1) for k in range(20)],
                          "tail_check": True, "tail_n_half": 8192}},
    "moments": {"core": {"lambda": 0.0, "mu": 1.0, "E": 2.0, "T": 1.0, "horizon": 16.0},
                "thresholds": {"stable_variation": 0.2, "mc_sigmas": 3.0},
                "options": {"M_list": [10_000, 100_000, 1_000_000], "batches": 16,
                            "r_list": [2.0, 3.0, 5.0]}},
    "sphere": {"core": {**_UNIT, "N_list": [2**k for k in range(6, 15)], "replicas": 200},
               "thresholds": {"identity_rtol": 1e-12, "slope_max": -0.4},
               "options": {"law": "gaussian"}},
    "genchk": {"core": {"lambda": 0.0, "mu": 1.0, "E": 2.0, "T": 1.0, "mode": "AlphaExact",
                        "N_list": [2**k for k in range(6, 13)], "replicas": 2000},
               "thresholds": {"mc_sigmas": 4.0},
               "options": {"sample_budget": 12_800_000, "n_w": 24}},
    "kbar": {"core": {**_UNIT, "N_list": [10, 31, 100, 316, 1000, 3162, 10000, 31623, 100000]},
             "thresholds": {"growth_max": 0.05},
             "options": {"fourth": None}},
    "stationary": {"core": {**_UNIT},
                   "thresholds": {"ode_residual": 1e-6, "moment_rtol": 1e-6, "gaussian_tol": 1e-8,
                                  "domination_tol": 1e-10, "lambda0_tol": 1e-6},
                   "options": {"V": 12.0, "n_v": 4001, "fejer": False, "moment_fit_points": 256,
                               "moment_n_max": 131072, "compare_v_min": 0.0}},
}


def _as_number(key: str, v, kind=float):
    try:
        out = kind(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {v!r}") from None
    if kind is float and not math.isfinite(out):
        raise ConfigError(f"{key}: must be finite")
    return out


def parse_value(text: str):
    """Value of a ``--set key=value`` override: JSON if it parses, else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = parse_value(v.strip())
    return out


def load_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a JSON object")
    return data


def build_config(experiment: str, *layers: dict) -> ExperimentConfig:
    """Defaults for ``experiment`` overlaid by each mapping in ``layers`` in turn."""
    if experiment not in DEFAULTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    d = DEFAULTS[experiment]
    core = dict(d["core"])
    thresholds = dict(d["thresholds"])
    options = dict(d["options"])
    for layer in layers:
        for k, v in (layer or {}).items():
            if k in CORE_KEYS:
                core[k] = v
            elif k in thresholds:
                thresholds[k] = v
            elif k in options:
                options[k] = v
            else:
                raise ConfigError(f"unknown key {k!r} for experiment {experiment!r}")
    try:
        params = ModelParams(_as_number("lambda", core.get("lambda", 1.0)),
                             _as_number("mu", core.get("mu", 1.0)),
                             _as_number("E", core.get("E", 1.0)),
                             _as_number("T", core.get("T", 1.0)))
        mode = RescalingMode.parse(core.get("mode", "BetaMeanField"))
    except ValueError as e:
        raise ConfigError(str(e)) from None
    N_list = core.get("N_list", [64])
    if isinstance(N_list, (int, float)):
        N_list = [N_list]
    if not isinstance(N_list, (list, tuple)):
        raise ConfigError("N_list must be a list of integers")
    grid = GridSettings(
        n_half=None if core.get("n_half") is None else _as_number("n_half", core["n_half"], int),
        xi_max=None if core.get("xi_max") is None else _as_number("xi_max", core["xi_max"]),
        n_theta=_as_number("n_theta", core.get("n_theta", 128), int))
    for k, v in thresholds.items():
        thresholds[k] = _as_number(k, v)
    return ExperimentConfig(
        params=params, mode=mode, N_list=tuple(_as_number("N_list", n, int) for n in N_list),
        horizon=_as_number("horizon", core.get("horizon", 1.0)),
        replicas=_as_number("replicas", core.get("replicas", 1), int),
        seed=_as_number("seed", core.get("seed", 20240611), int),
        n_checkpoints=_as_number("n_checkpoints", core.get("n_checkpoints", 11), int),
        grid=grid, out_dir=core.get("out"), thresholds=thresholds, options=options)
