"""Nanbu-type particle ensemble for the nonlinear (mean-field) jump process."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .model import ModelParams
from .particles import as_rng


@dataclass(frozen=True)
class EnsembleState:
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("an ensemble needs at least 2 members")
        object.__setattr__(self, "values", v)

    @property
    def M(self) -> int:
        return self.values.size


def ensemble_advance(ens: EnsembleState, params: ModelParams, duration: float, rng,
                     times: Sequence[float] | None = None):
    """Advance every member for ``duration``.

    Members jump at rate 2 lam (rotation against a uniformly chosen other
    member) and mu (fresh thermostat draw); between jumps all values grow by
    exp(A dt). With ``times`` (absolute, sorted) also returns snapshots.
    """
    if duration < 0:
        raise ValueError("duration must be non-negative")
    Z = ens.values.copy()
    tt = np.empty(0) if times is None else np.ascontiguousarray(times, dtype=np.float64)
    snaps = np.empty((tt.size, Z.size))
    t_end = ens.time + duration
    K.run_ensemble(Z, ens.time, t_end, params.lam, params.mu, params.T, params.A,
                   as_rng(rng), tt, snaps)
    out = EnsembleState(Z, t_end)
    return out if times is None else (out, snaps)
