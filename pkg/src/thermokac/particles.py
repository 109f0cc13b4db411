"""Event-driven N-particle simulation with thermostat and global rescaling."""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import roots_hermite

from . import _kernels as K
from .errors import DomainError
from .model import ModelParams

Sampler = Callable[[np.random.Generator, int], np.ndarray]


class RescalingMode(enum.Enum):
    NoRescale = K.NO_RESCALE
    AlphaExact = K.ALPHA_EXACT
    BetaMeanField = K.BETA_MEAN_FIELD

    @classmethod
    def parse(cls, s: "str | RescalingMode") -> "RescalingMode":
        if isinstance(s, cls):
            return s
        key = str(s).replace("_", "").replace("-", "").lower()
        for m in cls:
            if m.name.lower() == key or m.name.lower().startswith(key):
                return m
        raise ValueError(f"unknown rescaling mode {s!r}")


@dataclass(frozen=True)
class ParticleState:
    velocities: np.ndarray
    time: float = 0.0
    mode: RescalingMode = RescalingMode.BetaMeanField

    def __post_init__(self):
        v = np.ascontiguousarray(self.velocities, dtype=np.float64)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("a state needs a 1-d array of at least 2 velocities")
        object.__setattr__(self, "velocities", v)

    @property
    def N(self) -> int:
        return self.velocities.size


@dataclass(frozen=True)
class CoupledPair:
    a: ParticleState
    b: ParticleState

    def __post_init__(self):
        if self.a.N != self.b.N:
            raise ValueError("coupled states must have the same N")
        if self.a.mode != self.b.mode:
            raise ValueError("coupled states must share the rescaling mode")


def as_rng(seed) -> np.random.Generator:
    """Philox generator from an int, a SeedSequence, or pass a Generator through."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def replica_rngs(seed: int, replica, n: int = 2) -> list[np.random.Generator]:
    """Independent streams for one replica, derived from (seed, replica index).

    ``replica`` may be an int or a tuple of ints (e.g. (N, replica)).
    """
    key = tuple(int(k) for k in replica) if isinstance(replica, tuple) else (int(replica),)
    ss = np.random.SeedSequence(seed, spawn_key=key)
    return [np.random.Generator(np.random.Philox(c)) for c in ss.spawn(n)]


def gaussian_sampler(var: float) -> Sampler:
    sd = math.sqrt(var)
    return lambda rng, size: sd * rng.standard_normal(size)


def init_iid(sampler: Sampler, N: int, seed, mode: RescalingMode = RescalingMode.BetaMeanField) -> ParticleState:
    rng = as_rng(seed)
    return ParticleState(np.asarray(sampler(rng, N), dtype=np.float64), 0.0, mode)


def sphere_scale(X: np.ndarray, E: float) -> np.ndarray:
    """Project each row of X radially onto the sphere sum(v^2) = N E."""
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[-1]
    Q = np.mean(X * X, axis=-1, keepdims=True)
    fallback = np.where(np.arange(N) % 2 == 0, math.sqrt(E), -math.sqrt(E))
    safe = np.where(Q > 0, Q, 1.0)
    Y = np.sqrt(E / safe) * X
    return np.where(Q > 0, Y, fallback)


def init_sphere_scaled(sampler: Sampler, N: int, E: float, seed,
                       mode: RescalingMode = RescalingMode.AlphaExact) -> ParticleState:
    rng = as_rng(seed)
    X = np.asarray(sampler(rng, N), dtype=np.float64)
    return ParticleState(sphere_scale(X, E), 0.0, mode)


def _raise_domain(diag, mode):
    t, row, i, old, w = diag
    raise DomainError(
        f"{mode.name}: N*E - v_i^2 + w^2 <= 0 at t={t:.6g} (row {int(row)}, particle {int(i)}, "
        f"v_i={old:.6g}, w={w:.6g}); alpha is only defined near the energy sphere")


def _run(V: np.ndarray, t0: float, t_end: float, params: ModelParams, mode: RescalingMode,
         rng: np.random.Generator, times: np.ndarray | None):
    times = np.empty(0) if times is None else np.ascontiguousarray(times, dtype=np.float64)
    snaps = np.empty((times.size,) + V.shape)
    diag = np.zeros(5)
    n, status = K.run_events(V, t0, t_end, params.lam, params.mu, params.E, params.T,
                             mode.value, rng, times, snaps, diag)
    if status != K.STATUS_OK:
        _raise_domain(diag, mode)
    return snaps, n


def advance(state: ParticleState, params: ModelParams, duration: float, rng) -> ParticleState:
    """Run the jump process for ``duration`` time units; returns a new state."""
    if duration < 0:
        raise ValueError("duration must be non-negative")
    V = state.velocities.copy()[None, :]
    _run(V, state.time, state.time + duration, params, state.mode, as_rng(rng), None)
    return replace(state, velocities=V[0], time=state.time + duration)


def trajectory(state: ParticleState, params: ModelParams, times: Sequence[float], rng):
    """Advance to ``max(times)`` recording the velocities at every requested time.

    Returns (final state, snapshots of shape (len(times), N)).
    """
    times = np.asarray(times, dtype=np.float64)
    if times.size and (np.any(np.diff(times) < 0) or times[0] < state.time):
        raise ValueError("checkpoint times must be sorted and not before the state time")
    t_end = float(times[-1]) if times.size else state.time
    V = state.velocities.copy()[None, :]
    snaps, _ = _run(V, state.time, t_end, params, state.mode, as_rng(rng), times)
    return replace(state, velocities=V[0], time=t_end), snaps[:, 0, :]


def advance_coupled(pair: CoupledPair, params: ModelParams, duration: float, rng,
                    times: Sequence[float] | None = None):
    """Advance both members with one shared event stream.

    With ``times`` given, returns (pair, snapshots of shape (len(times), 2, N)).
    """
    if duration < 0:
        raise ValueError("duration must be non-negative")
    t0 = pair.a.time
    V = np.stack([pair.a.velocities, pair.b.velocities])
    tt = None if times is None else np.asarray(times, dtype=np.float64)
    snaps, _ = _run(V, t0, t0 + duration, params, pair.a.mode, as_rng(rng), tt)
    out = CoupledPair(replace(pair.a, velocities=V[0], time=t0 + duration),
                      replace(pair.b, velocities=V[1], time=t0 + duration))
    return out if times is None else (out, snaps)


def energy_audit(state: ParticleState, params: ModelParams, n_events: int, rng) -> np.ndarray:
    """Total energy after each of ``n_events`` consecutive events."""
    V = state.velocities.copy()
    energies = np.empty(n_events)
    n, status = K.run_event_count(V, n_events, params.lam, params.mu, params.E, params.T,
                                  state.mode.value, as_rng(rng), energies)
    if status != K.STATUS_OK:
        raise DomainError(f"rescaling factor undefined at event {n}")
    return energies


def total_energy(state: ParticleState) -> float:
    v = state.velocities
    return float(np.dot(v, v))


def empirical(state: ParticleState):
    from .metrics import EmpiricalSample
    return EmpiricalSample(state.velocities)


def particle_moment(state: ParticleState, r: float) -> float:
    return float(np.mean(np.abs(state.velocities) ** r))


# --- snapshot export -------------------------------------------------------

def write_snapshots_csv(path, times: np.ndarray, snaps: np.ndarray) -> None:
    snaps = np.asarray(snaps)
    N = snaps.shape[1]
    header = ",".join(["time"] + [f"v{i + 1}" for i in range(N)])
    data = np.column_stack([np.asarray(times), snaps])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def write_snapshots_binary(path, times: np.ndarray, snaps: np.ndarray) -> None:
    """One record per snapshot: u64 count, then count little-endian f64 values."""
    with open(path, "wb") as fh:
        for t, row in zip(times, snaps):
            rec = np.concatenate([[t], row]).astype("<f8")
            fh.write(struct.pack("<Q", rec.size))
            fh.write(rec.tobytes())


def read_snapshots_binary(path) -> tuple[np.ndarray, np.ndarray]:
    buf = Path(path).read_bytes()
    pos, rows = 0, []
    while pos < len(buf):
        (n,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        rows.append(np.frombuffer(buf, dtype="<f8", count=n, offset=pos))
        pos += 8 * n
    arr = np.array(rows)
    return arr[:, 0], arr[:, 1:]


# --- generator pairing -----------------------------------------------------

def _rescale_factor(mode: RescalingMode, N: int, E: float, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    NE = N * E
    if mode is RescalingMode.AlphaExact:
        den = NE - v * v + w * w
        if np.any(den <= 0):
            raise DomainError("alpha factor undefined for a state off the energy sphere")
        return np.sqrt(NE / den)
    if mode is RescalingMode.BetaMeanField:
        return np.sqrt(NE / (NE - E + w * w)) + 0.0 * v
    return np.ones(np.broadcast_shapes(np.shape(v), np.shape(w)))


def generator_adjoint(Y: np.ndarray, params: ModelParams, h: Callable[[np.ndarray], np.ndarray],
                      l: int = 1, mode: RescalingMode = RescalingMode.AlphaExact,
                      n_theta: int = 32, n_w: int = 24) -> np.ndarray:
    """(L_N^* h)(Y) for each row of Y, with h acting on the first ``l`` coordinates.

    The angular mean uses the periodic trapezoid rule and the thermostat draw
    Gauss-Hermite quadrature, so the only randomness left is in Y.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    M, N = Y.shape
    lam, mu, E, T = params.lam, params.mu, params.E, params.T
    base = h(Y[:, :l])
    out = np.zeros(M)

    if lam > 0:
        th = 2 * np.pi * np.arange(n_theta) / n_theta
        c, s = np.cos(th), np.sin(th)
        for i in range(l):
            vi = Y[:, i, None, None]
            vj = Y[:, i + 1:, None]  # (M, N-i-1, 1)
            new_i = vi * c - vj * s
            new_j = vi * s + vj * c
            args = np.broadcast_to(Y[:, None, None, :l], new_i.shape + (l,)).copy()
            args[..., i] = new_i
            for col in range(i + 1, l):
                # partner j = col is itself one of the observed coordinates
                args[:, col - i - 1, :, col] = new_j[:, col - i - 1, :]
            out += 2 * lam / (N - 1) * np.sum(h(args).mean(axis=2) - base[:, None], axis=1)

    if mu > 0:
        x, wq = roots_hermite(n_w)
        w = math.sqrt(2 * T) * x
        wq = wq / math.sqrt(math.pi)
        front = Y[:, :l]
        for j in range(l):
            f = _rescale_factor(mode, N, E, Y[:, j, None], w[None, :])  # (M, n_w)
            args = np.broadcast_to(front[:, None, :], (M, n_w, l)).copy()
            args[:, :, j] = w[None, :]
            args *= f[:, :, None]
            out += mu * (h(args) @ wq - base)
        if N > l and mode is not RescalingMode.NoRescale:
            f = _rescale_factor(mode, N, E, Y[:, l:, None], w[None, None, :])  # (M, N-l, n_w)
            args = front[:, None, None, :] * f[..., None]
            out += mu * np.sum(h(args) @ wq - base[:, None], axis=1)
    return out


def generator_pairing(sampler: Sampler, N: int, params: ModelParams,
                      h: Callable[[np.ndarray], np.ndarray], M_samples: int, rng,
                      l: int = 1, mode: RescalingMode = RescalingMode.AlphaExact,
                      control: tuple[Callable[[np.ndarray], np.ndarray], float] | None = None,
                      chunk: int | None = None, **quad) -> tuple[float, float]:
    """Monte Carlo estimate of the pairing of L_N[f^N] with h, and its standard error.

    See ``generator_pairing_samples`` for the arguments.
    """
    vals = generator_pairing_samples(sampler, N, params, h, M_samples, rng, l=l, mode=mode,
                                     control=control, chunk=chunk, **quad)
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.nan
    return float(vals.mean()), se


def generator_pairing_samples(sampler: Sampler, N: int, params: ModelParams,
                              h: Callable[[np.ndarray], np.ndarray], M_samples: int, rng,
                              l: int = 1, mode: RescalingMode = RescalingMode.AlphaExact,
                              control: tuple[Callable[[np.ndarray], np.ndarray], float] | None = None,
                              chunk: int | None = None, **quad) -> np.ndarray:
    """Per-state values of L_N^* h on sphere-projected draws.

    f^N is the radial projection of f^{(x)N} onto the energy sphere. With
    ``control=(ell, mean_ell)`` the estimator subtracts ``ell`` evaluated on
    the unprojected first coordinate and adds back its known mean.
    """
    rng = as_rng(rng)
    if chunk is None:
        chunk = max(1, int(4e6 // (N * 32)))
    vals = []
    done = 0
    while done < M_samples:
        m = min(chunk, M_samples - done)
        X = np.asarray(sampler(rng, m * N), dtype=np.float64).reshape(m, N)
        Y = sphere_scale(X, params.E)
        v = generator_adjoint(Y, params, h, l=l, mode=mode, **quad)
        if control is not None:
            v = v - control[0](X[:, :l]) + control[1]
        vals.append(v)
        done += m
    return np.concatenate(vals)
