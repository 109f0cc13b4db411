"""Compiled event loops.

Every kernel takes a ``numpy.random.Generator`` and consumes it in a fixed
order, so a seeded generator reproduces a trajectory bit for bit.
"""
import math

import numpy as np
from numba import njit

NO_RESCALE = 0
ALPHA_EXACT = 1
BETA_MEAN_FIELD = 2

STATUS_OK = 0
STATUS_ALPHA_DOMAIN = 1


SPHERE_RTOL = 1e-10


@njit(cache=True)
def row_energy(v):
    acc = 0.0
    for k in range(v.shape[0]):
        acc += v[k] * v[k]
    return acc


@njit(cache=True)
def sphere_check(v, E):
    return abs(row_energy(v) - v.shape[0] * E) <= SPHERE_RTOL * v.shape[0] * E


@njit(cache=True)
def run_events(V, t0, t_end, lam, mu, E, T, mode, rng, ck_times, snaps, diag):
    """Advance every row of ``V`` with one shared event stream.

    Rows are the members of a synchronously coupled family (one row for an
    uncoupled run). ``snaps[c]`` receives the state at time ``ck_times[c]``.
    Returns (number of events, status). On a domain failure ``diag`` holds
    (time, row, index, old velocity, w) and ``V`` is left at the failing
    event.
    """
    C, N = V.shape
    n_ck = ck_times.shape[0]
    ic = 0
    while ic < n_ck and ck_times[ic] < t0:
        ic += 1
    rate = N * (lam + mu)
    if rate <= 0.0:
        while ic < n_ck and ck_times[ic] <= t_end:
            snaps[ic, :, :] = V
            ic += 1
        return 0, STATUS_OK
    p_kac = lam / (lam + mu)
    scale = 1.0 / rate
    sqT = math.sqrt(T)
    NE = N * E
    on_sphere = np.zeros(C, dtype=np.bool_)
    for r in range(C):
        on_sphere[r] = sphere_check(V[r], E)
    t = t0
    n_events = 0
    while True:
        t_next = t + rng.exponential(scale)
        while ic < n_ck and ck_times[ic] < t_next and ck_times[ic] <= t_end:
            snaps[ic, :, :] = V
            ic += 1
        if t_next > t_end:
            break
        if rng.random() < p_kac:
            i = rng.integers(0, N)
            j = rng.integers(0, N - 1)
            if j >= i:
                j += 1
            th = 2.0 * math.pi * rng.random()
            c = math.cos(th)
            s = math.sin(th)
            for r in range(C):
                vi = V[r, i]
                vj = V[r, j]
                V[r, i] = vi * c - vj * s
                V[r, j] = vi * s + vj * c
        else:
            i = rng.integers(0, N)
            w = sqT * rng.standard_normal()
            fb = math.sqrt(NE / (NE - E + w * w))
            for r in range(C):
                old = V[r, i]
                V[r, i] = w
                if mode == ALPHA_EXACT:
                    den = NE - old * old + w * w
                    if on_sphere[r]:
                        # same value in exact arithmetic; stops rounding
                        # error being amplified by alpha^2 at every event
                        den = row_energy(V[r])
                    if den <= 0.0:
                        diag[0] = t_next
                        diag[1] = r
                        diag[2] = i
                        diag[3] = old
                        diag[4] = w
                        return n_events, STATUS_ALPHA_DOMAIN
                    f = math.sqrt(NE / den)
                elif mode == BETA_MEAN_FIELD:
                    f = fb
                else:
                    continue
                for k in range(N):
                    V[r, k] *= f
        t = t_next
        n_events += 1
    return n_events, STATUS_OK


@njit(cache=True)
def run_event_count(V, n_target, lam, mu, E, T, mode, rng, energies):
    """Apply exactly ``n_target`` events to the single row ``V``.

    ``energies[k]`` records the total energy after event k; used to audit
    the exact rescaling over a long event sequence.
    """
    N = V.shape[0]
    p_kac = lam / (lam + mu)
    sqT = math.sqrt(T)
    NE = N * E
    on_sphere = sphere_check(V, E)
    for n in range(n_target):
        rng.exponential(1.0)  # keep the draw order of run_events
        if rng.random() < p_kac:
            i = rng.integers(0, N)
            j = rng.integers(0, N - 1)
            if j >= i:
                j += 1
            th = 2.0 * math.pi * rng.random()
            c = math.cos(th)
            s = math.sin(th)
            vi = V[i]
            vj = V[j]
            V[i] = vi * c - vj * s
            V[j] = vi * s + vj * c
        else:
            i = rng.integers(0, N)
            w = sqT * rng.standard_normal()
            old = V[i]
            V[i] = w
            if mode == ALPHA_EXACT:
                den = NE - old * old + w * w
                if on_sphere:
                    den = row_energy(V)
                if den <= 0.0:
                    return n, STATUS_ALPHA_DOMAIN
                f = math.sqrt(NE / den)
            elif mode == BETA_MEAN_FIELD:
                f = math.sqrt(NE / (NE - E + w * w))
            else:
                f = 1.0
            if f != 1.0:
                for k in range(N):
                    V[k] *= f
        acc = 0.0
        for k in range(N):
            acc += V[k] * V[k]
        energies[n] = acc
    return n_target, STATUS_OK


@njit(cache=True)
def run_ensemble(Z, t0, t_end, lam, mu, T, A, rng, ck_times, snaps):
    """Nanbu-type event loop for the nonlinear jump process with drift.

    Values are stored as u with Z = exp(A (t - t_ref)) u so the drift costs
    nothing between jumps; the reference is reset before the factor leaves a
    safe range.
    """
    M = Z.shape[0]
    n_ck = ck_times.shape[0]
    ic = 0
    while ic < n_ck and ck_times[ic] < t0:
        ic += 1
    rate = M * (2.0 * lam + mu)
    t = t0
    t_ref = t0
    n_events = 0
    if rate <= 0.0:
        while ic < n_ck and ck_times[ic] <= t_end:
            f = math.exp(A * (ck_times[ic] - t_ref))
            for k in range(M):
                snaps[ic, k] = Z[k] * f
            ic += 1
        f = math.exp(A * (t_end - t_ref))
        for k in range(M):
            Z[k] *= f
        return 0
    p_kac = 2.0 * lam / (2.0 * lam + mu)
    scale = 1.0 / rate
    sqT = math.sqrt(T)
    while True:
        t_next = t + rng.exponential(scale)
        while ic < n_ck and ck_times[ic] < t_next and ck_times[ic] <= t_end:
            f = math.exp(A * (ck_times[ic] - t_ref))
            for k in range(M):
                snaps[ic, k] = Z[k] * f
            ic += 1
        if t_next > t_end:
            break
        if abs(A * (t_next - t_ref)) > 30.0:
            f = math.exp(A * (t_next - t_ref))
            for k in range(M):
                Z[k] *= f
            t_ref = t_next
        g = math.exp(A * (t_next - t_ref))
        k = rng.integers(0, M)
        if rng.random() < p_kac:
            m = rng.integers(0, M - 1)
            if m >= k:
                m += 1
            th = 2.0 * math.pi * rng.random()
            Z[k] = Z[k] * math.cos(th) - Z[m] * math.sin(th)
        else:
            # stored values are divided by the pending drift factor
            Z[k] = sqT * rng.standard_normal() / g
        t = t_next
        n_events += 1
    f = math.exp(A * (t_end - t_ref))
    for k in range(M):
        Z[k] *= f
    return n_events
