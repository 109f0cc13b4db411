"""Compiled loops for the Fourier-side solver.

Grid functions are indexed in units of the grid spacing. Even fields are
stored on k = 0..n and mirrored through the origin; general fields on the
full symmetric grid.
"""
import math

from numba import njit


@njit(cache=True, inline="always")
def lagrange_weights(s):
    """Four-point weights for nodes 0, 1, 2, 3 evaluated at s."""
    s1 = s - 1.0
    s2 = s - 2.0
    s3 = s - 3.0
    return (-s1 * s2 * s3 / 6.0, s * s2 * s3 / 2.0, -s * s1 * s3 / 2.0, s * s1 * s2 / 6.0)


@njit(cache=True)
def interp_even(v, p):
    """Cubic interpolation of an even grid function at index position p >= 0."""
    n = v.shape[0] - 1
    if p > n:
        return 0.0 * v[0]
    k = int(p)
    m = k - 1
    if m > n - 3:
        m = n - 3
    w0, w1, w2, w3 = lagrange_weights(p - m)
    i0 = m if m >= 0 else -m
    return w0 * v[i0] + w1 * v[m + 1] + w2 * v[m + 2] + w3 * v[m + 3]


@njit(cache=True)
def interp_full(v, p):
    """Cubic interpolation on a full grid at index position p in [0, len-1]."""
    last = v.shape[0] - 1
    if p < 0.0 or p > last:
        return 0.0 * v[0]
    k = int(p)
    m = k - 1
    if m < 0:
        m = 0
    if m > last - 3:
        m = last - 3
    w0, w1, w2, w3 = lagrange_weights(p - m)
    return w0 * v[m] + w1 * v[m + 1] + w2 * v[m + 2] + w3 * v[m + 3]


@njit(cache=True)
def interp_even_many(v, pos, out):
    for i in range(pos.shape[0]):
        out[i] = interp_even(v, abs(pos[i]))


@njit(cache=True)
def b2_even(z, w, cos_t, sin_t, wts, out):
    """out[k] = sum_j wts[j] z(k cos_j) w(k sin_j) for an even pair (z, w)."""
    n = z.shape[0] - 1
    for k in range(n + 1):
        acc = 0.0
        for j in range(cos_t.shape[0]):
            acc += wts[j] * interp_even(z, k * cos_t[j]) * interp_even(w, k * sin_t[j])
        out[k] = acc


@njit(cache=True)
def b2_full(z, w, cos_t, sin_t, wts, out):
    """General complex fields on the full grid with centre index n."""
    n = (z.shape[0] - 1) // 2
    for i in range(z.shape[0]):
        k = i - n
        acc = 0.0j
        for j in range(cos_t.shape[0]):
            acc += wts[j] * interp_full(z, n + k * cos_t[j]) * interp_full(w, n + k * sin_t[j])
        out[i] = acc


@njit(cache=True)
def resolve_upward(q, decay, W, start, D, y):
    """Drift resolvent for A < 0: integrate from the origin outward."""
    n = q.shape[0] - 1
    y[0] = q[0] / D
    for k in range(n):
        m = start[k]
        acc = 0.0
        for i in range(4):
            idx = m + i
            if idx < 0:
                idx = -idx
            acc += W[k, i] * q[idx]
        y[k + 1] = decay[k] * y[k] + acc


@njit(cache=True)
def resolve_downward(q, decay, W, start, D, tail, y):
    """Drift resolvent for A > 0: integrate from the grid end toward the origin."""
    n = q.shape[0] - 1
    y[n] = tail * q[n]
    for k in range(n - 1, 0, -1):
        m = start[k]
        acc = 0.0
        for i in range(4):
            idx = m + i
            if idx < 0:
                idx = -idx
            acc += W[k, i] * q[idx]
        y[k] = decay[k] * y[k + 1] + acc
    y[0] = q[0] / D


@njit(cache=True)
def cos_transform(y, h, v, fejer, out):
    """Trapezoid inverse transform of an even field on [-Xi, Xi] at points v."""
    n = y.shape[0] - 1
    xi_max = n * h
    for a in range(v.shape[0]):
        acc = 0.5 * y[0]
        om = 2.0 * math.pi * v[a] * h
        for k in range(1, n + 1):
            yk = y[k]
            if fejer:
                yk *= 1.0 - k * h / xi_max
            c = math.cos(om * k)
            if k == n:
                acc += 0.5 * yk * c
            else:
                acc += yk * c
        out[a] = 2.0 * h * acc
