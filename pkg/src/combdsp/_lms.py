"""Numba kernels for the T/2-spaced LMS MIMO equalizer.

Tap convention: output[k] = sum over branches b and taps m of
w[pol, b, m] * window_b[m], where window_b starts at input sample
k*sps of the circularly padded branch stream (no conjugation, no
flip).  The update is w += mu * e * conj(u).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _tap_energy(w):
    e = 0.0
    for a in range(w.shape[0]):
        for b in range(w.shape[1]):
            for m in range(w.shape[2]):
                v = w[a, b, m]
                e += v.real * v.real + v.imag * v.imag
    return e


@njit(cache=True)
def _output(inp, w, base, M, B):
    ox = 0.0 + 0.0j
    oy = 0.0 + 0.0j
    for b in range(B):
        for m in range(M):
            u = inp[b, base + m]
            ox += w[0, b, m] * u
            oy += w[1, b, m] * u
    return ox, oy


@njit(cache=True)
def _update(inp, w, base, M, B, mu, ex, ey):
    for b in range(B):
        for m in range(M):
            uc = np.conj(inp[b, base + m])
            w[0, b, m] += mu * ex * uc
            w[1, b, m] += mu * ey * uc


@njit(cache=True)
def lms_train(inp, sps, w, desired, mu, epochs, energy_limit):
    """Data-aided epochs over the training region.  Returns (err, n_ok, diverged)."""
    B = inp.shape[0]
    M = w.shape[2]
    S = desired.shape[1]
    err = np.zeros(S * epochs)
    pos = 0
    for _ in range(epochs):
        for k in range(S):
            base = k * sps
            ox, oy = _output(inp, w, base, M, B)
            ex = desired[0, k] - ox
            ey = desired[1, k] - oy
            _update(inp, w, base, M, B, mu, ex, ey)
            err[pos] = ex.real**2 + ex.imag**2 + ey.real**2 + ey.imag**2
            pos += 1
            if (k & 255) == 0 and _tap_energy(w) > energy_limit:
                return err, pos, True
    return err, pos, False


@njit(cache=True)
def _nearest(points, v):
    best = points[0]
    bd = 1e300
    for i in range(points.shape[0]):
        dr = v.real - points[i].real
        di = v.imag - points[i].imag
        d = dr * dr + di * di
        if d < bd:
            bd = d
            best = points[i]
    return best


@njit(cache=True)
def lms_payload(inp, sps, w, n_symbols, pilot_mask, pilot_syms, points,
                mu, theta_gain, theta0, freeze, energy_limit):
    """Decision-directed pass over the whole frame with pilot-anchored
    phase tracking de-rotating the error term.

    Returns (out, err, theta_trace, n_ok, diverged).
    """
    B = inp.shape[0]
    M = w.shape[2]
    out = np.zeros((2, n_symbols), dtype=np.complex128)
    err = np.zeros(n_symbols)
    theta_trace = np.zeros(n_symbols)
    theta = theta0
    for k in range(n_symbols):
        base = k * sps
        ox, oy = _output(inp, w, base, M, B)
        out[0, k] = ox
        out[1, k] = oy
        rot = np.exp(-1j * theta)
        if pilot_mask[k]:
            dx = pilot_syms[0, k]
            dy = pilot_syms[1, k]
            z = ox * np.conj(dx) + oy * np.conj(dy)
            z *= rot
            if z.real != 0.0 or z.imag != 0.0:
                theta += theta_gain * np.arctan2(z.imag, z.real)
        else:
            dx = _nearest(points, ox * rot)
            dy = _nearest(points, oy * rot)
        back = np.exp(1j * theta)
        ex = dx * back - ox
        ey = dy * back - oy
        if not freeze:
            _update(inp, w, base, M, B, mu, ex, ey)
        err[k] = ex.real**2 + ex.imag**2 + ey.real**2 + ey.imag**2
        theta_trace[k] = theta
        if (k & 255) == 0 and _tap_energy(w) > energy_limit:
            return out, err, theta_trace, k, True
    return out, err, theta_trace, n_symbols, False
