"""Compiled inner loops for noise generation and in-place parameter edits.

Noise is regenerated on the fly in fixed-size chunks, so perturbing,
restoring or updating a layer never materialises a layer-sized noise tensor;
the only transient buffer is ``CHUNK`` float64 values. Float32 rounding
happens at exactly the same points as in the numpy expression
``x + np.float32(c) * eps`` so compiled and numpy routes agree bitwise.

The central region of the inverse-normal is evaluated for every element in
a branch-free loop (vectorisable); tail elements (about 5%) are then
recomputed with the log-based branch. ``error_model="numpy"`` drops the
zero-division guard, which otherwise blocks vectorisation.
"""

from __future__ import annotations

import math

import numba
import numpy as np

CHUNK = 1024

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)

_A0, _A1, _A2, _A3, _A4, _A5 = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
                                1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B0, _B1, _B2, _B3, _B4 = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
                           6.680131188771972e01, -1.328068155288572e01)
_C0, _C1, _C2, _C3, _C4, _C5 = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
                                -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D0, _D1, _D2, _D3 = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
                      3.754408661907416e00)
_P_LOW = 0.02425
_P_HIGH = 1.0 - 0.02425
_TWO_M53 = 2.0 ** -53

_jit = numba.njit(cache=True, nogil=True, error_model="numpy")


@_jit
def _chunk(key, first, m, p, eps):
    """Samples ``first .. first+m-1`` (as 1-based word indices) into ``eps[:m]``."""
    for j in range(m):
        z = key + (first + np.uint64(j)) * _GAMMA
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        z = z ^ (z >> _S31)
        p[j] = (np.float64(z >> _S11) + 0.5) * _TWO_M53
    for j in range(m):
        q = p[j] - 0.5
        r = q * q
        p[j + CHUNK] = (((((_A0 * r + _A1) * r + _A2) * r + _A3) * r + _A4) * r + _A5) * q / (
            ((((_B0 * r + _B1) * r + _B2) * r + _B3) * r + _B4) * r + 1.0)
    for j in range(m):
        pj = p[j]
        if pj < _P_LOW:
            q = math.sqrt(-2.0 * math.log(pj))
            p[j + CHUNK] = (((((_C0 * q + _C1) * q + _C2) * q + _C3) * q + _C4) * q + _C5) / (
                (((_D0 * q + _D1) * q + _D2) * q + _D3) * q + 1.0)
        elif pj > _P_HIGH:
            q = math.sqrt(-2.0 * math.log(1.0 - pj))
            p[j + CHUNK] = -(((((_C0 * q + _C1) * q + _C2) * q + _C3) * q + _C4) * q + _C5) / (
                (((_D0 * q + _D1) * q + _D2) * q + _D3) * q + 1.0)
    for j in range(m):
        eps[j] = np.float32(p[j + CHUNK])


@_jit
def fill(key, start, out):
    n = out.shape[0]
    p = np.empty(2 * CHUNK)
    eps = np.empty(CHUNK, dtype=np.float32)
    for c0 in range(0, n, CHUNK):
        m = min(CHUNK, n - c0)
        _chunk(key, start + np.uint64(c0) + _ONE, m, p, eps)
        for j in range(m):
            out[c0 + j] = eps[j]


@_jit
def add_scaled(x, key, start, coef):
    """x += coef * eps in float32; returns the number of non-finite results."""
    n = x.shape[0]
    p = np.empty(2 * CHUNK)
    eps = np.empty(CHUNK, dtype=np.float32)
    bad = 0
    for c0 in range(0, n, CHUNK):
        m = min(CHUNK, n - c0)
        _chunk(key, start + np.uint64(c0) + _ONE, m, p, eps)
        for j in range(m):
            x[c0 + j] = x[c0 + j] + coef * eps[j]
        for j in range(m):
            if not math.isfinite(x[c0 + j]):
                bad += 1
    return bad


@_jit
def sub_scaled(x, key, start, coef):
    """x -= coef * eps in float32; returns the number of non-finite results."""
    n = x.shape[0]
    p = np.empty(2 * CHUNK)
    eps = np.empty(CHUNK, dtype=np.float32)
    bad = 0
    for c0 in range(0, n, CHUNK):
        m = min(CHUNK, n - c0)
        _chunk(key, start + np.uint64(c0) + _ONE, m, p, eps)
        for j in range(m):
            x[c0 + j] = x[c0 + j] - coef * eps[j]
        for j in range(m):
            if not math.isfinite(x[c0 + j]):
                bad += 1
    return bad


@_jit
def round_trip(x, key, start, coef):
    """Same bits as add_scaled followed by sub_scaled, in one pass."""
    n = x.shape[0]
    p = np.empty(2 * CHUNK)
    eps = np.empty(CHUNK, dtype=np.float32)
    bad = 0
    for c0 in range(0, n, CHUNK):
        m = min(CHUNK, n - c0)
        _chunk(key, start + np.uint64(c0) + _ONE, m, p, eps)
        for j in range(m):
            d = coef * eps[j]
            v = x[c0 + j] + d
            x[c0 + j] = v - d
        for j in range(m):
            if not math.isfinite(x[c0 + j]):
                bad += 1
    return bad
