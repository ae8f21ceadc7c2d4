"""Counter-based Gaussian noise streams.

A stream is fully determined by a 64-bit seed; sample ``k`` of the stream can
be computed directly without generating samples ``0..k-1``. This is what lets
every process regenerate a perturbation from its seed alone.

Generator (frozen; see docs/NOISE.md and conformance/noise_vectors.txt):

    key(s)     = mix64(s + GAMMA)                      (mod 2**64)
    word(s, k) = mix64(key(s) + (k + 1) * GAMMA)       (mod 2**64)
    u(s, k)    = ((word(s, k) >> 11) + 0.5) * 2**-53   in (0, 1)
    x(s, k)    = float32(ndtri(u(s, k)))

``mix64`` is the SplitMix64 finalizer (Stafford variant 13) and ``GAMMA`` the
64-bit golden-ratio increment. ``ndtri`` is the Acklam rational approximation
of the inverse normal CDF, evaluated in float64 with the exact operation order
of :func:`_ndtri_scalar`; the float32 rounding absorbs sub-ulp differences in
``log`` between math libraries.

Exactly one uniform, hence one 64-bit word, is consumed per sample, so the
counter advance of a fill is always its element count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels

U64_MASK = 0xFFFFFFFFFFFFFFFF
GAMMA = 0x9E3779B97F4A7C15
MIX_M1 = 0xBF58476D1CE4E5B9
MIX_M2 = 0x94D049BB133111EB
MAX_COUNTER = U64_MASK

# Acklam inverse-normal coefficients (published values).
ACKLAM_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
            1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
ACKLAM_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
            6.680131188771972e01, -1.328068155288572e01)
ACKLAM_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
            -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
ACKLAM_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
            3.754408661907416e00)
P_LOW = 0.02425
P_HIGH = 1.0 - P_LOW


class NoiseCounterOverflow(OverflowError):
    """Raised when a fill would move a stream counter past 2**64 - 1."""


def mix64(z: int) -> int:
    z &= U64_MASK
    z = ((z ^ (z >> 30)) * MIX_M1) & U64_MASK
    z = ((z ^ (z >> 27)) * MIX_M2) & U64_MASK
    return z ^ (z >> 31)


def stream_key(seed: int) -> int:
    return mix64((seed + GAMMA) & U64_MASK)


def word(seed: int, k: int) -> int:
    """Raw 64-bit output ``k`` of the stream for ``seed``."""
    return mix64((stream_key(seed) + (k + 1) * GAMMA) & U64_MASK)


def _ndtri_scalar(p: float) -> float:
    if p < P_LOW:
        c0, c1, c2, c3, c4, c5 = ACKLAM_C
        d0, d1, d2, d3 = ACKLAM_D
        q = math.sqrt(-2.0 * math.log(p))
        return (((((c0 * q + c1) * q + c2) * q + c3) * q + c4) * q + c5) / (
            (((d0 * q + d1) * q + d2) * q + d3) * q + 1.0)
    if p > P_HIGH:
        c0, c1, c2, c3, c4, c5 = ACKLAM_C
        d0, d1, d2, d3 = ACKLAM_D
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        return -(((((c0 * q + c1) * q + c2) * q + c3) * q + c4) * q + c5) / (
            (((d0 * q + d1) * q + d2) * q + d3) * q + 1.0)
    a0, a1, a2, a3, a4, a5 = ACKLAM_A
    b0, b1, b2, b3, b4 = ACKLAM_B
    q = p - 0.5
    r = q * q
    return (((((a0 * r + a1) * r + a2) * r + a3) * r + a4) * r + a5) * q / (
        ((((b0 * r + b1) * r + b2) * r + b3) * r + b4) * r + 1.0)


def reference_samples(seed: int, counter: int, count: int) -> np.ndarray:
    """Pure-Python scalar implementation of the stream, used as the oracle."""
    key = stream_key(seed)
    out = np.empty(count, dtype=np.float32)
    for i in range(count):
        w = mix64((key + (counter + i + 1) * GAMMA) & U64_MASK)
        u = ((w >> 11) + 0.5) * 2.0 ** -53
        out[i] = np.float32(_ndtri_scalar(u))
    return out


def vectorized_samples(seed: int, counter: int, count: int) -> np.ndarray:
    """Numpy implementation of the stream (second route, independent of numba)."""
    key = np.uint64(stream_key(seed))
    with np.errstate(over="ignore"):
        k = np.arange(count, dtype=np.uint64) + np.uint64(counter) + np.uint64(1)
        z = k * np.uint64(GAMMA) + key
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX_M2)
        z = z ^ (z >> np.uint64(31))
    p = ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    x = np.empty(count, dtype=np.float64)

    a0, a1, a2, a3, a4, a5 = ACKLAM_A
    b0, b1, b2, b3, b4 = ACKLAM_B
    c0, c1, c2, c3, c4, c5 = ACKLAM_C
    d0, d1, d2, d3 = ACKLAM_D
    lo, hi = p < P_LOW, p > P_HIGH
    mid = ~(lo | hi)
    q = p[mid] - 0.5
    r = q * q
    x[mid] = (((((a0 * r + a1) * r + a2) * r + a3) * r + a4) * r + a5) * q / (
        ((((b0 * r + b1) * r + b2) * r + b3) * r + b4) * r + 1.0)
    q = np.sqrt(-2.0 * np.log(p[lo]))
    x[lo] = (((((c0 * q + c1) * q + c2) * q + c3) * q + c4) * q + c5) / (
        (((d0 * q + d1) * q + d2) * q + d3) * q + 1.0)
    q = np.sqrt(-2.0 * np.log(1.0 - p[hi]))
    x[hi] = -(((((c0 * q + c1) * q + c2) * q + c3) * q + c4) * q + c5) / (
        (((d0 * q + d1) * q + d2) * q + d3) * q + 1.0)
    return x.astype(np.float32)


def check_counter(counter: int, count: int) -> None:
    if counter < 0 or count < 0:
        raise ValueError("counter and count must be non-negative")
    if counter + count > MAX_COUNTER:
        raise NoiseCounterOverflow(
            f"stream counter {counter} cannot advance by {count} without wrapping")


def sample_seeds(n: int, master_seed: int, start: int = 0) -> list[int]:
    """``n`` distinct seeds: raw words ``start .. start+n-1`` of the master stream.

    ``mix64`` is a bijection, so distinct word indices give distinct seeds.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    check_counter(start, n)
    key = stream_key(master_seed)
    return [mix64((key + (start + i + 1) * GAMMA) & U64_MASK) for i in range(n)]


@dataclass
class NoiseStream:
    """A seed plus a position. Owned by one execution context at a time."""

    seed: int
    counter: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.seed <= U64_MASK:
            raise ValueError(f"seed {self.seed} is not a 64-bit unsigned integer")
        if not 0 <= self.counter <= MAX_COUNTER:
            raise ValueError(f"counter {self.counter} out of range")

    @property
    def key(self) -> int:
        return stream_key(self.seed)

    def advance(self, n: int) -> None:
        check_counter(self.counter, n)
        self.counter += n


def gaussian_fill(stream: NoiseStream, shape: tuple[int, ...] | int,
                  out: np.ndarray | None = None) -> np.ndarray:
    """Fill a float32 tensor of ``shape`` with the next samples of ``stream``."""
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    count = int(np.prod(shape, dtype=np.int64))
    if count < 1:
        raise ValueError("shape must have at least one element")
    check_counter(stream.counter, count)
    if out is None:
        out = np.empty(shape, dtype=np.float32)
    elif out.shape != shape or out.dtype != np.float32 or not out.flags.c_contiguous:
        raise ValueError("out must be a C-contiguous float32 array of the requested shape")
    _kernels.fill(np.uint64(stream.key), np.uint64(stream.counter), out.reshape(-1))
    stream.counter += count
    return out
