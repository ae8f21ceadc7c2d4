"""Histograms of per-element parameter shifts against a random-walk null model.

The reference treats every element as an independent walk of T zero-mean
Gaussian steps whose per-step std is the run's empirical per-element update
size. A sum of T such steps is N(0, sum_t s_t^2), so the reference is drawn
directly from that normal instead of simulating each step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..noise import NoiseStream, gaussian_fill
from ..params import ParameterSet

RECONSTRUCTION_NOTE = ("random-walk reference: independent Gaussian steps per element with "
                       "per-step std matched to the run's per-iteration update rms")


@dataclass
class ShiftHistogram:
    edges: np.ndarray
    counts: np.ndarray
    reference_counts: np.ndarray
    density: np.ndarray
    reference_density: np.ndarray
    difference: np.ndarray
    meta: dict = field(default_factory=dict)

    def rows(self):
        for i in range(len(self.counts)):
            yield {"bin": i, "lo": float(self.edges[i]), "hi": float(self.edges[i + 1]),
                   "count": int(self.counts[i]), "reference_count": int(self.reference_counts[i]),
                   "density": float(self.density[i]),
                   "reference_density": float(self.reference_density[i]),
                   "difference": float(self.difference[i])}


def _abs_shift(theta0: ParameterSet, theta1: ParameterSet) -> np.ndarray:
    try:
        theta0.check_compatible(theta1)
    except ValueError:
        raise ValueError("parameter sets have different layouts") from None
    return np.abs(theta1.to_vector().astype(np.float64) - theta0.to_vector())


def step_std_from_norms(update_norms, n_params: int) -> np.ndarray:
    """Per-iteration rms element update, from the update-norm column of a run."""
    return np.asarray(update_norms, dtype=np.float64) / math.sqrt(n_params)


def shift_histogram(theta0: ParameterSet, theta1: ParameterSet, bins: int = 50, *,
                    step_std=None, seed: int = 0) -> ShiftHistogram:
    """|theta1 - theta0| per element, binned together with the random-walk reference.

    ``step_std`` is one value per iteration (or a scalar when all steps share
    it); with ``None`` the reference is all zeros, which is only useful for
    degenerate inputs.
    """
    if bins < 10:
        raise ValueError("bins must be >= 10")
    shift = _abs_shift(theta0, theta1)
    n = shift.size
    if step_std is None:
        total_var = 0.0
    else:
        s = np.atleast_1d(np.asarray(step_std, dtype=np.float64))
        total_var = float(np.sum(s * s))
    noise = np.empty(n, dtype=np.float32)
    gaussian_fill(NoiseStream(seed), n, out=noise)
    ref = np.abs(noise.astype(np.float64)) * math.sqrt(total_var)

    hi = max(float(shift.max()), float(ref.max()))
    if hi == 0.0:
        hi = 1.0
    edges = np.linspace(0.0, hi, bins + 1)
    counts, _ = np.histogram(shift, bins=edges)
    ref_counts, _ = np.histogram(ref, bins=edges)
    dens, ref_dens = counts / n, ref_counts / n
    meta = {"parameters": n, "bins": bins, "reference_std": math.sqrt(total_var),
            "seed": seed, "reference": RECONSTRUCTION_NOTE}
    return ShiftHistogram(edges, counts, ref_counts, dens, ref_dens, dens - ref_dens, meta)
