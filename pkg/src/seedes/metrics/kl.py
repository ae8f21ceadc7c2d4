"""Per-token KL estimate between a base and a fine-tuned model.

For a realised token with log-probabilities ``lb`` (base) and ``lf``
(fine-tuned), r = exp(lb - lf) and the estimate is r - log r - 1, computed
as ``expm1(d) - d`` with d = lb - lf, switching to the Taylor series
d^2/2 + d^3/6 + d^4/24 for |d| < 1e-4 where the subtraction would cancel.
The estimate is exactly 0 when the log-probabilities agree. Sampling y from the
fine-tuned model makes the mean an unbiased estimate of KL(ft || base).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ZeroProbabilityError(ValueError):
    def __init__(self, index: int, which: str):
        self.index = index
        super().__init__(f"token {index} has zero probability under the {which} model")


def _from_log_ratio(d: np.ndarray) -> np.ndarray:
    small = np.abs(d) < 1e-4
    with np.errstate(over="ignore"):
        out = np.expm1(d) - d
    ds = d[small]
    out[small] = ds * ds * (0.5 + ds * (1 / 6 + ds / 24))
    return out


def k3(ratio) -> np.ndarray:
    """r - ln r - 1 for probability ratios r > 0."""
    r = np.asarray(ratio, dtype=np.float64)
    if np.any(~(r > 0)):
        raise ValueError("probability ratios must be positive")
    return _from_log_ratio(np.atleast_1d(np.log(r))).reshape(r.shape)


def per_token_kl(base_logp, ft_logp) -> np.ndarray:
    lb = np.asarray(base_logp, dtype=np.float64)
    lf = np.asarray(ft_logp, dtype=np.float64)
    if lb.shape != lf.shape:
        raise ValueError("base and fine-tuned scores must cover the same tokens")
    for which, arr in (("base", lb), ("fine-tuned", lf)):
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise ZeroProbabilityError(int(bad[0]), which)
    return _from_log_ratio(np.atleast_1d(lb - lf)).reshape(lb.shape)


@dataclass
class KlEstimate:
    per_response: list[float]
    mean: float
    tokens: int


def kl_estimate(base_scores, ft_scores) -> KlEstimate:
    """Mean over tokens within each response, then over responses.

    ``base_scores`` and ``ft_scores`` are sequences of per-token
    log-probability arrays, one per sampled response.
    """
    per, count = [], 0
    for lb, lf in zip(base_scores, ft_scores, strict=True):
        vals = per_token_kl(lb, lf)
        if vals.size:
            per.append(float(vals.mean()))
            count += vals.size
    mean = float(np.mean(per)) if per else 0.0
    return KlEstimate(per, mean, count)


def exact_kl(p, q) -> float:
    """KL(p || q) = sum p log(p / q) for categorical distributions."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = p > 0
    if np.any(q[m] <= 0):
        raise ValueError("q has zero mass where p does not")
    return float(np.sum(p[m] * (np.log(p[m]) - np.log(q[m]))))


def monte_carlo_kl(p_ft, p_base, samples: int, rng: np.random.Generator) -> float:
    """Sample tokens from ``p_ft`` and average the per-token estimate."""
    p_ft = np.asarray(p_ft, dtype=np.float64)
    p_base = np.asarray(p_base, dtype=np.float64)
    idx = rng.choice(p_ft.size, size=samples, p=p_ft)
    return float(per_token_kl(np.log(p_base[idx]), np.log(p_ft[idx])).mean())
