"""Mean and sample standard deviation of reward and KL across repeated runs."""

from __future__ import annotations

import csv
import io
import statistics
from collections import defaultdict

COLUMNS = ["model", "beta", "alpha", "sigma", "reward_mean", "reward_std", "kl_mean",
           "kl_std", "runs"]


class ConsistencyError(ValueError):
    pass


def mean_std(values) -> tuple[float, float]:
    """Mean and sample std (n - 1 in the denominator)."""
    vals = [float(v) for v in values]
    if len(vals) < 2:
        raise ConsistencyError("standard deviation needs at least two runs")
    # statistics works in exact rationals, so identical runs give std 0 exactly
    return statistics.mean(vals), statistics.stdev(vals)


def run_consistency(points) -> list[dict]:
    """Group BehaviorPoints by configuration; one row per group in first-seen order.

    The configuration is (model, beta, alpha, sigma); ``beta`` is only set for
    KL-penalised baselines and stays empty for ES runs.
    """
    groups = defaultdict(list)
    for p in points:
        groups[(p.model, p.beta, p.alpha, p.sigma)].append(p)
    rows = []
    for (model, beta, alpha, sigma), pts in groups.items():
        if len(pts) < 2:
            raise ConsistencyError(f"configuration {model!r} has {len(pts)} run(s); need >= 2")
        rm, rs = mean_std(p.reward for p in pts)
        km, ks = mean_std(p.kl for p in pts)
        rows.append({"model": model, "beta": beta, "alpha": alpha, "sigma": sigma,
                     "reward_mean": rm, "reward_std": rs, "kl_mean": km, "kl_std": ks,
                     "runs": len(pts)})
    return rows


def to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r[k] is None else r[k]) for k in COLUMNS})
    return buf.getvalue()


def to_markdown(rows) -> str:
    lines = ["| model | beta | alpha | sigma | reward | KL | runs |",
             "|---|---|---|---|---|---|---|"]
    for r in rows:
        beta, alpha, sigma = ("" if r[k] is None else f"{r[k]:g}"
                              for k in ("beta", "alpha", "sigma"))
        lines.append(f"| {r['model']} | {beta} | {alpha} | {sigma} | "
                     f"{r['reward_mean']:.4f} ± {r['reward_std']:.4f} | "
                     f"{r['kl_mean']:.4f} ± {r['kl_std']:.4f} | {r['runs']} |")
    return "\n".join(lines) + "\n"
