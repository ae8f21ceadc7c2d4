"""Seeded-noise evolution strategies over layered float32 parameters.

One iteration, for every seed in canonical order: perturb every layer in
place, score, restore every layer in place. Then z-normalise the rewards and
add ``(alpha / N) * z_n * eps_n`` seed by seed, layer by layer. Noise is never
stored; each pass regenerates it from the seed.

Restoration is not bit-exact in float32 (``(x + d) - d != x`` in general), so
the round trips are part of the trajectory: every process that holds the
parameters replays the full canonical sequence of round trips, including
seeds it did not evaluate. That keeps worker copies, the coordinator and a
later replay bitwise identical without shipping parameters.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from . import _kernels
from .noise import U64_MASK, check_counter, sample_seeds, stream_key
from .params import ParameterSet
from .runlog import IterationRecord, RunLog, RunLogWriter

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class NonFiniteParameterError(FloatingPointError):
    def __init__(self, layer: str, count: int, op: str):
        self.layer = layer
        super().__init__(f"{op} produced {count} non-finite value(s) in layer {layer!r}")


class ReplayError(ValueError):
    pass


@dataclass
class EsConfig:
    population_size: int = 30
    noise_scale: float = 0.001
    learning_rate: float = 5e-4   # 1/sigma already folded in
    iterations: int = 500
    workers: int = 1
    master_seed: int = 0

    def validate(self) -> "EsConfig":
        errors = []
        if not isinstance(self.population_size, int) or self.population_size < 2:
            errors.append("population_size: must be an integer >= 2 (z-scores need two rewards)")
        if not (isinstance(self.noise_scale, (int, float)) and self.noise_scale > 0
                and math.isfinite(self.noise_scale)):
            errors.append("noise_scale: must be a finite number > 0")
        if not (isinstance(self.learning_rate, (int, float)) and self.learning_rate > 0
                and math.isfinite(self.learning_rate)):
            errors.append("learning_rate: must be a finite number > 0")
        if not isinstance(self.iterations, int) or self.iterations < 1:
            errors.append("iterations: must be an integer >= 1")
        if not isinstance(self.workers, int) or self.workers < 1:
            errors.append("workers: must be an integer >= 1")
        if not isinstance(self.master_seed, int) or not 0 <= self.master_seed <= U64_MASK:
            errors.append("master_seed: must be an unsigned 64-bit integer")
        if errors:
            raise ConfigError(errors)
        return self

    @property
    def sigma32(self) -> np.float32:
        return np.float32(self.noise_scale)

    @property
    def alpha32(self) -> np.float32:
        return np.float32(self.learning_rate)

    def iteration_seeds(self, t: int) -> list[int]:
        return sample_seeds(self.population_size, self.master_seed,
                            start=(t - 1) * self.population_size)


def _layer_pass(params: ParameterSet, seed: int, coef: np.float32, kernel, op: str) -> None:
    key = np.uint64(stream_key(seed))
    check_counter(0, params.size)
    for (name, _), flat, start in zip(params, params.flat_views(), params.offsets()):
        bad = kernel(flat, key, np.uint64(start), coef)
        if bad:
            raise NonFiniteParameterError(name, bad, op)


def perturb_in_place(params: ParameterSet, seed: int, sigma) -> None:
    """params[l] += sigma * eps_l, with eps drawn contiguously from stream(seed)."""
    if not sigma >= 0:
        raise ValueError("sigma must be >= 0")
    _layer_pass(params, seed, np.float32(sigma), _kernels.add_scaled, "perturbation")


def restore_in_place(params: ParameterSet, seed: int, sigma) -> None:
    """params[l] -= sigma * eps_l with the identical regenerated eps."""
    if not sigma >= 0:
        raise ValueError("sigma must be >= 0")
    _layer_pass(params, seed, np.float32(sigma), _kernels.sub_scaled, "restoration")


def round_trip_in_place(params: ParameterSet, seed: int, sigma) -> None:
    """Perturb then restore without scoring; bitwise equal to the two calls."""
    _layer_pass(params, seed, np.float32(sigma), _kernels.round_trip, "round trip")


def shadow_pass(params: ParameterSet, seeds, sigma) -> None:
    for s in seeds:
        round_trip_in_place(params, s, sigma)


def z_normalize(rewards) -> np.ndarray:
    """(R - mean) / std with the population std; all zeros when std == 0."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ConfigError("z-normalisation needs at least two rewards")
    std = r.std()
    if std == 0.0:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def sanitize_rewards(rewards) -> tuple[np.ndarray, int]:
    """Replace non-finite rewards with the minimum finite one (0.0 if none)."""
    r = np.asarray(rewards, dtype=np.float32).copy()
    bad = ~np.isfinite(r)
    n_bad = int(bad.sum())
    if n_bad:
        finite = r[~bad]
        r[bad] = finite.min() if finite.size else np.float32(0.0)
    return r, n_bad


def update_coefficients(z_scores, alpha, n: int) -> list[np.float32]:
    a = float(np.float32(alpha))
    return [np.float32(a * float(np.float32(z)) / n) for z in z_scores]


_CHUNK = 1 << 12


def apply_update(params: ParameterSet, seeds, z_scores, alpha, *,
                 track_norm: bool = False) -> float | None:
    """theta += (alpha/N) sum_n z_n eps_n, one layer at a time, in place.

    For each layer the seed contributions c_n * eps_n are summed, in canonical
    seed order, into one float32 buffer sized to the largest layer, and the
    sum is added to the layer once. The buffer holds small values, so it
    rounds far below the parameters' ulp, and every parameter is rounded
    once per update instead of once per seed. With ``track_norm`` the L2
    norm of the summed update (float64) is returned.
    """
    if len(seeds) != len(z_scores):
        raise ValueError("seeds and z_scores must have the same length")
    n = len(seeds)
    coefs = update_coefficients(z_scores, alpha, n)
    active = [(np.uint64(stream_key(s)), c) for s, c in zip(seeds, coefs) if c != 0]
    if not active:
        return 0.0 if track_norm else None
    buf = np.empty(params.largest_layer_size, dtype=np.float32)
    sq = 0.0
    for (name, _), flat, start in zip(params, params.flat_views(), params.offsets()):
        acc = buf[:flat.size]
        acc.fill(0.0)
        for key, c in active:
            _kernels.add_scaled(acc, key, np.uint64(start), c)
        bad = 0
        for i in range(0, acc.size, _CHUNK):       # fixed-size temporaries only
            part = flat[i:i + _CHUNK]
            part += acc[i:i + _CHUNK]
            bad += part.size - int(np.count_nonzero(np.isfinite(part)))
            if track_norm:
                step = acc[i:i + _CHUNK].astype(np.float64)
                sq += float(step @ step)
        if bad:
            raise NonFiniteParameterError(name, bad, "update")
    return math.sqrt(sq) if track_norm else None


class Model(Protocol):
    params: ParameterSet


RewardFn = Callable[[Model], float]


class LocalEvaluator:
    """Single-process evaluation: the engine's own copy is perturbed and scored."""

    performs_pass = True

    def __init__(self, model: Model, reward_fn: RewardFn):
        self.model = model
        self.reward_fn = reward_fn

    def evaluate(self, iteration: int, seeds, sigma) -> np.ndarray:
        out = np.empty(len(seeds), dtype=np.float32)
        for i, s in enumerate(seeds):
            perturb_in_place(self.model.params, s, sigma)
            try:
                out[i] = np.float32(self.reward_fn(self.model))
            except Exception as exc:     # scored as non-finite, then replaced
                log.error("evaluation of seed %d failed: %s", s, exc)
                out[i] = np.nan
            finally:
                restore_in_place(self.model.params, s, sigma)
        return out

    def synchronize(self, iteration, alpha, sigma, seeds, z_scores, digest) -> None:
        pass

    def close(self) -> None:
        pass


METRIC_FIELDS = ["iteration", "reward_mean", "reward_max", "reward_min", "reward_std",
                 "update_norm", "replaced_rewards", "degenerate"]


@dataclass
class EsResult:
    params: ParameterSet
    log: RunLog
    metrics: list[dict] = field(default_factory=list)


def snapshot_path(run_dir, t: int) -> Path:
    return Path(run_dir) / "snapshots" / f"iter_{t:06d}.esp"


def run_es(config: EsConfig, model: Model, reward_fn: RewardFn | None = None, *,
           evaluator=None, run_dir=None, checkpoint_every: int = 100,
           meta: dict | None = None,
           on_iteration: Callable[[int, dict], None] | None = None) -> EsResult:
    """Run ``config.iterations`` ES iterations on ``model.params`` in place."""
    config.validate()
    params = model.params
    if evaluator is None:
        if reward_fn is None:
            raise ConfigError("reward_fn is required without an evaluator")
        evaluator = LocalEvaluator(model, reward_fn)
    sigma, alpha = config.sigma32, config.alpha32
    # execution details (worker count, output paths) stay out of the log so
    # that runs with different process counts produce identical files
    trajectory = {k: v for k, v in asdict(config).items() if k != "workers"}
    meta = {"config": trajectory, "layout": [[n, list(a.shape)] for n, a in params],
            **(meta or {})}
    runlog = RunLog(params.digest(), meta)
    writer = metrics_fh = metrics_writer = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        writer = RunLogWriter(runlog, run_dir / "runlog.jsonl")
        metrics_fh = open(run_dir / "metrics.csv", "w", newline="")
        metrics_writer = csv.DictWriter(metrics_fh, fieldnames=METRIC_FIELDS)
        metrics_writer.writeheader()
        params.save(snapshot_path(run_dir, 0))

    metrics = []
    try:
        for t in range(1, config.iterations + 1):
            started = time.perf_counter()
            seeds = config.iteration_seeds(t)
            raw = evaluator.evaluate(t, seeds, sigma)
            rewards, n_bad = sanitize_rewards(raw)
            if n_bad:
                log.warning("iteration %d: replaced %d non-finite reward(s)", t, n_bad)
            z = z_normalize(rewards).astype(np.float32)
            if not evaluator.performs_pass:
                shadow_pass(params, seeds, sigma)
            norm = apply_update(params, seeds, z, alpha, track_norm=True)
            params.version = t
            evaluator.synchronize(t, alpha, sigma, seeds, z, params.digest()
                                  if not evaluator.performs_pass else None)

            rec = IterationRecord(t, sigma, alpha, list(seeds), z, rewards)
            if writer is not None:
                writer.append(rec)
            else:
                runlog.records.append(rec)
            row = {
                "iteration": t,
                "reward_mean": float(rewards.astype(np.float64).mean()),
                "reward_max": float(rewards.max()),
                "reward_min": float(rewards.min()),
                "reward_std": float(rewards.astype(np.float64).std()),
                "update_norm": norm,
                "replaced_rewards": n_bad,
                "degenerate": int(not np.any(z)),
            }
            metrics.append(row)
            if metrics_writer is not None:
                metrics_writer.writerow(row)
                metrics_fh.flush()
                if checkpoint_every and t % checkpoint_every == 0:
                    params.save(snapshot_path(run_dir, t))
            log.debug("iteration %d: mean %.6g max %.6g |dtheta| %.3g (%.2fs)", t,
                      row["reward_mean"], row["reward_max"], norm, time.perf_counter() - started)
            if on_iteration is not None:
                on_iteration(t, row)
        final = params.digest()
        if writer is not None:
            writer.finish(final)
            params.save(Path(run_dir) / "snapshots" / "final.esp")
        else:
            runlog.final_digest = final
    finally:
        if writer is not None:
            writer.close()
        if metrics_fh is not None:
            metrics_fh.close()
    return EsResult(params, runlog, metrics)


def replay(runlog: RunLog, theta0: ParameterSet, upto: int | None = None) -> ParameterSet:
    """Rebuild theta_t from theta_0 and the logged seeds and z-scores.

    Returns a new ParameterSet; ``theta0`` is left untouched. With ``upto``
    set, stops after that many records (a checkpoint), otherwise the final
    digest is verified.
    """
    if theta0.digest() != runlog.initial_digest:
        raise ReplayError("initial parameters do not match the run log's initial digest")
    params = theta0.copy()
    records = runlog.records if upto is None else runlog.records[:upto]
    if upto is not None and upto > len(runlog.records):
        raise ReplayError(f"run log has only {len(runlog.records)} records")
    for rec in records:
        shadow_pass(params, rec.seeds, rec.sigma)
        apply_update(params, rec.seeds, rec.z_scores, rec.alpha)
        params.version = rec.iteration
    if upto is None and runlog.final_digest is not None and params.digest() != runlog.final_digest:
        raise ReplayError("replayed parameters do not match the run log's final digest")
    return params
