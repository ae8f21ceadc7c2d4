"""Sampled evaluation of a fine-tuned model against its base: mean reward and KL.

Training decodes greedily; evaluation samples (temperature 1.0 by default)
from a seeded generator so that several responses per prompt differ.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from ..tasks.conciseness import conciseness_reward, normalized_conciseness
from ..tinylm import decode, encode, format_prompt
from .kl import kl_estimate

log = logging.getLogger(__name__)


@dataclass
class BehaviorPoint:
    model: str
    reward: float
    kl: float
    normalized_reward: float | None = None
    responses: int = 0
    skipped: int = 0
    sigma: float | None = None
    alpha: float | None = None
    beta: float | None = None
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def evaluate_behavior(model, base, pairs, samples_per_prompt: int = 20, *,
                      temperature: float = 1.0, seed: int = 0, max_new: int = 32,
                      name: str = "model", **labels) -> BehaviorPoint:
    if samples_per_prompt < 1:
        raise ValueError("samples_per_prompt must be >= 1")
    rng = np.random.default_rng(seed)
    rewards, norm, base_scores, ft_scores = [], [], [], []
    skipped = 0
    for pair in pairs:
        prompt = encode(format_prompt(pair.prompt))
        kw = {"temperature": temperature, "rng": rng} if temperature > 0 else {}
        outs = model.generate([prompt] * samples_per_prompt, max_new, **kw)
        for toks in outs:
            text = decode(toks)
            try:
                lf = model.score(prompt, toks)
                lb = base.score(prompt, toks)
                if not (np.all(np.isfinite(lf)) and np.all(np.isfinite(lb))):
                    raise FloatingPointError("non-finite log-probability")
            except (ValueError, FloatingPointError) as exc:
                skipped += 1
                log.warning("skipping response %r: %s", text, exc)
                continue
            rewards.append(conciseness_reward(text, pair.solution))
            norm.append(normalized_conciseness(text, pair.solution))
            ft_scores.append(lf)
            base_scores.append(lb)
    if not rewards:
        raise RuntimeError("every sampled response failed to score")
    kl = kl_estimate(base_scores, ft_scores)
    return BehaviorPoint(name, float(np.mean(rewards)), kl.mean, float(np.mean(norm)),
                         len(rewards), skipped, seed=seed, **labels)


def greedy_reward(model, pairs, max_new: int = 32) -> float:
    """Mean conciseness reward of greedy replies (the training-time decode)."""
    out = model.respond([p.prompt for p in pairs], max_new)
    return float(np.mean([conciseness_reward(y, p.solution) for y, p in zip(out, pairs)]))
