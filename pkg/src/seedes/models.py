"""Synthetic objectives exposing the layered-parameter interface."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .noise import NoiseStream, gaussian_fill
from .params import ParameterSet


def _layer_sizes(dim: int, layers: int) -> list[int]:
    if dim < 1 or layers < 1 or layers > dim:
        raise ValueError("need dim >= layers >= 1")
    base, extra = divmod(dim, layers)
    return [base + (1 if i < extra else 0) for i in range(layers)]


def random_params(dim: int, layers: int, seed: int, scale: float = 1.0,
                  prefix: str = "layer") -> ParameterSet:
    """Deterministic Gaussian parameters drawn from the noise stream of ``seed``."""
    stream = NoiseStream(seed)
    out = []
    for i, n in enumerate(_layer_sizes(dim, layers)):
        arr = gaussian_fill(stream, n)
        if scale != 1.0:
            arr *= np.float32(scale)
        out.append((f"{prefix}{i}", arr))
    return ParameterSet(out)


def sphere_objective(params: ParameterSet, target: ParameterSet) -> float:
    """-sum((theta - theta*)^2), accumulated in float64."""
    if params.names != target.names or params.shapes != target.shapes:
        raise ValueError("parameter and target layouts differ")
    total = 0.0
    for (_, a), (_, b) in zip(params, target):
        d = a.astype(np.float64).reshape(-1) - b.reshape(-1)
        total += float(np.dot(d, d))
    return -total


@dataclass
class SphereModel:
    """theta to be driven onto a fixed target; reward is the sphere objective."""

    params: ParameterSet
    target: ParameterSet

    @classmethod
    def create(cls, dim: int, layers: int = 4, init_seed: int = 1,
               target_seed: int = 2) -> "SphereModel":
        theta = random_params(dim, layers, init_seed)
        target = random_params(dim, layers, target_seed)
        return cls(theta, target)

    def evaluate(self) -> float:
        return sphere_objective(self.params, self.target)

    def clone(self) -> "SphereModel":
        return SphereModel(self.params.copy(), self.target)


def sphere_reward(model: SphereModel) -> float:
    return model.evaluate()
