from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from seedes.params import ParameterSet

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def root() -> Path:
    return ROOT


def make_params(sizes, seed=0, scale=1.0) -> ParameterSet:
    rng = np.random.default_rng(seed)
    return ParameterSet([(f"l{i}", (rng.standard_normal(n) * scale).astype(np.float32))
                         for i, n in enumerate(sizes)])
