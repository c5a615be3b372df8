from __future__ import annotations

import numpy as np
import pytest

from fedsim import LabeledExample, ModelSpec


def gaussian_batch(rng: np.random.Generator, spec: ModelSpec, n: int) -> list[LabeledExample]:
    """Random labeled batch matching a model spec."""
    return [
        LabeledExample(
            features=rng.standard_normal(spec.feature_dim),
            label=int(rng.integers(0, spec.class_count)),
            duration_s=float(rng.uniform(0.5, 3.0)),
        )
        for _ in range(n)
    ]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240613)
