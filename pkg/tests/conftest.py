import numpy as np
import pytest

from gantransfer.model import ModelSpec
from gantransfer.params import ParameterSet, ROLE_FEATURE, ROLE_HEAD


def make_params(feature: dict, head: dict) -> ParameterSet:
    tensors = {}
    roles = {}
    for name, value in feature.items():
        tensors[name] = np.asarray(value, dtype=np.float64)
        roles[name] = ROLE_FEATURE
    for name, value in head.items():
        tensors[name] = np.asarray(value, dtype=np.float64)
        roles[name] = ROLE_HEAD
    return ParameterSet(tensors, roles)


def random_params(rng: np.random.Generator, n_feature: int = 3, n_head: int = 2,
                  scale: float = 1.0) -> ParameterSet:
    feature = {
        f"f{i}": scale * rng.standard_normal(rng.integers(1, 5, size=2))
        for i in range(n_feature)
    }
    head = {
        f"head.h{i}": scale * rng.standard_normal(rng.integers(1, 4))
        for i in range(n_head)
    }
    return make_params(feature, head)


@pytest.fixture
def toy_spec() -> ModelSpec:
    return ModelSpec(
        input_shape=(3, 16, 16),
        stage_widths=(8, 8),
        blocks_per_stage=(1, 1),
        gn_groups=4,
    )
