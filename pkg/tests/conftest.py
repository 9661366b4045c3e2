import numpy as np
import pytest

from attrql.demo import acceptance_input, acceptance_mlp, blobs_dataset, random_mlp
from attrql.runtime import LayerSpec, ModelSpec, Tensor


@pytest.fixture(scope="session")
def identity_dense_model() -> ModelSpec:
    """Single dense layer with identity weights and zero bias, d=3."""
    return ModelSpec(
        name="identity3",
        input_shape=(3,),
        class_labels=("a", "b", "c"),
        layers=(LayerSpec("dense", np.eye(3), np.zeros(3)),),
        stage_boundaries=(0,),
    )


@pytest.fixture(scope="session")
def mlp_seed0() -> ModelSpec:
    """8 -> 4 -> 3 relu MLP from seed 0 (default weight scale)."""
    return random_mlp(0, in_dim=8, hidden=(4,), classes=3)


@pytest.fixture(scope="session")
def fixture_mlps() -> list[ModelSpec]:
    return [acceptance_mlp(seed) for seed in range(5)]


@pytest.fixture(scope="session")
def fixture_inputs() -> list[Tensor]:
    return [acceptance_input(seed) for seed in range(5)]


@pytest.fixture(scope="session")
def blobs6():
    """Separable 6-D blobs, two classes."""
    return blobs_dataset(
        seed=3,
        n_per_class=100,
        centers=((2.0,) * 6, (-2.0,) * 6),
        sigma=0.8,
    )
