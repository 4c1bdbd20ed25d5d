import numpy as np
import pytest

from pumacgl.condense import CondenseConfig
from pumacgl.fit import TrainConfig
from pumacgl.stream import SbmConfig, generate_sbm, split_stream


@pytest.fixture(scope="session")
def small_graph():
    return generate_sbm(SbmConfig(classes=4, nodes_per_class=30, feature_dim=8, intra_p=0.2, inter_p=0.02,
                                  class_mean_scale=0.2, noise_std=0.2, seed=3))


@pytest.fixture(scope="session")
def small_stream(small_graph):
    return split_stream(small_graph, 2, seed=3)


@pytest.fixture
def fast_train():
    return TrainConfig(hidden=(32, 32), epochs=150, lr=0.01, seed=0)


@pytest.fixture
def fast_condense():
    return CondenseConfig(encoder_dim=128, iters_per_encoder=60, feature_lr=0.01, seed=0)


def random_graph(rng, n, d=3, p=0.3):
    X = rng.normal(size=(n, d)).astype(np.float32)
    iu = np.triu_indices(n, 1)
    keep = rng.random(iu[0].size) < p
    return X, np.stack([iu[0][keep], iu[1][keep]], axis=1)
