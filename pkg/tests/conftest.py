import numpy as np
import pytest

from groundkit.synth import make_toy_resnet_bundle, make_toy_vit_bundle


@pytest.fixture(scope="session")
def vit_bundle():
    return make_toy_vit_bundle(seed=0)


@pytest.fixture(scope="session")
def vit_bundle_3layer():
    # 3 layers, width 32, 4x4 patch grid (32px image, 8px patches)
    return make_toy_vit_bundle(seed=1, layers=3)


@pytest.fixture(scope="session")
def resnet_bundle():
    return make_toy_resnet_bundle(seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
