import numpy as np
import pytest

from spdnn.arch import ConvSpec, NetworkSpec
from spdnn.engine import kernels
from spdnn.nets import load_all


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    """Run the test once per available convolution backend."""
    previous = kernels.active_backend()
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


@pytest.fixture(scope="session")
def shipped_nets():
    return load_all()


def random_conv_chain(rng, name, depth=None, input_size=16, out_channels=1,
                      max_width=6, kernels_allowed=(1, 3, 5), with_pool=False):
    """Random all-conv chain ending in a sigmoid layer of ``out_channels``."""
    if depth is None:
        depth = int(rng.integers(2, 6))
    layers = []
    for i in range(depth - 1):
        layers.append(ConvSpec(
            kernel=int(rng.choice(kernels_allowed)),
            out_channels=int(rng.integers(1, max_width + 1)),
            batch_norm=bool(rng.integers(0, 2)),
            activation="relu",
        ))
    if with_pool and depth > 2 and rng.integers(0, 2):
        from spdnn.arch import PoolSpec

        layers[int(rng.integers(0, len(layers)))] = PoolSpec(window=2)
    layers.append(ConvSpec(
        kernel=int(rng.choice(kernels_allowed)),
        out_channels=out_channels,
        activation="sigmoid",
    ))
    return NetworkSpec(name=name, input_shape=(input_size, input_size, 1), layers=tuple(layers))
