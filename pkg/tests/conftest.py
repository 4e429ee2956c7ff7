import numpy as np
import pytest

from iciseg import BinaryMask, Shape, Volume
from iciseg.synth import Xoshiro256StarStar


def random_mask(shape: Shape, p: float, seed: int) -> BinaryMask:
    rng = np.random.default_rng(seed)
    return BinaryMask(shape, (rng.random(shape.num_voxels) < p).astype(np.uint8))


def random_prediction(shape: Shape, seed: int, tau: float = 0.5,
                      margin: float = 1e-3) -> Volume:
    """Soft prediction in (0.01, 0.99) with every voxel at least ``margin``
    away from tau, so finite-difference steps never flip the threshold."""
    rng = Xoshiro256StarStar(seed)
    vals = np.empty(shape.num_voxels)
    for i in range(vals.size):
        u = 0.01 + 0.98 * rng.uniform()
        if abs(u - tau) <= margin:
            u = tau + margin * (1.5 if u >= tau else -1.5)
        vals[i] = u
    return Volume(shape, vals)


@pytest.fixture
def shape8():
    return Shape((8, 8, 8))
