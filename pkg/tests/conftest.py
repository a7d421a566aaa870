import numpy as np
import pytest

from rainreplay.imaging import Image
from rainreplay.synthdata import DatasetSpec, RainParams


def rain_params(angle=90.0, angle_std=4.0, density=24.0, intensity=0.55,
                width=1.2, length=12.0):
    return RainParams(angle_mean=angle, angle_std=angle_std,
                      length_mean=length, length_std=3.0, width=width,
                      density=density, intensity_mean=intensity,
                      intensity_std=0.1)


def dataset_spec(ds_id, seed, angle=90.0, pairs=8, size=32, **kw):
    return DatasetSpec(id=ds_id, pair_count=pairs, image_size=size, seed=seed,
                       rain=rain_params(angle=angle, **kw))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, h=16, w=16, c=3):
    return Image(rng.uniform(0.0, 1.0, (h, w, c)))
