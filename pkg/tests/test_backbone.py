import numpy as np
import pytest

from mlfpn.backbone import backbone_forward
from mlfpn.errors import ShapeError
from mlfpn.model import build_model

from helpers import small_config


@pytest.mark.parametrize("size, shallow, deep", [(320, 40, 20), (512, 64, 32)])
def test_tap_sizes(size, shallow, deep):
    cfg = small_config(input_size=size)
    s, d = backbone_forward(np.zeros((1, 3, size, size), np.float32), build_model(cfg))
    assert s.shape == (1, cfg.shallow_channels, shallow, shallow)
    assert d.shape == (1, cfg.deep_channels, deep, deep)


def test_zero_params_zero_output(rng):
    cfg = small_config()
    image = rng.uniform(-1, 1, (1, 3, 320, 320)).astype(np.float32)
    s, d = backbone_forward(image, build_model(cfg, zero=True))
    assert not s.any() and not d.any()


def test_wrong_image_shape():
    cfg = small_config()
    with pytest.raises(ShapeError):
        backbone_forward(np.zeros((1, 3, 256, 256), np.float32), build_model(cfg))


def test_batch_items_independent(rng, small_model):
    a = rng.uniform(-1, 1, (2, 3, 320, 320)).astype(np.float32)
    s2, d2 = backbone_forward(a, small_model)
    s1, d1 = backbone_forward(a[1:], small_model)
    np.testing.assert_array_equal(s2[1:], s1)
    np.testing.assert_array_equal(d2[1:], d1)
