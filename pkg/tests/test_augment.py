import numpy as np
import pytest

from memseg.augment import AugmentConfig, augment, rotation_matrix
from memseg.errors import ConfigError
from memseg.volume_io import LabelMask, Volume, VolumeBundle


@pytest.fixture
def bundle(rng):
    data = rng.normal(size=(10, 12, 14))
    labels = rng.integers(0, 5, size=(10, 12, 14))
    return VolumeBundle(Volume(data, (1.0, 0.5, 0.5)), LabelMask(labels, (1.0, 0.5, 0.5)))


def test_disabled_is_identity(bundle):
    out = augment(bundle, AugmentConfig.disabled(), 3)
    assert np.array_equal(out.image.data, bundle.image.data)
    assert np.array_equal(out.mask.labels, bundle.mask.labels)


def test_flip_involution(bundle):
    cfg = AugmentConfig(p_flip_z=1.0, p_rotate=0.0, p_noise=0.0, p_bias=0.0, p_elastic=0.0)
    once = augment(bundle, cfg, 0)
    assert np.array_equal(once.image.data, bundle.image.data[::-1])
    assert np.array_equal(once.mask.labels, bundle.mask.labels[::-1])
    twice = augment(once, cfg, 0)
    assert np.array_equal(twice.image.data, bundle.image.data)


def test_determinism(bundle):
    cfg = AugmentConfig(seed=11)
    a, b = augment(bundle, cfg, 4), augment(bundle, cfg, 4)
    assert np.array_equal(a.image.data, b.image.data)
    assert np.array_equal(a.mask.labels, b.mask.labels)
    always = AugmentConfig(p_flip_z=0, p_rotate=1, p_noise=1, p_bias=1, p_elastic=1, seed=11)
    assert not np.array_equal(augment(bundle, always, 4).image.data, augment(bundle, always, 5).image.data)


def test_rotation_is_orthonormal():
    r = rotation_matrix(12.0, -7.0, 5.0)
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(r), 1.0)


def test_rotation_keeps_centred_ball():
    n = 21
    z, y, x = np.mgrid[:n, :n, :n] - (n - 1) / 2
    ball = (z**2 + y**2 + x**2 <= 36).astype(np.int64)
    b = VolumeBundle(Volume(ball.astype(float)), LabelMask(ball))
    cfg = AugmentConfig(p_flip_z=0, p_rotate=1, p_noise=0, p_bias=0, p_elastic=0, max_deg_xy=15, max_deg_xz_yz=9)
    for k in range(5):
        out = augment(b, cfg, k).mask.labels.astype(bool)
        r2 = z**2 + y**2 + x**2
        assert out[r2 <= 25].all()
        assert not out[r2 >= 49].any()


def test_labels_stay_valid(bundle):
    out = augment(bundle, AugmentConfig(p_rotate=1, p_elastic=1), 2)
    assert set(np.unique(out.mask.labels)) <= set(range(5))
    assert out.image.dims == bundle.image.dims


def test_bad_probability():
    with pytest.raises(ConfigError):
        AugmentConfig(p_rotate=1.5)
