import numpy as np
import pytest

from aniso_restore.grid_ops import GridOperator, ParameterError, apply_gradient, make_kernel
from aniso_restore.synthesis import (
    IMAGE_KINDS,
    add_gaussian_noise,
    add_salt_pepper,
    degrade,
    make_test_image,
)

FLAT = np.full((256, 256), 0.5)


def test_salt_pepper_levels():
    np.testing.assert_array_equal(add_salt_pepper(FLAT, 0.0, 1), FLAT)
    assert set(np.unique(add_salt_pepper(FLAT, 1.0, 1))) <= {0.0, 1.0}
    hit = add_salt_pepper(FLAT, 0.3, 2) != 0.5
    assert abs(hit.mean() - 0.3) <= 0.01
    # salt and pepper come in roughly equal amounts
    out = add_salt_pepper(FLAT, 0.3, 2)
    assert abs((out == 1).sum() / hit.sum() - 0.5) < 0.02


def test_gaussian_noise_statistics():
    d = add_gaussian_noise(FLAT, 1e-4, 3) - FLAT
    assert abs(d.var() / 1e-4 - 1) < 0.05
    assert abs(d.mean()) < 3 * 1e-2 / 256
    tiny = add_gaussian_noise(FLAT, 1e-30, 3)
    assert np.max(np.abs(tiny - FLAT)) <= 1e-12


def test_noise_is_seeded():
    a = add_salt_pepper(FLAT, 0.2, 9)
    np.testing.assert_array_equal(a, add_salt_pepper(FLAT, 0.2, 9))
    assert not np.array_equal(a, add_salt_pepper(FLAT, 0.2, 10))
    np.testing.assert_array_equal(add_gaussian_noise(FLAT, 1e-3, 4), add_gaussian_noise(FLAT, 1e-3, 4))


@pytest.mark.parametrize("bad", [-0.1, 1.5])
def test_salt_pepper_level_range(bad):
    with pytest.raises(ParameterError):
        add_salt_pepper(FLAT, bad, 0)


def test_gaussian_variance_positive():
    with pytest.raises(ParameterError):
        add_gaussian_noise(FLAT, 0.0, 0)


@pytest.mark.parametrize("kind,levels", [("squares", 2), ("twocircles", 3),
                                         ("phantom-like", 6), ("geometry-like", 5)])
def test_test_images(kind, levels):
    img = make_test_image(kind, (64, 64))
    assert img.shape == (64, 64)
    assert img.min() >= 0 and img.max() <= 1
    assert np.unique(img).size == levels
    assert np.count_nonzero(apply_gradient(img)) < 0.1 * 2 * img.size
    np.testing.assert_array_equal(img, make_test_image(kind, (64, 64)))


def test_images_scale_with_dims():
    for kind in IMAGE_KINDS:
        assert make_test_image(kind, (48, 80)).shape == (48, 80)


def test_image_errors():
    with pytest.raises(ParameterError):
        make_test_image("lena")
    with pytest.raises(ParameterError):
        make_test_image("squares", (8, 8))


def test_degrade():
    x = make_test_image("squares", (32, 32))
    op = GridOperator(make_kernel("average", size=5), (32, 32))
    np.testing.assert_allclose(degrade(x, op, "none"), op.apply(x))
    b = degrade(x, op, "salt_pepper", 0.3, 7)
    np.testing.assert_array_equal(b, degrade(x, op, "salt_pepper", 0.3, 7))
    assert b.min() >= 0 and b.max() <= 1
    g = degrade(x, op, "gaussian", 1e-6, 7)
    assert np.max(np.abs(g - op.apply(x))) < 1e-2
    with pytest.raises(ParameterError):
        degrade(x, op, "poisson")
