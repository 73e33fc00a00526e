import numpy as np
import pytest

import oracles as O
from geoseg import morph
from geoseg import _morph_py

BACKENDS = list(morph.backends())


@pytest.mark.parametrize("angle", [0, 45, 90, 135])
@pytest.mark.parametrize("length", [1, 2, 5, 12])
def test_line_offsets_match_oracle(angle, length):
    got = sorted(map(tuple, morph.line_offsets(length, angle).tolist()))
    assert got == sorted(O.line_pixels(length, angle))


@pytest.mark.parametrize("backend", BACKENDS)
def test_erosion_matches_oracle(backend):
    rng = np.random.default_rng(0)
    for _ in range(10):
        img = rng.random(tuple(rng.integers(3, 15, 2)))
        for ang in (0, 45, 90, 135):
            want = O.erode(O.to_lists(img), O.line_pixels(7, ang))
            np.testing.assert_array_equal(morph.erode_line(img, 7, ang, backend), want)


@pytest.mark.parametrize("backend", BACKENDS)
def test_reconstruction_matches_threshold_oracle(backend):
    rng = np.random.default_rng(1)
    for _ in range(20):
        shape = tuple(rng.integers(2, 18, 2))
        mask = rng.integers(0, 6, shape).astype(float)
        marker = mask - rng.integers(0, 4, shape)
        want = O.reconstruct(O.to_lists(marker), O.to_lists(mask))
        np.testing.assert_array_equal(morph.reconstruct_by_dilation(marker, mask, backend), want)


def test_backends_agree_on_real_values():
    if "cython" not in morph.backends():
        pytest.skip("compiled backend not built")
    rng = np.random.default_rng(2)
    for _ in range(20):
        img = rng.random((40, 33))
        a = morph.opening_by_reconstruction(img, 9, 45, "cython")
        b = morph.opening_by_reconstruction(img, 9, 45, "python")
        np.testing.assert_array_equal(a, b)


def test_dilation_is_dual_of_erosion():
    img = np.random.default_rng(3).random((9, 11))
    off = morph.line_offsets(5, 135)
    np.testing.assert_array_equal(_morph_py.dilate_offsets(img, off), -_morph_py.erode_offsets(-img, -off))


def test_opening_is_anti_extensive_and_idempotent():
    img = np.random.default_rng(4).random((20, 20))
    o = morph.opening_by_reconstruction(img, 6, 0)
    assert (o <= img + 1e-15).all()
    np.testing.assert_array_equal(morph.opening_by_reconstruction(o, 6, 0), o)


def test_read_only_inputs_accepted():
    img = np.random.default_rng(5).random((10, 10))
    img.flags.writeable = False
    for b in BACKENDS:
        morph.opening_by_reconstruction(img, 3, 90, b)


def test_shape_mismatch():
    for b in BACKENDS:
        with pytest.raises(ValueError):
            morph.reconstruct_by_dilation(np.zeros((3, 3)), np.zeros((3, 4)), b)
