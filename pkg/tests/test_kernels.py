"""Parity between the compiled and pure-numpy kernel backends."""

import numpy as np
import pytest

from dam.diffcore import kernels

try:
    cy = kernels.get_backend("cython")
except ImportError:
    cy = None
np_backend = kernels.get_backend("numpy")

needs_cython = pytest.mark.skipif(cy is None, reason="compiled backend unavailable")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "numpy")


@needs_cython
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape,kh,kw", [((2, 5, 5, 3), 3, 3), ((1, 4, 6, 2), 1, 3), ((3, 7, 7, 1), 5, 5)])
def test_im2col_parity(dtype, shape, kh, kw):
    rng = np.random.default_rng(0)
    x = np.ascontiguousarray(rng.standard_normal(shape).astype(dtype))
    np.testing.assert_array_equal(cy.im2col(x, kh, kw), np_backend.im2col(x, kh, kw))


@needs_cython
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", [(2, 4, 4, 3), (1, 5, 7, 2), (3, 2, 2, 1)])
def test_maxpool_parity(dtype, shape):
    rng = np.random.default_rng(1)
    x = np.ascontiguousarray(rng.standard_normal(shape).astype(dtype))
    yc, ac = cy.maxpool2x2_forward(x)
    yn, an = np_backend.maxpool2x2_forward(x)
    np.testing.assert_array_equal(yc, yn)
    np.testing.assert_array_equal(ac, an)
    g = np.ascontiguousarray(rng.standard_normal(yc.shape).astype(dtype))
    np.testing.assert_array_equal(
        cy.maxpool2x2_backward(g, ac, shape[1], shape[2]),
        np_backend.maxpool2x2_backward(g, an, shape[1], shape[2]),
    )


@needs_cython
def test_maxpool_tie_break_parity():
    # all-equal windows: both backends must route the gradient to the same corner
    x = np.ones((1, 4, 4, 2), dtype=np.float32)
    _, ac = cy.maxpool2x2_forward(x)
    _, an = np_backend.maxpool2x2_forward(x)
    np.testing.assert_array_equal(ac, an)


def test_im2col_values():
    # hand case: 1x3x3x1 input, 3x3 patch at the center is the whole image
    x = np.arange(9, dtype=np.float32).reshape(1, 3, 3, 1)
    cols = np_backend.im2col(np.ascontiguousarray(x), 3, 3)
    assert cols.shape == (9, 9)
    np.testing.assert_array_equal(cols[4], np.arange(9, dtype=np.float32))  # center patch
    assert cols[0, 0] == 0.0  # zero padding at the top-left corner


def test_maxpool_forward_values():
    x = np.asarray([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32).reshape(1, 2, 2, 1)
    y, arg = np_backend.maxpool2x2_forward(np.ascontiguousarray(x))
    assert y.ravel()[0] == 4.0
    g = np.ones_like(y)
    gx = np_backend.maxpool2x2_backward(np.ascontiguousarray(g), arg, 2, 2)
    np.testing.assert_array_equal(gx.ravel(), [0, 0, 0, 1])
