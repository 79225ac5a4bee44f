"""Four-block convolutional feature extractor."""

import numpy as np
import pytest

from dam.diffcore import ShapeError, Tape, ops
from dam.embedding import embed, feature_side, init_embedding


def test_feature_side_arithmetic():
    assert feature_side(84) == 5  # 84 -> 42 -> 21 -> 10 -> 5
    assert feature_side(32) == 2
    assert feature_side(16) == 1


@pytest.mark.parametrize("side,expect", [(32, 2), (16, 1)])
def test_embed_output_shape(side, expect):
    rng = np.random.default_rng(0)
    params = init_embedding(rng, 3)
    from dam.diffcore import Tensor

    x = Tensor(rng.standard_normal((4, side, side, 3)).astype(np.float32))
    y = embed(x, params)
    assert y.shape == (4, expect, expect, 64)


def test_embed_rejects_small_or_rectangular():
    rng = np.random.default_rng(1)
    params = init_embedding(rng, 1)
    from dam.diffcore import Tensor

    with pytest.raises(ShapeError, match="side >= 16"):
        embed(Tensor(np.zeros((2, 8, 8, 1), dtype=np.float32)), params)
    with pytest.raises(ShapeError, match="square"):
        embed(Tensor(np.zeros((2, 16, 20, 1), dtype=np.float32)), params)


def test_identical_images_get_identical_features():
    rng = np.random.default_rng(2)
    params = init_embedding(rng, 3)
    from dam.diffcore import Tensor

    img = rng.standard_normal((16, 16, 3)).astype(np.float32)
    batch = Tensor(np.stack([img, img, rng.standard_normal((16, 16, 3)).astype(np.float32)]))
    y = embed(batch, params).data
    np.testing.assert_array_equal(y[0], y[1])
    assert np.abs(y[0] - y[2]).max() > 0


def test_init_embedding_structure():
    a = init_embedding(np.random.default_rng(3), 3)
    b = init_embedding(np.random.default_rng(4), 3)
    assert len(a.blocks) == 4
    assert a.blocks[0].kernel.shape == (3, 3, 3, 64)
    for blk in a.blocks[1:]:
        assert blk.kernel.shape == (3, 3, 64, 64)
    for blk in a.blocks:
        np.testing.assert_array_equal(blk.bn_scale.data, 1.0)
        np.testing.assert_array_equal(blk.bn_shift.data, 0.0)
    assert np.abs(a.blocks[0].kernel.data - b.blocks[0].kernel.data).max() > 0


def test_feature_std_sane_at_init():
    rng = np.random.default_rng(5)
    params = init_embedding(rng, 3)
    from dam.diffcore import Tensor

    x = Tensor(rng.standard_normal((8, 32, 32, 3)).astype(np.float32))
    y = embed(x, params).data
    std = y.std()
    assert 0.1 < std < 10.0


def test_every_block_parameter_gets_gradient():
    rng = np.random.default_rng(6)
    params = init_embedding(rng, 3)
    from dam.diffcore import Tensor

    x = Tensor(rng.standard_normal((4, 16, 16, 3)).astype(np.float32))
    with Tape() as tape:
        y = embed(x, params)
        tape.backward(ops.sum_(ops.square(y)))
    for name, p in params.named("embed").items():
        assert p.grad is not None and np.abs(p.grad).max() > 0, name
