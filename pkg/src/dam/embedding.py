"""Shared four-block convolutional feature extractor.

Each block is conv3x3(64) -> batch norm -> ReLU -> max pool 2x2, so the
spatial side floor-halves four times and the channel count is always 64.
Batch statistics are computed over the whole episode batch (support and
query together) in both training and evaluation.
"""

from dataclasses import dataclass

import numpy as np

from .diffcore import ShapeError, Tensor, ops

N_BLOCKS = 4
N_FILTERS = 64


@dataclass
class ConvBlockParams:
    kernel: Tensor     # [3, 3, Cin, Cout]
    bn_scale: Tensor   # [Cout]
    bn_shift: Tensor   # [Cout]

    def named(self, prefix):
        return {f"{prefix}.kernel": self.kernel, f"{prefix}.bn_scale": self.bn_scale, f"{prefix}.bn_shift": self.bn_shift}


@dataclass
class EmbeddingParams:
    blocks: list[ConvBlockParams]

    def named(self, prefix="embed"):
        out = {}
        for i, blk in enumerate(self.blocks):
            out.update(blk.named(f"{prefix}.{i}"))
        return out


def init_conv_block(rng, cin, cout, dtype=np.float32):
    # fan-in scaled normal init for ReLU blocks
    std = np.sqrt(2.0 / (3 * 3 * cin))
    return ConvBlockParams(
        kernel=Tensor(rng.normal(0.0, std, size=(3, 3, cin, cout)).astype(dtype), requires_grad=True),
        bn_scale=Tensor(np.ones(cout, dtype=dtype), requires_grad=True),
        bn_shift=Tensor(np.zeros(cout, dtype=dtype), requires_grad=True),
    )


def init_embedding(rng, image_channels, dtype=np.float32):
    blocks = []
    cin = image_channels
    for _ in range(N_BLOCKS):
        blocks.append(init_conv_block(rng, cin, N_FILTERS, dtype=dtype))
        cin = N_FILTERS
    return EmbeddingParams(blocks=blocks)


def feature_side(image_side):
    side = image_side
    for _ in range(N_BLOCKS):
        side //= 2
    return side


def embed(images, params, training=True):
    """Map [B,H,W,Cimg] images to [B,h,w,64] features; requires H = W >= 16."""
    b, h, w, _ = images.shape
    if h != w:
        raise ShapeError(f"embedding expects square images, got {h}x{w}")
    if h < 16:
        raise ShapeError(f"embedding needs side >= 16 for four 2x2 pools, got {h}")
    x = images
    for blk in params.blocks:
        x = ops.conv2d(x, blk.kernel)
        x = ops.batch_norm(x, blk.bn_scale, blk.bn_shift)
        x = ops.relu(x)
        x = ops.maxpool2x2(x)
    return x
