"""Pure-numpy implementations of the hot inner kernels.

Used as the fallback when the compiled extension is unavailable (or when
``DAM_KERNELS=numpy`` forces it). Semantics must match ``_cykernels`` exactly,
including argmax tie-breaking in max pooling (first window element wins, in
row-major (di, dj) order).
"""

import numpy as np

NAME = "numpy"


def im2col(x, kh, kw):
    """Extract same-padded kh x kw patches of x[B,H,W,C].

    Returns a [B*H*W, kh*kw*C] array; column order is (di, dj, c) row-major,
    matching a [kh, kw, C, ...] kernel flattened over its first three axes.
    """
    b, h, w, c = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # win: [B, H, W, C, kh, kw] -> [B, H, W, kh, kw, C]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(b * h * w, kh * kw * c)
    return np.ascontiguousarray(cols)


def maxpool2x2_forward(x):
    """2x2/stride-2 max pool of x[B,H,W,C] with floor division on odd sizes.

    Returns (out[B,H2,W2,C], argmax[B,H2,W2,C] int8 in 0..3) where argmax
    encodes the winning in-window offset as 2*di + dj.
    """
    b, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    win = x[:, : 2 * h2, : 2 * w2, :].reshape(b, h2, 2, w2, 2, c)
    win = win.transpose(0, 1, 3, 5, 2, 4).reshape(b, h2, w2, c, 4)
    arg = win.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(win, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool2x2_backward(g, arg, h, w):
    """Scatter pooled gradients g[B,H2,W2,C] back to the [B,H,W,C] input."""
    b, h2, w2, c = g.shape
    scatter = np.zeros((b, h2, w2, c, 4), dtype=g.dtype)
    np.put_along_axis(scatter, arg[..., None].astype(np.intp), g[..., None], axis=-1)
    gx = np.zeros((b, h, w, c), dtype=g.dtype)
    gx[:, : 2 * h2, : 2 * w2, :] = (
        scatter.reshape(b, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(b, 2 * h2, 2 * w2, c)
    )
    return gx
