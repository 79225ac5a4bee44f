"""Differentiable primitives.

Every op builds its output eagerly, then registers a backward closure on the
active tape. Reductions accumulate in float64 regardless of storage dtype.
Convolution is same-padded stride-1 cross-correlation in channel-last layout,
lowered to im2col + GEMM; its input-gradient is expressed as another
same-padded correlation with the spatially flipped, in/out-swapped kernel.
"""

import numpy as np

from . import kernels
from .tensor import ShapeError, Tensor, active_tape

_EPS_BN = 1e-5


def _make(data, inputs, backward):
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    tape = active_tape()
    if requires and tape is not None:
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _expand(g, shape, axis, keepdims):
    """Reshape a reduced gradient so it broadcasts back over `shape`."""
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    if not keepdims:
        for a in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


# --- elementwise arithmetic ------------------------------------------------


def add(a, b):
    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward)


def div(a, b):
    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _make(a.data / b.data, (a, b), backward)


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def exp(a):
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def square(a):
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def sqrt(a):
    y = np.sqrt(a.data)

    def backward(g):
        # derivative at exactly zero is defined as zero (used by the
        # degenerate all-identical-encodings case, where sigma == 0).
        return (np.where(y > 0, 0.5 * g / np.where(y > 0, y, 1.0), 0.0),)

    return _make(y, (a,), backward)


# --- activations ------------------------------------------------------------


def relu(a):
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a):
    # stable in both tails
    y = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))), np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    y = y.astype(a.dtype)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def softplus(a):
    # stable: max(x, 0) + log1p(exp(-|x|))
    y = (np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))).astype(a.dtype)
    s = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))), np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data)))).astype(a.dtype)
    return _make(y, (a,), lambda g: (g * s,))


def activation(a, kind):
    if kind == "relu":
        return relu(a)
    if kind == "sigmoid":
        return sigmoid(a)
    raise ValueError(f"unknown activation kind {kind!r}")


# --- shape manipulation ------------------------------------------------------


def reshape(a, shape):
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis):
    sizes = [t.shape[axis] for t in tensors]
    offs = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, range(offs[i], offs[i + 1]), axis=axis) for i in range(len(tensors)))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def narrow(a, axis, start, length):
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def backward(g):
        gz = np.zeros(a.shape, dtype=g.dtype)
        gz[index] = g
        return (gz,)

    return _make(np.ascontiguousarray(a.data[index]), (a,), backward)


def index_select(a, idx):
    """Gather rows along axis 0; duplicate indices accumulate in backward."""
    idx = np.asarray(idx, dtype=np.intp)

    def backward(g):
        gz = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(gz, idx, g)
        return (gz,)

    return _make(a.data[idx], (a,), backward)


# --- reductions --------------------------------------------------------------


def sum_(a, axis=None, keepdims=False):
    y = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)
    return _make(y, (a,), lambda g: (_expand(g, a.shape, axis, keepdims).astype(a.dtype),))


def mean(a, axis=None, keepdims=False):
    y = a.data.mean(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)
    count = a.data.size // y.size

    def backward(g):
        return (_expand(g, a.shape, axis, keepdims).astype(a.dtype) / count,)

    return _make(y, (a,), backward)


def logsumexp(a, axis):
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp((a.data - m).astype(np.float64))
    s = e.sum(axis=axis, keepdims=True)
    y = (m + np.log(s)).squeeze(axis=axis).astype(a.dtype)
    p = (e / s).astype(a.dtype)

    def backward(g):
        return (np.expand_dims(g, axis) * p,)

    return _make(y, (a,), backward)


def softmax(a, axis):
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp((a.data - m).astype(np.float64))
    p = (e / e.sum(axis=axis, keepdims=True)).astype(a.dtype)

    def backward(g):
        inner = (g * p).sum(axis=axis, keepdims=True, dtype=np.float64).astype(a.dtype)
        return (p * (g - inner),)

    return _make(p, (a,), backward)


# --- linear algebra -----------------------------------------------------------


def transpose2d(a):
    if a.data.ndim != 2:
        raise ShapeError(f"transpose2d expects a 2-D tensor, got {a.shape}")
    return _make(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), backward)


def linear(x, weight, bias):
    """weight[Dout,Din] @ x + bias for 1-D x, or x @ weight.T + bias for 2-D x."""
    if weight.data.ndim != 2:
        raise ShapeError(f"linear weight must be 2-D, got {weight.shape}")
    din = weight.shape[1]
    if x.shape[-1] != din:
        raise ShapeError(f"linear input dim {x.shape[-1]} does not match weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear bias shape {bias.shape} does not match weight {weight.shape}")
    if x.data.ndim == 1:
        def backward(g):
            return weight.data.T @ g, np.outer(g, x.data), g

        return _make(weight.data @ x.data + bias.data, (x, weight, bias), backward)
    if x.data.ndim == 2:
        def backward(g):
            return g @ weight.data, g.T @ x.data, g.sum(axis=0, dtype=np.float64).astype(bias.dtype)

        return _make(x.data @ weight.data.T + bias.data, (x, weight, bias), backward)
    raise ShapeError(f"linear input must be 1-D or 2-D, got {x.shape}")


# --- network primitives --------------------------------------------------------


def conv2d(x, kernel):
    """Same-padded stride-1 cross-correlation, channel-last.

    x: [B,H,W,Cin] (or unbatched [H,W,Cin]); kernel: [kh,kw,Cin,Cout].
    """
    unbatched = x.data.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d input must be [B,H,W,C] or [H,W,C], got {x.shape}")
    if kernel.data.ndim != 4:
        raise ShapeError(f"conv2d kernel must be [kh,kw,Cin,Cout], got {kernel.shape}")
    kh, kw, cin, cout = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel sides must be odd, got {kh}x{kw}")
    if xd.shape[3] != cin:
        raise ShapeError(f"conv2d channel mismatch: input has {xd.shape[3]} channels, kernel expects {cin}")
    b, h, w, _ = xd.shape
    cols = kernels.im2col(np.ascontiguousarray(xd), kh, kw)
    y = (cols @ kernel.data.reshape(kh * kw * cin, cout)).reshape(b, h, w, cout)

    def backward(g):
        g4 = g[None] if unbatched else g
        gflat = g4.reshape(b * h * w, cout)
        gk = (cols.T @ gflat).reshape(kh, kw, cin, cout)
        if not x.requires_grad:  # e.g. the raw image batch; skip the second im2col
            return None, gk
        # input gradient: correlate g with the flipped, in/out-swapped kernel
        kf = kernel.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(kh * kw * cout, cin)
        gcols = kernels.im2col(np.ascontiguousarray(g4), kh, kw)
        gx = (gcols @ kf).reshape(b, h, w, cin)
        return (gx[0] if unbatched else gx), gk

    return _make(y[0] if unbatched else y, (x, kernel), backward)


def maxpool2x2(x):
    unbatched = x.data.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4:
        raise ShapeError(f"maxpool2x2 input must be [B,H,W,C] or [H,W,C], got {x.shape}")
    b, h, w, c = xd.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool2x2 needs spatial sides >= 2, got {h}x{w}")
    y, arg = kernels.maxpool2x2_forward(np.ascontiguousarray(xd))

    def backward(g):
        g4 = g[None] if unbatched else g
        gx = kernels.maxpool2x2_backward(np.ascontiguousarray(g4), arg, h, w)
        return (gx[0] if unbatched else gx,)

    return _make(y[0] if unbatched else y, (x,), backward)


def global_avg_pool(x):
    unbatched = x.data.ndim == 3
    xd = x.data[None] if unbatched else x.data
    b, h, w, c = xd.shape
    y = xd.mean(axis=(1, 2), dtype=np.float64).astype(x.dtype)

    def backward(g):
        g2 = g[None] if unbatched else g
        gx = np.broadcast_to(g2[:, None, None, :] / (h * w), xd.shape).astype(x.dtype)
        return (gx[0] if unbatched else gx,)

    return _make(y[0] if unbatched else y, (x,), backward)


def pool(x, kind):
    if kind == "max2x2":
        return maxpool2x2(x)
    if kind == "global_avg":
        return global_avg_pool(x)
    raise ValueError(f"unknown pool kind {kind!r}")


def batch_norm(x, scale, shift, eps=_EPS_BN):
    """Per-channel standardization with current-batch statistics (NHWC)."""
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm input must be [B,H,W,C], got {x.shape}")
    b, h, w, c = x.shape
    if b < 2:
        raise ShapeError(f"batch_norm requires batch size >= 2, got {b} (variance undefined)")
    if scale.shape != (c,) or shift.shape != (c,):
        raise ShapeError(f"batch_norm scale/shift must be [{c}], got {scale.shape}/{shift.shape}")
    m = b * h * w
    mu = x.data.mean(axis=(0, 1, 2), dtype=np.float64).astype(x.dtype)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(0, 1, 2), dtype=np.float64)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = xc * inv
    y = xhat * scale.data + shift.data

    def backward(g):
        dxhat = g * scale.data
        sum_dxhat = dxhat.sum(axis=(0, 1, 2), dtype=np.float64).astype(x.dtype)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 1, 2), dtype=np.float64).astype(x.dtype)
        gx = (inv / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        gscale = (g * xhat).sum(axis=(0, 1, 2), dtype=np.float64).astype(scale.dtype)
        gshift = g.sum(axis=(0, 1, 2), dtype=np.float64).astype(shift.dtype)
        return gx.astype(x.dtype), gscale, gshift

    return _make(y, (x, scale, shift), backward)


def softmax_cross_entropy(logits, target):
    """-log softmax(logits)[target] for a 1-D logit vector and one-hot target."""
    if logits.data.ndim != 1 or logits.shape[0] < 2:
        raise ShapeError(f"softmax_cross_entropy expects 1-D logits with C >= 2, got {logits.shape}")
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if t.shape != logits.shape or not np.all(np.isin(t, (0, 1))) or int(t.sum()) != 1:
        raise ValueError(f"target must be one-hot of shape {logits.shape}")
    z = logits.data.astype(np.float64)
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    loss = -(np.log(p) * t).sum()

    def backward(g):
        return ((p - t).astype(logits.dtype) * g,)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), backward)
