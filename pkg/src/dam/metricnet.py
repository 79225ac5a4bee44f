"""The generated three-layer attentive metric: attention -> conv -> FC score.

Scoring concatenates a support and a query feature along channels, scales it
elementwise by (attention + 1) for the support sample's class, convolves with
the generated 3x3 kernel, and maps the ReLU-ed result to a scalar similarity
through the generated FC row. Score matrices are query-rows by support-columns
in class-major, shot-minor column order.
"""

import numpy as np

from .diffcore import ShapeError, Tensor, ops


def score_pair(support_feat, query_feat, class_index, weights):
    """Similarity score of one (support, query) feature pair as a 0-d Tensor."""
    if support_feat.shape != query_feat.shape:
        raise ShapeError(f"feature shapes differ: {support_feat.shape} vs {query_feat.shape}")
    f = ops.concat([support_feat, query_feat], axis=2)
    if weights.attention is not None:
        n_way = weights.attention.shape[0]
        if not 0 <= class_index < n_way:
            raise ShapeError(f"class_index {class_index} out of range for {n_way} attentions")
        att = ops.reshape(
            ops.index_select(weights.attention, np.asarray([class_index])), f.shape
        )
        f = ops.mul(f, ops.add(att, Tensor(np.asarray(1.0, dtype=f.dtype))))
    hidden = ops.relu(ops.conv2d(f, weights.conv_kernel))
    flat = ops.reshape(hidden, (1, int(np.prod(hidden.shape))))
    s = ops.linear(flat, weights.fc_weight, weights.fc_bias)
    return ops.reshape(s, ())


def score_episode(support_features, query_features, n, k, weights):
    """Score every query against every support sample in one batched pass.

    support_features: Tensor [N*K, h, w, C] class-major; query_features:
    Tensor [J, h, w, C]. Returns Tensor [J, N*K].
    """
    n_cols = n * k
    if support_features.shape[0] != n_cols:
        raise ShapeError(f"expected {n_cols} support features, got {support_features.shape[0]}")
    j = query_features.shape[0]
    col_idx = np.tile(np.arange(n_cols, dtype=np.intp), j)
    row_idx = np.repeat(np.arange(j, dtype=np.intp), n_cols)
    f_s = ops.index_select(support_features, col_idx)
    f_q = ops.index_select(query_features, row_idx)
    f = ops.concat([f_s, f_q], axis=3)
    if weights.attention is not None:
        att = ops.index_select(weights.attention, col_idx // k)
        f = ops.mul(f, ops.add(att, Tensor(np.asarray(1.0, dtype=f.dtype))))
    hidden = ops.relu(ops.conv2d(f, weights.conv_kernel))
    flat = ops.reshape(hidden, (j * n_cols, int(np.prod(hidden.shape[1:]))))
    s = ops.linear(flat, weights.fc_weight, weights.fc_bias)
    return ops.reshape(s, (j, n_cols))


def predict(scores, support_onehot):
    """Soft label estimate: per query, softmax over all N*K scores, then
    label-weighted sum. Returns a [J, N] numpy probability matrix."""
    s = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    y = support_onehot.data if isinstance(support_onehot, Tensor) else np.asarray(support_onehot)
    if s.ndim != 2 or y.ndim != 2 or s.shape[1] != y.shape[0]:
        raise ShapeError(f"scores {s.shape} do not align with support labels {y.shape}")
    z = s.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p @ y


def support_onehot(n, k):
    """One-hot label matrix [N*K, N] in class-major column order."""
    return np.eye(n)[np.repeat(np.arange(n), k)]


# --- matching-net ablation -------------------------------------------------------


def embed_transform(features, weights):
    """Apply the generated three-layer embedding transform to [B,h,w,C] features."""
    f = ops.mul(features, ops.add(weights.attention, Tensor(np.asarray(1.0, dtype=features.dtype))))
    hidden = ops.relu(ops.conv2d(f, weights.conv_kernel))
    b = features.shape[0]
    flat = ops.reshape(hidden, (b, int(np.prod(hidden.shape[1:]))))
    return ops.linear(flat, weights.fc_weight, weights.fc_bias)


def cosine_score_matrix(support_emb, query_emb):
    """Pairwise cosine similarities: Tensor [J, N*K]."""
    eps = Tensor(np.asarray(1e-8, dtype=query_emb.dtype))
    dots = ops.matmul(query_emb, ops.transpose2d(support_emb))
    nq = ops.sqrt(ops.sum_(ops.square(query_emb), axis=1, keepdims=True))
    ns = ops.sqrt(ops.sum_(ops.square(support_emb), axis=1, keepdims=True))
    return ops.div(dots, ops.add(ops.mul(nq, ops.transpose2d(ns)), eps))
