"""Meta-learner: cross-class pairs -> per-class latent Gaussians -> weights.

The discrepancy encoder maps channel-concatenated cross-class support pairs
to latent vectors; per-class mean and Bessel-corrected std of those vectors
define one Gaussian per class (the multi-modal weight distribution). A
reparameterized sample per class is decoded by three single-layer generators
into the attentive metric network: per-class sigmoid attentions, a 3x3 conv
kernel with unit-L2 output filters, and a unit-L2 FC row plus bias.

Ablation variants rewire the latent construction or the generated network;
see `latent_distribution` and `generate_weights`.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .diffcore import Tensor, ops
from .embedding import ConvBlockParams, init_conv_block

VARIANTS = ("full", "no_pairs", "no_variance", "no_multimodal", "matching_net", "no_attention")
DEFAULT_DZ = 64
METRIC_CONV_FILTERS = 64
ENCODER_FILTERS = 64
_NORM_GUARD = 1e-8


class MetaGenError(ValueError):
    pass


@dataclass
class MetaGenConfig:
    n_way: int
    k_shot: int
    feat_h: int
    feat_w: int
    feat_channels: int = 64
    dz: int = DEFAULT_DZ
    variant: str = "full"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise MetaGenError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.dz != ENCODER_FILTERS and self.variant != "no_variance":
            # the encoder's global average pool fixes the latent width; only the
            # explicit (mu, sigma) heads of no_variance can remap it
            raise MetaGenError(f"dz must equal {ENCODER_FILTERS} for variant {self.variant!r}, got {self.dz}")

    @property
    def pair_channels(self):
        return 2 * self.feat_channels

    @property
    def joint_dim(self):
        return self.n_way * self.dz

    @property
    def pairs_per_class(self):
        return self.k_shot * self.k_shot * (self.n_way - 1)

    @property
    def flat_feature_dim(self):
        return self.feat_h * self.feat_w * METRIC_CONV_FILTERS


@dataclass
class Affine:
    weight: Tensor  # [Dout, Din]
    bias: Tensor    # [Dout]

    def named(self, prefix):
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


@dataclass
class MetaLearnerParams:
    encoder_blocks: list[ConvBlockParams]
    gen_conv: Affine
    gen_fc: Affine
    gen_attention: Affine = None       # absent under no_attention
    enc_mu_head: Affine = None         # no_variance only
    enc_sigma_head: Affine = None      # no_variance only

    def named(self, prefix="meta"):
        out = {}
        for i, blk in enumerate(self.encoder_blocks):
            out.update(blk.named(f"{prefix}.enc.{i}"))
        out.update(self.gen_conv.named(f"{prefix}.gen_conv"))
        out.update(self.gen_fc.named(f"{prefix}.gen_fc"))
        if self.gen_attention is not None:
            out.update(self.gen_attention.named(f"{prefix}.gen_attention"))
        if self.enc_mu_head is not None:
            out.update(self.enc_mu_head.named(f"{prefix}.enc_mu_head"))
            out.update(self.enc_sigma_head.named(f"{prefix}.enc_sigma_head"))
        return out


@dataclass
class CrossClassPairs:
    features: Tensor           # [N*M, h, w, 2*Cfeat], channel order (anchor, other)
    anchor_class: np.ndarray   # [N*M]
    anchor_shot: np.ndarray
    other_class: np.ndarray
    other_shot: np.ndarray

    @property
    def count(self):
        return self.features.shape[0]


@dataclass
class LatentClassStats:
    mu: Tensor      # [N, dz] (or [1, dz] for the pooled uni-modal variant)
    sigma: Tensor   # same shape, elementwise >= 0


@dataclass
class LatentSample:
    per_class: Tensor   # [N, dz]
    joint: Tensor       # [N * dz], concatenation in class order


@dataclass
class GeneratedMetricWeights:
    attention: Tensor   # [N, h, w, 2*Cfeat] in [0,1]; None under no_attention
    conv_kernel: Tensor  # [3, 3, 2*Cfeat, 64], unit-L2 per output filter
    fc_weight: Tensor    # [1, h*w*64], unit L2
    fc_bias: Tensor      # [1]


@dataclass
class GeneratedEmbeddingWeights:
    """Three-layer embedding transform for the matching-net ablation."""

    attention: Tensor    # [h, w, Cfeat]
    conv_kernel: Tensor  # [3, 3, Cfeat, 64], unit-L2 per output filter
    fc_weight: Tensor    # [64, h*w*64], unit-L2 rows
    fc_bias: Tensor      # [64]


def _init_affine(rng, dout, din, dtype=np.float32):
    std = 1.0 / np.sqrt(din)
    return Affine(
        weight=Tensor(rng.normal(0.0, std, size=(dout, din)).astype(dtype), requires_grad=True),
        bias=Tensor(np.zeros(dout, dtype=dtype), requires_grad=True),
    )


def init_metagen(rng, cfg, dtype=np.float32):
    enc_in = cfg.feat_channels if cfg.variant == "no_pairs" else cfg.pair_channels
    blocks = []
    cin = enc_in
    for _ in range(3):
        blocks.append(init_conv_block(rng, cin, ENCODER_FILTERS, dtype=dtype))
        cin = ENCODER_FILTERS
    h, w = cfg.feat_h, cfg.feat_w
    if cfg.variant == "matching_net":
        c = cfg.feat_channels
        gen_attention = _init_affine(rng, h * w * c, cfg.joint_dim, dtype)
        gen_conv = _init_affine(rng, 3 * 3 * c * METRIC_CONV_FILTERS, cfg.joint_dim, dtype)
        gen_fc = _init_affine(rng, 64 * cfg.flat_feature_dim + 64, cfg.joint_dim, dtype)
    else:
        gen_attention = None
        if cfg.variant != "no_attention":
            gen_attention = _init_affine(rng, h * w * cfg.pair_channels, cfg.dz, dtype)
        gen_conv = _init_affine(rng, 3 * 3 * cfg.pair_channels * METRIC_CONV_FILTERS, cfg.joint_dim, dtype)
        gen_fc = _init_affine(rng, cfg.flat_feature_dim + 1, cfg.joint_dim, dtype)
    params = MetaLearnerParams(encoder_blocks=blocks, gen_conv=gen_conv, gen_fc=gen_fc, gen_attention=gen_attention)
    if cfg.variant == "no_variance":
        params.enc_mu_head = _init_affine(rng, cfg.dz, ENCODER_FILTERS, dtype)
        params.enc_sigma_head = _init_affine(rng, cfg.dz, ENCODER_FILTERS, dtype)
    return params


# --- cross-class pairs ---------------------------------------------------------


def pair_index_arrays(n, k):
    """Enumerate (anchor_class, anchor_shot, other_class, other_shot) tuples.

    Order: anchor class major, then anchor shot, then other class, then other
    shot; exactly K^2(N-1) tuples per anchor class.
    """
    if n < 2:
        raise MetaGenError(f"cross-class pairs need at least 2 classes, got {n}")
    tuples = [
        (cn, ck, d, dl)
        for cn in range(n)
        for ck in range(k)
        for d in range(n)
        if d != cn
        for dl in range(k)
    ]
    arr = np.asarray(tuples, dtype=np.intp)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]


def build_pairs(support_features, n, k):
    """Channel-concat every class-n support feature with every other-class one.

    support_features: Tensor [N*K, h, w, C] in class-major, shot-minor order.
    """
    an, ak, on, ok = pair_index_arrays(n, k)
    anchors = ops.index_select(support_features, an * k + ak)
    others = ops.index_select(support_features, on * k + ok)
    feats = ops.concat([anchors, others], axis=3)
    return CrossClassPairs(features=feats, anchor_class=an, anchor_shot=ak, other_class=on, other_shot=ok)


# --- discrepancy encoder --------------------------------------------------------


def encode(features, params):
    """Encode [P,h,w,C] inputs to [P, 64] vectors.

    Three conv/BN/ReLU blocks; 2x2 max pools after the first two blocks are
    skipped once the spatial side reaches 1; global average pool at the end.
    """
    x = features
    for i, blk in enumerate(params.encoder_blocks):
        x = ops.conv2d(x, blk.kernel)
        x = ops.batch_norm(x, blk.bn_scale, blk.bn_shift)
        x = ops.relu(x)
        if i < 2 and x.shape[1] >= 2 and x.shape[2] >= 2:
            x = ops.maxpool2x2(x)
    return ops.global_avg_pool(x)


def stats_from_encodings(encodings, n_groups, per_group):
    """Per-group mean and Bessel-corrected std of [n_groups*per_group, dz] rows."""
    dz = encodings.shape[1]
    e = ops.reshape(encodings, (n_groups, per_group, dz))
    mu = ops.mean(e, axis=1)
    if per_group < 2:
        warnings.warn(
            f"only {per_group} encoding(s) per group: standard deviation is undefined, using 0",
            stacklevel=2,
        )
        sigma = Tensor(np.zeros((n_groups, dz), dtype=encodings.dtype))
    else:
        centered = ops.sub(e, ops.reshape(mu, (n_groups, 1, dz)))
        var = ops.mul(ops.sum_(ops.square(centered), axis=1), Tensor(np.asarray(1.0 / (per_group - 1), dtype=encodings.dtype)))
        sigma = ops.sqrt(var)
    return LatentClassStats(mu=mu, sigma=sigma)


def class_stats(pairs, params, n_way):
    """Encode cross-class pairs and reduce them to per-class latent Gaussians."""
    per_class = pairs.count // n_way
    encodings = encode(pairs.features, params)
    return stats_from_encodings(encodings, n_way, per_class)


def latent_distribution(support_features, params, cfg):
    """Variant-dispatched latent Gaussian construction from support features."""
    n, k = cfg.n_way, cfg.k_shot
    if cfg.variant == "no_pairs":
        encodings = encode(support_features, params)
        return stats_from_encodings(encodings, n, k)
    pairs = build_pairs(support_features, n, k)
    if cfg.variant == "no_variance":
        # the encoder's pooled 64-vector feeds explicit (mu, sigma) heads
        trunk = encode(pairs.features, params)
        mu_heads = ops.linear(trunk, params.enc_mu_head.weight, params.enc_mu_head.bias)
        sigma_heads = ops.softplus(
            ops.linear(trunk, params.enc_sigma_head.weight, params.enc_sigma_head.bias)
        )
        m = cfg.pairs_per_class
        mu = ops.mean(ops.reshape(mu_heads, (n, m, cfg.dz)), axis=1)
        sigma = ops.mean(ops.reshape(sigma_heads, (n, m, cfg.dz)), axis=1)
        return LatentClassStats(mu=mu, sigma=sigma)
    if cfg.variant == "no_multimodal":
        encodings = encode(pairs.features, params)
        return stats_from_encodings(encodings, 1, pairs.count)
    return class_stats(pairs, params, n)


# --- latent sampling -------------------------------------------------------------


def sample_latent(stats, rng, deterministic=False, n_way=None):
    """Reparameterized draw d = mu + eps * sigma, one fresh eps row per class.

    With `deterministic`, eps is forced to zero. When stats holds a single
    pooled Gaussian (uni-modal ablation) the draw is tiled to `n_way` rows.
    """
    rows, dz = stats.mu.shape
    if deterministic:
        d = ops.add(stats.mu, ops.mul(Tensor(np.zeros((rows, dz), dtype=stats.mu.dtype)), stats.sigma))
    else:
        eps = Tensor(rng.standard_normal((rows, dz)).astype(stats.mu.dtype))
        d = ops.add(stats.mu, ops.mul(eps, stats.sigma))
    if n_way is not None and rows == 1 and n_way != 1:
        d = ops.index_select(d, np.zeros(n_way, dtype=np.intp))
        rows = n_way
    joint = ops.reshape(d, (rows * dz,))
    return LatentSample(per_class=d, joint=joint)


# --- weight generation ------------------------------------------------------------


def _unit_l2(theta, axes):
    sumsq = ops.sum_(ops.square(theta), axis=axes, keepdims=True)
    norm = ops.sqrt(sumsq)
    if float(norm.data.min()) < 1e-6:
        warnings.warn("near-zero generated weight norm; division guarded by 1e-8", stacklevel=2)
    return ops.div(theta, ops.add(norm, Tensor(np.asarray(_NORM_GUARD, dtype=theta.dtype))))


def generate_weights(latent, params, cfg):
    """Decode a latent sample into the task-specific attentive metric network."""
    h, w, pc = cfg.feat_h, cfg.feat_w, cfg.pair_channels
    if cfg.variant == "matching_net":
        return _generate_embedding_weights(latent, params, cfg)
    attention = None
    if params.gen_attention is not None:
        att_flat = ops.linear(latent.per_class, params.gen_attention.weight, params.gen_attention.bias)
        attention = ops.reshape(ops.sigmoid(att_flat), (cfg.n_way, h, w, pc))
    theta = ops.linear(latent.joint, params.gen_conv.weight, params.gen_conv.bias)
    conv_kernel = _unit_l2(ops.reshape(theta, (3, 3, pc, METRIC_CONV_FILTERS)), axes=(0, 1, 2))
    fc_all = ops.linear(latent.joint, params.gen_fc.weight, params.gen_fc.bias)
    d_flat = cfg.flat_feature_dim
    fc_weight = _unit_l2(ops.reshape(ops.narrow(fc_all, 0, 0, d_flat), (1, d_flat)), axes=(0, 1))
    fc_bias = ops.narrow(fc_all, 0, d_flat, 1)
    return GeneratedMetricWeights(attention=attention, conv_kernel=conv_kernel, fc_weight=fc_weight, fc_bias=fc_bias)


def _generate_embedding_weights(latent, params, cfg):
    h, w, c = cfg.feat_h, cfg.feat_w, cfg.feat_channels
    att_flat = ops.linear(latent.joint, params.gen_attention.weight, params.gen_attention.bias)
    attention = ops.reshape(ops.sigmoid(att_flat), (h, w, c))
    theta = ops.linear(latent.joint, params.gen_conv.weight, params.gen_conv.bias)
    conv_kernel = _unit_l2(ops.reshape(theta, (3, 3, c, METRIC_CONV_FILTERS)), axes=(0, 1, 2))
    fc_all = ops.linear(latent.joint, params.gen_fc.weight, params.gen_fc.bias)
    d_flat = cfg.flat_feature_dim
    fc_weight = _unit_l2(ops.reshape(ops.narrow(fc_all, 0, 0, 64 * d_flat), (64, d_flat)), axes=(1,))
    fc_bias = ops.narrow(fc_all, 0, 64 * d_flat, 64)
    return GeneratedEmbeddingWeights(attention=attention, conv_kernel=conv_kernel, fc_weight=fc_weight, fc_bias=fc_bias)


def generate_for_episode(support_features, params, cfg, rng, deterministic=False):
    """Full metagen pipeline: support features -> (weights, stats, latent)."""
    stats = latent_distribution(support_features, params, cfg)
    latent = sample_latent(stats, rng, deterministic=deterministic, n_way=cfg.n_way)
    weights = generate_weights(latent, params, cfg)
    return weights, stats, latent


# --- weight dumping (visualization data) --------------------------------------------


def dump_generation_rows(weights, stats, task_id, sample_id):
    """CSV rows (task_id, sample_id, tensor_name, values) for one generation."""
    rows = []
    if getattr(weights, "attention", None) is not None:
        rows.append((task_id, sample_id, "attention", weights.attention.data.ravel()))
    rows.append((task_id, sample_id, "conv_kernel", weights.conv_kernel.data.ravel()))
    fc = np.concatenate([weights.fc_weight.data.ravel(), weights.fc_bias.data.ravel()])
    rows.append((task_id, sample_id, "fc", fc))
    for n_cls in range(stats.mu.shape[0]):
        rows.append((task_id, sample_id, f"mu_class{n_cls}", stats.mu.data[n_cls]))
        rows.append((task_id, sample_id, f"sigma_class{n_cls}", stats.sigma.data[n_cls]))
    return rows
