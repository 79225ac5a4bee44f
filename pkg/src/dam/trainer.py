"""Episodic end-to-end training of the embedding and the meta-learner.

Per batch, per-task losses are computed on independent tapes and summed
(gradients accumulate across the batch), then one Adam step updates every
trainable tensor. The learning rate decays by a fixed factor every two
epochs; the retained checkpoint is the one with the best validation accuracy.
"""

import csv
import os
import time
from dataclasses import dataclass, fields

import numpy as np

from . import checkpoint as ckpt
from .data import augment_rotate, sample_episode
from .diffcore import Tape, Tensor, ops
from .embedding import embed, feature_side, init_embedding
from .metagen import (
    VARIANTS,
    MetaGenConfig,
    generate_for_episode,
    init_metagen,
)
from .metricnet import (
    cosine_score_matrix,
    embed_transform,
    predict,
    score_episode,
    support_onehot,
)


class ConfigError(ValueError):
    pass


class NumericError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    n: int = 5
    k: int = 1
    q: int = 15
    epochs: int = 120
    tasks_per_epoch: int = 1000
    batch_tasks: int = 4
    lr: float = 1e-3
    lr_decay: float = 0.8
    lr_decay_every: int = 2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 10.0  # global-norm guard; 0 disables
    seed: int = 0
    variant: str = "full"
    dz: int = 64
    val_episodes: int = 100
    dataset: str = "synthetic"  # "synthetic" or a directory path
    synthetic_classes: int = 30
    synthetic_per_class: int = 20
    synthetic_side: int = 32
    out_dir: str = ""

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    def lr_at_epoch(self, epoch):
        return self.lr * self.lr_decay ** (epoch // self.lr_decay_every)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, mapping):
        kwargs = {}
        for f in fields(cls):
            if f.name in mapping:
                raw = mapping[f.name]
                kwargs[f.name] = f.type(raw) if not isinstance(raw, f.type) else raw
        unknown = set(mapping) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**kwargs)


@dataclass
class DamModel:
    embedding: "EmbeddingParams"
    meta: "MetaLearnerParams"
    gen_cfg: MetaGenConfig
    image_side: int
    image_channels: int
    channel_mean: np.ndarray = None
    channel_std: np.ndarray = None

    def named_params(self):
        out = self.embedding.named("embed")
        out.update(self.meta.named("meta"))
        return out

    def zero_grads(self):
        for p in self.named_params().values():
            p.zero_grad()


def build_model(config, image_side, image_channels, rng):
    side = feature_side(image_side)
    gen_cfg = MetaGenConfig(
        n_way=config.n,
        k_shot=config.k,
        feat_h=side,
        feat_w=side,
        dz=config.dz,
        variant=config.variant,
    )
    return DamModel(
        embedding=init_embedding(rng, image_channels),
        meta=init_metagen(rng, gen_cfg),
        gen_cfg=gen_cfg,
        image_side=image_side,
        image_channels=image_channels,
    )


# --- episode forward pass ----------------------------------------------------


def prepare_episode_batch(episode, model, training, aug_rng):
    """Stack support then query images, augment (training only), standardize."""
    imgs = np.concatenate([episode.support_images, episode.query_images])
    if training:
        imgs = np.stack([augment_rotate(im, aug_rng) for im in imgs])
    imgs = (imgs - model.channel_mean) / model.channel_std
    return Tensor(np.ascontiguousarray(imgs, dtype=np.float32))


def episode_scores(batch, episode, model, rng, deterministic):
    """Embed the whole episode in one batch-norm batch and score all queries."""
    n, k = episode.n, episode.k
    feats = embed(batch, model.embedding)
    n_sup = n * k
    sup = ops.narrow(feats, 0, 0, n_sup)
    que = ops.narrow(feats, 0, n_sup, feats.shape[0] - n_sup)
    weights, stats, latent = generate_for_episode(sup, model.meta, model.gen_cfg, rng, deterministic=deterministic)
    if model.gen_cfg.variant == "matching_net":
        sup_emb = embed_transform(sup, weights)
        que_emb = embed_transform(que, weights)
        scores = cosine_score_matrix(sup_emb, que_emb)
    else:
        scores = score_episode(sup, que, n, k, weights)
    return scores, weights, stats


def episode_cross_entropy(scores, query_classes, n, k):
    """Mean -log(yhat[target]) over queries, via the log-sum-exp identity."""
    class_of_col = np.repeat(np.arange(n), k)
    mask = np.where(class_of_col[None, :] == np.asarray(query_classes)[:, None], 0.0, -1e9)
    lse_all = ops.logsumexp(scores, axis=1)
    lse_target = ops.logsumexp(ops.add(scores, Tensor(mask.astype(scores.dtype))), axis=1)
    return ops.mean(ops.sub(lse_all, lse_target))


def episode_loss(episode, model, rng, training=True, aug_rng=None):
    """Mean query cross-entropy of one episode; differentiable end to end."""
    batch = prepare_episode_batch(
        episode, model, training, aug_rng if aug_rng is not None else np.random.default_rng(0)
    )
    scores, _, _ = episode_scores(batch, episode, model, rng, deterministic=not training)
    loss = episode_cross_entropy(scores, episode.query_classes, episode.n, episode.k)
    if not np.isfinite(loss.data):
        raise NumericError(
            "non-finite episode loss; score stats: "
            f"min={np.nanmin(scores.data):.4g} max={np.nanmax(scores.data):.4g} "
            f"mean={np.nanmean(scores.data):.4g}"
        )
    return loss


def episode_accuracy(episode, model, rng=None, ensemble=1):
    """Fraction of queries classified correctly (argmax of the soft labels).

    ensemble > 1 averages similarity scores over that many stochastic weight
    generations; otherwise generation is deterministic (eps = 0).
    """
    batch = prepare_episode_batch(episode, model, False, None)
    if ensemble > 1:
        acc_scores = None
        for _ in range(ensemble):
            s, _, _ = episode_scores(batch, episode, model, rng, deterministic=False)
            acc_scores = s.data if acc_scores is None else acc_scores + s.data
        scores = acc_scores / ensemble
    else:
        s, _, _ = episode_scores(batch, episode, model, rng, deterministic=True)
        scores = s.data
    yhat = predict(scores, support_onehot(episode.n, episode.k))
    return float(np.mean(yhat.argmax(axis=1) == episode.query_classes))


# --- optimizer ------------------------------------------------------------------


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction = np.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            np.multiply(g, g, out=g)       # grads are consumed here; reuse as scratch
            g *= 1 - b2
            v += g
            np.sqrt(v, out=g)
            g += self.eps
            np.divide(m, g, out=g)
            g *= lr * correction
            p.data -= g


def clip_global_norm(params, max_norm):
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            flat = p.grad.ravel()
            total += float(np.dot(flat, flat))
    norm = np.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = np.float32(max_norm / norm)
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


# --- training loop ----------------------------------------------------------------


def train(config, dataset, progress=None):
    """Run episodic training; returns (best model, history rows, best ckpt path)."""
    if not dataset.classes_in_split("train") or not dataset.classes_in_split("val"):
        raise ConfigError("dataset must provide non-empty train and val splits")
    ss = np.random.SeedSequence(config.seed)
    init_rng, task_rng, eps_rng, aug_rng = (np.random.default_rng(s) for s in ss.spawn(4))
    model = build_model(config, dataset.side, dataset.channels, init_rng)
    model.channel_mean = dataset.channel_mean
    model.channel_std = dataset.channel_std
    params = model.named_params()
    optimizer = Adam(params, config.adam_beta1, config.adam_beta2, config.adam_eps)

    out_dir = config.out_dir
    log_writer = log_file = None
    best_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        best_path = os.path.join(out_dir, "best.ckpt")
        log_file = open(os.path.join(out_dir, "train_log.csv"), "w", newline="")
        log_writer = csv.writer(log_file)
        log_writer.writerow(["epoch", "train_loss", "val_acc", "lr", "wall_seconds"])

    history = []
    best = {"val_acc": -1.0, "state": None, "epoch": -1}
    n_batches = max(config.tasks_per_epoch // config.batch_tasks, 1)
    try:
        for epoch in range(config.epochs):
            t0 = time.time()
            lr = config.lr_at_epoch(epoch)
            losses = []
            for _ in range(n_batches):
                model.zero_grads()
                for _ in range(config.batch_tasks):
                    episode = sample_episode(dataset, config.n, config.k, config.q, task_rng, split="train")
                    with Tape() as tape:
                        loss = episode_loss(episode, model, eps_rng, training=True, aug_rng=aug_rng)
                        tape.backward(loss)
                    losses.append(loss.item())
                clip_global_norm(params, config.grad_clip)
                optimizer.step(lr)
            val_acc = _validation_accuracy(model, dataset, config, epoch)
            row = {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "val_acc": val_acc,
                "lr": lr,
                "wall_seconds": time.time() - t0,
            }
            history.append(row)
            if log_writer:
                log_writer.writerow([row["epoch"], row["train_loss"], row["val_acc"], row["lr"], f"{row['wall_seconds']:.2f}"])
                log_file.flush()
            if progress:
                progress(row)
            if val_acc > best["val_acc"]:
                best.update(val_acc=val_acc, epoch=epoch, state={k: v.data.copy() for k, v in params.items()})
                if best_path:
                    save_model_checkpoint(best_path, model, config, optimizer, epoch, val_acc)
    finally:
        if log_file:
            log_file.close()

    if best["state"] is not None:
        for name, p in params.items():
            p.data = best["state"][name]
    return model, history, best_path


def _validation_accuracy(model, dataset, config, epoch):
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 7919, epoch)))
    accs = [
        episode_accuracy(sample_episode(dataset, config.n, config.k, config.q, rng, split="val"), model)
        for _ in range(config.val_episodes)
    ]
    return float(np.mean(accs)) if accs else 0.0


# --- checkpointing -----------------------------------------------------------------


def save_model_checkpoint(path, model, config, optimizer=None, epoch=0, best_val_acc=0.0):
    cfg = {str(k): str(v) for k, v in config.to_dict().items()}
    cfg["image_side"] = str(model.image_side)
    cfg["image_channels"] = str(model.image_channels)
    cfg["epoch"] = str(epoch)
    cfg["best_val_acc"] = repr(float(best_val_acc))
    tensors = {name: p.data for name, p in model.named_params().items()}
    tensors["norm.mean"] = model.channel_mean
    tensors["norm.std"] = model.channel_std
    if optimizer is not None:
        cfg["adam_t"] = str(optimizer.t)
        for name in optimizer.m:
            tensors[f"adam.m.{name}"] = optimizer.m[name]
            tensors[f"adam.v.{name}"] = optimizer.v[name]
    ckpt.save_checkpoint(path, cfg, tensors)


def load_model_checkpoint(path):
    """Returns (model, TrainConfig, extras dict with epoch/best_val_acc)."""
    cfg, tensors = ckpt.load_checkpoint(path)
    config = TrainConfig.from_dict(
        {k: v for k, v in cfg.items() if k not in ("image_side", "image_channels", "epoch", "best_val_acc", "adam_t")}
    )
    model = build_model(config, int(cfg["image_side"]), int(cfg["image_channels"]), np.random.default_rng(0))
    params = model.named_params()
    missing = set(params) - set(tensors)
    if missing:
        raise ckpt.CheckpointError(f"checkpoint missing tensors: {sorted(missing)}")
    for name, p in params.items():
        if tensors[name].shape != p.data.shape:
            raise ckpt.CheckpointError(
                f"tensor {name} shape {tensors[name].shape} does not match model {p.data.shape}"
            )
        p.data = tensors[name]
    model.channel_mean = tensors["norm.mean"]
    model.channel_std = tensors["norm.std"]
    extras = {
        "epoch": int(cfg.get("epoch", 0)),
        "best_val_acc": float(cfg.get("best_val_acc", 0.0)),
    }
    return model, config, extras


def build_dataset(config, rng=None):
    """Construct the dataset a config describes (synthetic or directory)."""
    from . import data

    if config.dataset == "synthetic":
        gen = np.random.default_rng(np.random.SeedSequence((config.seed, 104729)))
        return data.make_synthetic(config.synthetic_classes, config.synthetic_per_class, config.synthetic_side, gen)
    return data.load_dataset(config.dataset)
