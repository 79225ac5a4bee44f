"""Command-line surface: train, eval, ablate, dump-weights, make-synthetic.

Runs are configured by a key=value text file plus repeatable --set overrides;
the env var DAM_SEED overrides the configured seed. Every command writes its
resolved configuration beside its primary output. Exit codes: 0 success,
1 usage/config error, 2 runtime numeric failure.
"""

import argparse
import csv
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from .checkpoint import CheckpointError
from .data import DataError, make_synthetic, sample_episode, save_dataset
from .embedding import embed
from .metagen import (
    VARIANTS,
    MetaGenError,
    dump_generation_rows,
    generate_weights,
    latent_distribution,
    sample_latent,
)
from .trainer import (
    ConfigError,
    NumericError,
    TrainConfig,
    build_dataset,
    episode_accuracy,
    load_model_checkpoint,
    prepare_episode_batch,
    train,
)


@dataclass
class EvalReport:
    mean_accuracy: float        # percent
    ci95: float                 # percent half-width, 1.96 * std / sqrt(episodes)
    episodes: int
    per_episode: list           # retained per-episode accuracies (percent)


def evaluate(model, dataset, split, n, k, q, episodes=1000, seed=0, ensemble=1):
    if not dataset.classes_in_split(split):
        raise ConfigError(f"dataset split {split!r} is empty")
    if dataset.side != model.image_side or dataset.channels != model.image_channels:
        raise ConfigError(
            f"checkpoint expects {model.image_side}x{model.image_side}x{model.image_channels} images, "
            f"dataset provides {dataset.side}x{dataset.side}x{dataset.channels}"
        )
    task_rng = np.random.default_rng(np.random.SeedSequence((seed, 613)))
    eps_rng = np.random.default_rng(np.random.SeedSequence((seed, 617)))
    accs = []
    for _ in range(episodes):
        episode = sample_episode(dataset, n, k, q, task_rng, split=split)
        accs.append(100.0 * episode_accuracy(episode, model, eps_rng, ensemble=ensemble))
    arr = np.asarray(accs)
    ci95 = float(1.96 * arr.std() / np.sqrt(episodes))
    return EvalReport(mean_accuracy=float(arr.mean()), ci95=ci95, episodes=episodes, per_episode=accs)


def ablate(base_config, dataset, episodes=1000, progress=None):
    """Train and evaluate all six variants with shared seeds.

    Returns list of (variant, EvalReport) in the fixed report order.
    """
    results = []
    for variant in VARIANTS:
        config = replace(
            base_config,
            variant=variant,
            out_dir=os.path.join(base_config.out_dir, variant) if base_config.out_dir else "",
        )
        model, _, _ = train(config, dataset, progress=progress)
        report = evaluate(
            model, dataset, "test", config.n, config.k, config.q,
            episodes=episodes, seed=config.seed,
        )
        results.append((variant, report))
    return results


def dump_weights(model, dataset, out_path, n_tasks=10, samples_per_task=100, seed=0, split="test"):
    """Serialize stochastic weight generations and latent stats for plotting."""
    config_n, config_k = model.gen_cfg.n_way, model.gen_cfg.k_shot
    task_rng = np.random.default_rng(np.random.SeedSequence((seed, 1013)))
    eps_rng = np.random.default_rng(np.random.SeedSequence((seed, 1019)))
    rows = []
    for task_id in range(n_tasks):
        episode = sample_episode(dataset, config_n, config_k, 1, task_rng, split=split)
        batch = prepare_episode_batch(episode, model, False, None)
        feats = embed(batch, model.embedding)
        from .diffcore import ops

        sup = ops.narrow(feats, 0, 0, config_n * config_k)
        stats = latent_distribution(sup, model.meta, model.gen_cfg)
        for sample_id in range(samples_per_task):
            latent = sample_latent(stats, eps_rng, deterministic=False, n_way=config_n)
            weights = generate_weights(latent, model.meta, model.gen_cfg)
            rows.extend(dump_generation_rows(weights, stats, task_id, sample_id))
    try:
        fh = open(out_path, "w", newline="")
    except OSError as exc:
        raise ConfigError(f"cannot write dump file {out_path}: {exc}") from exc
    with fh:
        writer = csv.writer(fh)
        writer.writerow(["task_id", "sample_id", "tensor_name", "values"])
        for task_id, sample_id, name, values in rows:
            writer.writerow([task_id, sample_id, name] + [f"{v:.6g}" for v in values])
    return len(rows)


# --- configuration plumbing ----------------------------------------------------


def load_config_file(path):
    mapping = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, value = line.partition("=")
                mapping[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return mapping


def resolve_config(config_path, overrides):
    mapping = load_config_file(config_path) if config_path else {}
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        mapping[key.strip()] = value.strip()
    if "DAM_SEED" in os.environ:
        mapping["seed"] = os.environ["DAM_SEED"]
    return TrainConfig.from_dict(mapping)


def write_resolved_config(config, path):
    with open(path, "w") as fh:
        for key, value in sorted(config.to_dict().items()):
            fh.write(f"{key}={value}\n")


# --- command implementations -----------------------------------------------------


def _cmd_train(args):
    config = resolve_config(args.config, args.set)
    if not config.out_dir:
        config = replace(config, out_dir="runs/train")
    os.makedirs(config.out_dir, exist_ok=True)
    write_resolved_config(config, os.path.join(config.out_dir, "resolved_config.txt"))
    dataset = build_dataset(config)

    def progress(row):
        print(
            f"epoch {row['epoch']:3d}  loss {row['train_loss']:.4f}  "
            f"val_acc {100 * row['val_acc']:.2f}%  lr {row['lr']:.2e}  {row['wall_seconds']:.1f}s",
            flush=True,
        )

    _, history, best_path = train(config, dataset, progress=progress)
    best = max(history, key=lambda r: r["val_acc"])
    print(f"best val_acc {100 * best['val_acc']:.2f}% at epoch {best['epoch']}; checkpoint: {best_path}")
    return 0


def _cmd_eval(args):
    model, config, _ = load_model_checkpoint(args.ckpt)
    if args.data:
        config = replace(config, dataset=args.data)
    dataset = build_dataset(config)
    dataset.channel_mean = model.channel_mean
    dataset.channel_std = model.channel_std
    seed = int(os.environ.get("DAM_SEED", args.seed if args.seed is not None else config.seed))
    report = evaluate(
        model, dataset, args.split,
        args.n or config.n, args.k or config.k, args.q or config.q,
        episodes=args.episodes, seed=seed, ensemble=args.ensemble,
    )
    print(
        f"{args.split} accuracy: {report.mean_accuracy:.2f}% +/- {report.ci95:.2f}% "
        f"({report.episodes} episodes, ensemble={args.ensemble})"
    )
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "accuracy_pct"])
            for i, acc in enumerate(report.per_episode):
                writer.writerow([i, f"{acc:.4f}"])
            writer.writerow(["mean", f"{report.mean_accuracy:.4f}"])
            writer.writerow(["ci95", f"{report.ci95:.4f}"])
        write_resolved_config(config, args.out + ".config.txt")
    return 0


def _cmd_ablate(args):
    config = resolve_config(args.config, args.set)
    if not config.out_dir:
        config = replace(config, out_dir="runs/ablate")
    os.makedirs(config.out_dir, exist_ok=True)
    write_resolved_config(config, os.path.join(config.out_dir, "resolved_config.txt"))
    dataset = build_dataset(config)
    results = ablate(config, dataset, episodes=args.episodes)
    out_path = args.out or os.path.join(config.out_dir, "ablation.csv")
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "mean_accuracy_pct", "ci95_pct", "episodes"])
        for variant, report in results:
            writer.writerow([variant, f"{report.mean_accuracy:.4f}", f"{report.ci95:.4f}", report.episodes])
    for variant, report in results:
        print(f"{variant:>14s}: {report.mean_accuracy:.2f}% +/- {report.ci95:.2f}%")
    print(f"table written to {out_path}")
    return 0


def _cmd_dump_weights(args):
    model, config, _ = load_model_checkpoint(args.ckpt)
    dataset = build_dataset(config)
    dataset.channel_mean = model.channel_mean
    dataset.channel_std = model.channel_std
    seed = int(os.environ.get("DAM_SEED", config.seed))
    n_rows = dump_weights(
        model, dataset, args.out, n_tasks=args.tasks,
        samples_per_task=args.samples, seed=seed, split=args.split,
    )
    write_resolved_config(config, args.out + ".config.txt")
    print(f"wrote {n_rows} rows to {args.out}")
    return 0


def _cmd_make_synthetic(args):
    seed = int(os.environ.get("DAM_SEED", args.seed))
    rng = np.random.default_rng(np.random.SeedSequence((seed, 104729)))
    dataset = make_synthetic(args.classes, args.per_class, args.side, rng)
    save_dataset(dataset, args.out)
    with open(os.path.join(args.out, "generator_config.txt"), "w") as fh:
        for key, value in (("seed", seed), ("classes", args.classes), ("per_class", args.per_class), ("side", args.side)):
            fh.write(f"{key}={value}\n")
    print(f"wrote {len(dataset.images)} images ({args.classes} classes) to {args.out}")
    return 0


# --- argument parsing -----------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    # usage errors must exit with code 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def build_parser():
    parser = _Parser(prog="dam", description="Deep attentive metric meta-generation for few-shot classification")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="episodic meta-training")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint with confidence intervals")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--ensemble", type=int, default=1, help="average scores over S sampled metrics")
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="evaluate on this dataset directory instead of the configured one")
    p.add_argument("--out", help="write per-episode accuracies to this CSV")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate all six model variants")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--out", help="ablation table CSV path")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("dump-weights", help="serialize sampled weight generations to CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--tasks", type=int, default=10)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_dump_weights)

    p = sub.add_parser("make-synthetic", help="generate and save a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=30)
    p.add_argument("--per-class", dest="per_class", type=int, default=20)
    p.add_argument("--side", type=int, default=32)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=_cmd_make_synthetic)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, MetaGenError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
