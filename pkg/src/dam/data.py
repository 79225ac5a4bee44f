"""Datasets, episode sampling and augmentation.

A Dataset holds raw [0,1] channel-last images plus a disjoint train/val/test
class partition. Per-channel standardization statistics are computed once
over the train split and applied by the trainer when batches are assembled,
so they can be recorded in checkpoints.
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

ROTATION_ANGLES = (-45.0, -22.5, 22.5, 45.0)


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray          # [M, side, side, C], float32 in [0, 1]
    labels: np.ndarray          # [M] int class ids
    class_names: list[str]
    split_of_class: dict[int, str]   # class id -> train | val | test
    channel_mean: np.ndarray = field(default=None)
    channel_std: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.channel_mean is None:
            train_ids = self.classes_in_split("train")
            mask = np.isin(self.labels, train_ids)
            pool = self.images[mask] if mask.any() else self.images
            self.channel_mean = pool.mean(axis=(0, 1, 2), dtype=np.float64).astype(np.float32)
            self.channel_std = (pool.std(axis=(0, 1, 2), dtype=np.float64) + 1e-8).astype(np.float32)

    @property
    def side(self):
        return self.images.shape[1]

    @property
    def channels(self):
        return self.images.shape[3]

    def classes_in_split(self, split):
        return sorted(c for c, s in self.split_of_class.items() if s == split)

    def indices_of_class(self, class_id):
        return np.nonzero(self.labels == class_id)[0]

    def standardize(self, image):
        return (image - self.channel_mean) / self.channel_std


@dataclass
class Episode:
    n: int
    k: int
    q: int
    support_images: np.ndarray   # [N*K, side, side, C], class-major order
    support_classes: np.ndarray  # [N*K] episode-local indices 0..N-1
    query_images: np.ndarray     # [N*Q, side, side, C]
    query_classes: np.ndarray    # [N*Q]
    class_map: np.ndarray        # episode-local index -> dataset class id


def sample_episode(dataset, n, k, q, rng, split="train"):
    """Draw an N-way K-shot episode with q queries per class, without replacement."""
    classes = dataset.classes_in_split(split)
    if len(classes) < n:
        raise DataError(f"split {split!r} has {len(classes)} classes, need {n}")
    chosen = rng.choice(np.asarray(classes), size=n, replace=False)
    sup_imgs, sup_cls, que_imgs, que_cls = [], [], [], []
    for local, class_id in enumerate(chosen):
        idx = dataset.indices_of_class(class_id)
        if len(idx) < k + q:
            raise DataError(
                f"class {dataset.class_names[class_id]!r} has {len(idx)} images, need k+q={k + q}"
            )
        picked = rng.choice(idx, size=k + q, replace=False)
        sup_imgs.append(dataset.images[picked[:k]])
        que_imgs.append(dataset.images[picked[k:]])
        sup_cls.extend([local] * k)
        que_cls.extend([local] * q)
    return Episode(
        n=n,
        k=k,
        q=q,
        support_images=np.concatenate(sup_imgs),
        support_classes=np.asarray(sup_cls),
        query_images=np.concatenate(que_imgs),
        query_classes=np.asarray(que_cls),
        class_map=np.asarray(chosen),
    )


# --- rotation augmentation ---------------------------------------------------


def rotate_image(image, degrees):
    """Rotate a square image about its center, bilinear, zero-filled edges."""
    h, w = image.shape[:2]
    if h != w:
        raise DataError(f"rotation requires a square image, got {h}x{w}")
    theta = np.deg2rad(degrees)
    c = (h - 1) / 2.0
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    # inverse map: output pixel -> source coordinates
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    ys = cos_t * (ii - c) + sin_t * (jj - c) + c
    xs = -sin_t * (ii - c) + cos_t * (jj - c) + c
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    wy = (ys - y0).astype(image.dtype)
    wx = (xs - x0).astype(image.dtype)

    def fetch(yi, xi):
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = image[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return np.where(valid[..., None], vals, 0.0).astype(image.dtype)

    top = fetch(y0, x0) * (1 - wx)[..., None] + fetch(y0, x0 + 1) * wx[..., None]
    bot = fetch(y0 + 1, x0) * (1 - wx)[..., None] + fetch(y0 + 1, x0 + 1) * wx[..., None]
    return top * (1 - wy)[..., None] + bot * wy[..., None]


def augment_rotate(image, rng):
    """Training-time augmentation: rotate by one of the four fixed angles."""
    return rotate_image(image, ROTATION_ANGLES[rng.integers(len(ROTATION_ANGLES))])


# --- synthetic dataset --------------------------------------------------------


def make_synthetic(classes, per_class, side, rng, channels=3):
    """Procedural texture/blob dataset with one pattern family per class.

    Each class fixes blob positions, scales, per-channel colors and a grating
    (frequency, orientation); each image jitters those and adds pixel noise,
    so pixel-space nearest-centroid works well above chance but not perfectly.
    """
    if classes < 10:
        raise DataError(f"need at least 10 classes, got {classes}")
    if per_class < 2:
        raise DataError(f"need at least 2 images per class, got {per_class}")
    jj, ii = np.meshgrid(np.arange(side), np.arange(side))
    images = np.empty((classes * per_class, side, side, channels), dtype=np.float32)
    labels = np.repeat(np.arange(classes), per_class)
    for cls in range(classes):
        n_blobs = 3
        centers = rng.uniform(0.2 * side, 0.8 * side, size=(n_blobs, 2))
        sigmas = rng.uniform(0.10 * side, 0.22 * side, size=n_blobs)
        colors = rng.uniform(0.2, 1.0, size=(n_blobs, channels))
        freq = rng.uniform(1.5, 4.5)
        orient = rng.uniform(0.0, np.pi)
        grating_color = rng.uniform(0.0, 1.0, size=channels)
        for rep in range(per_class):
            img = np.zeros((side, side, channels), dtype=np.float64)
            jitter = rng.normal(0.0, 0.08 * side, size=(n_blobs, 2))
            scale_jit = 1.0 + rng.normal(0.0, 0.20, size=n_blobs)
            color_jit = np.clip(colors + rng.normal(0.0, 0.12, size=colors.shape), 0.0, 1.2)
            for bi in range(n_blobs):
                cy, cx = centers[bi] + jitter[bi]
                s = max(sigmas[bi] * scale_jit[bi], 1.0)
                bump = np.exp(-((ii - cy) ** 2 + (jj - cx) ** 2) / (2 * s * s))
                img += bump[..., None] * color_jit[bi]
            phase = rng.uniform(-np.pi, np.pi)
            orient_jit = orient + rng.normal(0.0, 0.12)
            wave = np.sin(
                2 * np.pi * freq * ((ii * np.cos(orient_jit) + jj * np.sin(orient_jit)) / side) + phase
            )
            img += 0.22 * wave[..., None] * grating_color
            img = 0.15 + 0.6 * img / max(img.max(), 1e-6)
            img *= rng.uniform(0.7, 1.3)          # global brightness jitter
            img += rng.normal(0.0, 0.07, size=img.shape)
            images[cls * per_class + rep] = np.clip(img, 0.0, 1.0)
    split_of_class = _split_classes(classes, rng)
    names = [f"synth_{c:03d}" for c in range(classes)]
    return Dataset(images=images, labels=labels, class_names=names, split_of_class=split_of_class)


def _split_classes(classes, rng):
    order = rng.permutation(classes)
    n_train = int(round(classes * 0.6))
    n_val = int(round(classes * 0.2))
    split = {}
    for pos, cls in enumerate(order):
        if pos < n_train:
            split[int(cls)] = "train"
        elif pos < n_train + n_val:
            split[int(cls)] = "val"
        else:
            split[int(cls)] = "test"
    return split


# --- directory ingestion (netpbm) ---------------------------------------------


def write_ppm(path, image):
    """Write a [H,W,C] float image in [0,1] as binary PPM (C=3) or PGM (C=1)."""
    arr = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    h, w, c = arr.shape
    if c == 3:
        header = f"P6\n{w} {h}\n255\n"
    elif c == 1:
        header = f"P5\n{w} {h}\n255\n"
    else:
        raise DataError(f"unsupported channel count {c} for netpbm")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(arr.tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    magic, w, h, maxval = fields[0].decode(), int(fields[1]), int(fields[2]), int(fields[3])
    pos += 1  # single whitespace after maxval
    channels = {"P6": 3, "P5": 1}.get(magic)
    if channels is None:
        raise DataError(f"{path}: unsupported netpbm magic {magic!r}")
    raw = np.frombuffer(blob, dtype=np.uint8, count=h * w * channels, offset=pos)
    return (raw.reshape(h, w, channels).astype(np.float32) / maxval).astype(np.float32)


def save_dataset(dataset, root):
    """Write `root/<class_name>/NNN.ppm` plus splits.csv."""
    os.makedirs(root, exist_ok=True)
    for cls, name in enumerate(dataset.class_names):
        cls_dir = os.path.join(root, name)
        os.makedirs(cls_dir, exist_ok=True)
        for j, idx in enumerate(dataset.indices_of_class(cls)):
            ext = "ppm" if dataset.channels == 3 else "pgm"
            write_ppm(os.path.join(cls_dir, f"{j:04d}.{ext}"), dataset.images[idx])
    with open(os.path.join(root, "splits.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class_name", "split"])
        for cls, name in enumerate(dataset.class_names):
            writer.writerow([name, dataset.split_of_class[cls]])


def load_dataset(root):
    """Load a directory-of-class-folders dataset with a splits.csv file."""
    split_path = os.path.join(root, "splits.csv")
    if not os.path.isfile(split_path):
        raise DataError(f"missing split file {split_path}")
    split_by_name = {}
    with open(split_path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["split"] not in ("train", "val", "test"):
                raise DataError(f"bad split {row['split']!r} for class {row['class_name']!r}")
            split_by_name[row["class_name"]] = row["split"]
    class_names = sorted(split_by_name)
    images, labels = [], []
    for cls, name in enumerate(class_names):
        cls_dir = os.path.join(root, name)
        if not os.path.isdir(cls_dir):
            raise DataError(f"class folder missing: {cls_dir}")
        for fname in sorted(os.listdir(cls_dir)):
            if fname.endswith((".ppm", ".pgm")):
                images.append(read_ppm(os.path.join(cls_dir, fname)))
                labels.append(cls)
    if not images:
        raise DataError(f"no .ppm/.pgm images found under {root}")
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise DataError(f"inconsistent image shapes: {sorted(shapes)}")
    split_of_class = {cls: split_by_name[name] for cls, name in enumerate(class_names)}
    return Dataset(
        images=np.stack(images),
        labels=np.asarray(labels),
        class_names=class_names,
        split_of_class=split_of_class,
    )
