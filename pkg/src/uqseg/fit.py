"""Desk-scale SGD trainer for the final layer.

Trains only the head means on frozen per-pixel features: linear-warmup
learning rate, hard-example-mined cross-entropy, L2 weight decay standing
in for the Gaussian prior, and periodic parameter snapshots feeding the
posterior accumulator after the warmup phase.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .container import (
    DEFAULT_IGNORE_VALUE,
    LabelMap,
    Tensor,
    TensorContainer,
    read_container,
    write_container,
)
from .errors import DomainError, EmptyBatchError, ShapeError
from .heads import GaussianHead
from .oracle import rng_stream
from .swag import HeadLayout, SnapshotStream


@dataclass(frozen=True)
class FitConfig:
    """Training schedule and loss knobs.

    ``ohem_min_kept=0`` means "batch pixels / 16" (at least 1).  Weight
    decay defaults to the conventional 1e-4; it plays the role of the
    zero-mean Gaussian prior on head parameters.
    """

    total_iters: int = 5000
    warmup_iters: int = 1000
    base_lr: float = 0.1
    weight_decay: float = 1e-4
    snapshot_every: int = 50
    ohem_threshold: float = 0.7
    ohem_min_kept: int = 0
    batch_size: int = 1
    momentum: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.warmup_iters > self.total_iters or self.warmup_iters < 0:
            raise ValueError(
                f"need 0 <= warmup_iters <= total_iters, got "
                f"{self.warmup_iters}/{self.total_iters}"
            )
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")
        if not 0.0 < self.ohem_threshold <= 1.0:
            raise ValueError("ohem_threshold must be in (0, 1]")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def defaults_text(self) -> str:
        return "\n".join(f"{f.name}={getattr(self, f.name)}" for f in fields(self))


def lr_at(iteration: int, cfg: FitConfig) -> float:
    """Learning rate at a 0-based iteration: linear ramp, then constant."""
    if iteration < cfg.warmup_iters:
        return cfg.base_lr * (iteration + 1) / cfg.warmup_iters
    return cfg.base_lr


def _softmax64(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    e /= e.sum(axis=-1, keepdims=True)
    return e


def ohem_ce(
    logits,
    labels,
    threshold: float = 0.7,
    min_kept: int = 0,
    ignore_value: int = DEFAULT_IGNORE_VALUE,
):
    """Hard-example-mined softmax cross-entropy.

    Pixels whose true-class probability is below ``threshold`` are
    retained; if fewer than ``min_kept`` qualify, the hardest ``min_kept``
    pixels (largest loss) are retained instead.  ``min_kept=0`` selects
    valid-pixels/16 (at least 1).  Ignored pixels never participate.

    Returns ``(loss, grad_logits)`` where the gradient is
    (softmax - onehot)/|retained| on retained pixels and 0 elsewhere, shaped
    like ``logits``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if isinstance(labels, LabelMap):
        ignore_value = labels.ignore_value
        labels = labels.data
    labels = np.asarray(labels)
    k = logits.shape[-1]
    if logits.shape[:-1] != labels.shape:
        raise ShapeError(f"logits grid {logits.shape[:-1]} != labels grid {labels.shape}")

    flat_logits = logits.reshape(-1, k)
    flat_labels = labels.reshape(-1).astype(np.int64)
    valid = flat_labels != ignore_value
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EmptyBatchError("no non-ignored pixels in batch")
    if flat_labels[valid].max() >= k or flat_labels[valid].min() < 0:
        raise DomainError(f"labels must be < {k} outside ignored pixels")

    if min_kept == 0:
        min_kept = max(1, n_valid // 16)
    min_kept = min(min_kept, n_valid)

    probs = _softmax64(flat_logits[valid])
    idx_valid = np.flatnonzero(valid)
    p_true = probs[np.arange(n_valid), flat_labels[valid]]
    losses = -np.log(np.clip(p_true, 1e-300, None))

    hard = p_true < threshold
    if int(hard.sum()) < min_kept:
        order = np.argsort(-losses, kind="stable")
        keep_local = order[:min_kept]
    else:
        keep_local = np.flatnonzero(hard)
    n_kept = keep_local.size

    loss = float(losses[keep_local].mean())

    grad = np.zeros_like(flat_logits)
    rows = idx_valid[keep_local]
    g = probs[keep_local]
    g[np.arange(n_kept), flat_labels[rows]] -= 1.0
    grad[rows] = g / n_kept
    return loss, grad.reshape(logits.shape)


@dataclass
class FitResult:
    """Snapshot stream plus the final point estimate and loss trace."""

    stream: SnapshotStream
    final_weight: np.ndarray  # (K, D)
    final_bias: np.ndarray    # (K,)
    loss_history: np.ndarray  # (total_iters,)
    config: FitConfig

    def point_head(self) -> GaussianHead:
        k, d = self.final_weight.shape
        return GaussianHead(
            self.final_weight,
            self.final_bias,
            np.zeros((k, d)),
            np.zeros(k),
            0.0,
        )


def _flatten_dataset(dataset):
    xs, ys, igs = [], [], []
    for features, labels in dataset:
        feats = features.data if isinstance(features, Tensor) else np.asarray(features)
        if feats.ndim != 3:
            raise ShapeError(f"features must be (H, W, D), got {feats.shape}")
        ig = DEFAULT_IGNORE_VALUE
        if isinstance(labels, LabelMap):
            ig = labels.ignore_value
            labels = labels.data
        labels = np.asarray(labels)
        if labels.shape != feats.shape[:2]:
            raise ShapeError(
                f"label grid {labels.shape} != feature grid {feats.shape[:2]}"
            )
        xs.append(feats.reshape(-1, feats.shape[-1]).astype(np.float64))
        ys.append(labels.reshape(-1))
        igs.append(ig)
    if len({x.shape[1] for x in xs}) != 1:
        raise ShapeError("all images must share one feature dimension")
    if len(set(igs)) != 1:
        raise ShapeError("all label maps must share one ignore value")
    return xs, ys, igs[0]


def sgd_fit(dataset, init: GaussianHead, cfg: FitConfig) -> FitResult:
    """Run the SGD schedule over (features, labels) pairs.

    Only the head means are trained; features are frozen by construction.
    Snapshots are recorded every ``snapshot_every`` steps once warmup has
    finished.  The run is a pure function of (dataset, init, cfg): data
    order is drawn from the config seed.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    xs, ys, ignore_value = _flatten_dataset(dataset)
    if xs[0].shape[1] != init.feature_dim:
        raise ShapeError(
            f"dataset feature dim {xs[0].shape[1]} != head dim {init.feature_dim}"
        )

    weight = init.mean_weight.copy()
    bias = init.mean_bias.copy()
    vel_w = np.zeros_like(weight)
    vel_b = np.zeros_like(bias)
    layout = HeadLayout(init.num_classes, init.feature_dim)

    rng = rng_stream(cfg.seed, 0)
    n_images = len(xs)
    order = rng.permutation(n_images)
    cursor = 0

    snapshots = []
    losses = np.empty(cfg.total_iters)
    for it in range(cfg.total_iters):
        picks = []
        for _ in range(cfg.batch_size):
            if cursor == n_images:
                order = rng.permutation(n_images)
                cursor = 0
            picks.append(order[cursor])
            cursor += 1
        xb = np.concatenate([xs[i] for i in picks])
        yb = np.concatenate([ys[i] for i in picks])

        logits = xb @ weight.T + bias
        loss, grad = ohem_ce(
            logits,
            yb,
            threshold=cfg.ohem_threshold,
            min_kept=cfg.ohem_min_kept,
            ignore_value=ignore_value,
        )
        losses[it] = loss

        grad_w = grad.T @ xb + cfg.weight_decay * weight
        grad_b = grad.sum(axis=0) + cfg.weight_decay * bias
        lr = lr_at(it, cfg)
        if cfg.momentum > 0.0:
            vel_w = cfg.momentum * vel_w + grad_w
            vel_b = cfg.momentum * vel_b + grad_b
            weight -= lr * vel_w
            bias -= lr * vel_b
        else:
            weight -= lr * grad_w
            bias -= lr * grad_b

        step_after_warmup = it - cfg.warmup_iters + 1
        if step_after_warmup >= 1 and step_after_warmup % cfg.snapshot_every == 0:
            snapshots.append(layout.pack(weight, bias).astype(np.float32))

    stream = SnapshotStream(
        np.stack(snapshots) if snapshots else np.empty((0, layout.length), np.float32),
        layout,
    )
    return FitResult(stream, weight, bias, losses, cfg)


# ---------------------------------------------------------------------------
# dataset directory layout: features_0000.eusg / labels_0000.eusg pairs

_FEATURES_RE = re.compile(r"^features_(\d{4})\.eusg$")


def save_dataset(dirpath, dataset):
    """Write (features, labels) pairs as paired container files."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    for i, (features, labels) in enumerate(dataset):
        feats = features if isinstance(features, Tensor) else Tensor("features", features)
        feats = Tensor("features", feats.data)
        lab = labels if isinstance(labels, LabelMap) else LabelMap("labels", labels)
        lab = LabelMap("labels", lab.data, lab.ignore_value)
        write_container(dirpath / f"features_{i:04d}.eusg", TensorContainer([feats]))
        write_container(dirpath / f"labels_{i:04d}.eusg", TensorContainer([lab]))


def load_dataset(dirpath):
    """Load all features_XXXX.eusg / labels_XXXX.eusg pairs from a directory."""
    dirpath = Path(dirpath)
    pairs = []
    for f in sorted(dirpath.iterdir()):
        m = _FEATURES_RE.match(f.name)
        if not m:
            continue
        lab_path = dirpath / f"labels_{m.group(1)}.eusg"
        if not lab_path.exists():
            raise FileNotFoundError(f"missing label file {lab_path}")
        feats = read_container(f)["features"]
        labels = read_container(lab_path)["labels"]
        pairs.append((feats.data, labels))
    if not pairs:
        raise FileNotFoundError(f"no features_XXXX.eusg files under {dirpath}")
    return pairs


def make_separable_dataset(
    n_images: int = 4,
    height: int = 32,
    width: int = 32,
    seed: int = 0,
    feature_scale: float = 1.0,
    blob_distance: float = 4.0,
    noise_std: float = 1.0,
):
    """Synthetic 2-class blobs rendered as (H, W, 2) feature maps.

    Per-pixel labels are drawn uniformly; features sit on opposing class
    means separated by ``blob_distance`` with isotropic noise, then scaled by
    ``feature_scale`` (use > 1 to emulate a shifted, out-of-distribution
    feature stream).
    """
    rng = rng_stream(seed, 1)
    half = blob_distance / 2.0
    means = np.array([[half, half], [-half, -half]])
    dataset = []
    for _ in range(n_images):
        labels = rng.integers(0, 2, size=(height, width)).astype(np.uint16)
        feats = means[labels] + rng.normal(0.0, noise_std, size=(height, width, 2))
        feats *= feature_scale
        dataset.append((feats.astype(np.float32), labels))
    return dataset
