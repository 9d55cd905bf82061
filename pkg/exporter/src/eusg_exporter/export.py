"""Bridge pretrained torch segmentation models into EUSG containers.

The exporter is a pure data bridge: it dumps penultimate feature maps (the
inputs of the named final layer), the final layer's weights as the future
posterior mean, and optionally a stream of fine-tuning snapshots.  It never
computes uncertainty; all numerics stay on the engine side.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .container_writer import write_entries
from .manifest import ExportManifest


class UnsupportedArchitectureError(ValueError):
    """The named final layer is not a 1x1-convolution-equivalent."""


class MissingLayerError(KeyError):
    """The split-point layer name does not exist in the model."""


def _find_module(model, name):
    modules = dict(model.named_modules())
    if name not in modules:
        available = [n for n in modules if n]
        raise MissingLayerError(
            f"layer '{name}' not found; available layers: {available}"
        )
    return modules[name]


def final_layer_matrix(layer):
    """Return (weight (K, D), bias (K,)) of a 1x1-conv-equivalent layer."""
    if isinstance(layer, torch.nn.Conv2d):
        if layer.kernel_size != (1, 1) or layer.groups != 1:
            raise UnsupportedArchitectureError(
                f"final conv must be 1x1 with groups=1, got kernel "
                f"{layer.kernel_size}, groups {layer.groups}"
            )
        weight = layer.weight.detach().cpu().numpy().reshape(layer.out_channels, -1)
    elif isinstance(layer, torch.nn.Linear):
        weight = layer.weight.detach().cpu().numpy()
    else:
        raise UnsupportedArchitectureError(
            f"final layer must be Conv2d(1x1) or Linear, got {type(layer).__name__}"
        )
    k = weight.shape[0]
    if layer.bias is not None:
        bias = layer.bias.detach().cpu().numpy()
    else:
        bias = np.zeros(k, dtype=np.float32)
    return weight.astype(np.float32), bias.astype(np.float32)


def flatten_head(weight, bias) -> np.ndarray:
    """Engine layout contract: row-major (K, D) weights then K biases."""
    weight = np.asarray(weight, dtype=np.float32)
    bias = np.asarray(bias, dtype=np.float32)
    return np.concatenate([weight.reshape(-1), bias])


def _captured_features(model, layer, image):
    grabbed = {}

    def hook(_module, inputs, _output):
        grabbed["features"] = inputs[0].detach()

    handle = layer.register_forward_hook(hook)
    try:
        model(image.unsqueeze(0))
    finally:
        handle.remove()
    feats = grabbed["features"]
    if feats.ndim == 4:  # (1, D, H, W) -> (H, W, D)
        feats = feats[0].permute(1, 2, 0)
    else:
        raise UnsupportedArchitectureError(
            f"expected 4-d activations at the split point, got shape {tuple(feats.shape)}"
        )
    return feats.contiguous().cpu().numpy().astype(np.float32)


def export_features(model, images, manifest: ExportManifest):
    """One features container per image; returns the written paths."""
    layer = _find_module(model, manifest.layer)
    out_dir = Path(manifest.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.eval()
    paths = []
    with torch.no_grad():
        for i, image in enumerate(images):
            feats = _captured_features(model, layer, torch.as_tensor(image))
            if feats.shape[-1] != manifest.feature_dim:
                raise ValueError(
                    f"image {i}: feature dim {feats.shape[-1]} != manifest "
                    f"feature_dim {manifest.feature_dim}"
                )
            path = out_dir / f"features_{i:04d}.eusg"
            write_entries(path, [("features", feats)])
            manifest.images.append(path.name)
            paths.append(path)
    return paths


def export_head(model, manifest: ExportManifest, path=None):
    """Final-layer weights as a head container: variances and noise zero,
    ready for replacement by the engine's posterior finalization."""
    layer = _find_module(model, manifest.layer)
    weight, bias = final_layer_matrix(layer)
    k, d = weight.shape
    if (k, d) != (manifest.num_classes, manifest.feature_dim):
        raise ValueError(
            f"layer '{manifest.layer}' is {k}x{d}, manifest says "
            f"{manifest.num_classes}x{manifest.feature_dim}"
        )
    if path is None:
        path = Path(manifest.out_dir) / "head_point.eusg"
    write_entries(
        path,
        [
            ("mean_weight", weight),
            ("mean_bias", bias),
            ("var_weight", np.zeros_like(weight)),
            ("var_bias", np.zeros_like(bias)),
            ("noise", np.zeros(1, np.float32)),
        ],
    )
    return path


@dataclass(frozen=True)
class FitSchedule:
    """Source-framework fine-tuning schedule for snapshot collection."""

    total_iters: int = 5000
    warmup_iters: int = 1000
    base_lr: float = 0.1
    weight_decay: float = 1e-4
    snapshot_every: int = 50
    ohem_threshold: float = 0.7
    ohem_min_kept: int = 0
    ignore_value: int = 255
    seed: int = 0


def _ohem_loss(logits, labels, schedule: FitSchedule):
    k = logits.shape[1]
    flat_logits = logits.permute(0, 2, 3, 1).reshape(-1, k)
    flat_labels = labels.reshape(-1)
    valid = flat_labels != schedule.ignore_value
    flat_logits = flat_logits[valid]
    flat_labels = flat_labels[valid]
    if flat_labels.numel() == 0:
        raise ValueError("no non-ignored pixels in batch")
    losses = F.cross_entropy(flat_logits, flat_labels, reduction="none")
    with torch.no_grad():
        p_true = torch.exp(-losses)
        hard = p_true < schedule.ohem_threshold
        min_kept = schedule.ohem_min_kept or max(1, flat_labels.numel() // 16)
        min_kept = min(min_kept, flat_labels.numel())
        if int(hard.sum()) < min_kept:
            keep = torch.argsort(losses, descending=True, stable=True)[:min_kept]
        else:
            keep = torch.nonzero(hard, as_tuple=False).squeeze(1)
    return losses[keep].mean()


def export_snapshots(model, layer_name, dataset, schedule: FitSchedule, path):
    """Fine-tune only the named final layer and dump the snapshot stream.

    The rest of the network is frozen; snapshots are flattened in the
    engine's layout order and recorded every ``snapshot_every`` steps after
    warmup.  The layer is named explicitly rather than guessed, since
    multi-head architectures make "the" final layer ambiguous.  Returns the
    snapshot array (T, K*D + K).
    """
    layer = _find_module(model, layer_name)
    weight, bias = final_layer_matrix(layer)
    k, d = weight.shape

    for p in model.parameters():
        p.requires_grad_(False)
    params = [layer.weight]
    layer.weight.requires_grad_(True)
    if layer.bias is not None:
        layer.bias.requires_grad_(True)
        params.append(layer.bias)

    torch.manual_seed(schedule.seed)
    gen = torch.Generator().manual_seed(schedule.seed)
    optimizer = torch.optim.SGD(params, lr=schedule.base_lr,
                                weight_decay=schedule.weight_decay)
    model.eval()

    order = torch.randperm(len(dataset), generator=gen).tolist()
    cursor = 0
    snapshots = []
    for it in range(schedule.total_iters):
        if cursor == len(order):
            order = torch.randperm(len(dataset), generator=gen).tolist()
            cursor = 0
        image, labels = dataset[order[cursor]]
        cursor += 1

        lr = schedule.base_lr * (it + 1) / schedule.warmup_iters \
            if it < schedule.warmup_iters else schedule.base_lr
        for group in optimizer.param_groups:
            group["lr"] = lr

        optimizer.zero_grad()
        logits = model(torch.as_tensor(image).unsqueeze(0))
        loss = _ohem_loss(logits, torch.as_tensor(labels).unsqueeze(0).long(), schedule)
        loss.backward()
        optimizer.step()

        step_after_warmup = it - schedule.warmup_iters + 1
        if step_after_warmup >= 1 and step_after_warmup % schedule.snapshot_every == 0:
            w, b = final_layer_matrix(layer)
            snap = flatten_head(w, b)
            if snap.size != k * d + k:
                raise ValueError(f"snapshot length {snap.size} != layout {k * d + k}")
            snapshots.append(snap)

    stream = np.stack(snapshots) if snapshots else np.empty((0, k * d + k), np.float32)
    entries = [("layout", np.array([k, d], np.float32))]
    entries += [(f"snap_{i:05d}", snap) for i, snap in enumerate(stream)]
    write_entries(path, entries)
    return stream
