"""Uncertainty measures derived from logit / softmax moments.

Epistemic uncertainty is the entropy of the diagonal Gaussian over the
chosen space (logit or probability), per pixel:

    H = 1/2 sum_j log(max(var_j, eps)) + K/2 (1 + log 2 pi)

Aleatoric uncertainty is the entropy of the expected categorical, an upper
bound reported in nats.  Class-conditional maps are standard deviations of
single softmax outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .container import LabelMap, Tensor, TensorContainer, read_container, write_container
from .epsoftmax import VARIANT_CODES, VARIANT_FROM_CODE, ProbMoments, RatioVariant
from .errors import DomainError, ShapeError
from .heads import LogitMoments

# Variance floor inside the Gaussian entropy: zero-variance pixels get the
# finite minimum 1/2 log(eps) per class instead of -inf, which keeps maps
# renderable and comparable.
ENTROPY_VAR_FLOOR = 1e-20

ENTROPY_SPACES = ("logit", "prob")


def gaussian_entropy(var, axis: int = -1):
    """Entropy (nats) of a diagonal Gaussian with the given variances.

    Variances are floored at ``ENTROPY_VAR_FLOOR``; a K-vector gives a
    float, an (..., K) array gives an (...,) map.
    """
    v = np.asarray(var, dtype=np.float64)
    k = v.shape[axis]
    out = 0.5 * np.log(np.maximum(v, ENTROPY_VAR_FLOOR)).sum(axis=axis)
    out += 0.5 * k * (1.0 + math.log(2.0 * math.pi))
    return float(out) if out.ndim == 0 else out


def categorical_entropy(p, axis: int = -1):
    """Shannon entropy (nats) of categorical probabilities.

    Each probability vector must be nonnegative and sum to 1 within 1e-6;
    0 * log 0 counts as 0.
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise DomainError("categorical probabilities must be >= 0")
    totals = p.sum(axis=axis)
    if np.any(np.abs(totals - 1.0) > 1e-6):
        worst = float(np.abs(totals - 1.0).max())
        raise DomainError(f"probabilities must sum to 1 within 1e-6 (off by {worst:.3e})")
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    out = -terms.sum(axis=axis)
    return float(out) if out.ndim == 0 else out


@dataclass
class UncertaintyBundle:
    """Per-pixel uncertainty maps plus the argmax classification."""

    epistemic: np.ndarray            # (H, W) float32, nats
    aleatoric: np.ndarray            # (H, W) float32, nats, in [0, log K]
    label: np.ndarray                # (H, W) uint16 argmax class
    class_std: list = field(default_factory=list)  # [(class index, (H, W) float32)]
    entropy_space: str = "logit"
    ratio_variant: RatioVariant = RatioVariant.DELTA


def make_bundle(
    probs: ProbMoments,
    logits: LogitMoments,
    entropy_space: str = "logit",
    classes=(),
) -> UncertaintyBundle:
    """Assemble epistemic/aleatoric/label/class-std maps from moments.

    ``entropy_space`` picks which variances feed the epistemic entropy.
    ``classes`` lists class indices that get standard-deviation maps.
    """
    if entropy_space not in ENTROPY_SPACES:
        raise ValueError(f"entropy_space must be one of {ENTROPY_SPACES}")
    if probs.mean.shape != logits.mean.shape:
        raise ShapeError(
            f"prob grid {probs.mean.shape} != logit grid {logits.mean.shape}"
        )
    k = probs.num_classes

    # Fused float32 grid arithmetic; outputs are float32 maps anyway and the
    # scalar-vector ops above stay float64 for reference use.
    p = np.asarray(probs.mean, dtype=np.float32)
    totals = p.sum(axis=-1)
    if np.any(totals <= 0) or not np.isfinite(totals).all():
        raise DomainError("softmax means do not form a normalizable vector")

    space_var = logits.var if entropy_space == "logit" else probs.var
    v = np.maximum(np.asarray(space_var, np.float32), np.float32(ENTROPY_VAR_FLOOR))
    np.log(v, out=v)
    epistemic = v.sum(axis=-1)
    epistemic *= np.float32(0.5)
    epistemic += np.float32(0.5 * k * (1.0 + math.log(2.0 * math.pi)))

    # H(p / S) = log S - (sum p log p) / S; p * log(max(p, tiny)) is exactly
    # 0 at p == 0, which implements the 0 log 0 := 0 convention mask-free.
    t = np.maximum(p, np.float32(1e-45))
    np.log(t, out=t)
    t *= p
    aleatoric = np.log(totals) - t.sum(axis=-1) / totals

    label = np.argmax(p, axis=-1).astype(np.uint16)

    class_std = []
    for c in classes:
        c = int(c)
        if not 0 <= c < k:
            raise ValueError(f"unknown class index {c} for {k} classes")
        class_std.append((c, np.sqrt(probs.var[..., c]).astype(np.float32)))

    return UncertaintyBundle(
        np.asarray(epistemic, dtype=np.float32),
        np.asarray(aleatoric, dtype=np.float32),
        label,
        class_std,
        entropy_space,
        probs.variant,
    )


def bundle_to_container(bundle: UncertaintyBundle) -> TensorContainer:
    container = TensorContainer(
        [
            Tensor("epistemic", bundle.epistemic),
            Tensor("aleatoric", bundle.aleatoric),
            LabelMap("label", bundle.label),
            Tensor(
                "ratio_variant",
                np.array([VARIANT_CODES[RatioVariant.parse(bundle.ratio_variant)]], np.float32),
            ),
        ]
    )
    for c, std_map in bundle.class_std:
        container.add(Tensor(f"class_std_{c}", std_map))
    return container


def container_to_bundle(container: TensorContainer) -> UncertaintyBundle:
    code = float(container["ratio_variant"].data.ravel()[0])
    class_std = []
    for entry in container:
        if entry.name.startswith("class_std_"):
            class_std.append((int(entry.name.split("_")[-1]), entry.data))
    return UncertaintyBundle(
        container["epistemic"].data,
        container["aleatoric"].data,
        container["label"].data,
        class_std,
        ratio_variant=VARIANT_FROM_CODE.get(code, RatioVariant.DELTA),
    )


def save_bundle(path, bundle: UncertaintyBundle):
    write_container(path, bundle_to_container(bundle))


def load_bundle(path) -> UncertaintyBundle:
    return container_to_bundle(read_container(path))
