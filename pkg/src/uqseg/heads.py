"""Probabilistic final layer: Gaussian logit moments from a factorized
Gaussian posterior over 1x1-convolution weights.

For a pixel with feature vector x and class j the layer computes

    mean_j = sum_d x_d * mean_weight[j, d] + mean_bias[j]
    var_j  = noise + sum_d x_d^2 * var_weight[j, d] + var_bias[j]

which is the exact predictive-logit distribution when the weight posterior
is elementwise-independent Gaussian.  The reductions over D run as BLAS
matrix products in the design matrix's own precision (float32 for data
loaded from containers, which keeps the per-pass latency real-time;
float64 inputs get float64 accumulation) and results are stored float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import Tensor, TensorContainer, read_container, write_container
from .errors import DomainError, ShapeError


def _as_f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


@dataclass(frozen=True)
class GaussianHead:
    """Factorized Gaussian posterior over final-layer weights and biases.

    ``noise`` is the regression observation variance added to every
    predictive logit variance (0 means purely epistemic variance).
    """

    mean_weight: np.ndarray  # (K, D)
    mean_bias: np.ndarray    # (K,)
    var_weight: np.ndarray   # (K, D), >= 0
    var_bias: np.ndarray     # (K,), >= 0
    noise: float = 0.0

    def __post_init__(self):
        for name in ("mean_weight", "mean_bias", "var_weight", "var_bias"):
            object.__setattr__(self, name, _as_f64(getattr(self, name)))
        if self.mean_weight.ndim != 2:
            raise ShapeError(f"mean_weight must be (K, D), got {self.mean_weight.shape}")
        k, d = self.mean_weight.shape
        if self.var_weight.shape != (k, d):
            raise ShapeError(
                f"var_weight shape {self.var_weight.shape} != mean_weight shape {(k, d)}"
            )
        if self.mean_bias.shape != (k,) or self.var_bias.shape != (k,):
            raise ShapeError(f"bias vectors must have shape ({k},)")
        if np.any(self.var_weight < 0) or np.any(self.var_bias < 0):
            raise DomainError("negative variance entries in head")
        if not np.isfinite(self.noise) or self.noise < 0:
            raise DomainError(f"noise must be finite and >= 0, got {self.noise}")
        for name in ("mean_weight", "mean_bias", "var_weight", "var_bias"):
            if not np.isfinite(getattr(self, name)).all():
                raise DomainError(f"non-finite values in head field '{name}'")

    @property
    def num_classes(self) -> int:
        return self.mean_weight.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.mean_weight.shape[1]

    def point_estimate(self) -> "GaussianHead":
        """Same means with all variances and noise zeroed."""
        return GaussianHead(
            self.mean_weight,
            self.mean_bias,
            np.zeros_like(self.var_weight),
            np.zeros_like(self.var_bias),
            0.0,
        )


@dataclass(frozen=True)
class LogitMoments:
    """Per-pixel, per-class mean and variance of the logits, float32."""

    mean: np.ndarray  # (..., K)
    var: np.ndarray   # (..., K)

    @property
    def num_classes(self) -> int:
        return self.mean.shape[-1]


def _check_design(design: np.ndarray, head: GaussianHead) -> np.ndarray:
    design = np.asarray(design)
    if design.ndim < 1 or design.shape[-1] != head.feature_dim:
        raise ShapeError(
            f"design feature dim {design.shape[-1] if design.ndim else 0} "
            f"!= head feature dim {head.feature_dim}"
        )
    if not np.isfinite(design).all():
        raise DomainError("design matrix contains non-finite features")
    if design.dtype != np.float32:
        design = design.astype(np.float64, copy=False)
    return design


# Rows per block when streaming a large grid through the layer; keeps the
# squared-feature scratch inside the cache instead of a full-grid temporary.
_BLOCK_ROWS = 16384


def _layer_moments(design, head: GaussianHead, with_var: bool):
    d = _check_design(design, head)
    lead, dim = d.shape[:-1], d.shape[-1]
    k = head.num_classes
    flat = np.ascontiguousarray(d.reshape(-1, dim))
    n = flat.shape[0]
    wt = head.mean_weight.T.astype(d.dtype)
    mb = head.mean_bias.astype(d.dtype)

    mean = np.empty((n, k), np.float32)
    var = np.empty((n, k), np.float32) if with_var else None
    if with_var:
        vt = head.var_weight.T.astype(d.dtype)
        vb = (head.var_bias + head.noise).astype(d.dtype)
    if d.dtype == np.float32:
        rows = max(1, min(_BLOCK_ROWS, n))
        sq = np.empty((rows, dim), np.float32) if with_var else None
        for i in range(0, n, rows):
            j = min(i + rows, n)
            fb = flat[i:j]
            np.matmul(fb, wt, out=mean[i:j])
            mean[i:j] += mb
            if with_var:
                s = sq[: j - i]
                np.multiply(fb, fb, out=s)
                np.matmul(s, vt, out=var[i:j])
                var[i:j] += vb
    else:
        mean[:] = flat @ wt + mb
        if with_var:
            var[:] = (flat * flat) @ vt + vb
    mean = mean.reshape(lead + (k,))
    return (mean, var.reshape(lead + (k,))) if with_var else (mean, None)


def predict_moments(design, head: GaussianHead) -> LogitMoments:
    """Gaussian logit moments for every pixel of a design matrix.

    ``design`` has shape (..., D); typically (H, W, D).  Returns moments of
    shape (..., K).
    """
    mean, var = _layer_moments(design, head, with_var=True)
    return LogitMoments(mean, var)


def point_logits(design, head: GaussianHead) -> np.ndarray:
    """Deterministic logits at the posterior mean; exactly the mean field
    of :func:`predict_moments` (same blocked accumulation path)."""
    mean, _ = _layer_moments(design, head, with_var=False)
    return mean


HEAD_ENTRIES = ("mean_weight", "mean_bias", "var_weight", "var_bias", "noise")


def head_to_container(head: GaussianHead) -> TensorContainer:
    return TensorContainer(
        [
            Tensor("mean_weight", head.mean_weight),
            Tensor("mean_bias", head.mean_bias),
            Tensor("var_weight", head.var_weight),
            Tensor("var_bias", head.var_bias),
            Tensor("noise", np.array([head.noise], dtype=np.float32)),
        ]
    )


def container_to_head(container: TensorContainer) -> GaussianHead:
    missing = [n for n in HEAD_ENTRIES if n not in container]
    if missing:
        raise ShapeError(f"head container is missing entries {missing}")
    noise = container["noise"].data
    if noise.size != 1:
        raise ShapeError("head entry 'noise' must hold exactly one value")
    return GaussianHead(
        container["mean_weight"].data,
        container["mean_bias"].data,
        container["var_weight"].data,
        container["var_bias"].data,
        float(noise.ravel()[0]),
    )


def save_head(path, head: GaussianHead):
    write_container(path, head_to_container(head))


def load_head(path) -> GaussianHead:
    return container_to_head(read_container(path))
