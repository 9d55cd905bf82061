"""Moment-propagating softmax.

Gaussian logits (mu_j, s2_j) are pushed through exp() using Log-Normal
moments, the denominator sum is treated as a Gaussian with summed moments
(the class outputs are assumed independent), and the ratio is approximated
as a Gaussian.  The mean comes out as

    E[t_j] = softmax(mu_j + s2_j / 2)

exactly.  Two variance formulas are available:

* ``delta``  -- first-order Taylor expansion of an independent ratio,
  var_j = (m_j^2 / m_d^2) (s2_j/m_j^2 + s2_d/m_d^2); scale-invariant.
* ``printed`` -- var_j = (m_j^2 / m_d^2) (s2_j + s2_d), evaluated on
  max-shifted quantities.  Not scale-invariant; kept selectable because
  some deployed implementations use it.

All exponentials run on max-shifted arguments, so class counts and logit
scales found in segmentation practice cannot overflow.  Neither variance
accounts for numerator/denominator covariance; both are rough
approximations of the true softmax output variance (see the Monte-Carlo
harness in :mod:`uqseg.oracle` for honest error measurement).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .heads import LogitMoments


class RatioVariant(str, enum.Enum):
    """Which ratio-distribution variance formula to apply."""

    DELTA = "delta"
    PRINTED = "printed"

    @classmethod
    def parse(cls, value) -> "RatioVariant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value))
        except ValueError:
            raise ValueError(
                f"unknown ratio variant '{value}', expected one of "
                f"{[v.value for v in cls]}"
            ) from None


# float32 codes used when the variant is recorded in a container entry.
VARIANT_CODES = {RatioVariant.DELTA: 0.0, RatioVariant.PRINTED: 1.0}
VARIANT_FROM_CODE = {v: k for k, v in VARIANT_CODES.items()}


@dataclass(frozen=True)
class ProbMoments:
    """Per-pixel, per-class mean and variance of the softmax output."""

    mean: np.ndarray  # (..., K), rows sum to 1
    var: np.ndarray   # (..., K), >= 0
    variant: RatioVariant

    @property
    def num_classes(self) -> int:
        return self.mean.shape[-1]


def lognormal_moments(mu, var):
    """Mean and variance of exp(g) for g ~ N(mu, var).

    mean = exp(mu + var/2); variance = expm1(var) * mean^2.  Accepts scalars
    or arrays; raises on negative variance.
    """
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if np.any(var < 0):
        raise DomainError("lognormal_moments needs var >= 0")
    mean = np.exp(mu + 0.5 * var)
    variance = np.expm1(var) * mean * mean
    if mean.ndim == 0:
        return float(mean), float(variance)
    return mean, variance


def ep_softmax(logits: LogitMoments, variant=RatioVariant.DELTA) -> ProbMoments:
    """Map Gaussian logit moments to Gaussian softmax-output moments.

    The mean is a float64 softmax over the shifted arguments (half-ulp
    accuracy in the stored float32); the variance chain runs in float32,
    which is pure positive-sum arithmetic and far below the approximation
    error inherent in the ratio formulas.
    """
    variant = RatioVariant.parse(variant)
    mu = np.asarray(logits.mean, dtype=np.float32)
    var = np.asarray(logits.var, dtype=np.float32)
    if not np.isfinite(mu).all() or not np.isfinite(var).all():
        raise DomainError("non-finite logit moments")
    if np.any(var < 0):
        raise DomainError("negative logit variances")

    k = mu.shape[-1]
    lead = mu.shape[:-1]
    flat_mu = mu.reshape(-1, k)
    flat_var = var.reshape(-1, k)
    n = flat_mu.shape[0]
    mean = np.empty((n, k), np.float32)
    out_var = np.empty((n, k), np.float32)

    # Blocked over pixels so the float64 softmax scratch stays cache-sized.
    # Shifted exponent arguments; the shift cancels in the mean and in the
    # delta variance, and defines the printed variant.
    rows = max(1, min(8192, n))
    scratch = np.empty((rows, k), np.float64)
    for i in range(0, n, rows):
        j = min(i + rows, n)
        s = scratch[: j - i]
        s[:] = flat_mu[i:j]
        s += 0.5 * flat_var[i:j]
        s -= s.max(axis=-1, keepdims=True)
        np.exp(s, out=s)                      # s is now mu_y (shifted)
        mu_d = s.sum(axis=-1, keepdims=True)
        s /= mu_d                             # s is now the mean field
        m = mean[i:j]
        m[:] = s

        e1 = np.expm1(flat_var[i:j])
        m2 = m * m
        if variant is RatioVariant.DELTA:
            # var_d / mu_d^2 = sum_i e1_i mean_i^2, so mu_y never materializes
            ov = m2 * (e1 + (e1 * m2).sum(axis=-1, keepdims=True))
        else:
            mu_y = m * mu_d.astype(np.float32)
            var_y = e1 * mu_y * mu_y
            ov = m2 * (var_y + var_y.sum(axis=-1, keepdims=True))
        np.maximum(ov, 0.0, out=out_var[i:j])
    return ProbMoments(mean.reshape(lead + (k,)), out_var.reshape(lead + (k,)), variant)


def expected_categorical(probs: ProbMoments) -> np.ndarray:
    """Mean field renormalized so each pixel sums to 1 in float64.

    This is the valid categorical distribution used for classification and
    for the aleatoric entropy bound.
    """
    p = np.asarray(probs.mean, dtype=np.float64)
    totals = p.sum(axis=-1, keepdims=True)
    if np.any(totals <= 0) or not np.isfinite(totals).all():
        raise DomainError("softmax means do not form a normalizable vector")
    return p / totals
