"""Monte-Carlo ground truth for the analytic moment computations.

Sampling uses the counter-based Philox generator so that a (seed, stream)
pair fully determines every draw, runs reproduce bitwise across platforms,
and independent streams can be farmed out to workers without coordination.

Estimates carry standard errors: SE of the mean from the sample variance,
SE of the variance from the fourth central moment.  Accumulation is
shifted-moment based in float64 so that million-sample streams keep
full precision without storing samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .heads import GaussianHead

_MASK64 = (1 << 64) - 1


def rng_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator for a (seed, stream) pair; same pair, same draws."""
    seed = int(seed)
    stream = int(stream)
    if not 0 <= seed <= _MASK64 or not 0 <= stream <= _MASK64:
        raise ValueError("seed and stream must be unsigned 64-bit integers")
    return np.random.Generator(np.random.Philox(key=[seed, stream]))


def raw_outputs(seed: int, stream: int, n: int) -> np.ndarray:
    """First n raw 64-bit generator words; used for known-answer tests."""
    gen = rng_stream(seed, stream)
    return gen.bit_generator.random_raw(n)


@dataclass(frozen=True)
class McEstimate:
    """Empirical moments with standard errors, one entry per class."""

    mean: np.ndarray
    variance: np.ndarray
    se_mean: np.ndarray
    se_variance: np.ndarray
    n: int
    seed: int
    stream: int = 0


class _ShiftedMoments:
    """Accumulates sums of powers of (x - shift) per column.

    The shift is frozen to the first chunk's column means, which keeps the
    higher central moments free of catastrophic cancellation.
    """

    def __init__(self, width: int):
        self.width = width
        self.n = 0
        self.shift = None
        self.s1 = np.zeros(width)
        self.s2 = np.zeros(width)
        self.s3 = np.zeros(width)
        self.s4 = np.zeros(width)

    def update(self, chunk: np.ndarray):
        chunk = np.asarray(chunk, dtype=np.float64)
        if self.shift is None:
            self.shift = chunk.mean(axis=0)
        d = chunk - self.shift
        d2 = d * d
        self.n += chunk.shape[0]
        self.s1 += d.sum(axis=0)
        self.s2 += d2.sum(axis=0)
        self.s3 += (d2 * d).sum(axis=0)
        self.s4 += (d2 * d2).sum(axis=0)

    def finish(self, seed: int, stream: int) -> McEstimate:
        if self.n < 2:
            raise DomainError("need at least 2 samples for an estimate")
        n = self.n
        m1 = self.s1 / n
        e2 = self.s2 / n
        e3 = self.s3 / n
        e4 = self.s4 / n
        mu2 = np.maximum(e2 - m1 * m1, 0.0)
        mu4 = np.maximum(e4 - 4 * m1 * e3 + 6 * m1 * m1 * e2 - 3 * m1 ** 4, 0.0)
        mean = self.shift + m1
        variance = mu2 * n / (n - 1)
        se_mean = np.sqrt(mu2 / n)
        se_var = np.sqrt(np.maximum(mu4 - mu2 * mu2, 0.0) / n)
        return McEstimate(mean, variance, se_mean, se_var, n, seed, stream)


def mc_logit_moments(
    x,
    head: GaussianHead,
    n: int,
    seed: int,
    stream: int = 0,
    chunk: int = 1 << 17,
) -> McEstimate:
    """Sample w ~ factorized posterior and estimate logit moments at x.

    Per sample and class j the draw is x . w_j plus a single offset draw
    covering the independent bias and observation-noise components (their
    sum is Gaussian, so one draw is distributionally exact).  Draw order
    per chunk is class-major (weights for class 0, its offset, class 1,
    ...), fixed by contract.  Sampling runs in float32 and the moment
    accumulation in float64.
    """
    if n < 1000:
        raise ValueError(f"mc_logit_moments needs n >= 1000, got {n}")
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != head.feature_dim:
        raise ShapeError(f"x has {x.size} features, head expects {head.feature_dim}")
    if not np.isfinite(x).all():
        raise DomainError("non-finite features")

    k = head.num_classes
    dim = x.size
    gen = rng_stream(seed, stream)
    centers = (x @ head.mean_weight.T + head.mean_bias).astype(np.float32)
    scaled = (np.sqrt(head.var_weight) * x).astype(np.float32)  # (K, D)
    offset_sd = np.sqrt(head.var_bias + head.noise).astype(np.float32)

    acc = _ShiftedMoments(k)
    remaining = n
    buf = np.empty((min(chunk, n), k), dtype=np.float32)
    while remaining > 0:
        c = min(chunk, remaining)
        out = buf[:c]
        for j in range(k):
            z = gen.standard_normal((c, dim), dtype=np.float32)
            s = z @ scaled[j]
            if offset_sd[j] > 0.0:
                s += offset_sd[j] * gen.standard_normal(c, dtype=np.float32)
            s += centers[j]
            out[:, j] = s
        acc.update(out)
        remaining -= c
    return acc.finish(seed, stream)


def mc_softmax_moments(
    mu,
    var,
    n: int,
    seed: int,
    stream: int = 0,
    chunk: int = 1 << 16,
) -> McEstimate:
    """Sample independent Gaussian logits, apply the exact softmax, and
    estimate output moments per class."""
    if n < 10_000:
        raise ValueError(f"mc_softmax_moments needs n >= 10000, got {n}")
    mu = np.asarray(mu, dtype=np.float64).ravel()
    var = np.asarray(var, dtype=np.float64).ravel()
    if mu.shape != var.shape:
        raise ShapeError(f"mu shape {mu.shape} != var shape {var.shape}")
    if np.any(var < 0) or not np.isfinite(mu).all() or not np.isfinite(var).all():
        raise DomainError("logit moments must be finite with var >= 0")

    k = mu.size
    sd = np.sqrt(var)
    gen = rng_stream(seed, stream)
    acc = _ShiftedMoments(k)
    remaining = n
    while remaining > 0:
        c = min(chunk, remaining)
        z = gen.standard_normal((c, k), dtype=np.float32)
        logits = mu + sd * z.astype(np.float64)
        logits -= logits.max(axis=1, keepdims=True)
        np.exp(logits, out=logits)
        logits /= logits.sum(axis=1, keepdims=True)
        acc.update(logits)
        remaining -= c
    return acc.finish(seed, stream)
