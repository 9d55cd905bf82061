"""Latency harness: repeated full forward passes of the probabilistic head
versus the point-estimate head over one stored design matrix.

Each pass is timed individually with the monotonic clock so mean/std/min
statistics are reportable; a checksum folded from the outputs keeps the
work observable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .epsoftmax import RatioVariant, ep_softmax
from .heads import GaussianHead, point_logits, predict_moments
from .uncertainty import make_bundle

MODES = ("point", "bayes")


@dataclass(frozen=True)
class BenchReport:
    mode: str
    iterations: int
    total_seconds: float
    mean_seconds: float
    std_seconds: float
    min_seconds: float
    fps: float
    height: int
    width: int
    classes: int
    features: int
    checksum: float

    CSV_HEADER = (
        "mode,iterations,total_seconds,mean_seconds,std_seconds,"
        "min_seconds,fps,height,width,classes,features,checksum"
    )

    def csv_row(self) -> str:
        return (
            f"{self.mode},{self.iterations},{self.total_seconds:.9f},"
            f"{self.mean_seconds:.9f},{self.std_seconds:.9f},{self.min_seconds:.9f},"
            f"{self.fps:.4f},{self.height},{self.width},{self.classes},"
            f"{self.features},{self.checksum:.6e}"
        )

    def text(self) -> str:
        return (
            f"mode={self.mode} grid={self.height}x{self.width} D={self.features} "
            f"K={self.classes}\n"
            f"  passes           {self.iterations}\n"
            f"  total wall time  {self.total_seconds:.4f} s\n"
            f"  per-pass mean    {self.mean_seconds * 1e3:.3f} ms "
            f"(std {self.std_seconds * 1e3:.3f}, min {self.min_seconds * 1e3:.3f})\n"
            f"  fps              {self.fps:.2f}\n"
            f"  checksum         {self.checksum:.6e}"
        )


def _bayes_pass(design, head, variant, entropy_space):
    lm = predict_moments(design, head)
    pm = ep_softmax(lm, variant)
    bundle = make_bundle(pm, lm, entropy_space)
    return (
        float(bundle.epistemic.flat[0])
        + float(bundle.aleatoric.flat[-1])
        + float(bundle.label[:: max(1, bundle.label.shape[0] // 7)].sum())
    )


def _point_pass(design, head):
    z = point_logits(design, head)
    z -= z.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    label = np.argmax(z, axis=-1)
    return float(z.flat[0]) + float(label[:: max(1, label.shape[0] // 7)].sum())


def run_bench(
    design,
    head: GaussianHead,
    mode: str = "bayes",
    iterations: int = 1000,
    warmup_passes: int = 20,
    variant=RatioVariant.DELTA,
    entropy_space: str = "logit",
    threads: int = 0,
) -> BenchReport:
    """Time ``iterations`` full passes after ``warmup_passes`` untimed ones.

    The benchmark loop itself is sequential; ``threads`` > 0 pins the BLAS
    pool driving the data-parallel pixel path so scaling can be measured
    (0 keeps the machine default).  Thread pinning needs threadpoolctl.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if threads:
        try:
            from threadpoolctl import threadpool_limits
        except ImportError as exc:
            raise RuntimeError("threads > 0 requires the threadpoolctl package") from exc
        with threadpool_limits(int(threads)):
            return run_bench(design, head, mode, iterations, warmup_passes,
                             variant, entropy_space, threads=0)
    design = np.asarray(design)
    h = design.shape[0]
    w = design.shape[1] if design.ndim == 3 else 1

    if mode == "bayes":
        one_pass = lambda: _bayes_pass(design, head, variant, entropy_space)  # noqa: E731
    else:
        one_pass = lambda: _point_pass(design, head)  # noqa: E731

    for _ in range(warmup_passes):
        one_pass()

    samples = np.empty(iterations)
    checksum = 0.0
    t_begin = time.perf_counter()
    for i in range(iterations):
        t0 = time.perf_counter()
        checksum += one_pass()
        samples[i] = time.perf_counter() - t0
    total = time.perf_counter() - t_begin

    return BenchReport(
        mode=mode,
        iterations=iterations,
        total_seconds=total,
        mean_seconds=float(samples.mean()),
        std_seconds=float(samples.std()) if iterations > 1 else 0.0,
        min_seconds=float(samples.min()),
        fps=iterations / total,
        height=h,
        width=w,
        classes=head.num_classes,
        features=head.feature_dim,
        checksum=checksum,
    )
