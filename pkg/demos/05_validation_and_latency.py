"""Analytic-vs-sampling validation report and a small latency comparison.

The validation table gates the exact quantities (predictive logit moments)
at 4 standard errors and reports the softmax approximation deviations
without a gate.  The benchmark compares the probabilistic pipeline against
the point-estimate pipeline on one stored design matrix.
"""

import numpy as np

from uqseg import GaussianHead, run_bench
from uqseg.cli import validation_report

text, _csv = validation_report(seed=0, samples=100_000, logit_cases=2, softmax_cases=2)
print(text)

rng = np.random.default_rng(1)
design = rng.normal(size=(128, 128, 32)).astype(np.float32)
head = GaussianHead(
    rng.normal(size=(9, 32), scale=0.4),
    rng.normal(size=9, scale=0.1),
    rng.uniform(0, 0.05, size=(9, 32)),
    rng.uniform(0, 0.05, size=9),
    0.0,
)
print()
for mode in ("point", "bayes"):
    report = run_bench(design, head, mode=mode, iterations=30, warmup_passes=5)
    print(report.text())
    print()
