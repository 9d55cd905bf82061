"""Analytic Bayesian uncertainty head for frozen feature extractors.

The package turns SGD snapshots of a final 1x1-convolution layer into a
factorized Gaussian weight posterior, propagates it in closed form to
Gaussian logit moments and moment-matched softmax outputs, and reduces
those to epistemic / aleatoric / class-conditional uncertainty maps -- all
in a single forward pass, validated against Monte-Carlo sampling.
"""

from .bench import BenchReport, run_bench
from .container import (
    DEFAULT_IGNORE_VALUE,
    LabelMap,
    Tensor,
    TensorContainer,
    read_container,
    write_container,
    write_pgm,
)
from .epsoftmax import (
    ProbMoments,
    RatioVariant,
    ep_softmax,
    expected_categorical,
    lognormal_moments,
)
from .errors import (
    BadMagicError,
    ContainerError,
    DomainError,
    DuplicateNameError,
    EmptyBatchError,
    InsufficientSnapshotsError,
    NonFiniteDataError,
    ShapeError,
    TruncatedPayloadError,
    UnknownDtypeError,
    UnsupportedVersionError,
    UqsegError,
)
from .fit import (
    FitConfig,
    FitResult,
    load_dataset,
    lr_at,
    make_separable_dataset,
    ohem_ce,
    save_dataset,
    sgd_fit,
)
from .heads import (
    GaussianHead,
    LogitMoments,
    load_head,
    point_logits,
    predict_moments,
    save_head,
)
from .oracle import McEstimate, mc_logit_moments, mc_softmax_moments, rng_stream
from .swag import (
    HeadLayout,
    SnapshotStream,
    SwagAccumulator,
    load_snapshot_stream,
    save_snapshot_stream,
)
from .uncertainty import (
    UncertaintyBundle,
    categorical_entropy,
    gaussian_entropy,
    load_bundle,
    make_bundle,
    save_bundle,
)

__version__ = "0.1.0"
