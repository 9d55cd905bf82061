"""Diagonal posterior estimation from SGD parameter snapshots.

The accumulator keeps a running mean and running mean-of-squares of
flattened head parameters (numerically stable online rule, float64).  At
finalization the diagonal variance is the population variance of the
stream, clamped at zero, and the posterior mean is overridden with the
supplied pretrained / point-estimate parameters.

Flattening order is row-major (K, D) weights followed by the K biases;
this layout is the interchange contract for snapshot files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import Tensor, TensorContainer, read_container, write_container
from .errors import InsufficientSnapshotsError, ShapeError
from .heads import GaussianHead

VARIANCE_CENTERS = ("swa", "pretrained")


@dataclass(frozen=True)
class HeadLayout:
    """Shape descriptor for flattened head parameter vectors."""

    num_classes: int
    feature_dim: int

    def __post_init__(self):
        if self.num_classes < 1 or self.feature_dim < 1:
            raise ShapeError(f"invalid layout {self}")

    @property
    def length(self) -> int:
        return self.num_classes * (self.feature_dim + 1)

    def pack(self, weight, bias) -> np.ndarray:
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weight.shape != (self.num_classes, self.feature_dim) or bias.shape != (
            self.num_classes,
        ):
            raise ShapeError(
                f"cannot pack weight {weight.shape} / bias {bias.shape} into {self}"
            )
        return np.concatenate([weight.ravel(), bias])

    def unpack(self, vec):
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.size != self.length:
            raise ShapeError(f"vector length {vec.size} != layout length {self.length}")
        k, d = self.num_classes, self.feature_dim
        return vec[: k * d].reshape(k, d), vec[k * d :].copy()


@dataclass(frozen=True)
class SnapshotStream:
    """Ordered flattened parameter snapshots recorded during SGD."""

    snapshots: np.ndarray  # (T, P) float32
    layout: HeadLayout

    def __post_init__(self):
        snaps = np.ascontiguousarray(self.snapshots, dtype=np.float32)
        if snaps.ndim != 2 or snaps.shape[1] != self.layout.length:
            raise ShapeError(
                f"snapshot array {snaps.shape} does not match layout length "
                f"{self.layout.length}"
            )
        object.__setattr__(self, "snapshots", snaps)

    def __len__(self):
        return self.snapshots.shape[0]

    def __iter__(self):
        return iter(self.snapshots)


class SwagAccumulator:
    """Single-writer online accumulator of snapshot moments."""

    def __init__(self, layout: HeadLayout):
        self.layout = layout
        self.count = 0
        self._mean = np.zeros(layout.length, dtype=np.float64)
        self._mean_sq = np.zeros(layout.length, dtype=np.float64)

    @property
    def mean(self) -> np.ndarray:
        return self._mean.copy()

    @property
    def mean_sq(self) -> np.ndarray:
        return self._mean_sq.copy()

    def observe(self, snapshot) -> "SwagAccumulator":
        """Fold one flattened parameter vector into the running moments."""
        vec = np.asarray(snapshot, dtype=np.float64).ravel()
        if vec.size != self.layout.length:
            raise ShapeError(
                f"snapshot length {vec.size} != layout length {self.layout.length}"
            )
        self.count += 1
        self._mean += (vec - self._mean) / self.count
        self._mean_sq += (vec * vec - self._mean_sq) / self.count
        return self

    def observe_stream(self, stream: SnapshotStream) -> "SwagAccumulator":
        for snap in stream:
            self.observe(snap)
        return self

    def finalize(
        self,
        pretrained_mean,
        noise: float = 0.0,
        variance_center: str = "swa",
        var_floor: float = 0.0,
    ) -> GaussianHead:
        """Build the factorized Gaussian head.

        The head mean is always the supplied pretrained/point parameters.
        ``variance_center`` picks what the second moment is taken about:
        the snapshot running mean (``swa``, standard diagonal method) or
        the pretrained parameters themselves (``pretrained``).
        """
        if self.count < 2:
            raise InsufficientSnapshotsError(
                f"need at least 2 snapshots to estimate a variance, have {self.count}"
            )
        if variance_center not in VARIANCE_CENTERS:
            raise ValueError(f"variance_center must be one of {VARIANCE_CENTERS}")
        center = np.asarray(pretrained_mean, dtype=np.float64).ravel()
        if center.size != self.layout.length:
            raise ShapeError(
                f"pretrained vector length {center.size} != layout length "
                f"{self.layout.length}"
            )
        if variance_center == "swa":
            var = self._mean_sq - self._mean * self._mean
        else:
            var = self._mean_sq - 2.0 * center * self._mean + center * center
        np.maximum(var, 0.0, out=var)
        if var_floor > 0.0:
            np.maximum(var, var_floor, out=var)

        mean_w, mean_b = self.layout.unpack(center)
        var_w, var_b = self.layout.unpack(var)
        return GaussianHead(mean_w, mean_b, var_w, var_b, noise)


def observe(acc: SwagAccumulator, snapshot) -> SwagAccumulator:
    """Functional alias for :meth:`SwagAccumulator.observe`."""
    return acc.observe(snapshot)


def finalize(acc: SwagAccumulator, pretrained_mean, **kwargs) -> GaussianHead:
    """Functional alias for :meth:`SwagAccumulator.finalize`."""
    return acc.finalize(pretrained_mean, **kwargs)


def save_snapshot_stream(path, stream: SnapshotStream):
    container = TensorContainer(
        [
            Tensor(
                "layout",
                np.array(
                    [stream.layout.num_classes, stream.layout.feature_dim], np.float32
                ),
            )
        ]
    )
    for i, snap in enumerate(stream):
        container.add(Tensor(f"snap_{i:05d}", snap))
    write_container(path, container)


def load_snapshot_stream(path) -> SnapshotStream:
    container = read_container(path)
    if "layout" not in container:
        raise ShapeError(f"'{path}' has no 'layout' entry")
    k, d = (int(v) for v in container["layout"].data.ravel())
    layout = HeadLayout(k, d)
    names = sorted(n for n in container.names() if n.startswith("snap_"))
    if not names:
        raise ShapeError(f"'{path}' holds no snapshots")
    snaps = np.stack([container[n].data for n in names])
    return SnapshotStream(snaps, layout)
