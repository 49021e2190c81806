"""Generator output heads: the final transform from unconstrained activations
to pixel values in [-1, 1].

Three interchangeable variants:

  * ``tanh``     — tanh alone, the conventional choice;
  * ``bn-tanh``  — batch normalization (gamma=1, beta=0 at init) before tanh,
                   so the pre-tanh distribution starts zero-mean/unit-std;
  * ``bn-clip``  — batch normalization followed by hard clipping, with
                   (gamma, beta) initialized per channel to the target
                   distribution's (std, mean) so generated images match the
                   target color statistics from the first forward pass.

(gamma, beta) remain trainable after statistics-based initialization; the
init is a starting point, not a freeze.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor as T
from .layers import BatchNorm
from .tensor import Tensor


class HeadKind(Enum):
    TANH_ALONE = "tanh"
    BN_TANH = "bn-tanh"
    BN_CLIP = "bn-clip"

    @classmethod
    def parse(cls, name: str) -> "HeadKind":
        for kind in cls:
            if kind.value == name:
                return kind
        raise ValueError(f"unknown head kind {name!r} (expected tanh | bn-tanh | bn-clip)")


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean and biased std of a target image set, in [-1,1] space."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean/std must be 1-d arrays of equal length")
        if np.any(self.std < 0):
            raise ValueError("std must be non-negative")


class OutputHead:
    """One of the three final-layer variants; `bn` is present iff the kind uses it."""

    def __init__(self, kind: HeadKind, bn: BatchNorm | None):
        self.kind = kind
        self.bn = bn

    @property
    def saturation_threshold(self) -> float:
        """Pre-nonlinearity saturation boundary: |x| > 2 for tanh, > 1 for clip."""
        return 1.0 if self.kind is HeadKind.BN_CLIP else 2.0

    def params(self):
        return [] if self.bn is None else self.bn.params()

    def forward_parts(self, x: Tensor, mode: str = "train") -> tuple[Tensor, Tensor]:
        """Return (output, pre_nonlinearity). Output is always inside [-1, 1]."""
        if x.ndim != 4:
            raise T.ShapeMismatchError(f"head expects [N,C,H,W], got {x.shape}")
        if self.bn is not None and x.shape[1] != self.bn.channels:
            raise T.ShapeMismatchError(
                f"head has {self.bn.channels} channels, input has {x.shape[1]}"
            )
        if self.kind is HeadKind.TANH_ALONE:
            return T.tanh(x), x
        self.bn.set_mode(mode)
        pre = self.bn.forward(x)
        if self.kind is HeadKind.BN_TANH:
            return T.tanh(pre), pre
        return T.clip(pre, -1.0, 1.0), pre

    def forward(self, x: Tensor, mode: str = "train") -> Tensor:
        return self.forward_parts(x, mode)[0]


def make_head(
    kind: HeadKind | str,
    channels: int,
    stats: ChannelStats | None = None,
) -> OutputHead:
    """Build a head; `stats` is required (and only used) for the bn-clip kind."""
    kind = HeadKind.parse(kind) if isinstance(kind, str) else kind
    if kind is HeadKind.TANH_ALONE:
        return OutputHead(kind, None)
    bn = BatchNorm(channels)
    if kind is HeadKind.BN_CLIP:
        if stats is None:
            raise ValueError("bn-clip head requires target channel statistics")
        if stats.mean.shape[0] != channels:
            raise ValueError(
                f"stats have {stats.mean.shape[0]} channels, head has {channels}"
            )
        bn.gamma.data[:] = stats.std
        bn.beta.data[:] = stats.mean
    return OutputHead(kind, bn)


def head_forward(head: OutputHead, pre_activations: Tensor, mode: str = "train") -> Tensor:
    return head.forward(pre_activations, mode)


def saturation_fraction(pre_nonlinearity, threshold: float) -> float:
    """Fraction of elements whose magnitude exceeds `threshold`."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    data = pre_nonlinearity.data if isinstance(pre_nonlinearity, Tensor) else np.asarray(
        pre_nonlinearity
    )
    if data.size == 0:
        return 0.0
    return float(np.mean(np.abs(data) > threshold))
