"""Training objectives: improved-WGAN critic/generator losses with gradient
penalty, and the fixed-feature perceptual loss used for super-resolution.

The gradient penalty differentiates through the critic's input gradient, so
the whole critic loss remains differentiable with respect to critic
parameters (the tape records the inner gradient computation via
`create_graph=True`). This assumes the critic scores samples independently —
true for conv/layer-norm/dense critics, not for a batch-normalized one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .rng import SplitMix64
from .tensor import Tape, Tensor

DEFAULT_GP_WEIGHT = 10.0  # standard improved-WGAN setting

Critic = Callable[[Tensor], Tensor]  # [N,C,H,W] -> per-sample scores [N]


@dataclass
class CriticLossParts:
    """Logged decomposition of one critic loss evaluation.

    `total == mean_fake - mean_real + gp_weight * penalty` by construction;
    `tensor` carries the differentiable total for the optimizer step.
    """

    mean_real: float
    mean_fake: float
    penalty: float
    total: float
    gp_weight: float
    tensor: Tensor | None = None


def _scores(critic: Critic, x: Tensor) -> Tensor:
    s = critic(x)
    if s.size != x.shape[0]:
        raise T.ShapeMismatchError(
            f"critic must return one score per sample, got {s.shape} for batch {x.shape[0]}"
        )
    return T.reshape(s, (x.shape[0],))


def gradient_penalty(
    critic: Critic,
    real: np.ndarray,
    fake: np.ndarray,
    rng: SplitMix64,
) -> Tensor:
    """Mean squared deviation of the critic's gradient norm from 1 on random
    interpolates ``x_i = eps_i * real_i + (1 - eps_i) * fake_i``.

    `real`/`fake` are treated as constants; `eps_i` is uniform per sample.
    Uses the caller's active tape so the penalty stays differentiable with
    respect to critic parameters; outside any tape it owns a temporary one
    and returns a plain value.
    """
    tape = T.active_tape()
    if tape is None:
        with Tape():
            return gradient_penalty(critic, real, fake, rng)
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    if real.shape != fake.shape:
        raise T.ShapeMismatchError(f"real {real.shape} != fake {fake.shape}")
    n = real.shape[0]
    eps = rng.uniform((n,)).reshape((n,) + (1,) * (real.ndim - 1))
    x_hat = Tensor(eps * real + (1.0 - eps) * fake, requires_grad=True)
    scores = _scores(critic, x_hat)
    # per-sample critic => grad of the summed score stacks per-sample grads
    total_score = T.reduce_sum(scores)
    (grads,) = tape.gradient(total_score, [x_hat], create_graph=True)
    norms = T.sqrt(T.reduce_sum(T.square(grads), axes=tuple(range(1, real.ndim))))
    return T.reduce_mean(T.square(T.sub(norms, 1.0)))


def critic_loss(
    critic: Critic,
    real: np.ndarray,
    fake: np.ndarray,
    gp_weight: float,
    rng: SplitMix64,
) -> CriticLossParts:
    """total = mean(D(fake)) - mean(D(real)) + gp_weight * penalty."""
    mean_real = T.reduce_mean(_scores(critic, Tensor(real)))
    mean_fake = T.reduce_mean(_scores(critic, Tensor(fake)))
    penalty = gradient_penalty(critic, real, fake, rng)
    total = T.add(T.sub(mean_fake, mean_real), T.scale(penalty, gp_weight))
    return CriticLossParts(
        mean_real=mean_real.item(),
        mean_fake=mean_fake.item(),
        penalty=penalty.item(),
        total=total.item(),
        gp_weight=gp_weight,
        tensor=total,
    )


def generator_loss(critic: Critic, fake: Tensor) -> Tensor:
    """-mean(D(fake)); the generator climbs the critic's score."""
    return T.neg(T.reduce_mean(_scores(critic, fake)))


def wasserstein_estimate(parts: CriticLossParts) -> float:
    """The plotted (negative) distance estimate: mean_fake - mean_real."""
    return parts.mean_fake - parts.mean_real


# --- perceptual loss -----------------------------------------------------------

class PerceptualLossNet:
    """Fixed-weight feature network with three tap points.

    A stand-in for a large pretrained loss network: three seeded conv+relu
    stages whose activations define the feature space. Weights are frozen
    (non-trainable, marked read-only) after construction; stage weights
    must sum to 1.
    """

    def __init__(
        self,
        stages: Sequence[Callable[[Tensor], Tensor]],
        weights: Sequence[float] = (0.1, 0.8, 0.1),
    ):
        if len(stages) != len(weights):
            raise ValueError("one weight per stage")
        if abs(sum(weights) - 1.0) > 1e-12:
            raise ValueError(f"stage weights must sum to 1, got {sum(weights)}")
        self.stages = tuple(stages)
        self.weights = tuple(float(w) for w in weights)

    @classmethod
    def seeded(
        cls,
        seed: int,
        in_channels: int = 3,
        widths: tuple[int, int, int] = (8, 16, 16),
        weights: Sequence[float] = (0.1, 0.8, 0.1),
    ) -> "PerceptualLossNet":
        rng = SplitMix64(seed)
        stages = []
        prev = in_channels
        for i, width in enumerate(widths):
            # 3x3/stride-1 tap at full resolution, then 4x4/stride-2 halvings
            stride = 1 if i == 0 else 2
            ksize = 3 if i == 0 else 4
            kernel = rng.normal(
                (width, prev, ksize, ksize), std=np.sqrt(2.0 / (prev * ksize * ksize))
            )
            kernel.flags.writeable = False
            k = Tensor(kernel)

            def stage(x, k=k, stride=stride):
                return T.relu(T.conv2d(x, k, stride=stride, pad=1))

            stages.append(stage)
            prev = width
        return cls(stages, weights)

    def taps(self, x: Tensor) -> list[Tensor]:
        out = []
        for stage in self.stages:
            x = stage(x)
            out.append(x)
        return out


def perceptual_loss(net: PerceptualLossNet, generated: Tensor, target) -> Tensor:
    """Weighted sum of feature-space MSEs between generated and target images."""
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target))
    if generated.shape != target.shape:
        raise T.ShapeMismatchError(
            f"generated {generated.shape} != target {target.shape}"
        )
    gen_taps = net.taps(generated)
    tgt_taps = net.taps(target)
    loss = None
    for w, g, t in zip(net.weights, gen_taps, tgt_taps):
        term = T.scale(T.reduce_mean(T.square(T.sub(g, t))), w)
        loss = term if loss is None else T.add(loss, term)
    return loss
