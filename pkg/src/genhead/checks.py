"""Finite-difference verification suite covering every differentiable op.

Each check builds a scalar function of a primary input tensor and compares
the tape's gradients against central differences (h=1e-5, tolerance 1e-4).
Exposed both to the CLI (`genhead gradcheck`) and to the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .heads import HeadKind, make_head
from .layers import BatchNorm, layer_norm
from .losses import PerceptualLossNet, gradient_penalty, perceptual_loss
from .rng import SplitMix64, derive_seed
from .tensor import Tensor

TOL = 1e-4
STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def _check(name: str, f, x0: np.ndarray, results: list) -> None:
    res = T.grad_check(f, Tensor(x0.copy()), h=STEP, tol=TOL)
    results.append(CheckResult(name, res.max_rel_error, TOL))


def run_gradient_checks(seed: int = 0) -> list[CheckResult]:
    rng = SplitMix64(derive_seed(seed, "gradcheck"))
    results: list[CheckResult] = []

    x4 = rng.normal((2, 3, 4, 4), std=1.2)
    other = Tensor(rng.normal((2, 3, 4, 4), std=0.8) + 2.5)  # safe divisor
    chan = Tensor(rng.normal((3,), std=0.5) + 1.5)

    _check("elementwise.add", lambda t: T.reduce_mean(T.square(T.add(t, other))), x4, results)
    _check("elementwise.sub", lambda t: T.reduce_mean(T.square(T.sub(t, other))), x4, results)
    _check("elementwise.mul", lambda t: T.reduce_mean(T.mul(t, other)), x4, results)
    _check("elementwise.div", lambda t: T.reduce_mean(T.div(t, other)), x4, results)
    _check("elementwise.div-by-x", lambda t: T.reduce_mean(T.div(other, T.add(t, 5.0))), x4, results)
    _check("elementwise.scale", lambda t: T.reduce_mean(T.scale(t, -1.7)), x4, results)
    _check("elementwise.negate", lambda t: T.reduce_mean(T.square(T.neg(t))), x4, results)
    _check("elementwise.square", lambda t: T.reduce_mean(T.square(t)), x4, results)
    _check(
        "elementwise.sqrt",
        lambda t: T.reduce_mean(T.sqrt(T.add(T.square(t), 0.5))),
        x4,
        results,
    )
    _check(
        "elementwise.channel-broadcast",
        lambda t: T.reduce_mean(T.square(T.mul(t, chan))),
        x4,
        results,
    )

    a = rng.normal((3, 4))
    b = Tensor(rng.normal((4, 2)))
    _check("matmul.left", lambda t: T.reduce_mean(T.square(T.matmul(t, b))), a, results)
    _check(
        "matmul.right",
        lambda t: T.reduce_mean(T.square(T.matmul(Tensor(a), T.reshape(t, (4, 2))))),
        rng.normal((8,)),
        results,
    )

    k_conv = Tensor(rng.normal((4, 3, 3, 3), std=0.4))
    _check(
        "conv2d.input",
        lambda t: T.reduce_mean(T.square(T.conv2d(t, k_conv, stride=2, pad=1))),
        rng.normal((2, 3, 5, 5)),
        results,
    )
    x_conv = Tensor(rng.normal((2, 3, 5, 5)))
    _check(
        "conv2d.kernel",
        lambda t: T.reduce_mean(T.square(T.conv2d(x_conv, t, stride=2, pad=1))),
        rng.normal((4, 3, 3, 3), std=0.4),
        results,
    )

    k_ct = Tensor(rng.normal((3, 2, 4, 4), std=0.4))
    _check(
        "conv_transpose2d.input",
        lambda t: T.reduce_mean(T.square(T.conv_transpose2d(t, k_ct, stride=2, pad=1))),
        rng.normal((2, 3, 3, 3)),
        results,
    )
    x_ct = Tensor(rng.normal((2, 3, 3, 3)))
    _check(
        "conv_transpose2d.kernel",
        lambda t: T.reduce_mean(T.square(T.conv_transpose2d(x_ct, t, stride=2, pad=1))),
        rng.normal((3, 2, 4, 4), std=0.4),
        results,
    )

    _check(
        "reduce.mean",
        lambda t: T.reduce_mean(T.square(T.reduce_mean(t, axes=(0, 2, 3)))),
        x4,
        results,
    )
    _check(
        "reduce.sum",
        lambda t: T.reduce_mean(T.square(T.reduce_sum(t, axes=(1,)))),
        x4,
        results,
    )

    def bn_train(t):
        bn = BatchNorm(3)
        bn.gamma.data[:] = np.array([1.2, 0.7, 1.5])
        bn.beta.data[:] = np.array([0.1, -0.3, 0.2])
        return T.reduce_mean(T.tanh(bn.forward(t)))

    _check("batchnorm.train", bn_train, rng.normal((4, 3, 3, 3), mean=0.5), results)

    gain = Tensor(np.array([1.1, 0.9]))
    bias = Tensor(np.array([0.2, -0.1]))
    _check(
        "layer_norm",
        lambda t: T.reduce_mean(T.square(layer_norm(t, gain, bias))),
        rng.normal((3, 2, 3, 3), std=1.5),
        results,
    )

    x_act = rng.normal((3, 3, 4, 4), std=1.5)
    _check("activation.tanh", lambda t: T.reduce_mean(T.tanh(t)), x_act, results)
    _check("activation.relu", lambda t: T.reduce_mean(T.square(T.relu(t))), x_act, results)
    _check(
        "activation.leaky-relu",
        lambda t: T.reduce_mean(T.square(T.leaky_relu(t))),
        x_act,
        results,
    )
    # keep FD probes away from the clip kinks at +/-1
    x_clip = x_act.copy()
    x_clip[np.abs(np.abs(x_clip) - 1.0) < 0.01] += 0.05
    _check("activation.clip", lambda t: T.reduce_mean(T.clip(t)), x_clip, results)

    def head_loss(t):
        head = make_head(HeadKind.BN_TANH, 3)
        return T.reduce_mean(T.square(head.forward(t, "train")))

    _check("output-head.bn-tanh", head_loss, rng.normal((4, 3, 3, 3)), results)

    # losses: gradient penalty wrt critic parameters (double backward)
    real = rng.normal((3, 2, 4, 4), std=0.5)
    fake = rng.normal((3, 2, 4, 4), std=0.5)
    gp_seed = derive_seed(seed, "gp-eps")

    def gp_loss(t):
        critic = lambda x: T.reduce_sum(T.conv2d(x, t, stride=1, pad=0), axes=(1, 2, 3))
        return gradient_penalty(critic, real, fake, SplitMix64(gp_seed))

    _check("loss.gradient-penalty", gp_loss, rng.normal((1, 2, 3, 3), std=0.4), results)

    net = PerceptualLossNet.seeded(derive_seed(seed, "loss-net"), in_channels=2, widths=(3, 4, 4))
    target = Tensor(rng.normal((2, 2, 8, 8), std=0.4))
    _check(
        "loss.perceptual",
        lambda t: perceptual_loss(net, t, target),
        rng.normal((2, 2, 8, 8), std=0.4),
        results,
    )

    return results
