import numpy as np
import numpy.testing as npt
import pytest

import genhead.tensor as T
from genhead.layers import Adam
from genhead.losses import (
    CriticLossParts,
    PerceptualLossNet,
    critic_loss,
    generator_loss,
    gradient_penalty,
    perceptual_loss,
    wasserstein_estimate,
)
from genhead.rng import SplitMix64
from genhead.tensor import Tape, Tensor

from _oracles import fd_gradient


def linear_critic(w):
    """D(x) = <w, x> per sample; gradient wrt x is the constant w."""
    wt = Tensor(np.asarray(w)[None])  # [1,C,H,W], aligned broadcast over batch

    def critic(x):
        return T.reduce_sum(T.mul(x, wt), axes=tuple(range(1, x.ndim)))

    return critic


def quadratic_critic(x):
    """D(x) = 0.5 * ||x||^2 per sample; gradient wrt x is x itself."""
    return T.scale(T.reduce_sum(T.square(x), axes=tuple(range(1, x.ndim))), 0.5)


def _batches(seed=0, n=6, shape=(3, 4, 4)):
    rng = SplitMix64(seed)
    return rng.normal((n,) + shape, std=0.5), rng.normal((n,) + shape, std=0.5)


# --- gradient penalty ---------------------------------------------------------

def test_gp_linear_critic_analytic():
    real, fake = _batches(1)
    w = SplitMix64(2).normal((3, 4, 4))
    with Tape():
        p = gradient_penalty(linear_critic(w), real, fake, SplitMix64(3))
    expect = (np.linalg.norm(w) - 1.0) ** 2
    assert p.item() == pytest.approx(expect, abs=1e-10)


def test_gp_unit_norm_linear_critic_zero():
    real, fake = _batches(4)
    w = SplitMix64(5).normal((3, 4, 4))
    w /= np.linalg.norm(w)
    with Tape():
        p = gradient_penalty(linear_critic(w), real, fake, SplitMix64(6))
    assert p.item() == pytest.approx(0.0, abs=1e-12)


def test_gp_quadratic_critic_matches_direct_evaluation():
    real, fake = _batches(7, n=5)
    seed = 8
    with Tape():
        p = gradient_penalty(quadratic_critic, real, fake, SplitMix64(seed))
    # regenerate the same interpolates and evaluate (||x_hat_i|| - 1)^2 directly
    eps = SplitMix64(seed).uniform((5,)).reshape(5, 1, 1, 1)
    x_hat = eps * real + (1 - eps) * fake
    norms = np.sqrt((x_hat**2).sum(axis=(1, 2, 3)))
    assert p.item() == pytest.approx(((norms - 1.0) ** 2).mean(), abs=1e-12)


def test_gp_nonnegative_and_shape_check():
    real, fake = _batches(9)
    with Tape():
        p = gradient_penalty(quadratic_critic, real, fake, SplitMix64(10))
    assert p.item() >= 0.0
    with pytest.raises(T.ShapeMismatchError):
        gradient_penalty(quadratic_critic, real, fake[:3], SplitMix64(11))


def test_gp_differentiable_wrt_critic_params():
    # small conv critic; FD on the kernel must match the double-backward grads
    rng = SplitMix64(12)
    real = rng.normal((3, 2, 4, 4), std=0.5)
    fake = rng.normal((3, 2, 4, 4), std=0.5)
    k0 = rng.normal((1, 2, 3, 3), std=0.4)
    seed = 13

    def penalty_value(kv):
        critic = lambda x: T.reduce_sum(
            T.conv2d(x, Tensor(kv), stride=1, pad=0), axes=(1, 2, 3)
        )
        return gradient_penalty(critic, real, fake, SplitMix64(seed)).item()

    k = Tensor(k0.copy(), requires_grad=True)
    with Tape() as tape:
        critic = lambda x: T.reduce_sum(T.conv2d(x, k, stride=1, pad=0), axes=(1, 2, 3))
        p = gradient_penalty(critic, real, fake, SplitMix64(seed))
        tape.backward(p)
    npt.assert_allclose(k.grad, fd_gradient(penalty_value, k0, 1e-5), rtol=1e-4, atol=1e-7)


# --- critic loss ------------------------------------------------------------------

def test_critic_loss_zero_critic():
    real, fake = _batches(14)
    zero_critic = lambda x: T.scale(T.reduce_sum(x, axes=(1, 2, 3)), 0.0)
    with Tape():
        parts = critic_loss(zero_critic, real, fake, gp_weight=10.0, rng=SplitMix64(15))
    # zero gradient norm -> penalty (0-1)^2 = 1
    assert parts.total == pytest.approx(10.0, abs=1e-12)
    assert parts.mean_real == 0.0 and parts.mean_fake == 0.0


def test_critic_loss_unit_norm_linear():
    real, fake = _batches(16)
    w = SplitMix64(17).normal((3, 4, 4))
    w /= np.linalg.norm(w)
    with Tape():
        parts = critic_loss(linear_critic(w), real, fake, 10.0, SplitMix64(18))
    expect = (w * (fake.mean(axis=0) - real.mean(axis=0))).sum()
    assert parts.total == pytest.approx(expect, abs=1e-10)


def test_critic_loss_identical_batches():
    real, _ = _batches(19)
    with Tape():
        parts = critic_loss(quadratic_critic, real, real.copy(), 10.0, SplitMix64(20))
    assert parts.mean_fake - parts.mean_real == pytest.approx(0.0, abs=1e-14)


def test_critic_loss_decomposition_identity():
    real, fake = _batches(21)
    w = SplitMix64(22).normal((3, 4, 4))
    with Tape():
        parts = critic_loss(linear_critic(w), real, fake, 7.5, SplitMix64(23))
    recomposed = parts.mean_fake - parts.mean_real + parts.gp_weight * parts.penalty
    assert parts.total == pytest.approx(recomposed, abs=1e-12)


# --- generator loss ------------------------------------------------------------------

def test_generator_loss_constant_critic():
    fake = Tensor(np.zeros((4, 3, 2, 2)))
    critic = lambda x: T.add(T.scale(T.reduce_sum(x, axes=(1, 2, 3)), 0.0), 2.5)
    assert generator_loss(critic, fake).item() == pytest.approx(-2.5)


def test_generator_loss_monotone_in_scores():
    critic = lambda x: T.reduce_sum(x, axes=(1, 2, 3))
    low = generator_loss(critic, Tensor(np.full((2, 1, 2, 2), 0.1))).item()
    high = generator_loss(critic, Tensor(np.full((2, 1, 2, 2), 0.9))).item()
    assert high < low


def test_generator_loss_grad_vs_fd_through_tiny_generator():
    rng = SplitMix64(24)
    z = rng.normal((4, 2))
    w_critic = rng.normal((3, 2, 2))

    def gen_loss_value(wv):
        fake = (z @ wv).reshape(4, 3, 2, 2)
        scores = (fake * w_critic).sum(axis=(1, 2, 3))
        return -scores.mean()

    w0 = rng.normal((2, 12), std=0.5)
    w = Tensor(w0.copy(), requires_grad=True)
    with Tape() as tape:
        fake = T.reshape(T.matmul(Tensor(z), w), (4, 3, 2, 2))
        loss = generator_loss(linear_critic(w_critic), fake)
        tape.backward(loss)
    npt.assert_allclose(w.grad, fd_gradient(gen_loss_value, w0), rtol=1e-6, atol=1e-9)


# --- wasserstein estimate --------------------------------------------------------------

def test_wasserstein_estimate_values():
    parts = CriticLossParts(mean_real=1.0, mean_fake=-1.0, penalty=0.3, total=0.0, gp_weight=10.0)
    assert wasserstein_estimate(parts) == -2.0
    same = CriticLossParts(0.7, 0.7, 0.0, 0.7, 10.0)
    assert wasserstein_estimate(same) == 0.0


def test_wasserstein_equals_total_minus_weighted_penalty():
    real, fake = _batches(25)
    with Tape():
        parts = critic_loss(quadratic_critic, real, fake, 10.0, SplitMix64(26))
    assert wasserstein_estimate(parts) == pytest.approx(
        parts.total - parts.gp_weight * parts.penalty, abs=1e-12
    )


def test_trained_critic_on_identical_1d_distributions_estimates_near_zero():
    # two-point distribution in {-0.5, +0.5}; real and fake are the same law,
    # so a near-optimal critic's distance estimate should sit near zero
    rng = SplitMix64(27)
    w1 = Tensor(rng.normal((1, 8), std=0.5), requires_grad=True)
    b1 = Tensor(np.zeros(8), requires_grad=True)
    w2 = Tensor(rng.normal((8, 1), std=0.5), requires_grad=True)
    params = [w1, b1, w2]

    def critic(x):
        h = T.leaky_relu(T.add(T.matmul(T.reshape(x, (x.shape[0], 1)), w1), b1))
        return T.matmul(h, w2)

    def draw(n):
        return np.where(rng.uniform((n,)) < 0.5, -0.5, 0.5).reshape(n, 1, 1, 1)

    opt = Adam(params, lr=1e-3)
    for _ in range(200):
        with Tape() as tape:
            parts = critic_loss(critic, draw(64), draw(64), 10.0, rng)
            tape.backward(parts.tensor)
        opt.step()
        opt.zero_grad()
    with Tape():
        parts = critic_loss(critic, draw(4096), draw(4096), 10.0, rng)
    assert abs(wasserstein_estimate(parts)) < 0.05


# --- perceptual loss ----------------------------------------------------------------------

def test_perceptual_loss_zero_on_identical():
    net = PerceptualLossNet.seeded(seed=1, in_channels=3)
    x = Tensor(SplitMix64(28).normal((2, 3, 8, 8), std=0.4))
    assert perceptual_loss(net, x, Tensor(x.data.copy())).item() == 0.0


def test_perceptual_loss_nonnegative_and_symmetric():
    net = PerceptualLossNet.seeded(seed=2)
    rng = SplitMix64(29)
    a = Tensor(rng.normal((2, 3, 8, 8), std=0.3))
    b = Tensor(rng.normal((2, 3, 8, 8), std=0.3))
    lab = perceptual_loss(net, a, b).item()
    lba = perceptual_loss(net, b, a).item()
    assert lab >= 0.0
    assert lab == pytest.approx(lba, abs=1e-14)


def test_perceptual_loss_identity_taps_equals_mse():
    identity = lambda x: x
    net = PerceptualLossNet([identity, identity, identity], weights=(0.1, 0.8, 0.1))
    rng = SplitMix64(30)
    a0 = rng.normal((2, 1, 4, 4))
    b0 = rng.normal((2, 1, 4, 4))
    loss = perceptual_loss(net, Tensor(a0), Tensor(b0)).item()
    assert loss == pytest.approx(((a0 - b0) ** 2).mean(), abs=1e-12)


def test_perceptual_net_weights_validated_and_frozen():
    with pytest.raises(ValueError):
        PerceptualLossNet([lambda x: x], weights=(0.5, 0.5))
    with pytest.raises(ValueError):
        PerceptualLossNet([lambda x: x, lambda x: x], weights=(0.5, 0.6))
    net = PerceptualLossNet.seeded(seed=3)
    assert net.weights == (0.1, 0.8, 0.1)
    kernel = net.stages[0].__defaults__[0]  # bound Tensor default
    with pytest.raises(ValueError):
        kernel.data[0, 0, 0, 0] = 1.0


def test_perceptual_loss_differentiable_into_generated():
    net = PerceptualLossNet.seeded(seed=4, in_channels=2, widths=(3, 4, 4))
    rng = SplitMix64(31)
    target = rng.normal((2, 2, 8, 8), std=0.4)

    def f(gen):
        return perceptual_loss(net, gen, Tensor(target))

    x0 = Tensor(rng.normal((2, 2, 8, 8), std=0.4))
    assert T.grad_check(f, x0, tol=1e-4).passed


def test_perceptual_loss_shape_mismatch():
    net = PerceptualLossNet.seeded(seed=5)
    with pytest.raises(T.ShapeMismatchError):
        perceptual_loss(net, Tensor(np.zeros((1, 3, 8, 8))), np.zeros((1, 3, 4, 4)))
