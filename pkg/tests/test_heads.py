import numpy as np
import numpy.testing as npt
import pytest

import genhead.tensor as T
from genhead.heads import (
    ChannelStats,
    HeadKind,
    OutputHead,
    head_forward,
    make_head,
    saturation_fraction,
)
from genhead.rng import SplitMix64
from genhead.tensor import Tape, Tensor


def test_make_head_degenerate_stats_equals_bn_tanh_init():
    stats = ChannelStats(mean=np.zeros(3), std=np.ones(3))
    clip_head = make_head(HeadKind.BN_CLIP, 3, stats)
    tanh_head = make_head(HeadKind.BN_TANH, 3)
    npt.assert_array_equal(clip_head.bn.gamma.data, tanh_head.bn.gamma.data)
    npt.assert_array_equal(clip_head.bn.beta.data, tanh_head.bn.beta.data)


def test_make_head_bn_tanh_defaults():
    head = make_head("bn-tanh", 3)
    npt.assert_array_equal(head.bn.gamma.data, [1.0, 1.0, 1.0])
    npt.assert_array_equal(head.bn.beta.data, [0.0, 0.0, 0.0])


def test_make_head_bn_clip_from_stats():
    mean = np.array([-0.2, 0.0, 0.3])
    std = np.array([0.4, 0.5, 0.2])
    head = make_head(HeadKind.BN_CLIP, 3, ChannelStats(mean, std))
    npt.assert_array_equal(head.bn.gamma.data, std)
    npt.assert_array_equal(head.bn.beta.data, mean)


def test_make_head_errors():
    with pytest.raises(ValueError):
        make_head(HeadKind.BN_CLIP, 3)  # stats required
    with pytest.raises(ValueError):
        ChannelStats(mean=np.zeros(3), std=np.array([0.1, -0.2, 0.3]))
    with pytest.raises(ValueError):
        make_head("sigmoid", 3)


def test_tanh_alone_zero_input():
    head = make_head(HeadKind.TANH_ALONE, 3)
    out = head_forward(head, Tensor(np.zeros((2, 3, 4, 4))))
    npt.assert_array_equal(out.data, np.zeros((2, 3, 4, 4)))


def test_bn_clip_preclip_stats_and_identity_region():
    rng = SplitMix64(50)
    head = make_head(
        HeadKind.BN_CLIP, 3, ChannelStats(mean=np.zeros(3), std=np.full(3, 0.4))
    )
    x = Tensor(rng.normal((16, 3, 8, 8), mean=5.0, std=3.0))
    out, pre = head.forward_parts(x, "train")
    npt.assert_allclose(pre.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)
    npt.assert_allclose(pre.data.std(axis=(0, 2, 3)), 0.4, atol=1e-3)
    inside = np.abs(pre.data) <= 1.0
    npt.assert_array_equal(out.data[inside], pre.data[inside])


def test_bn_tanh_tail_fraction_matches_gaussian():
    rng = SplitMix64(51)
    head = make_head(HeadKind.BN_TANH, 1)
    x = Tensor(rng.normal((1000, 1, 32, 32), mean=2.0, std=7.0))
    _, pre = head.forward_parts(x, "train")
    frac = saturation_fraction(pre, 2.0)
    assert frac == pytest.approx(0.0455, abs=0.002)


@pytest.mark.parametrize("kind", list(HeadKind))
def test_output_always_within_closed_bounds(kind):
    rng = SplitMix64(52)
    stats = ChannelStats(mean=np.array([0.5, -0.5, 0.0]), std=np.array([1.5, 0.1, 0.7]))
    head = make_head(kind, 3, stats if kind is HeadKind.BN_CLIP else None)
    x = Tensor(rng.normal((8, 3, 4, 4), mean=0.0, std=50.0))
    out = head_forward(head, x)
    assert out.data.min() >= -1.0 and out.data.max() <= 1.0


def test_bn_clip_init_invariant_on_first_forward():
    rng = SplitMix64(53)
    mean = np.array([-0.2, 0.0, 0.3])
    std = np.array([0.4, 0.5, 0.2])
    head = make_head(HeadKind.BN_CLIP, 3, ChannelStats(mean, std))
    x0 = rng.normal((8, 3, 8, 8), mean=-1.0, std=4.0)
    _, pre = head.forward_parts(Tensor(x0), "train")
    var = x0.var(axis=(0, 2, 3))
    npt.assert_allclose(pre.data.mean(axis=(0, 2, 3)), mean, atol=1e-6)
    npt.assert_allclose(
        pre.data.std(axis=(0, 2, 3)), std * np.sqrt(var / (var + head.bn.eps)), atol=1e-4
    )


def test_bn_heads_scale_invariant_tanh_alone_not():
    rng = SplitMix64(54)
    # variance well above BN eps, so the eps term stays below the tolerance
    x0 = rng.normal((8, 3, 4, 4), std=5.0)
    for kind in (HeadKind.BN_TANH, HeadKind.BN_CLIP):
        stats = ChannelStats(np.zeros(3), np.full(3, 0.5))
        head = make_head(kind, 3, stats if kind is HeadKind.BN_CLIP else None)
        a = head_forward(head, Tensor(x0)).data
        head2 = make_head(kind, 3, stats if kind is HeadKind.BN_CLIP else None)
        b = head_forward(head2, Tensor(x0 * 7.3)).data
        npt.assert_allclose(a, b, atol=1e-6)
    # tanh-alone saturation fraction is monotone in the input scale
    head = make_head(HeadKind.TANH_ALONE, 3)
    fracs = []
    for s in (0.5, 1.0, 2.0, 4.0, 8.0):
        _, pre = head.forward_parts(Tensor(x0 * s))
        fracs.append(saturation_fraction(pre, 2.0))
    assert all(a <= b for a, b in zip(fracs, fracs[1:]))


@pytest.mark.parametrize("kind", [HeadKind.BN_TANH, HeadKind.BN_CLIP])
def test_gradient_reaches_gamma_beta(kind):
    rng = SplitMix64(55)
    stats = ChannelStats(np.array([0.1, -0.1]), np.array([0.3, 0.6]))
    head = make_head(kind, 2, stats if kind is HeadKind.BN_CLIP else None)
    x = Tensor(rng.normal((4, 2, 3, 3)), requires_grad=True)
    with Tape() as tape:
        out = head.forward(x, "train")
        tape.backward(T.reduce_mean(T.square(T.sub(out, 0.2))))
    assert np.any(head.bn.gamma.grad != 0.0)
    assert np.any(head.bn.beta.grad != 0.0)


def test_head_differentiable_end_to_end():
    rng = SplitMix64(56)
    x0 = rng.normal((4, 2, 2, 2), std=0.8)

    def f(xt):
        head = make_head(HeadKind.BN_TANH, 2)
        return T.reduce_mean(T.square(head.forward(xt, "train")))

    assert T.grad_check(f, Tensor(x0), tol=1e-4).passed


def test_saturation_fraction_cases():
    assert saturation_fraction(Tensor(np.zeros((2, 3, 4, 4))), 2.0) == 0.0
    assert saturation_fraction(np.array([-3.0, 0.0, 3.0, 1.0]), 2.0) == 0.5
    z = SplitMix64(57).normal((1_000_000,))
    assert saturation_fraction(z, 2.0) == pytest.approx(0.0455, abs=0.001)
    with pytest.raises(ValueError):
        saturation_fraction(np.ones(3), 0.0)


def test_channel_mismatch_raises():
    head = make_head(HeadKind.BN_TANH, 3)
    with pytest.raises(T.ShapeMismatchError):
        head.forward(Tensor(np.ones((2, 4, 2, 2))))
