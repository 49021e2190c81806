"""Independent reference implementations used as test oracles.

Everything here is written as plain loops / direct formulas, deliberately
sharing no code with the package, so a bug in the fast paths cannot hide.
"""

import numpy as np


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


def conv2d_loops(x, k, stride, pad):
    n, ci, h, w = x.shape
    co, _, kh, kw = k.shape
    xp = np.zeros((n, ci, h + 2 * pad, w + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + w] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for b in range(n):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(ci):
                        for u in range(kh):
                            for v in range(kw):
                                acc += (
                                    xp[b, c, i * stride + u, j * stride + v]
                                    * k[o, c, u, v]
                                )
                    out[b, o, i, j] = acc
    return out


def conv_transpose2d_scatter(x, k, stride, pad):
    n, ci, h, w = x.shape
    _, co, kh, kw = k.shape
    hp = (h - 1) * stride + kh
    wp = (w - 1) * stride + kw
    outp = np.zeros((n, co, hp, wp))
    for b in range(n):
        for c in range(ci):
            for i in range(h):
                for j in range(w):
                    for o in range(co):
                        for u in range(kh):
                            for v in range(kw):
                                outp[b, o, i * stride + u, j * stride + v] += (
                                    x[b, c, i, j] * k[c, o, u, v]
                                )
    if pad == 0:
        return outp
    return outp[:, :, pad:-pad, pad:-pad]


def batchnorm_formula(x, gamma, beta, eps):
    """Direct per-channel BN-train formula on [N,C,H,W] (biased variance)."""
    mu = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    xhat = (x - mu[None, :, None, None]) / np.sqrt(var[None, :, None, None] + eps)
    return gamma[None, :, None, None] * xhat + beta[None, :, None, None], mu, var


def layernorm_formula(x, gain, bias, eps):
    """Per-sample normalization over (C,H,W), then per-channel affine."""
    mu = x.mean(axis=(1, 2, 3), keepdims=True)
    var = x.var(axis=(1, 2, 3), keepdims=True)
    xhat = (x - mu) / np.sqrt(var + eps)
    return gain[None, :, None, None] * xhat + bias[None, :, None, None]


def adam_sequence(p0, grads, lr, beta1, beta2, eps):
    """Hand-rolled Adam on a scalar parameter, one entry per step."""
    p = float(p0)
    m = v = 0.0
    t = 0
    history = []
    for g in grads:
        t += 1
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        p = p - lr * mhat / (np.sqrt(vhat) + eps)
        history.append(p)
    return history


def channel_stats_two_pass(values):
    """Biased per-channel mean/std over all pixels of all images, two passes."""
    n, c, h, w = values.shape
    means = np.zeros(c)
    stds = np.zeros(c)
    count = n * h * w
    for ch in range(c):
        total = 0.0
        for b in range(n):
            for i in range(h):
                for j in range(w):
                    total += values[b, ch, i, j]
        mean = total / count
        sq = 0.0
        for b in range(n):
            for i in range(h):
                for j in range(w):
                    sq += (values[b, ch, i, j] - mean) ** 2
        means[ch] = mean
        stds[ch] = np.sqrt(sq / count)
    return means, stds


def downsample_loops(values, factor):
    n, c, h, w = values.shape
    out = np.zeros((n, c, h // factor, w // factor))
    for b in range(n):
        for ch in range(c):
            for i in range(h // factor):
                for j in range(w // factor):
                    acc = 0.0
                    for u in range(factor):
                        for v in range(factor):
                            acc += values[b, ch, i * factor + u, j * factor + v]
                    out[b, ch, i, j] = acc / (factor * factor)
    return out


def histogram_loop(values, bins, lo, hi):
    """Left-closed uniform bins, interior-edge values go right, last bin closed."""
    edges = np.linspace(lo, hi, bins + 1)
    counts = np.zeros(bins, dtype=np.int64)
    for v in values.ravel():
        idx = bins - 1
        for b in range(bins):
            if edges[b] <= v < edges[b + 1]:
                idx = b
                break
        counts[idx] += 1
    return counts


def running_mean_loop(values, window):
    out = np.zeros(len(values))
    for i in range(len(values)):
        start = max(0, i - window + 1)
        out[i] = sum(values[start : i + 1]) / (i - start + 1)
    return out


def parse_ppm(raw: bytes):
    """Minimal reference P6 parser -> (h, w, uint8 array [h,w,3])."""
    assert raw[:2] == b"P6"
    fields = []
    pos = 2
    while len(fields) < 3:
        while raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    assert maxval == 255
    pixels = np.frombuffer(raw[pos:], dtype=np.uint8)
    assert pixels.size == h * w * 3
    return h, w, pixels.reshape(h, w, 3)


def fd_gradient(f, x, h=1e-5):
    """Central finite differences of scalar f wrt every element of array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g
