"""Reverse-mode automatic differentiation over dense float64 arrays.

A `Tape` records every operation executed while it is active; `Tape.backward`
replays the records in exact reverse execution order and accumulates
gradients into the participating leaves. Backward rules are themselves
expressed with tape operations, so `Tape.gradient(..., create_graph=True)`
yields gradients that can be differentiated again — this is what the
WGAN gradient penalty relies on.

Everything is double precision and single threaded: two runs over the same
inputs produce bit-identical values and gradients.

Broadcasting is deliberately narrow: scalars, per-channel vectors
(shape [C] against axis 1 of a higher-rank operand), and keepdims-style
aligned shapes (equal rank, each axis equal or 1). Anything wider is a
shape error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "active_tape",
    "ShapeMismatchError",
    "DomainError",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "neg",
    "square",
    "sqrt",
    "tanh",
    "relu",
    "leaky_relu",
    "clip",
    "matmul",
    "conv2d",
    "conv_transpose2d",
    "reduce",
    "reduce_sum",
    "reduce_mean",
    "reshape",
    "transpose",
    "broadcast_to",
    "elementwise",
    "grad_check",
    "GradCheckResult",
]


class ShapeMismatchError(ValueError):
    """Operands have incompatible (non-broadcastable) shapes."""


class DomainError(ValueError):
    """Input outside an op's mathematical domain (e.g. sqrt of a negative)."""


class Tensor:
    """Dense float64 value with an optional gradient.

    `requires_grad` marks a leaf whose gradient should be populated by
    `Tape.backward`; outputs of recorded ops inherit the flag. The shape is
    fixed at construction — ops never mutate it.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; python scalars are promoted to constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axes=None, keepdims: bool = False):
        return reduce(self, axes, "sum", keepdims)

    def mean(self, axes=None, keepdims: bool = False):
        return reduce(self, axes, "mean", keepdims)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# --- tape ---------------------------------------------------------------

class _Record:
    __slots__ = ("inputs", "output", "vjp")

    def __init__(self, inputs, output, vjp):
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


_TAPE_STACK: list["Tape | None"] = []


def _active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def active_tape() -> "Tape | None":
    """The innermost recording tape, or None outside any `with Tape()` block."""
    return _active_tape()


class Tape:
    """Ordered record of executed ops; context manager enables recording."""

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "mismatched tape nesting"

    def _record(self, inputs: tuple[Tensor, ...], output: Tensor, vjp) -> None:
        self._records.append(_Record(inputs, output, vjp))

    def backward(self, loss: Tensor, create_graph: bool = False) -> None:
        """Populate `.grad` on every tracked leaf reachable from scalar `loss`.

        Gradients accumulate additively both across fan-out within the graph
        and across repeated backward calls (callers zero grads between steps).
        """
        if loss.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ValueError("loss is not recorded on the tape (no tracked inputs)")
        n = len(self._records)
        grads = self._walk(loss, None, create_graph, n)
        produced = {id(r.output) for r in self._records[:n]}
        tensors: dict[int, Tensor] = {id(loss): loss}
        for rec in self._records[:n]:
            for t in rec.inputs:
                tensors[id(t)] = t
        for tid, g in grads.items():
            t = tensors.get(tid)
            if t is None or tid in produced or not t.requires_grad:
                continue
            gd = np.broadcast_to(g.data, t.shape).copy() if g.shape != t.shape else g.data.copy()
            t.grad = gd if t.grad is None else t.grad + gd

    def gradient(
        self,
        output: Tensor,
        wrt: Sequence[Tensor],
        create_graph: bool = False,
    ) -> list[Tensor | None]:
        """Gradients of scalar `output` w.r.t. `wrt`, as tensors.

        With `create_graph=True` the backward computation is recorded onto
        this tape, so the returned tensors are differentiable in turn.
        Returns None for a tensor `output` does not depend on.
        """
        if output.size != 1:
            raise ValueError(f"output must be scalar, got shape {output.shape}")
        wrt_ids = {id(w) for w in wrt}
        n = len(self._records)
        grads = self._walk(output, wrt_ids, create_graph, n)
        return [grads.get(id(w)) for w in wrt]

    def _walk(
        self,
        output: Tensor,
        wrt_ids: set[int] | None,
        create_graph: bool,
        n_records: int,
    ) -> dict[int, Tensor]:
        records = self._records[:n_records]
        reach: set[int] | None = None
        if wrt_ids is not None:
            # only tensors downstream of a wrt target need gradients
            reach = set(wrt_ids)
            for rec in records:
                if any(id(t) in reach for t in rec.inputs):
                    reach.add(id(rec.output))
        seed = Tensor(np.ones(output.shape))
        grads: dict[int, Tensor] = {id(output): seed}
        _TAPE_STACK.append(self if create_graph else None)
        try:
            for rec in reversed(records):
                g = grads.get(id(rec.output))
                if g is None:
                    continue
                if reach is None:
                    needed = tuple(t.requires_grad for t in rec.inputs)
                else:
                    needed = tuple(id(t) in reach for t in rec.inputs)
                if not any(needed):
                    continue
                for t, gi in zip(rec.inputs, rec.vjp(g, needed)):
                    if gi is None:
                        continue
                    prev = grads.get(id(t))
                    grads[id(t)] = gi if prev is None else add(prev, gi)
        finally:
            _TAPE_STACK.pop()
        return grads


def _emit(
    inputs: tuple[Tensor, ...],
    out_data: np.ndarray,
    make_vjp: Callable[[Tensor], Callable],
) -> Tensor:
    """Create the output tensor and record the op if a tape is active."""
    tape = _active_tape()
    out = Tensor(out_data)
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._record(inputs, out, make_vjp(out))
    return out


# --- broadcasting helpers -------------------------------------------------

def _bcast_view(t: Tensor, other_shape: tuple[int, ...]) -> np.ndarray:
    """Return t.data reshaped so numpy broadcasting against other_shape is the
    supported semantics (scalar, per-channel [C] on axis 1, or aligned)."""
    s = t.shape
    if s == other_shape or t.size == 1:
        return t.data
    if len(s) == 1 and len(other_shape) >= 2 and s[0] == other_shape[1]:
        view = [1] * len(other_shape)
        view[1] = s[0]
        return t.data.reshape(view)
    if len(s) == len(other_shape) and all(
        a == b or a == 1 or b == 1 for a, b in zip(s, other_shape)
    ):
        return t.data
    raise ShapeMismatchError(f"cannot broadcast {s} against {other_shape}")


def _unbroadcast(g: Tensor, target: Tensor) -> Tensor:
    """Reduce gradient `g` back to `target`'s shape (adjoint of broadcasting)."""
    if g.shape == target.shape:
        return g
    if target.size == 1:
        return reshape(reduce(g, None, "sum"), target.shape)
    ts, gs = target.shape, g.shape
    if len(ts) == 1 and len(gs) >= 2 and ts[0] == gs[1]:
        axes = tuple(i for i in range(len(gs)) if i != 1)
        return reduce(g, axes, "sum")
    if len(ts) == len(gs):
        axes = tuple(i for i, (a, b) in enumerate(zip(ts, gs)) if a == 1 and b != 1)
        return reduce(g, axes, "sum", keepdims=True)
    raise ShapeMismatchError(f"cannot reduce gradient {gs} to {ts}")


def _binary_out_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    av = _bcast_view(a, b.shape) if a.ndim <= b.ndim else a.data
    bv = _bcast_view(b, a.shape) if b.ndim <= a.ndim else b.data
    return np.broadcast_shapes(av.shape, bv.shape)


def _binary(a, b, fwd, make_vjp) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim >= b.ndim:
        av, bv = a.data, _bcast_view(b, a.shape)
    else:
        av, bv = _bcast_view(a, b.shape), b.data
    return _emit((a, b), fwd(av, bv), lambda out: make_vjp(a, b, out))


# --- elementwise ops ------------------------------------------------------

def add(a, b) -> Tensor:
    def vjp(a, b, out):
        def run(g, needed):
            ga = _unbroadcast(g, a) if needed[0] else None
            gb = _unbroadcast(g, b) if needed[1] else None
            return ga, gb

        return run

    return _binary(a, b, np.add, vjp)


def sub(a, b) -> Tensor:
    def vjp(a, b, out):
        def run(g, needed):
            ga = _unbroadcast(g, a) if needed[0] else None
            gb = _unbroadcast(neg(g), b) if needed[1] else None
            return ga, gb

        return run

    return _binary(a, b, np.subtract, vjp)


def mul(a, b) -> Tensor:
    def vjp(a, b, out):
        def run(g, needed):
            ga = _unbroadcast(mul(g, b), a) if needed[0] else None
            gb = _unbroadcast(mul(g, a), b) if needed[1] else None
            return ga, gb

        return run

    return _binary(a, b, np.multiply, vjp)


def div(a, b) -> Tensor:
    def vjp(a, b, out):
        def run(g, needed):
            ga = _unbroadcast(div(g, b), a) if needed[0] else None
            gb = _unbroadcast(neg(mul(g, div(out, b))), b) if needed[1] else None
            return ga, gb

        return run

    return _binary(a, b, np.divide, vjp)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)

    def make_vjp(out):
        def run(g, needed):
            return (scale(g, c) if needed[0] else None,)

        return run

    return _emit((a,), a.data * c, make_vjp)


def neg(a) -> Tensor:
    return scale(a, -1.0)


def square(a) -> Tensor:
    a = _as_tensor(a)

    def make_vjp(out):
        def run(g, needed):
            return (mul(g, scale(a, 2.0)) if needed[0] else None,)

        return run

    return _emit((a,), np.square(a.data), make_vjp)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data < 0.0):
        raise DomainError("sqrt of negative value")

    def make_vjp(out):
        def run(g, needed):
            return (div(g, scale(out, 2.0)) if needed[0] else None,)

        return run

    return _emit((a,), np.sqrt(a.data), make_vjp)


def tanh(a) -> Tensor:
    a = _as_tensor(a)

    def make_vjp(out):
        def run(g, needed):
            # d tanh = 1 - tanh^2, written with ops so it stays differentiable
            return (mul(g, sub(1.0, square(out))) if needed[0] else None,)

        return run

    return _emit((a,), np.tanh(a.data), make_vjp)


def _masked(a: Tensor, out_data: np.ndarray, mask: np.ndarray) -> Tensor:
    # piecewise-linear ops: the mask is constant, so grad-of-grad is exact a.e.
    mask_t = Tensor(mask)

    def make_vjp(out):
        def run(g, needed):
            return (mul(g, mask_t) if needed[0] else None,)

        return run

    return _emit((a,), out_data, make_vjp)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    return _masked(a, np.maximum(a.data, 0.0), (a.data > 0.0).astype(np.float64))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    mask = np.where(a.data > 0.0, 1.0, slope)
    return _masked(a, a.data * mask, mask)


def clip(a, lo: float = -1.0, hi: float = 1.0) -> Tensor:
    """Hard clip to [lo, hi]; subgradient 1 on the closed interval, 0 outside."""
    a = _as_tensor(a)
    mask = ((a.data >= lo) & (a.data <= hi)).astype(np.float64)
    return _masked(a, np.clip(a.data, lo, hi), mask)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "scale-by-constant": scale,
    "negate": lambda a, b=None: neg(a),
    "square": lambda a, b=None: square(a),
    "sqrt": lambda a, b=None: sqrt(a),
}


def elementwise(op_code: str, a, b=None) -> Tensor:
    """Dispatch an elementwise op by name (unary ops ignore `b`)."""
    if op_code not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise op {op_code!r}")
    fn = _ELEMENTWISE[op_code]
    if op_code in ("negate", "square", "sqrt"):
        return fn(a)
    if b is None:
        raise ValueError(f"{op_code} needs two operands")
    return fn(a, b)


# --- structural ops -------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape) if not isinstance(shape, int) else (shape,)
    old = a.shape

    def make_vjp(out):
        def run(g, needed):
            return (reshape(g, old) if needed[0] else None,)

        return run

    return _emit((a,), a.data.reshape(shape), make_vjp)


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inv = tuple(int(i) for i in np.argsort(axes))

    def make_vjp(out):
        def run(g, needed):
            return (transpose(g, inv) if needed[0] else None,)

        return run

    return _emit((a,), np.transpose(a.data, axes).copy(), make_vjp)


def broadcast_to(a, shape) -> Tensor:
    """Expand size-1 axes of `a` to `shape` (same rank); adjoint of reduce-sum."""
    a = _as_tensor(a)
    shape = tuple(shape)
    if len(shape) != a.ndim or any(
        s not in (1, t) for s, t in zip(a.shape, shape)
    ):
        raise ShapeMismatchError(f"cannot broadcast {a.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s == 1 and t != 1)

    def make_vjp(out):
        def run(g, needed):
            return (reduce(g, axes, "sum", keepdims=True) if needed[0] else None,)

        return run

    return _emit((a,), np.broadcast_to(a.data, shape).copy(), make_vjp)


def reduce(a, axes=None, kind: str = "sum", keepdims: bool = False) -> Tensor:
    """Reduce over `axes` (None = all) with `kind` in {mean, sum}."""
    a = _as_tensor(a)
    if kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduce kind {kind!r}")
    if axes is None:
        axes = tuple(range(a.ndim))
    elif isinstance(axes, int):
        axes = (axes,)
    else:
        axes = tuple(axes)
    for ax in axes:
        if not (0 <= ax < a.ndim):
            raise ValueError(f"axis {ax} invalid for shape {a.shape}")
    if len(set(axes)) != len(axes):
        raise ValueError(f"duplicate axes {axes}")
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    fn = np.sum if kind == "sum" else np.mean
    # numpy treats axis=() as "reduce nothing", which is what we want
    out_data = np.asarray(fn(a.data, axis=axes, keepdims=keepdims))
    kd_shape = tuple(1 if i in axes else s for i, s in enumerate(a.shape))

    def make_vjp(out):
        def run(g, needed):
            if not needed[0]:
                return (None,)
            gk = g if keepdims else reshape(g, kd_shape)
            gb = broadcast_to(gk, a.shape)
            return (scale(gb, 1.0 / count) if kind == "mean" else gb,)

        return run

    return _emit((a,), out_data, make_vjp)


def reduce_sum(a, axes=None, keepdims: bool = False) -> Tensor:
    return reduce(a, axes, "sum", keepdims)


def reduce_mean(a, axes=None, keepdims: bool = False) -> Tensor:
    return reduce(a, axes, "mean", keepdims)


# --- matmul ---------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul needs [M,K]x[K,N], got {a.shape} x {b.shape}")

    def make_vjp(out):
        def run(g, needed):
            ga = matmul(g, transpose(b)) if needed[0] else None
            gb = matmul(transpose(a), g) if needed[1] else None
            return ga, gb

        return run

    return _emit((a, b), a.data @ b.data, make_vjp)


# --- convolution family ---------------------------------------------------
#
# conv2d(x[N,Ci,H,W], k[Co,Ci,Kh,Kw])           -> [N,Co,Ho,Wo]   (cross-correlation)
# conv_transpose2d(x[N,Ci,H,W], k[Ci,Co,Kh,Kw]) -> [N,Co,Ht,Wt]   (adjoint of conv2d)
# _kernel_grad(inp, gout)                        -> conv2d kernel gradient
#
# The three are mutual adjoints sharing the same kernel tensor, which is what
# makes backward (and backward-of-backward) expressible in terms of the trio.

def _pad2d(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p))
    xp[:, :, p : p + h, p : p + w] = x
    return xp


def _im2col(xp: np.ndarray, kh: int, kw: int, s: int) -> np.ndarray:
    """[N,C,Hp,Wp] -> contiguous [N, C*Kh*Kw, Ho*Wo] patch matrix."""
    n, c, hp, wp = xp.shape
    ho = (hp - kh) // s + 1
    wo = (wp - kw) // s + 1
    cols = np.empty((n, c, kh, kw, ho, wo))
    for u in range(kh):
        for v in range(kw):
            cols[:, :, u, v] = xp[:, :, u : u + s * ho : s, v : v + s * wo : s]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _conv2d_data(
    x: np.ndarray, k: np.ndarray, s: int, p: int
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (output, cols); cols is reused by the kernel-gradient path."""
    n = x.shape[0]
    co, ci, kh, kw = k.shape
    cols = _im2col(_pad2d(x, p), kh, kw, s)
    out = np.matmul(k.reshape(co, ci * kh * kw)[None], cols)  # [N,Co,Ho*Wo]
    hp, wp = x.shape[2] + 2 * p, x.shape[3] + 2 * p
    return out.reshape(n, co, (hp - kh) // s + 1, (wp - kw) // s + 1), cols


def _col2im(cols: np.ndarray, n, c, hp, wp, kh, kw, s) -> np.ndarray:
    """Adjoint of _im2col: scatter-add [N, C*Kh*Kw, Ho*Wo] back to [N,C,Hp,Wp]."""
    ho = (hp - kh) // s + 1
    wo = (wp - kw) // s + 1
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    xp = np.zeros((n, c, hp, wp))
    for u in range(kh):
        for v in range(kw):
            xp[:, :, u : u + s * ho : s, v : v + s * wo : s] += cols[:, :, u, v]
    return xp


def _convt2d_data(x: np.ndarray, k: np.ndarray, s: int, p: int) -> np.ndarray:
    n, ci, h, w = x.shape
    _, co, kh, kw = k.shape
    k2 = k.reshape(ci, co * kh * kw)
    cols = np.matmul(k2.T[None], x.reshape(n, ci, h * w))  # [N, Co*Kh*Kw, H*W]
    hp, wp = (h - 1) * s + kh, (w - 1) * s + kw
    outp = _col2im(cols, n, co, hp, wp, kh, kw, s)
    if p == 0:
        return outp
    return outp[:, :, p:-p, p:-p]


def _kernel_grad_data(
    inp: np.ndarray,
    gout: np.ndarray,
    s: int,
    p: int,
    kh: int,
    kw: int,
    cols: np.ndarray | None = None,
) -> np.ndarray:
    n, ci = inp.shape[0], inp.shape[1]
    co = gout.shape[1]
    if cols is None:
        cols = _im2col(_pad2d(inp, p), kh, kw, s)  # [N, Ci*Kh*Kw, L]
    g2 = gout.reshape(n, co, -1)
    # batched GEMM with a transposed view (no explicit copy), then batch-sum
    return np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(co, ci, kh, kw)


def conv2d(x, k, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d cross-correlation with zero padding (no kernel flip)."""
    x, k = _as_tensor(x), _as_tensor(k)
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeMismatchError("conv2d expects 4-d input and kernel")
    n, ci, h, w = x.shape
    co, ci_k, kh, kw = k.shape
    if ci != ci_k:
        raise ShapeMismatchError(f"input channels {ci} != kernel channels {ci_k}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeMismatchError("kernel larger than padded input")
    if (h + 2 * pad - kh) % stride or (w + 2 * pad - kw) % stride:
        raise ShapeMismatchError(
            f"non-integer output size for input {h}x{w}, kernel {kh}x{kw}, "
            f"stride {stride}, pad {pad}"
        )

    out_data, cols = _conv2d_data(x.data, k.data, stride, pad)

    def make_vjp(out):
        def run(g, needed):
            gx = conv_transpose2d(g, k, stride, pad) if needed[0] else None
            gk = _kernel_grad(x, g, stride, pad, kh, kw, cols=cols) if needed[1] else None
            return gx, gk

        return run

    return _emit((x, k), out_data, make_vjp)


def conv_transpose2d(x, k, stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of conv2d: exactly conv2d's input-gradient computation."""
    x, k = _as_tensor(x), _as_tensor(k)
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeMismatchError("conv_transpose2d expects 4-d input and kernel")
    n, ci, h, w = x.shape
    ci_k, co, kh, kw = k.shape
    if ci != ci_k:
        raise ShapeMismatchError(f"input channels {ci} != kernel channels {ci_k}")
    if (h - 1) * stride - 2 * pad + kh <= 0 or (w - 1) * stride - 2 * pad + kw <= 0:
        raise ShapeMismatchError("non-positive output size")

    def make_vjp(out):
        def run(g, needed):
            gx = conv2d(g, k, stride, pad) if needed[0] else None
            gk = _kernel_grad(g, x, stride, pad, kh, kw) if needed[1] else None
            return gx, gk

        return run

    return _emit((x, k), _convt2d_data(x.data, k.data, stride, pad), make_vjp)


def _kernel_grad(
    inp,
    gout,
    stride: int,
    pad: int,
    kh: int,
    kw: int,
    cols: np.ndarray | None = None,
) -> Tensor:
    """conv2d kernel gradient as a first-class (differentiable) op.

    `cols` optionally carries the forward pass's patch matrix for `inp`
    (a pure function of inp, so reuse does not affect gradients).
    """
    inp, gout = _as_tensor(inp), _as_tensor(gout)

    def make_vjp(out):
        def run(g, needed):
            gi = conv_transpose2d(gout, g, stride, pad) if needed[0] else None
            gg = conv2d(inp, g, stride, pad) if needed[1] else None
            return gi, gg

        return run

    return _emit(
        (inp, gout),
        _kernel_grad_data(inp.data, gout.data, stride, pad, kh, kw, cols=cols),
        make_vjp,
    )


# --- finite-difference checking --------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckResult:
    """Compare analytic gradients of scalar-valued `f` against central
    differences at `x`.

    The error is max |analytic - numeric| normalized by the largest gradient
    magnitude (floored at 1e-8), which keeps near-zero components from
    producing spurious blow-ups.
    """
    x.data = np.ascontiguousarray(x.data)  # the FD loop mutates a ravel view
    x.requires_grad = True
    x.grad = None
    with Tape() as tape:
        y = f(x)
        tape.backward(y)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None

    numeric = np.zeros_like(x.data)
    flat = x.data.ravel()
    num_flat = numeric.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x).item()
        flat[i] = orig - h
        fm = f(x).item()
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2.0 * h)

    denom = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    err = float(np.max(np.abs(analytic - numeric)) / denom)
    return GradCheckResult(max_rel_error=err, tol=tol)
