"""Dense tensors with reverse-mode differentiation.

The graph is dynamic: each non-leaf Tensor records the op that produced it,
its parents, and a closure mapping the output gradient to parent gradients.
``backward`` walks that graph once in reverse topological order. Identical
graphs on identical inputs give bit-identical results.

Double precision is the default and the reference for every correctness
test; training loops may opt into float32 through the ``precision`` context
to fit commodity-CPU budgets. Leaf dtype decides the dtype of everything
downstream.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ShapeMismatchError, UnknownOpError

_DEFAULT_DTYPE = np.float64


def default_dtype() -> np.dtype:
    return np.dtype(_DEFAULT_DTYPE)


@contextmanager
def precision(dtype):
    """Temporarily change the dtype given to newly created leaf tensors."""
    global _DEFAULT_DTYPE
    previous = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = previous


class Tensor:
    """One node of the computation graph holding a float ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple = ()):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self.parents = parents
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"


def _node(data: np.ndarray, op: str, parents: tuple[Tensor, ...]) -> Tensor:
    out = Tensor(data, op=op, parents=parents)
    out.requires_grad = any(p.requires_grad for p in parents)
    return out


def _fail(op: str, msg: str, *shapes) -> None:
    detail = ", ".join(str(tuple(s)) for s in shapes)
    raise ShapeMismatchError(f"{op}: {msg} (shapes {detail})" if shapes else f"{op}: {msg}")


# ---------------------------------------------------------------------------
# elementwise and linear ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        _fail("add", "operands must have identical shapes", a.shape, b.shape)
    out = _node(a.data + b.data, "add", (a, b))
    out._backward = lambda g: ((a, g), (b, g))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        _fail("mul", "operands must have identical shapes", a.shape, b.shape)
    out = _node(a.data * b.data, "mul", (a, b))
    out._backward = lambda g: ((a, g * b.data), (b, g * a.data))
    return out


def mul_scalar(a: Tensor, value: float) -> Tensor:
    s = float(value)
    out = _node(a.data * s, "mul_scalar", (a,))
    out._backward = lambda g: ((a, g * s),)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        _fail("matmul", "expects two 2-D operands", a.shape, b.shape)
    if a.shape[1] != b.shape[0]:
        _fail("matmul", "inner dimensions differ", a.shape, b.shape)
    out = _node(a.data @ b.data, "matmul", (a, b))

    def bwd(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    out._backward = bwd
    return out


def relu(a: Tensor) -> Tensor:
    out = _node(np.maximum(a.data, 0.0), "relu", (a,))
    out._backward = lambda g: ((a, g * (a.data > 0.0)),)
    return out


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        _fail("reshape", f"cannot reshape to {shape}", a.shape)
    out = _node(a.data.reshape(shape), "reshape", (a,))
    out._backward = lambda g: ((a, g.reshape(a.shape)),)
    return out


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.data.ndim))[::-1]
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.data.ndim)):
        _fail("transpose", f"axes {axes} invalid", a.shape)
    inv = tuple(int(i) for i in np.argsort(axes))
    out = _node(a.data.transpose(axes), "transpose", (a,))
    out._backward = lambda g: ((a, g.transpose(inv)),)
    return out


def broadcast(a: Tensor, shape: Sequence[int]) -> Tensor:
    # the forward value stays a zero-copy view; consumers read it strided
    shape = tuple(int(s) for s in shape)
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError:
        _fail("broadcast", f"cannot broadcast to {shape}", a.shape)
    out = _node(data, "broadcast", (a,))
    n_new = len(shape) - a.data.ndim
    expanded = tuple(range(n_new)) + tuple(
        n_new + i for i, d in enumerate(a.shape) if d == 1 and shape[n_new + i] != 1
    )

    def bwd(g):
        ga = g.sum(axis=expanded, keepdims=True) if expanded else g
        return ((a, ga.reshape(a.shape)),)

    out._backward = bwd
    return out


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        _fail("concat", "needs at least one input")
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), "concat",
                tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        pieces = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(lo), int(hi))
            pieces.append((t, g[tuple(idx)]))
        return tuple(pieces)

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# reductions and normalizations


def maxpool(a: Tensor, axis: int) -> Tensor:
    if a.shape[axis] < 1:
        _fail("maxpool", "empty axis", a.shape)
    idx = np.argmax(a.data, axis=axis)  # first max on ties
    out_data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis).squeeze(axis)
    out = _node(out_data, "maxpool", (a,))

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return ((a, ga),)

    out._backward = bwd
    return out


def meanpool(a: Tensor, axis: int) -> Tensor:
    n = a.shape[axis]
    if n < 1:
        _fail("meanpool", "empty axis", a.shape)
    out = _node(a.data.mean(axis=axis), "meanpool", (a,))

    def bwd(g):
        ga = np.repeat(np.expand_dims(g / n, axis), n, axis=axis)
        return ((a, ga),)

    out._backward = bwd
    return out


def softmax(a: Tensor, axis: int) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _node(y, "softmax", (a,))

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((a, (g - dot) * y),)

    out._backward = bwd
    return out


TINY_NORM = 1e-12


def l2_normalize(a: Tensor, axis: int) -> Tensor:
    norm = np.sqrt((a.data ** 2).sum(axis=axis, keepdims=True))
    safe = norm >= TINY_NORM
    denom = np.where(safe, norm, 1.0)
    y = a.data / denom
    out = _node(y, "l2_normalize", (a,))

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        ga = np.where(safe, (g - y * dot) / denom, g)
        return ((a, ga),)

    out._backward = bwd
    return out


def cross_entropy(logits: Tensor, targets, reduction: str = "mean") -> Tensor:
    """Negative log-likelihood of integer targets under softmax(logits).

    ``logits`` is (B, K) or (K,); ``targets`` is a length-B int sequence or a
    single index. Fused with log-softmax for stability.
    """
    if reduction not in ("mean", "sum"):
        raise ValueError(f"cross_entropy: unknown reduction {reduction!r}")
    squeeze = logits.data.ndim == 1
    z = logits.data.reshape(1, -1) if squeeze else logits.data
    if z.ndim != 2:
        _fail("cross_entropy", "logits must be 1-D or 2-D", logits.shape)
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    b, k = z.shape
    if t.shape != (b,):
        _fail("cross_entropy", f"targets shape {t.shape} does not match batch {b}")
    if t.min() < 0 or t.max() >= k:
        raise ShapeMismatchError(
            f"cross_entropy: target out of range [0, {k}) (got {int(t.min())}..{int(t.max())})")
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    losses = lse - z[np.arange(b), t]
    value = losses.mean() if reduction == "mean" else losses.sum()
    out = _node(np.asarray(value), "cross_entropy", (logits,))

    def bwd(g):
        p = np.exp(z - m)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(b), t] -= 1.0
        if reduction == "mean":
            p /= b
        gl = g * p
        return ((logits, gl.reshape(logits.shape)),)

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# convolutions


def _as_rank(t: Tensor, target: int, op: str) -> tuple[Tensor, int]:
    """Left-pad shape with 1s up to ``target`` rank; returns (tensor, pads added)."""
    pads = target - t.data.ndim
    if pads < 0:
        _fail(op, f"rank {t.data.ndim} input too high", t.shape)
    if pads == 0:
        return t, 0
    return reshape(t, (1,) * pads + t.shape), pads


def conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation along the last axis.

    ``x`` is (T,), (C_in, T) or (B, C_in, T); ``w`` is (K,) or (C_out, C_in, K).
    Zero padding, integer stride. Output rank mirrors the input rank.
    """
    if stride < 1 or pad < 0:
        raise ValueError("conv1d: stride must be >= 1 and pad >= 0")
    x3, x_pads = _as_rank(x, 3, "conv1d")
    w3, _ = _as_rank(w, 3, "conv1d")
    bsz, cin, t_len = x3.shape
    cout, w_cin, k = w3.shape
    if w_cin != cin:
        _fail("conv1d", "kernel channels do not match input", x.shape, w.shape)
    t_out = (t_len + 2 * pad - k) // stride + 1
    if t_len + 2 * pad < k or t_out < 1:
        _fail("conv1d", "kernel longer than padded signal", x.shape, w.shape)
    if bias is not None and bias.shape != (cout,):
        _fail("conv1d", f"bias must have shape ({cout},)", bias.shape)

    xp = np.pad(x3.data, ((0, 0), (0, 0), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    out_data = np.tensordot(w3.data, win, axes=([1, 2], [1, 3]))  # (CO, B, T_out)
    out_data = np.ascontiguousarray(out_data.transpose(1, 0, 2))
    if bias is not None:
        out_data = out_data + bias.data.reshape(1, cout, 1)
    parents = (x3, w3) if bias is None else (x3, w3, bias)
    out = _node(out_data, "conv1d", parents)

    def bwd(g):
        gw = np.tensordot(g, win, axes=([0, 2], [0, 2]))  # (CO, CI, K)
        gxp = np.zeros_like(xp)
        for kk in range(k):
            contrib = np.tensordot(g, w3.data[:, :, kk], axes=([1], [0]))  # (B, T_out, CI)
            gxp[:, :, kk:kk + stride * t_out:stride] += contrib.transpose(0, 2, 1)
        gx = gxp[:, :, pad:pad + t_len] if pad else gxp
        grads = [(x3, gx), (w3, gw)]
        if bias is not None:
            grads.append((bias, g.sum(axis=(0, 2))))
        return tuple(grads)

    out._backward = bwd
    if x_pads:
        out = reshape(out, out.shape[x_pads:])
    return out


def conv3d(x: Tensor, w: Tensor, bias: Tensor | None = None,
           dilation: Sequence[int] = (1, 1, 1),
           pad: Sequence[int] = (0, 0, 0)) -> Tensor:
    """Cross-correlation over the last three axes, stride 1, per-axis dilation.

    ``x`` is (D1, D2, D3), (C_in, D1, D2, D3) or (B, C_in, D1, D2, D3);
    ``w`` is (k1, k2, k3) or (C_out, C_in, k1, k2, k3). Zero padding.
    """
    dil = tuple(int(d) for d in dilation)
    pd = tuple(int(p) for p in pad)
    if len(dil) != 3 or len(pd) != 3 or min(dil) < 1 or min(pd) < 0:
        raise ValueError(f"conv3d: bad dilation {dil} or pad {pd}")
    x5, x_pads = _as_rank(x, 5, "conv3d")
    w5, _ = _as_rank(w, 5, "conv3d")
    bsz, cin = x5.shape[:2]
    cout, w_cin = w5.shape[:2]
    kdims = w5.shape[2:]
    if w_cin != cin:
        _fail("conv3d", "kernel channels do not match input", x.shape, w.shape)
    odims = tuple(x5.shape[2 + i] + 2 * pd[i] - dil[i] * (kdims[i] - 1)
                  for i in range(3))
    if min(odims) < 1:
        _fail("conv3d", "dilated kernel larger than padded volume", x.shape, w.shape)
    if bias is not None and bias.shape != (cout,):
        _fail("conv3d", f"bias must have shape ({cout},)", bias.shape)

    xp = np.pad(x5.data, ((0, 0), (0, 0), (pd[0], pd[0]), (pd[1], pd[1]), (pd[2], pd[2])))
    xpc = np.ascontiguousarray(xp.transpose(1, 0, 2, 3, 4))  # (CI, B, P1, P2, P3)
    o1, o2, o3 = odims
    k1, k2, k3 = kdims
    out_c = np.zeros((cout, bsz, o1, o2, o3), dtype=xp.dtype)
    offsets = [(i, j, kk) for i in range(k1) for j in range(k2) for kk in range(k3)]

    def slice_at(i, j, kk):
        return xpc[:, :, i * dil[0]:i * dil[0] + o1,
                   j * dil[1]:j * dil[1] + o2,
                   kk * dil[2]:kk * dil[2] + o3]

    # accumulate one kernel offset at a time: keeps the summation order of
    # the reference nested-loop definition
    for i, j, kk in offsets:
        out_c += np.tensordot(w5.data[:, :, i, j, kk], slice_at(i, j, kk), axes=(1, 0))
    if bias is not None:
        out_c += bias.data.reshape(cout, 1, 1, 1, 1)
    out_data = np.ascontiguousarray(out_c.transpose(1, 0, 2, 3, 4))
    parents = (x5, w5) if bias is None else (x5, w5, bias)
    out = _node(out_data, "conv3d", parents)

    def bwd(g):
        gc = np.ascontiguousarray(g.transpose(1, 0, 2, 3, 4))  # (CO, B, O1, O2, O3)
        gw = np.empty_like(w5.data)
        gxpc = np.zeros_like(xpc)
        for i, j, kk in offsets:
            xs = slice_at(i, j, kk)
            gw[:, :, i, j, kk] = np.tensordot(gc, xs, axes=([1, 2, 3, 4], [1, 2, 3, 4]))
            gxpc[:, :, i * dil[0]:i * dil[0] + o1,
                 j * dil[1]:j * dil[1] + o2,
                 kk * dil[2]:kk * dil[2] + o3] += np.tensordot(
                     w5.data[:, :, i, j, kk], gc, axes=(0, 0))
        gxp = gxpc.transpose(1, 0, 2, 3, 4)
        gx = gxp[:, :,
                 pd[0]:pd[0] + x5.shape[2],
                 pd[1]:pd[1] + x5.shape[3],
                 pd[2]:pd[2] + x5.shape[4]]
        grads = [(x5, np.ascontiguousarray(gx)), (w5, gw)]
        if bias is not None:
            grads.append((bias, gc.sum(axis=(1, 2, 3, 4))))
        return tuple(grads)

    out._backward = bwd
    if x_pads:
        out = reshape(out, out.shape[x_pads:])
    return out


# ---------------------------------------------------------------------------
# graph traversal


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad leaf reachable from ``loss``."""
    if loss.data.shape != ():
        _fail("backward", "loss must be scalar", loss.shape)
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    flowing: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for node in reversed(order):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in node._backward(g):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in flowing:
                flowing[key] = flowing[key] + pg
            else:
                flowing[key] = pg


# ---------------------------------------------------------------------------
# generic dispatcher

CATALOG = (
    "add", "mul", "mul_scalar", "matmul", "conv1d", "conv3d", "relu",
    "maxpool", "meanpool", "concat", "softmax", "l2_normalize",
    "cross_entropy", "broadcast", "reshape", "transpose",
)


def eval_op(op: str, inputs: Iterable[Tensor], attrs: dict | None = None) -> Tensor:
    """Evaluate one catalog op on already-built tensors.

    Shape problems raise ShapeMismatchError carrying the op id and shapes;
    ids outside CATALOG raise UnknownOpError.
    """
    attrs = dict(attrs or {})
    ins = list(inputs)

    def one() -> Tensor:
        if len(ins) != 1:
            _fail(op, f"expects 1 input, got {len(ins)}")
        return ins[0]

    def two() -> tuple[Tensor, Tensor]:
        if len(ins) != 2:
            _fail(op, f"expects 2 inputs, got {len(ins)}")
        return ins[0], ins[1]

    if op == "add":
        return add(*two())
    if op == "mul":
        return mul(*two())
    if op == "mul_scalar":
        return mul_scalar(one(), attrs["value"])
    if op == "matmul":
        return matmul(*two())
    if op == "conv1d":
        x, w = ins[0], ins[1]
        bias = ins[2] if len(ins) > 2 else None
        return conv1d(x, w, bias, stride=attrs.get("stride", 1), pad=attrs.get("pad", 0))
    if op == "conv3d":
        x, w = ins[0], ins[1]
        bias = ins[2] if len(ins) > 2 else None
        return conv3d(x, w, bias, dilation=attrs.get("dilation", (1, 1, 1)),
                      pad=attrs.get("pad", (0, 0, 0)))
    if op == "relu":
        return relu(one())
    if op == "maxpool":
        return maxpool(one(), attrs["axis"])
    if op == "meanpool":
        return meanpool(one(), attrs["axis"])
    if op == "concat":
        return concat(ins, attrs["axis"])
    if op == "softmax":
        return softmax(one(), attrs["axis"])
    if op == "l2_normalize":
        return l2_normalize(one(), attrs["axis"])
    if op == "cross_entropy":
        return cross_entropy(one(), attrs["target"], attrs.get("reduction", "mean"))
    if op == "broadcast":
        return broadcast(one(), attrs["shape"])
    if op == "reshape":
        return reshape(one(), attrs["shape"])
    if op == "transpose":
        return transpose(one(), attrs.get("axes"))
    raise UnknownOpError(f"unknown op id {op!r}; catalog: {', '.join(CATALOG)}")
