"""A small float64 tensor library with reverse-mode differentiation.

Only the operators needed by the GED network are provided. Every op returns a
new ``Tensor`` that remembers its parents and a closure mapping the output
gradient to parent gradients; ``Tensor.backward`` walks that graph once in
reverse topological order.
"""

from __future__ import annotations

import json
import math
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.array(data, dtype=np.float64)  # always a private copy
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable | None = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def backward(self):
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar, got shape {self.shape}")
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: mul(self, -1.0)


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward) -> Tensor:
    rg = any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = rg
    out.grad = None
    out._parents = tuple(parents) if rg else ()
    out._backward = backward if rg else None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def add_bias(x, b) -> Tensor:
    """Add a bias vector along the last axis."""
    x, b = as_tensor(x), as_tensor(b)
    if b.data.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise ShapeError(f"bias {b.shape} does not match last axis of {x.shape}")
    return add(x, b)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


# -- reductions and shape ops ------------------------------------------------


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (x,), backward)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis), 1.0 / float(count))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _make(x.data.reshape(shape).copy(), (x,), lambda g: (g.reshape(x.shape),))


def flatten(x) -> Tensor:
    """(batch, ...) -> (batch, features)."""
    x = as_tensor(x)
    return reshape(x, (x.shape[0], -1))


def swap_last(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.swapaxes(x.data, -1, -2).copy(), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([x.data for x in xs], axis=axis),
        xs,
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


# -- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(np.matmul(a.data, b.data), (a, b), backward)


def dense(x, w, b) -> Tensor:
    return add_bias(matmul(x, w), b)


def rowwise_linear(h, w) -> Tensor:
    """``h @ w`` where every output row is computed by the same fixed-order
    reduction, so the value of a row never depends on where it sits.

    BLAS kernels may round differently depending on a row's position in the
    block layout; this keeps node embeddings exactly permutation-equivariant.
    """
    h, w = as_tensor(h), as_tensor(w)
    if w.data.ndim != 2 or h.shape[-1] != w.shape[0]:
        raise ShapeError(f"rowwise_linear shapes {h.shape} and {w.shape}")
    out = (h.data[..., :, None] * w.data).sum(axis=-2)

    def backward(g):
        gh = np.matmul(g, w.data.T)
        gw = np.matmul(
            h.data.reshape(-1, h.shape[-1]).T, g.reshape(-1, g.shape[-1])
        )
        return gh, gw

    return _make(out, (h, w), backward)


def neighbor_aggregate(a_hat: np.ndarray, h) -> Tensor:
    """``a_hat @ h`` for a constant (batched) propagation matrix.

    Each output entry sums its terms in sorted order, which makes the result
    independent of node numbering bit-for-bit.
    """
    h = as_tensor(h)
    a_hat = np.asarray(a_hat, dtype=np.float64)
    if a_hat.shape[-1] != h.shape[-2]:
        raise ShapeError(f"aggregate shapes {a_hat.shape} and {h.shape}")
    terms = a_hat[..., :, :, None] * h.data[..., None, :, :]
    out = np.sort(terms, axis=-2).sum(axis=-2)
    a_t = np.swapaxes(a_hat, -1, -2)
    return _make(out, (h,), lambda g: (np.matmul(a_t, g),))


# -- image ops ---------------------------------------------------------------


def _same_pad(k: int) -> tuple[int, int]:
    before = (k - 1) // 2
    return before, k - 1 - before


def conv2d(x, w, b) -> Tensor:
    """Stride-1 convolution with zero 'same' padding.

    x: (batch, in_ch, H, W); w: (out_ch, in_ch, k, k); b: (out_ch,). Even
    kernels put the extra padding row/column after the image.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 4 or w.data.ndim != 4 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"conv2d input {x.shape} vs kernel {w.shape}")
    if w.shape[2] != w.shape[3] or b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d kernel {w.shape} / bias {b.shape}")
    k = w.shape[2]
    bsz, cin, hgt, wid = x.shape
    lo, hi = _same_pad(k)
    xp = np.pad(x.data, ((0, 0), (0, 0), (lo, hi), (lo, hi)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3]))  # B,H,W,O
    out = out.transpose(0, 3, 1, 2) + b.data[None, :, None, None]

    def backward(g):
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        gb = g.sum(axis=(0, 2, 3))
        gwin = np.tensordot(g, w.data, axes=([1], [0]))  # B,H,W,C,k,k
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + hgt, j : j + wid] += gwin[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, lo : lo + hgt, lo : lo + wid]
        return gx, gw, gb

    return _make(np.ascontiguousarray(out), (x, w, b), backward)


def pool_out(n: int, size: int) -> int:
    return -(-n // size)


def maxpool2d(x, size: int) -> Tensor:
    """Non-overlapping max pooling, ceil mode. Ties go to the lowest flat index."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d wants rank 4, got {x.shape}")
    if size < 1:
        raise ShapeError("pool size must be >= 1")
    bsz, ch, hgt, wid = x.shape
    ho, wo = pool_out(hgt, size), pool_out(wid, size)
    xp = np.full((bsz, ch, ho * size, wo * size), -np.inf)
    xp[:, :, :hgt, :wid] = x.data
    blocks = xp.reshape(bsz, ch, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(bsz, ch, ho, wo, size * size)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros((bsz, ch, ho, wo, size * size))
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(bsz, ch, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5)
        gx = gb.reshape(bsz, ch, ho * size, wo * size)[:, :, :hgt, :wid]
        return (np.ascontiguousarray(gx),)

    return _make(out, (x,), backward)


def interp_matrix(src: int, dst: int) -> np.ndarray:
    """Align-corners linear interpolation weights, shape (dst, src)."""
    if dst < 1 or src < 1:
        raise ShapeError("resize sizes must be >= 1")
    m = np.zeros((dst, src))
    for t in range(dst):
        pos = t * (src - 1) / (dst - 1) if dst > 1 else (src - 1) / 2.0
        i0 = min(int(math.floor(pos)), src - 1)
        i1 = min(i0 + 1, src - 1)
        frac = pos - i0
        m[t, i0] += 1.0 - frac
        m[t, i1] += frac
    return m


def bilinear_resize(x, out_h: int, out_w: int) -> Tensor:
    """Resize the last two axes with align-corners bilinear interpolation."""
    x = as_tensor(x)
    if x.data.ndim < 2:
        raise ShapeError("bilinear_resize needs at least two axes")
    rh = interp_matrix(x.shape[-2], out_h)
    rw = interp_matrix(x.shape[-1], out_w)
    out = np.matmul(np.matmul(rh, x.data), rw.T)
    return _make(out, (x,), lambda g: (np.matmul(np.matmul(rh.T, g), rw),))


# -- losses --------------------------------------------------------------------


def mse_loss(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shapes {pred.shape} vs {target.shape}")
    diff = sub(pred, target)
    return mean(mul(diff, diff))


# -- optimizer -----------------------------------------------------------------


class Adam:
    """Bias-corrected Adam over a name -> Tensor parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, grads: dict[str, np.ndarray] | None = None):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = grads[k] if grads is not None else p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.shape:
                raise ShapeError(f"gradient for {k} has shape {g.shape}, expected {p.shape}")
            m = self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            v = self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "m": {k: _pack(a) for k, a in self.m.items()},
            "v": {k: _pack(a) for k, a in self.v.items()},
        }

    def load_state_dict(self, d: dict):
        self.t = int(d["t"])
        self.lr, self.beta1, self.beta2, self.eps = d["lr"], d["beta1"], d["beta2"], d["eps"]
        self.m = {k: _unpack(a) for k, a in d["m"].items()}
        self.v = {k: _unpack(a) for k, a in d["v"].items()}


# -- serialization -------------------------------------------------------------


def _pack(a: np.ndarray) -> dict:
    # json writes floats with repr, which round-trips float64 exactly
    return {"shape": list(a.shape), "data": [float(x) for x in a.reshape(-1)]}


def _unpack(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def pack_params(params: dict[str, Tensor]) -> dict:
    return {k: _pack(p.data) for k, p in sorted(params.items())}


def unpack_params(d: dict, requires_grad: bool = True) -> dict[str, Tensor]:
    return {k: Tensor(_unpack(v), requires_grad=requires_grad) for k, v in d.items()}


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# -- gradient checking -----------------------------------------------------------


def numerical_grad(f: Callable[[], Tensor], t: Tensor, eps: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``t.data``."""
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f().item()
        flat[i] = old - eps
        down = f().item()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the larger of the two gradients' max magnitudes."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def gradcheck(f: Callable[[], Tensor], inputs: Iterable[Tensor], eps: float = 1e-4) -> float:
    """Worst relative error over ``inputs`` between backward and central differences."""
    inputs = list(inputs)
    for t in inputs:
        t.grad = None
    f().backward()
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, relative_error(analytic, numerical_grad(f, t, eps)))
    return worst
