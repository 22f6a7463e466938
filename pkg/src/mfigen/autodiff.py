"""Minimal dense-tensor reverse-mode autodiff on top of numpy.

The graph is a tape rebuilt on every forward pass. Each op returns a new
:class:`Tensor` holding its parents and a closure mapping the output gradient
to the parents' gradients. Only scalar broadcasting is supported, plus two
explicit per-channel ops (conv bias and :func:`add_channel`).
"""

from __future__ import annotations

import contextlib
import logging
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

Scalar = Union[int, float]

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (used by samplers)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A differentiable node: value, lazily allocated gradient, parents."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(scale(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)

    def backward(self) -> None:
        backward(self)


TensorLike = Union[Tensor, np.ndarray, Scalar]


def as_tensor(x: TensorLike, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _make(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op}: non-finite value in output of shape {data.shape}")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _cast(value: Scalar, like: Tensor):
    return like.data.dtype.type(value)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a = as_tensor(a)
    if isinstance(b, (int, float)):
        return _make("add", a.data + _cast(b, a), (a,), lambda g: (g,))
    b = as_tensor(b)
    _check_same("add", a, b)
    return _make("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a = as_tensor(a)
    if isinstance(b, (int, float)):
        return _make("sub", a.data - _cast(b, a), (a,), lambda g: (g,))
    b = as_tensor(b)
    _check_same("sub", a, b)
    return _make("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a = as_tensor(a)
    if isinstance(b, (int, float)):
        return scale(a, b)
    b = as_tensor(b)
    _check_same("mul", a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: TensorLike, c: Scalar) -> Tensor:
    a = as_tensor(a)
    c = _cast(c, a)
    return _make("scale", a.data * c, (a,), lambda g: (g * c,))


def silu(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    x = a.data
    sig = 1.0 / (1.0 + np.exp(-x))
    sig = sig.astype(x.dtype, copy=False)

    def bw(g):
        return (g * (sig * (1.0 + x * (1.0 - sig))),)

    return _make("silu", x * sig, (a,), bw)


def clamp(a: TensorLike, lo: Scalar, hi: Scalar) -> Tensor:
    """Clip to [lo, hi]; gradient passes only strictly inside the interval."""
    a = as_tensor(a)
    x = a.data
    mask = ((x > lo) & (x < hi)).astype(x.dtype)
    return _make("clamp", np.clip(x, lo, hi).astype(x.dtype, copy=False), (a,), lambda g: (g * mask,))


def abs(a: TensorLike) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    s = np.sign(a.data)
    return _make("abs", np.abs(a.data), (a,), lambda g: (g * s,))


def tanh(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _make("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _make("exp", y, (a,), lambda g: (g * y,))


def sqrt(a: TensorLike) -> Tensor:
    """Square root with subgradient 0 at 0."""
    a = as_tensor(a)
    x = a.data
    if np.any(x < 0):
        raise ValueError("sqrt: negative input")
    y = np.sqrt(x)
    safe = np.where(y > 0, y, 1.0)
    d = np.where(y > 0, 0.5 / safe, 0.0).astype(x.dtype)
    return _make("sqrt", y, (a,), lambda g: (g * d,))


def square(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _make("square", x * x, (a,), lambda g: (g * (2 * x),))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def sum(a: TensorLike) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    if a.size == 0:
        raise ValueError("sum: empty tensor")
    shape, dtype = a.shape, a.dtype
    return _make("sum", np.asarray(a.data.sum(dtype=dtype)), (a,), lambda g: (np.full(shape, g, dtype=dtype),))


def mean(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    if a.size == 0:
        raise ValueError("mean: empty tensor")
    shape, dtype, n = a.shape, a.dtype, a.size
    return _make(
        "mean", np.asarray(a.data.mean(dtype=dtype)), (a,), lambda g: (np.full(shape, g / n, dtype=dtype),)
    )


def reshape(a: TensorLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a: TensorLike, index) -> Tensor:
    a = as_tensor(a)
    shape, dtype = a.shape, a.dtype

    def bw(g):
        out = np.zeros(shape, dtype=dtype)
        out[index] = g
        return (out,)

    return _make("getitem", np.array(a.data[index]), (a,), bw)


def add_channel(x: TensorLike, v: TensorLike) -> Tensor:
    """x[N,C,H,W] + v[N,C] broadcast over the spatial axes."""
    x, v = as_tensor(x), as_tensor(v)
    if x.ndim != 4 or v.shape != x.shape[:2]:
        raise ValueError(f"add_channel: shape mismatch {x.shape} vs {v.shape}")
    return _make("add_channel", x.data + v.data[:, :, None, None], (x, v), lambda g: (g, g.sum(axis=(2, 3))))


def upsample2x(x: TensorLike) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling of an N,C,H,W tensor."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    y = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return _make("upsample2x", y, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),))


def avg_pool2x(x: TensorLike) -> Tensor:
    """2x2 mean pooling of an N,C,H,W tensor with even H, W."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2x: spatial size {h}x{w} must be even")
    y = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    quarter = x.dtype.type(0.25)
    return _make("avg_pool2x", y, (x,), lambda g: (np.repeat(np.repeat(g * quarter, 2, axis=2), 2, axis=3),))


def linear(x: TensorLike, w: TensorLike, b: Optional[TensorLike] = None) -> Tensor:
    """x[N,I] @ w[O,I].T + b[O]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"linear: shape mismatch {x.shape} vs {w.shape}")
    xd, wd = x.data, w.data
    y = xd @ wd.T
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ValueError(f"linear: bias shape {b.shape} vs weight {w.shape}")
        y = y + b.data
        parents.append(b)

    def bw(g):
        grads = [g @ wd, g.T @ xd]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _make("linear", y, parents, bw)


# ---------------------------------------------------------------------------
# convolution and normalization
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Columns of a padded N,H,W,C array ordered (kh, kw, C) so each offset is a contiguous block."""
    n, c = xp.shape[0], xp.shape[3]
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
    return cols.reshape(n * ho * wo, kh * kw * c)


def conv2d(x: TensorLike, w: TensorLike, bias: Optional[TensorLike] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding (im2col + matmul)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d: shape mismatch {x.shape} vs {w.shape}")
    n, c, h, wd_ = x.shape
    k, _, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel size must be odd, got {kh}x{kw}")
    span_h = h + 2 * padding - kh
    span_w = wd_ + 2 * padding - kw
    if span_h < 0 or span_w < 0 or span_h % stride or span_w % stride:
        raise ValueError(
            f"conv2d: non-integral output size for input {h}x{wd_}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding}"
        )
    ho, wo = span_h // stride + 1, span_w // stride + 1
    dtype = x.dtype

    xp = np.zeros((n, h + 2 * padding, wd_ + 2 * padding, c), dtype=dtype)
    xp[:, padding:padding + h, padding:padding + wd_, :] = x.data.transpose(0, 2, 3, 1)
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    del xp
    wmat = np.ascontiguousarray(w.data.transpose(0, 2, 3, 1)).reshape(k, kh * kw * c)
    y = cols @ wmat.T
    parents = [x, w]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (k,):
            raise ValueError(f"conv2d: bias shape {bias.shape} vs {k} output channels")
        y += bias.data
        parents.append(bias)
    out = np.ascontiguousarray(y.reshape(n, ho, wo, k).transpose(0, 3, 1, 2))

    def bw(g):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, k)
        dw = (gm.T @ cols).reshape(k, kh, kw, c).transpose(0, 3, 1, 2)
        dx = None
        if x.requires_grad and stride == 1 and k < c:
            # dx is the full correlation of g with the flipped kernel; cheap when K < C
            gp = np.zeros((n, ho + 2 * (kh - 1), wo + 2 * (kw - 1), k), dtype=dtype)
            gp[:, kh - 1:kh - 1 + ho, kw - 1:kw - 1 + wo, :] = gm.reshape(n, ho, wo, k)
            hp, wp = h + 2 * padding, wd_ + 2 * padding
            gcols = _im2col(gp, kh, kw, 1, hp, wp)
            wflip = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(2, 3, 0, 1)).reshape(kh * kw * k, c)
            dxp = (gcols @ wflip).reshape(n, hp, wp, c)
            dx = np.ascontiguousarray(dxp[:, padding:padding + h, padding:padding + wd_, :].transpose(0, 3, 1, 2))
        elif x.requires_grad:
            dcols = (gm @ wmat).reshape(n, ho, wo, kh, kw, c)
            dxp = np.zeros((n, h + 2 * padding, wd_ + 2 * padding, c), dtype=dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
            dx = np.ascontiguousarray(dxp[:, padding:padding + h, padding:padding + wd_, :].transpose(0, 3, 1, 2))
        grads = [dx, np.ascontiguousarray(dw)]
        if bias is not None:
            grads.append(gm.sum(axis=0))
        return grads

    return _make("conv2d", out, parents, bw)


def group_norm(x: TensorLike, groups: int, gamma: TensorLike, beta: TensorLike, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    n, c, h, w = x.shape
    if c % groups:
        raise ValueError(f"group_norm: {c} channels not divisible by {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"group_norm: affine shapes {gamma.shape}, {beta.shape} vs {c} channels")
    if eps <= 0:
        raise ValueError("group_norm: eps must be positive")
    xg = x.data.reshape(n, groups, -1)
    m = xg.shape[2]
    mu = xg.mean(axis=2, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=2, keepdims=True)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (xc * inv).reshape(n, c, h, w)
    gd = gamma.data[None, :, None, None]
    out = xhat * gd + beta.data[None, :, None, None]

    def bw(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = (g * gd).reshape(n, groups, m)
        xh = xhat.reshape(n, groups, m)
        dx = inv * (dxhat - dxhat.mean(axis=2, keepdims=True) - xh * (dxhat * xh).mean(axis=2, keepdims=True))
        return dx.reshape(n, c, h, w), dgamma, dbeta

    return _make("group_norm", out, (x, gamma, beta), bw)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
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


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.size != 1 or loss.ndim != 0:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones((), dtype=loss.dtype)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: dict,
    lr: float,
    betas: tuple = (0.9, 0.999),
    eps: float = 1e-8,
    names: Optional[Sequence[str]] = None,
) -> None:
    """In-place Adam update with bias correction.

    ``state`` holds ``step`` (int) and lists ``m`` and ``v``; it is created on
    first use.
    """
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            label = names[i] if names else f"#{i}"
            raise FloatingPointError(f"adam: non-finite gradient in parameter {label}")
    if "m" not in state:
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
        state["step"] = 0
    state["step"] += 1
    t = state["step"]
    b1, b2 = betas
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if p.shape != g.shape:
            raise ValueError(f"adam: shape mismatch {p.shape} vs {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)


class Adam:
    """Adam over a list of leaf tensors; missing gradients count as zero."""

    def __init__(self, params: Iterable[Tensor], lr: float = 2e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.state: dict = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_step(
            [p.data for p in self.params],
            grads,
            self.state,
            self.lr,
            self.betas,
            self.eps,
            names=[p.name or f"#{i}" for i, p in enumerate(self.params)],
        )
