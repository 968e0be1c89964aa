"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Design: a tape-free graph of Tensor nodes; each op stores a closure that
scatters the output gradient back to its parents.  ``backward`` walks the
graph once in reverse topological order.  Gradients accumulate into
``.grad`` (calling backward twice without resetting doubles them).

Float32 is the training default; gradient-check tests run in float64.
Checkpoints are a single file: a JSON manifest (names, shapes, dtype,
offsets) followed by the raw little-endian buffers.
"""

from __future__ import annotations

import json
import struct
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "TrainingError",
    "add", "sub", "mul", "matmul", "relu", "sigmoid", "exp", "log",
    "power", "clip_min", "tensor_sum", "mean", "softmax", "concat",
    "reshape", "flatten", "conv2d", "max_pool2d", "upsample2d", "pad2d",
    "crop2d", "batch_norm",
    "SGD", "Adam", "save_checkpoint", "load_checkpoint",
]


class TrainingError(RuntimeError):
    """Raised when optimization hits non-finite numbers."""


def _as_array(x, like: np.ndarray | None = None) -> np.ndarray:
    dtype = like.dtype if like is not None else np.float32
    return np.asarray(x, dtype=dtype)


class Tensor:
    """Dense n-d array node in a reverse-mode computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def _accumulate(self, g: np.ndarray) -> None:
        # Leaves that do not require grad (constants, frozen parameters)
        # receive nothing: the freeze contract is "grad stays None".
        if self._backward is None and not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        # Interior grads are scratch space: clear them so repeated backward
        # calls accumulate cleanly into the leaves (grads double, not worse).
        for node in topo:
            if node._backward is not None:
                node.grad = None
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other, self)
        return mul(self, power(other, -1.0))

    def __neg__(self):
        return mul(self, _wrap(-1.0, self))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _node(data, parents, backward) -> Tensor:
    req = any(p.requires_grad or p._parents for p in parents)
    return Tensor(data, requires_grad=any(p.requires_grad for p in parents),
                  _parents=tuple(parents) if req else (),
                  _backward=backward if req else None)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# Elementwise ----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    return _node(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(-g, b.data.shape))

    return _node(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(out, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(
            f"matmul expects 2D operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _node(out, (a, b), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent

    def backward(g):
        a._accumulate(g * exponent * a.data ** (exponent - 1.0))

    return _node(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = a.data * mask

    def backward(g):
        a._accumulate(g * mask)

    return _node(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a._accumulate(g * s * (1.0 - s))

    return _node(s, (a,), backward)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)

    def backward(g):
        a._accumulate(g * e)

    return _node(e, (a,), backward)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return _node(out, (a,), backward)


def clip_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); gradient passes where a > floor."""
    mask = a.data > floor
    out = np.maximum(a.data, floor)

    def backward(g):
        a._accumulate(g * mask)

    return _node(out, (a,), backward)


# Reductions / shape ---------------------------------------------------


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _node(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[i] for i in np.atleast_1d(axis)]
    )
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), _wrap(1.0 / n, a))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    # Max-shift for stability; the shift is a detached constant.
    z = sub(a, Tensor(a.data.max(axis=axis, keepdims=True)))
    e = exp(z)
    return e / tensor_sum(e, axis=axis, keepdims=True)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return _node(out, (a,), backward)


def flatten(a: Tensor) -> Tensor:
    """Keep the batch axis, flatten the rest."""
    return reshape(a, (a.data.shape[0], -1))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return _node(out, tuple(tensors), backward)


# Spatial ops ----------------------------------------------------------


def _check_conv_args(stride: int, pad: int) -> None:
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ValueError(f"pad must be >= 0, got {pad}")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of (N,C,H,W) with (O,C,kh,kw) kernels."""
    _check_conv_args(stride, pad)
    xd, wd = x.data, w.data
    if xd.ndim != 4 or wd.ndim != 4 or xd.shape[1] != wd.shape[1]:
        raise ValueError(f"conv2d shape mismatch: x {xd.shape}, w {wd.shape}")
    n, c, h, wid = xd.shape
    o, _, kh, kw = wd.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wid + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError("kernel larger than padded input")
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (N,C,Ho,Wo,kh,kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = wd.reshape(o, c * kh * kw)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data.reshape(1, o, 1, 1)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = (gmat.T @ cols).reshape(wd.shape)
        w._accumulate(gw)
        if b is not None:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        gcols = gmat @ wmat  # (N*Ho*Wo, C*kh*kw)
        gcols = gcols.reshape(n, ho, wo, c, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        gx = gxp[:, :, pad:pad + h, pad:pad + wid] if pad else gxp
        x._accumulate(gx)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, backward)


def max_pool2d(x: Tensor, k: int = 2, stride: int | None = None) -> Tensor:
    stride = stride or k
    _check_conv_args(stride, 0)
    xd = x.data
    n, c, h, w = xd.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xd, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride].reshape(n, c, ho, wo, k * k)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(xd)
        ki, kj = np.unravel_index(arg, (k, k))
        ii = (np.arange(ho) * stride)[None, None, :, None] + ki
        jj = (np.arange(wo) * stride)[None, None, None, :] + kj
        nn = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        np.add.at(gx, (nn, cc, ii, jj), g)
        x._accumulate(gx)

    return _node(out, (x,), backward)


def upsample2d(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbor upsampling of (N,C,H,W)."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    n, c, h, w = x.data.shape

    def backward(g):
        g = g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5))
        x._accumulate(g)

    return _node(out, (x,), backward)


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    out = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)))
    h, w = x.data.shape[2:]

    def backward(g):
        x._accumulate(g[:, :, top:top + h, left:left + w])

    return _node(out, (x,), backward)


def crop2d(x: Tensor, top: int, left: int, h: int, w: int) -> Tensor:
    out = x.data[:, :, top:top + h, left:left + w].copy()

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, :, top:top + h, left:left + w] = g
        x._accumulate(gx)

    return _node(out, (x,), backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Batch-stat normalization over (N,H,W) per channel of (N,C,H,W).

    Composed from primitives so the gradient comes from the graph.
    """
    axes = (0, 2, 3)
    mu = mean(x, axis=axes, keepdims=True)
    xc = sub(x, mu)
    var = mean(mul(xc, xc), axis=axes, keepdims=True)
    inv = power(add(var, _wrap(eps, x)), -0.5)
    xhat = mul(xc, inv)
    c = x.data.shape[1]
    return add(mul(xhat, reshape(gamma, (1, c, 1, 1))), reshape(beta, (1, c, 1, 1)))


# Optimizers -----------------------------------------------------------


def _check_finite(params: Iterable[Tensor]) -> None:
    for i, p in enumerate(params):
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise TrainingError(
                f"non-finite gradient in parameter {i} (shape {p.shape})"
            )


class SGD:
    def __init__(self, params: Sequence[Tensor], lr: float = 0.01, momentum: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self._vel = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        _check_finite(self.params)
        for p, v in zip(self.params, self._vel):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data = p.data - self.lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        _check_finite(self.params)
        self.t += 1
        b1, b2 = self.betas
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# Checkpoints ----------------------------------------------------------

_CKPT_MAGIC = b"CKP1"


def save_checkpoint(named_params: dict[str, Tensor | np.ndarray], path,
                    meta: dict | None = None) -> None:
    """Single-file checkpoint: JSON manifest + raw little-endian buffers."""
    entries = []
    blobs = []
    offset = 0
    for name, t in named_params.items():
        arr = np.ascontiguousarray(t.data if isinstance(t, Tensor) else t)
        arr = arr.astype(arr.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": np.dtype(arr.dtype).name,
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps({"meta": meta or {}, "entries": entries}).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        if f.read(4) != _CKPT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        (mlen,) = struct.unpack("<I", f.read(4))
        manifest = json.loads(f.read(mlen).decode())
        body = f.read()
    out: dict[str, np.ndarray] = {}
    for e in manifest["entries"]:
        dt = np.dtype(e["dtype"]).newbyteorder("<")
        arr = np.frombuffer(
            body, dtype=dt, count=int(np.prod(e["shape"])) if e["shape"] else 1,
            offset=e["offset"],
        )
        out[e["name"]] = np.asarray(arr.reshape(e["shape"]), dtype=e["dtype"]).copy()
    return out, manifest["meta"]
