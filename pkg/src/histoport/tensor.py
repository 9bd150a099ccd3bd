"""A small reverse-mode autodiff engine on top of numpy.

Everything is double precision, there is no batch axis and no implicit
broadcasting: binary ops take equal shapes or a Python scalar.  Each op
records its parents and a closure that maps the output gradient to parent
gradients; :func:`backward` walks the graph in reverse topological order.
"""

from __future__ import annotations

import contextlib

import numpy as np
import scipy.fft as sfft
from numpy.lib.stride_tricks import sliding_window_view

_grad_enabled = True
_byte_counter: list[int] | None = None

# kernels with at least this many taps are correlated in the Fourier domain
FFT_MIN_TAPS = 81


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph (inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def count_bytes():
    """Sum the bytes of every tensor created inside the block.

    Yields a one-element list whose entry is updated in place.
    """
    global _byte_counter
    prev, _byte_counter = _byte_counter, [0]
    counter = _byte_counter
    try:
        yield counter
    finally:
        _byte_counter = prev
        if prev is not None:
            prev[0] += counter[0]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.op = "leaf"
        self.name = name
        if _byte_counter is not None:
            _byte_counter[0] += self.data.nbytes

    @classmethod
    def _result(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = ""
        out.op = op
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        if _byte_counter is not None:
            _byte_counter[0] += data.nbytes
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -other if not isinstance(other, Tensor) else neg(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    a = as_tensor(a)
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "add")
        return Tensor._result(a.data + b.data, (a, b), lambda g: (g, g), "add")
    return Tensor._result(a.data + float(b), (a,), lambda g: (g,), "add_scalar")


def neg(a: Tensor) -> Tensor:
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "mul")
        return Tensor._result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")
    s = float(b)
    return Tensor._result(a.data * s, (a,), lambda g: (g * s,), "scale")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return Tensor._result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def tsum(a: Tensor, axis=None) -> Tensor:
    shape = a.shape
    if axis is None:
        return Tensor._result(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum")
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axes), shape).copy(),)

    return Tensor._result(a.data.sum(axis=axes), (a,), bw, "sum")


def getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._result(np.array(a.data[idx]), (a,), bw, "getitem")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._result(np.stack([t.data for t in tensors], axis=axis), tensors, bw, "stack")


def pad2d(x: Tensor, pad) -> Tensor:
    """Zero-pad the last two axes; ``pad`` is an int or ``(top, bottom, left, right)``."""
    if isinstance(pad, int):
        pad = (pad, pad, pad, pad)
    t, b, l, r = pad
    if not any(pad):
        return x
    widths = [(0, 0)] * (x.data.ndim - 2) + [(t, b), (l, r)]
    h, w = x.shape[-2:]

    def bw(g):
        return (g[..., t:t + h, l:l + w],)

    return Tensor._result(np.pad(x.data, widths), (x,), bw, "pad2d")


def einsum(subscripts: str, a, b) -> Tensor:
    """Two-operand einsum; every index of an operand must appear in the other or the output."""
    a, b = as_tensor(a), as_tensor(b)
    ins, out = subscripts.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for s, other in ((sa, sb), (sb, sa)):
        if len(set(s)) != len(s):
            raise ValueError("repeated index inside one operand is not supported")
        if any(c not in other and c not in out for c in s):
            raise ValueError("an index summed over a single operand is not supported")

    def bw(g):
        ga = np.einsum(f"{out},{sb}->{sa}", g, b.data, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out},{sa}->{sb}", g, a.data, optimize=True) if b.requires_grad else None
        return ga, gb

    return Tensor._result(np.einsum(subscripts, a.data, b.data, optimize=True), (a, b), bw, "einsum")


def channel_mix(matrix: np.ndarray, x: Tensor, groups: int) -> Tensor:
    """Apply a fixed ``(P, D)`` matrix to each of ``groups`` channel blocks of a ``(groups*D, H, W)`` map."""
    p, d = matrix.shape
    c, h, w = x.shape
    if c != groups * d:
        raise ValueError(f"channel_mix: {c} channels is not {groups} x {d}")
    xr = x.data.reshape(groups, d, h * w)
    out = np.einsum("pd,kdn->kpn", matrix, xr, optimize=True).reshape(groups * p, h, w)

    def bw(g):
        gr = g.reshape(groups, p, h * w)
        return (np.einsum("pd,kpn->kdn", matrix, gr, optimize=True).reshape(c, h, w),)

    return Tensor._result(out, (x,), bw, "channel_mix")


def bias_add(x: Tensor, bias: Tensor, channels) -> Tensor:
    """Add ``bias[i]`` to every pixel of channel ``channels[i]``."""
    channels = np.asarray(channels, dtype=np.intp)
    if bias.shape != channels.shape:
        raise ValueError("bias_add: one bias entry per selected channel")
    out = x.data.copy()
    out[channels] += bias.data[:, None, None]

    def bw(g):
        return g, g[channels].sum(axis=(1, 2))

    return Tensor._result(out, (x, bias), bw, "bias_add")


def linear_gather(x: Tensor, src: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Sparse linear map: ``out[...] = sum_k weights[..., k] * x.flat[src[..., k]]``.

    ``src`` and ``weights`` share a shape whose last axis indexes the taps;
    the output drops that axis.  Without ``weights`` a single tap of weight
    one is assumed (pure selection, ``src`` then has the output shape).
    """
    flat = x.data.reshape(-1)
    if weights is None:
        out = flat[src]

        def bw(g):
            return (np.bincount(src.reshape(-1), weights=g.reshape(-1), minlength=flat.size).reshape(x.shape),)

        return Tensor._result(out, (x,), bw, "gather")
    out = flat[src[..., 0]] * weights[..., 0]
    for t in range(1, src.shape[-1]):
        out += flat[src[..., t]] * weights[..., t]

    def bw(g):
        contrib = (weights * g[..., None]).reshape(-1)
        return (np.bincount(src.reshape(-1), weights=contrib, minlength=flat.size).reshape(x.shape),)

    return Tensor._result(out, (x,), bw, "linear_gather")


def _corr_direct(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
    kh, kw = w.shape[2:]
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4]))


def conv2d(x: Tensor, w: Tensor, padding: int = 0) -> Tensor:
    """Cross-correlation (no kernel flip) of a ``(C_in, H, W)`` map with ``(C_out, C_in, k, k)``.

    Zero padding of ``padding`` pixels on every side.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ValueError("conv2d expects (C_in, H, W) input and (C_out, C_in, kh, kw) kernel")
    cin, h, wd = x.shape
    cout, wcin, kh, kw = w.shape
    if wcin != cin:
        raise ValueError(f"conv2d: kernel expects {wcin} input channels, got {cin}")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError("conv2d: kernel larger than padded input")
    ho, wo = hp - kh + 1, wp - kw + 1
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data

    if kh * kw >= FFT_MIN_TAPS:
        X = sfft.rfft2(xp)
        Wf = sfft.rfft2(w.data, s=(hp, wp))
        out = sfft.irfft2(np.einsum("cij,ocij->oij", X, Wf.conj(), optimize=True), s=(hp, wp))[:, :ho, :wo]

        def bw(g):
            G = sfft.rfft2(g, s=(hp, wp))
            gx = gw = None
            if x.requires_grad:
                gxp = sfft.irfft2(np.einsum("oij,ocij->cij", G, Wf, optimize=True), s=(hp, wp))
                gx = gxp[:, padding:padding + h, padding:padding + wd]
            if w.requires_grad:
                gw = sfft.irfft2(np.einsum("oij,cij->ocij", G.conj(), X, optimize=True), s=(hp, wp))[:, :, :kh, :kw]
            return gx, gw

        return Tensor._result(np.ascontiguousarray(out), (x, w), bw, "conv2d_fft")

    out = _corr_direct(xp, w.data)

    def bw(g):
        gx = gw = None
        if w.requires_grad:
            win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
            gw = np.tensordot(g, win, axes=([1, 2], [1, 2]))
        if x.requires_grad:
            gpad = np.pad(g, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            wflip = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gxp = _corr_direct(gpad, np.ascontiguousarray(wflip))
            gx = gxp[:, padding:padding + h, padding:padding + wd]
        return gx, gw

    return Tensor._result(out, (x, w), bw, "conv2d")


def elu(x: Tensor) -> Tensor:
    d = x.data
    pos = d > 0
    out = np.where(pos, d, np.expm1(np.minimum(d, 0.0)))

    def bw(g):
        return (g * np.where(pos, 1.0, out + 1.0),)

    return Tensor._result(out, (x,), bw, "elu")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._result(out, (x,), lambda g: (g * out,), "exp")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._result(s, (x,), bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._result(out, (x,), bw, "log_softmax")


def cross_entropy_loss(logits: Tensor, target: int) -> Tensor:
    """``-log softmax(logits)[target]`` for a flat logit vector."""
    if logits.data.ndim != 1:
        raise ValueError("cross_entropy_loss expects a flat logit vector")
    n = logits.shape[0]
    if not 0 <= target < n:
        raise IndexError(f"target {target} outside [0, {n})")
    z = logits.data - logits.data.max()
    lse = np.log(np.exp(z).sum())
    loss = lse - z[target]

    def bw(g):
        p = np.exp(z - lse)
        p[target] -= 1.0
        return (p * float(g),)

    return Tensor._result(np.asarray(loss), (logits,), bw, "cross_entropy")


def max_pool2d(x: Tensor, size: int = 2, stride: int | None = None, padding: int = 0,
               group_size: int = 1) -> Tensor:
    """Max pooling over ``size x size`` windows of a ``(C, H, W)`` map.

    With ``group_size > 1`` consecutive channel groups are pooled together:
    the pixel whose group vector has the largest Euclidean norm is copied
    whole.  Ties go to the first window position in row-major order.
    """
    stride = size if stride is None else stride
    c, h, w = x.shape
    if size == stride and padding == 0 and (h % size or w % size):
        raise ValueError(f"max_pool2d: {h}x{w} is not divisible by {size}")
    if c % group_size:
        raise ValueError("max_pool2d: channels not divisible by group size")
    nf = c // group_size
    xg = x.data.reshape(nf, group_size, h, w)
    if group_size == 1:
        score = xg[:, 0]
        fill = -np.inf
    else:
        score = np.sqrt((xg * xg).sum(axis=1))
        fill = -1.0
    if padding:
        score = np.pad(score, ((0, 0), (padding, padding), (padding, padding)), constant_values=fill)
    hp, wp = h + 2 * padding, w + 2 * padding
    ho, wo = (hp - size) // stride + 1, (wp - size) // stride + 1
    win = sliding_window_view(score, (size, size), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    arg = win.reshape(nf, ho, wo, size * size).argmax(axis=-1)
    rows = np.arange(ho)[None, :, None] * stride + arg // size - padding
    cols = np.arange(wo)[None, None, :] * stride + arg % size - padding
    valid = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    rows_c, cols_c = np.clip(rows, 0, h - 1), np.clip(cols, 0, w - 1)
    field = np.arange(nf)[:, None, None, None] * group_size + np.arange(group_size)[None, :, None, None]
    src = (field * h + rows_c[:, None]) * w + cols_c[:, None]
    src = src.reshape(c, ho, wo)
    mask = np.repeat(valid, group_size, axis=0).astype(np.float64)
    out = x.data.reshape(-1)[src] * mask

    def bw(g):
        return (np.bincount(src.reshape(-1), weights=(g * mask).reshape(-1), minlength=x.size).reshape(x.shape),)

    return Tensor._result(out, (x,), bw, "max_pool2d")


def _interp_matrix(n: int, factor: int) -> np.ndarray:
    m = n * factor
    a = np.zeros((m, n))
    if n == 1:
        a[:, 0] = 1.0
        return a
    pos = np.arange(m) * (n - 1) / (m - 1)
    lo = np.minimum(np.floor(pos).astype(int), n - 2)
    frac = pos - lo
    a[np.arange(m), lo] = 1.0 - frac
    a[np.arange(m), lo + 1] += frac
    return a


def upsample_bilinear(x: Tensor, factor: int = 2) -> Tensor:
    """Corner-aligned bilinear upsampling of the last two axes."""
    h, w = x.shape[-2:]
    ah, aw = _interp_matrix(h, factor), _interp_matrix(w, factor)
    out = np.einsum("ih,...hw,jw->...ij", ah, x.data, aw, optimize=True)

    def bw(g):
        return (np.einsum("ih,...ij,jw->...hw", ah, g, aw, optimize=True),)

    return Tensor._result(out, (x,), bw, "upsample_bilinear")


def _toposort(root: Tensor) -> list[Tensor]:
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate ``d loss / d leaf`` into ``leaf.grad`` for every leaf that requires it."""
    if loss.size != 1:
        raise ValueError("backward needs a scalar loss")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)

