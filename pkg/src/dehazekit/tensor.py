"""Small dense-tensor engine with a dynamic reverse-mode tape.

Every image, feature map, weight and loss in the package is a :class:`Tensor`.
Operations record a closure that maps the output gradient to input gradients;
:meth:`Tensor.backward` walks the recorded graph in reverse topological order
and then frees it.
"""
from __future__ import annotations

import struct
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

EPS = 1e-6
DTYPE = np.float32

_grad_enabled = True


class ContractError(ValueError):
    """An operation was called with arguments that violate its contract."""


class NumericFault(ArithmeticError):
    """A computation produced non-finite values."""


@contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(value, dtype=None) -> np.ndarray:
    if isinstance(value, Tensor):
        return value.data
    return np.asarray(value, dtype=dtype or DTYPE)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype or (data.dtype if isinstance(data, np.ndarray)
                                             and data.dtype in (np.float32, np.float64) else DTYPE))
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # ---- construction helpers ----
    @classmethod
    def zeros(cls, shape, requires_grad=False, dtype=None):
        return cls(np.zeros(shape, dtype=dtype or DTYPE), requires_grad=requires_grad)

    @classmethod
    def ones(cls, shape, requires_grad=False, dtype=None):
        return cls(np.ones(shape, dtype=dtype or DTYPE), requires_grad=requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # ---- graph plumbing ----
    def _tracks(self) -> bool:
        return self.requires_grad or self._backward is not None

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Populate ``.grad`` on every leaf reachable from this scalar."""
        if grad is None:
            if self.data.size != 1:
                raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): grad.astype(self.data.dtype, copy=False)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent._tracks():
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            # free the tape
            node._parents = ()
            node._backward = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    # ---- operator sugar ----
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(self, o)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(_lift(o, self), self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(self, o)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(_lift(o, self), self)
    def __neg__(self): return mul(self, -1.0)
    def __pow__(self, p): return pow(self, p)

    def sum(self, axis=None): return reduce_sum(self, axis)
    def mean(self, axis=None): return reduce_mean(self, axis)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def make(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    """Wrap a forward result and record it on the tape when any input tracks gradients."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out.name = None
    parents = tuple(parents)
    if _grad_enabled and any(p._tracks() for p in parents):
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return make(a.data + b.data, (a, b),
                lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return make(a.data - b.data, (a, b),
                lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data
    return make(ad * bd, (a, b),
                lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a: Tensor, b, eps: float = EPS) -> Tensor:
    """``a / b`` with denominators smaller than ``eps`` in magnitude replaced by
    ``eps`` (sign kept, zero maps to ``+eps``). Guarded entries pass no
    gradient to ``b``."""
    b = _lift(b, a)
    _check_broadcast(a.data, b.data, "div")
    ad, bd = a.data, b.data
    small = np.abs(bd) < eps
    den = np.where(small, np.where(bd < 0, -eps, eps), bd).astype(bd.dtype)
    out = ad / den

    def back(g):
        ga = g / den
        gb = np.where(small, 0.0, -ga * out).astype(ga.dtype)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)
    return make(out, (a, b), back)


def maximum(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    _check_broadcast(a.data, b.data, "maximum")
    mask = a.data >= b.data
    return make(np.maximum(a.data, b.data), (a, b),
                lambda g: (_unbroadcast(g * mask, a.shape), _unbroadcast(g * ~mask, b.shape)))


def minimum(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    _check_broadcast(a.data, b.data, "minimum")
    mask = a.data <= b.data
    return make(np.minimum(a.data, b.data), (a, b),
                lambda g: (_unbroadcast(g * mask, a.shape), _unbroadcast(g * ~mask, b.shape)))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make(out, (a,), lambda g: (g * out,))


def log(a: Tensor, eps: float = EPS) -> Tensor:
    arg = a.data + np.asarray(eps, dtype=a.dtype)
    return make(np.log(arg), (a,), lambda g: (g / arg,))


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    sign = np.sign(a.data)
    return make(np.abs(a.data), (a,), lambda g: (g * sign,))


def pow(a: Tensor, p: float) -> Tensor:  # noqa: A001
    ad = a.data
    return make(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return make(out, (a,), lambda g: (g * 0.5 / np.maximum(out, 1e-12),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return make(out.astype(a.dtype, copy=False), (a,), lambda g: (g * out * (1.0 - out),))


def clamp(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    out = np.clip(a.data, lo, hi)
    mask = out == a.data
    return make(out, (a,), lambda g: (g * mask,))


def softmax(a: Tensor, axis: int = 1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return make(out, (a,), back)


ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "div": div, "max": maximum,
    "exp": lambda a, b=None: exp(a), "log": lambda a, b=None: log(a),
    "abs": lambda a, b=None: abs(a), "pow": pow,
}


def elementwise(kind: str, a: Tensor, b=None) -> Tensor:
    """Dispatch by name: add, sub, mul, div, max, exp, log, abs, pow."""
    try:
        fn = ELEMENTWISE[kind]
    except KeyError:
        raise ContractError(f"unknown elementwise op {kind!r}") from None
    return fn(a, b)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ContractError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    """Sum with kept dimensions (reduced axes collapse to size 1)."""
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    return make(a.data.sum(axis=axes, keepdims=True), (a,),
                lambda g: (np.broadcast_to(g, shape).copy(),))


def reduce_mean(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    count = int(np.prod([shape[ax] for ax in axes])) if axes else 1
    return make(a.data.mean(axis=axes, keepdims=True), (a,),
                lambda g: (np.broadcast_to(g / count, shape).copy(),))


def channel_max(a: Tensor) -> Tensor:
    """Per-pixel maximum over the channel axis: (n, c, h, w) -> (n, 1, h, w)."""
    if a.ndim != 4:
        raise ContractError(f"channel_max expects a 4-d tensor, got {a.shape}")
    idx = a.data.argmax(axis=1)[:, None]
    out = np.take_along_axis(a.data, idx, axis=1)

    def back(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, idx, g, axis=1)
        return (ga,)
    return make(out, (a,), back)


def reduce(kind: str, a: Tensor, axis=None) -> Tensor:
    if kind == "sum":
        return reduce_sum(a, axis)
    if kind == "mean":
        return reduce_mean(a, axis)
    if kind == "max-over-channels":
        return channel_max(a)
    raise ContractError(f"unknown reduction {kind!r}")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                lambda g: tuple(np.split(g, splits, axis=axis)))


def split(a: Tensor, sections: int, axis: int = 1) -> list[Tensor]:
    if a.shape[axis] % sections:
        raise ContractError(f"cannot split axis of size {a.shape[axis]} into {sections}")
    step = a.shape[axis] // sections
    return [slice_axis(a, axis, i * step, (i + 1) * step) for i in range(sections)]


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape, dtype = a.shape, a.dtype

    def back(g):
        ga = np.zeros(shape, dtype=dtype)
        ga[idx] = g
        return (ga,)
    return make(a.data[idx].copy(), (a,), back)


def crop(a: Tensor, h: int, w: int, top: int = 0, left: int = 0) -> Tensor:
    """Spatial sub-block ``[top:top+h, left:left+w]`` of a 4-d tensor."""
    if top < 0 or left < 0 or top + h > a.shape[2] or left + w > a.shape[3]:
        raise ContractError(f"crop {h}x{w}@({top},{left}) outside {a.shape}")
    idx = (slice(None), slice(None), slice(top, top + h), slice(left, left + w))
    shape, dtype = a.shape, a.dtype

    def back(g):
        ga = np.zeros(shape, dtype=dtype)
        ga[idx] = g
        return (ga,)
    return make(a.data[idx].copy(), (a,), back)


_NP_PAD = {"zeros": "constant", "reflect": "reflect", "replicate": "edge", "circular": "wrap"}


def _pad_index(n: int, before: int, after: int, mode: str) -> np.ndarray:
    """Source index for every padded position along one axis (-1 means zero)."""
    pos = np.arange(-before, n + after)
    if mode == "zeros":
        return np.where((pos >= 0) & (pos < n), pos, -1)
    if mode == "replicate":
        return np.clip(pos, 0, n - 1)
    if mode == "circular":
        return pos % n
    if mode == "reflect":
        if n == 1:
            return np.zeros_like(pos)
        period = 2 * (n - 1)
        m = pos % period
        return np.where(m < n, m, period - m)
    raise ContractError(f"unknown padding mode {mode!r}")


def pad2d(a: Tensor, pad: tuple[int, int, int, int], mode: str = "zeros") -> Tensor:
    """Pad (top, bottom, left, right) on the last two axes."""
    top, bottom, left, right = pad
    if not any(pad):
        return a
    if mode not in _NP_PAD:
        raise ContractError(f"unknown padding mode {mode!r}")
    h, w = a.shape[-2:]
    if mode == "reflect" and (max(top, bottom) >= h or max(left, right) >= w):
        raise ContractError(f"reflect padding {pad} too large for {h}x{w}")
    widths = [(0, 0)] * (a.ndim - 2) + [(top, bottom), (left, right)]
    kw = {"constant_values": 0} if mode == "zeros" else {}
    out = np.pad(a.data, widths, mode=_NP_PAD[mode], **kw)
    shape = a.shape

    def back(g):
        if mode == "zeros":
            return (g[..., top:top + h, left:left + w].copy(),)
        # scatter-add through one-hot index matrices: ga = Ph^T g Pw
        ph = _onehot(_pad_index(h, top, bottom, mode), h, g.dtype)
        pw = _onehot(_pad_index(w, left, right, mode), w, g.dtype)
        return (np.matmul(np.matmul(ph.T, g), pw).reshape(shape),)
    return make(out, (a,), back)


def _onehot(idx: np.ndarray, n: int, dtype) -> np.ndarray:
    m = np.zeros((len(idx), n), dtype=dtype)
    m[np.arange(len(idx)), idx] = 1
    return m


def detach(a: Tensor) -> Tensor:
    """Value-identical tensor that no gradient flows through (stopgrad)."""
    return a.detach()


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, padding_mode: str = "zeros", groups: int = 1) -> Tensor:
    """Grouped 2-d cross-correlation (no kernel flip).

    ``w`` has shape (out_c, in_c // groups, kh, kw). Output spatial size is
    ``floor((h + 2*padding - kh) / stride) + 1``.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ContractError(f"conv2d needs 4-d input and weight, got {x.shape}, {w.shape}")
    n, cin, _, _ = x.shape
    cout, cg, kh, kw = w.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ContractError(f"channels in={cin} out={cout} not divisible by groups={groups}")
    if cg != cin // groups:
        raise ContractError(f"weight expects {cg * groups} input channels, input has {cin}")
    if padding:
        x = pad2d(x, (padding, padding, padding, padding), padding_mode)
    hp, wp = x.shape[2:]
    if hp < kh or wp < kw:
        raise ContractError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    taps = [(i, j) for i in range(kh) for j in range(kw)]

    def view(arr, i, j):
        return arr[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]

    xd, wd = x.data, w.data
    if groups == cin and cout == cin:
        # depthwise: one multiply-add per tap
        out = np.zeros((n, cout, ho, wo), dtype=xd.dtype)
        for i, j in taps:
            out += view(xd, i, j) * wd[None, :, 0, i, j, None, None]

        def back_w(g):
            gw = np.empty_like(wd)
            gx = np.zeros_like(xd)
            for i, j in taps:
                gw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, view(xd, i, j))
                view(gx, i, j)[...] += g * wd[None, :, 0, i, j, None, None]
            return gx, gw
    else:
        og = cout // groups
        # cols: (n, groups, cg * kh * kw, ho * wo), taps vary fastest within a channel
        cols = np.stack([view(xd, i, j) for i, j in taps], axis=2)
        cols = cols.reshape(n, groups, cg * kh * kw, ho * wo)
        wm = wd.reshape(groups, og, cg * kh * kw)
        out = np.matmul(wm, cols).reshape(n, cout, ho, wo)

        def back_w(g):
            gm = g.reshape(n, groups, og, ho * wo)
            gw = np.matmul(gm, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(wd.shape)
            gcols = np.matmul(wm.transpose(0, 2, 1), gm)
            gcols = gcols.reshape(n, cin, kh * kw, ho, wo)
            gx = np.zeros_like(xd)
            for t, (i, j) in enumerate(taps):
                view(gx, i, j)[...] += gcols[:, :, t]
            return gx, gw

    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)

    def back(g):
        gx, gw = back_w(g)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w) if bias is None else (x, w, bias)
    return make(out, parents, back)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

MAGIC = b"DHZT"
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {v: k for k, v in _DTYPE_CODES.items()}


def tensor_to_bytes(t: Tensor | np.ndarray) -> bytes:
    """Magic, dtype code, four little-endian int64 dims, raw little-endian payload."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if arr.ndim > 4:
        raise ContractError(f"serialization supports at most 4 dims, got {arr.ndim}")
    shape = (1,) * (4 - arr.ndim) + arr.shape
    dt = np.dtype(arr.dtype).newbyteorder("<")
    code = _CODES.get(dt)
    if code is None:
        raise ContractError(f"unsupported dtype {arr.dtype}")
    return MAGIC + struct.pack("<B", code) + struct.pack("<4q", *shape) + \
        np.ascontiguousarray(arr, dtype=dt).tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Decode one tensor starting at ``offset``; returns (tensor, next offset)."""
    if buf[offset:offset + 4] != MAGIC:
        raise ContractError("bad tensor magic")
    code = buf[offset + 4]
    dt = _DTYPE_CODES.get(code)
    if dt is None:
        raise ContractError(f"unknown dtype code {code}")
    shape = struct.unpack_from("<4q", buf, offset + 5)
    start = offset + 5 + 32
    count = int(np.prod(shape))
    end = start + count * dt.itemsize
    if end > len(buf):
        raise ContractError("truncated tensor payload")
    arr = np.frombuffer(buf, dtype=dt, count=count, offset=start).reshape(shape)
    return Tensor(arr.astype(dt.newbyteorder("="))), end
