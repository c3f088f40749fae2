"""Dense float64 tensors with a define-by-run reverse-mode tape.

Every learnable computation in the package is assembled from the primitives
in this module. A :class:`Tape` is opened with :func:`tape`; operations whose
inputs are tracked append a node holding a closure that maps the output
gradient to input gradients. :func:`backward` sweeps the nodes in reverse.

Outside an open tape the same functions simply evaluate, which is what the
finite-difference probes in :func:`grad_check` rely on.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

DTYPE = np.float64
LN_EPS = 1e-5


class DimensionError(ValueError):
    """Operand shapes are incompatible with the operation."""


class ContractError(ValueError):
    """A precondition of an operation or harness routine was violated."""


class DegenerateMaskError(ValueError):
    """An attention mask row allows no key at all."""


class NumericError(FloatingPointError):
    """A forward value became NaN or infinite."""


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass
class Node:
    op: str
    inputs: tuple[int | None, ...]
    backward: BackwardFn
    shape: tuple[int, ...]


@dataclass
class Tape:
    nodes: list[Node] = field(default_factory=list)
    grads: dict[int, np.ndarray] = field(default_factory=dict)
    leaves: dict[int, "Tensor"] = field(default_factory=dict)

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def watch(self, t: "Tensor") -> int:
        """Register ``t`` as a leaf of this tape and return its node id."""
        if t._tape is self and t.node_id is not None:
            return t.node_id
        nid = self._append(Node("leaf", (), lambda g: (), t.shape))
        t._tape, t.node_id = self, nid
        self.leaves[nid] = t
        return nid

    def grad(self, t: "Tensor") -> np.ndarray:
        """Gradient of the last root w.r.t. ``t``; zeros when unreached."""
        if t._tape is not self or t.node_id is None:
            return np.zeros(t.shape)
        g = self.grads.get(t.node_id)
        return np.zeros(t.shape) if g is None else g


_state = threading.local()


def _stack() -> list[Tape]:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def active_tape() -> Tape | None:
    s = _stack()
    return s[-1] if s else None


@contextlib.contextmanager
def tape() -> Iterator[Tape]:
    """Open a fresh tape for one forward/backward pass (thread-local)."""
    t = Tape()
    _stack().append(t)
    try:
        yield t
    finally:
        _stack().pop()


class Tensor:
    __slots__ = ("data", "requires_grad", "node_id", "_tape", "grad")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self._tape: Tape | None = None
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __pow__(self, p: float):
        return power(self, p)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node_of(t: Tensor, tp: Tape) -> int | None:
    if t._tape is tp and t.node_id is not None:
        return t.node_id
    if t.requires_grad:
        return tp.watch(t)
    return None


def _make(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite value produced by {op}")
    res = Tensor.__new__(Tensor)
    res.data = out
    res.requires_grad = False
    res.node_id = None
    res._tape = None
    res.grad = None
    tp = active_tape()
    if tp is None:
        return res
    ids = tuple(_node_of(t, tp) for t in inputs)
    if all(i is None for i in ids):
        return res
    res._tape = tp
    res.node_id = tp._append(Node(op, ids, backward, out.shape))
    return res


def backward(root: Tensor) -> Tape:
    """Reverse sweep from a scalar ``root``; fills ``Tape.grads``.

    Leaf tensors with ``requires_grad`` also receive ``.grad``.
    """
    if root.data.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.shape}")
    tp = root._tape
    if tp is None or root.node_id is None:
        raise ContractError("backward root is not on an active tape")
    grads: dict[int, np.ndarray] = {root.node_id: np.ones(root.shape)}
    for nid in range(root.node_id, -1, -1):
        g = grads.get(nid)
        if g is None:
            continue
        node = tp.nodes[nid]
        if not node.inputs:
            continue
        in_grads = node.backward(g)
        for iid, ig in zip(node.inputs, in_grads):
            if iid is None or ig is None:
                continue
            prev = grads.get(iid)
            grads[iid] = ig if prev is None else prev + ig
    tp.grads = grads
    for nid, leaf in tp.leaves.items():
        g = grads.get(nid)
        leaf.grad = np.zeros(leaf.shape) if g is None else g
    return tp


# ---------------------------------------------------------------- elementwise


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make("div", out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape),
                            _unbroadcast(-g * out / bd, bd.shape)))


def power(a: Tensor, p: float) -> Tensor:
    x = a.data
    return _make("power", x ** p, (a,), lambda g: (g * p * x ** (p - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make("sqrt", out, (a,), lambda g: (g / (2.0 * out),))


def tabs(a: Tensor) -> Tensor:
    s = np.sign(a.data)
    return _make("abs", np.abs(a.data), (a,), lambda g: (g * s,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def row_norm(a: Tensor) -> Tensor:
    """Euclidean norm over the last axis; the gradient at a zero row is zero."""
    x = a.data
    n = np.sqrt((x * x).sum(axis=-1))
    safe = np.where(n > 0, n, 1.0)

    def bw(g):
        return (np.where(n[..., None] > 0, x / safe[..., None], 0.0) * g[..., None],)

    return _make("row_norm", n, (a,), bw)


def normalize(a: Tensor) -> Tensor:
    """Rows scaled to unit length; zero rows stay zero with zero gradient."""
    x = a.data
    n = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    safe = np.where(n > 0, n, 1.0)
    u = np.where(n > 0, x / safe, 0.0)

    def bw(g):
        return (np.where(n > 0, (g - u * (g * u).sum(axis=-1, keepdims=True)) / safe, 0.0),)

    return _make("normalize", u, (a,), bw)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner),)

    return _make("gelu", out, (a,), bw)


# ---------------------------------------------------------------- reductions / shape


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    out = np.asarray(np.sum(a.data, axis=axis, keepdims=keepdims), dtype=DTYPE)
    if out.ndim == 0:
        out = out.reshape(1)

    def bw(g):
        if axis is None:
            g = g.reshape(-1)[0]
        elif not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", out, (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make("transpose", np.transpose(a.data, axes), (a,),
                 lambda g: (np.transpose(g, inv),))


def take(a: Tensor, idx) -> Tensor:
    """NumPy-style indexing; repeated fancy indices accumulate in backward."""
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make("take", np.array(a.data[idx], dtype=DTYPE), (a,), bw)


def concat(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    return _make("concat", np.concatenate([t.data for t in ts], axis=axis), ts,
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in ts], axis)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product with NumPy batch broadcasting; both operands ≥2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs ≥2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return _make("matmul", ad @ bd, (a, b), lambda g: _matmul_backward(g, ad, bd))


def _matmul_backward(g, ad, bd):
    return (_unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape),
            _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape))


def spmm(u, x: Tensor) -> Tensor:
    """Constant (sparse or dense) matrix times a tracked 2-D tensor."""
    if u.shape[1] != x.shape[0]:
        raise DimensionError(f"spmm shapes differ: {u.shape} x {x.shape}")
    ut = u.T
    out = u @ x.data
    return _make("spmm", np.asarray(out, dtype=DTYPE), (x,),
                 lambda g: (np.asarray(ut @ g, dtype=DTYPE),))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


# ---------------------------------------------------------------- attention pieces


def masked_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to ``mask`` (True = may attend).

    Disallowed entries are set to -inf before exponentiation, so they come out
    as exact zeros.
    """
    mask = np.asarray(mask, dtype=bool)
    if scores.shape[-2:] != mask.shape:
        raise DimensionError(f"mask {mask.shape} does not match scores {scores.shape}")
    if not mask.any(axis=-1).all():
        raise DegenerateMaskError("attention mask has a row with no allowed key")
    s = np.where(mask, scores.data, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make("masked_softmax", y, (scores,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    if x.shape[-1] < 2:
        raise DimensionError("layer_norm needs at least two features")
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise DimensionError("layer_norm gain/bias must match the feature axis")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(xd.var(axis=-1, keepdims=True) + eps)
    xhat = (xd - mu) * inv
    gd = gain.data

    def bw(g):
        dxh = g * gd
        dx = inv * (dxh - dxh.mean(axis=-1, keepdims=True)
                    - xhat * (dxh * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _make("layer_norm", xhat * gd + bias.data, (x, gain, bias), bw)


# ---------------------------------------------------------------- image ops


def bilinear_sample(feature: Tensor, coords: Tensor) -> Tensor:
    """Sample a ``C×H×W`` map at normalized ``(x, y)`` coords in [-1, 1].

    -1 and +1 land on the centres of the first and last pixel. Coordinates
    outside that range are clamped to the border (zero gradient there).
    Returns ``n×C``.
    """
    C, H, W = feature.shape
    if H < 2 or W < 2:
        raise DimensionError("bilinear_sample needs H, W >= 2")
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise DimensionError(f"coords must be n x 2, got {coords.shape}")
    f = feature.data
    cx, cy = coords.data[:, 0], coords.data[:, 1]
    px_raw = (cx + 1.0) * 0.5 * (W - 1)
    py_raw = (cy + 1.0) * 0.5 * (H - 1)
    px = np.clip(px_raw, 0.0, W - 1)
    py = np.clip(py_raw, 0.0, H - 1)
    inx = (px_raw > 0.0) & (px_raw < W - 1)
    iny = (py_raw > 0.0) & (py_raw < H - 1)
    x0 = np.minimum(np.floor(px).astype(int), W - 2)
    y0 = np.minimum(np.floor(py).astype(int), H - 2)
    wx = px - x0
    wy = py - y0
    f00, f01 = f[:, y0, x0], f[:, y0, x0 + 1]
    y1 = y0 + 1
    f10, f11 = f[:, y1, x0], f[:, y1, x0 + 1]
    out = ((1 - wy) * ((1 - wx) * f00 + wx * f01) + wy * ((1 - wx) * f10 + wx * f11)).T

    def bw(g):
        gt = g.T  # C×n
        df = np.zeros_like(f)
        np.add.at(df, (slice(None), y0, x0), gt * ((1 - wy) * (1 - wx)))
        np.add.at(df, (slice(None), y0, x0 + 1), gt * ((1 - wy) * wx))
        np.add.at(df, (slice(None), y1, x0), gt * (wy * (1 - wx)))
        np.add.at(df, (slice(None), y1, x0 + 1), gt * (wy * wx))
        dpx = (1 - wy) * (f01 - f00) + wy * (f11 - f10)
        dpy = (1 - wx) * (f10 - f00) + wx * (f11 - f01)
        dcx = (gt * dpx).sum(axis=0) * 0.5 * (W - 1) * inx
        dcy = (gt * dpy).sum(axis=0) * 0.5 * (H - 1) * iny
        return df, np.stack([dcx, dcy], axis=1)

    return _make("bilinear_sample", np.ascontiguousarray(out), (feature, coords), bw)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Single-image convolution: ``x`` is ``Ci×H×W``, ``w`` is ``Co×Ci×k×k``."""
    Ci, H, W = x.shape
    Co, Ci_w, k, k2 = w.shape
    if Ci != Ci_w or k != k2:
        raise DimensionError(f"conv2d weight {w.shape} does not fit input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    Hp, Wp = xp.shape[1:]
    Ho, Wo = (Hp - k) // stride + 1, (Wp - k) // stride + 1
    if Ho < 1 or Wo < 1:
        raise DimensionError("conv2d input smaller than kernel")
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, : stride * (Ho - 1) + 1 : stride, : stride * (Wo - 1) + 1 : stride]
    cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(Ci * k * k, Ho * Wo)
    w2 = w.data.reshape(Co, -1)
    out = (w2 @ cols + b.data[:, None]).reshape(Co, Ho, Wo)

    def bw(g):
        g2 = g.reshape(Co, -1)
        dw = (g2 @ cols.T).reshape(w.shape)
        dcols = (w2.T @ g2).reshape(Ci, k, k, Ho, Wo)
        dxp = np.zeros((Ci, Hp, Wp))
        for i in range(k):
            for j in range(k):
                dxp[:, i : i + stride * (Ho - 1) + 1 : stride,
                    j : j + stride * (Wo - 1) + 1 : stride] += dcols[:, i, j]
        return dxp[:, pad : pad + H, pad : pad + W], dw, g2.sum(axis=1)

    return _make("conv2d", out, (x, w, b), bw)


def conv_transpose2x2(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Stride-2, kernel-2 transposed convolution: ``Ci×H×W`` -> ``Co×2H×2W``.

    ``w`` has shape ``Ci×Co×2×2``; output pixels never overlap.
    """
    Ci, H, W = x.shape
    if w.shape[0] != Ci or w.shape[2:] != (2, 2):
        raise DimensionError(f"transposed conv weight {w.shape} does not fit input {x.shape}")
    Co = w.shape[1]
    xd, wd = x.data, w.data
    out = np.einsum("ihw,ioab->ohawb", xd, wd).reshape(Co, 2 * H, 2 * W) + b.data[:, None, None]

    def bw(g):
        g5 = g.reshape(Co, H, 2, W, 2)
        return (np.einsum("ohawb,ioab->ihw", g5, wd),
                np.einsum("ihw,ohawb->ioab", xd, g5),
                g.sum(axis=(1, 2)))

    return _make("conv_transpose2x2", out, (x, w, b), bw)


# ---------------------------------------------------------------- rotations

_SKEW_BASIS = np.zeros((3, 3, 3))
_SKEW_BASIS[0, 2, 1], _SKEW_BASIS[0, 1, 2] = 1.0, -1.0
_SKEW_BASIS[1, 0, 2], _SKEW_BASIS[1, 2, 0] = 1.0, -1.0
_SKEW_BASIS[2, 1, 0], _SKEW_BASIS[2, 0, 1] = 1.0, -1.0

# below this angle A, B and their derivatives come from truncated series
_SERIES_ANGLE = 1e-2


def _rodrigues_coeffs(s: np.ndarray):
    """A=sin t/t, B=(1-cos t)/t², and dA/ds, dB/ds with s=t²."""
    t = np.sqrt(s)
    small = t < _SERIES_ANGLE
    ts = np.where(small, 1.0, t)
    ss = np.where(small, 1.0, s)
    A = np.where(small, 1 - s / 6 + s * s / 120 - s ** 3 / 5040, np.sin(ts) / ts)
    B = np.where(small, 0.5 - s / 24 + s * s / 720 - s ** 3 / 40320, (1 - np.cos(ts)) / ss)
    dA = np.where(small, -1 / 6 + s / 60 - s * s / 1680 + s ** 3 / 90720,
                  (np.cos(ts) - np.sin(ts) / ts) / (2 * ss))
    dB = np.where(small, -1 / 24 + s / 360 - s * s / 13440 + s ** 3 / 907200,
                  (np.sin(ts) / ts - 2 * (1 - np.cos(ts)) / ss) / (2 * ss))
    return A, B, dA, dB


def skew(v: np.ndarray) -> np.ndarray:
    return np.einsum("...k,kij->...ij", v, _SKEW_BASIS)


def rodrigues(axis_angle: Tensor) -> Tensor:
    """Batched axis-angle (``J×3``) to rotation matrices (``J×3×3``)."""
    a = axis_angle.data
    if a.ndim != 2 or a.shape[1] != 3:
        raise DimensionError(f"rodrigues expects J x 3, got {a.shape}")
    s = (a * a).sum(axis=1)
    A, B, dA, dB = _rodrigues_coeffs(s)
    K = skew(a)
    K2 = K @ K
    R = np.eye(3) + A[:, None, None] * K + B[:, None, None] * K2

    def bw(g):
        da = np.empty_like(a)
        for k in range(3):
            Ek = _SKEW_BASIS[k]
            dR = (2 * a[:, k, None, None] * (dA[:, None, None] * K + dB[:, None, None] * K2)
                  + A[:, None, None] * Ek + B[:, None, None] * (Ek @ K + K @ Ek))
            da[:, k] = (g * dR).sum(axis=(1, 2))
        return (da,)

    return _make("rodrigues", R, (axis_angle,), bw)


# ---------------------------------------------------------------- verification


def grad_check_errors(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5,
                      coords: Sequence[int] | None = None) -> np.ndarray:
    """Per-coordinate relative error between tape gradient and central differences.

    The denominator is ``max(|a|, |b|, 1e-8)``. ``coords`` restricts the probe
    to a subset of flat indices (all by default).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    x0 = np.array(as_tensor(x).data, dtype=DTYPE)
    with tape():
        xt = Tensor(x0.copy(), requires_grad=True)
        y = f(xt)
        if y.data.size != 1:
            raise ContractError("grad_check needs a scalar-valued function")
        backward(y)
        analytic = xt.grad.reshape(-1)
    idx = range(x0.size) if coords is None else coords
    flat = x0.reshape(-1)
    errors = []
    for i in idx:
        xp, xm = flat.copy(), flat.copy()
        xp[i] += eps
        xm[i] -= eps
        fp = f(Tensor(xp.reshape(x0.shape))).item()
        fm = f(Tensor(xm.reshape(x0.shape))).item()
        num = (fp - fm) / (2 * eps)
        a = analytic[i]
        errors.append(abs(a - num) / max(abs(a), abs(num), 1e-8))
    return np.array(errors)


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5,
               coords: Sequence[int] | None = None) -> float:
    """Max relative error between tape gradient and central differences."""
    errors = grad_check_errors(f, x, eps, coords)
    return float(errors.max()) if errors.size else 0.0
