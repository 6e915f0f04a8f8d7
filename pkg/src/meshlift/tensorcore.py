"""Dense float64 tensors, a recording tape, and reverse-mode gradients.

Every differentiable operation is registered in :data:`OPS` as a forward
function plus a vector-Jacobian product (VJP).  Operations executed while a
:class:`Tape` is active and that touch a tensor with ``requires_grad`` are
recorded; :func:`backward` walks the record in reverse.

Layout conventions: image-like tensors are ``(batch, rows, cols, channels)``.
There is no implicit broadcasting except between a tensor and a scalar.
"""
from __future__ import annotations

import contextlib
import logging
import threading
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence

import numpy as np

_logger = logging.getLogger(__name__)


class ShapeError(ValueError):
    """Raised when an operation receives incompatible shapes."""

    def __init__(self, op: str, message: str, dims: Sequence[Any] = ()):
        self.op = op
        self.dims = tuple(dims)
        detail = f" (dims: {', '.join(map(str, self.dims))})" if self.dims else ""
        super().__init__(f"{op}: {message}{detail}")


class GradCheckError(RuntimeError):
    pass


class Tensor:
    """Immutable-by-convention float64 array that may take part in a tape."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if any(d < 1 for d in arr.shape):
            raise ShapeError("tensor", "all dimensions must be >= 1", arr.shape)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar -------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Tensor):
            return apply("add", self, other)
        return apply("shift", self, c=float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return apply("sub", self, other)
        return apply("shift", self, c=-float(other))

    def __rsub__(self, other):
        return apply("shift", apply("neg", self), c=float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return apply("mul", self, other)
        return apply("scale", self, c=float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return apply("div", self, other)
        return apply("scale", self, c=1.0 / float(other))

    def __neg__(self):
        return apply("neg", self)

    def __matmul__(self, other):
        return apply("matmul", self, other)

    def __getitem__(self, key):
        return apply("slice", self, key=_normalize_key(key))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply("reshape", self, shape=tuple(int(s) for s in shape))

    def sum(self, axis=None, keepdims: bool = False):
        return apply("sum", self, axis=_axis(axis), keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return apply("mean", self, axis=_axis(axis), keepdims=keepdims)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return apply("transpose", self, axes=tuple(axes))


def _not_scalar(t: Tensor):
    raise ShapeError("item", "tensor is not a scalar", t.shape)


def _axis(axis):
    if axis is None:
        return None
    if isinstance(axis, int):
        return (axis,)
    return tuple(axis)


def _normalize_key(key):
    if not isinstance(key, tuple):
        key = (key,)
    for k in key:
        if not isinstance(k, (int, slice, type(Ellipsis))):
            raise TypeError("only basic indexing (ints, slices, ...) is differentiable")
    return key


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape


@dataclass
class Node:
    op: "OpDef"
    inputs: tuple[Tensor, ...]
    output: Tensor
    ctx: Any
    params: dict


class Tape:
    """Ordered record of executed ops.  Use as a context manager."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def gradient(self, loss: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
        grads = backward(self, loss)
        return [grads[t] for t in wrt]


_local = threading.local()


def _stack() -> list:
    st = getattr(_local, "stack", None)
    if st is None:
        st = _local.stack = []
    return st


def active_tape() -> Tape | None:
    st = _stack()
    return st[-1] if st else None


@contextlib.contextmanager
def no_grad():
    """Suspend recording inside an enclosing tape."""
    st = _stack()
    st.append(None)
    try:
        yield
    finally:
        st.pop()


class Gradients:
    """Mapping from tensor (by identity) to its gradient array.

    Looking up a tensor that never reached the loss yields zeros and is
    remembered in :attr:`missing`.
    """

    def __init__(self, grads: dict[int, np.ndarray], tensors: dict[int, Tensor]):
        self._grads = grads
        self._tensors = tensors
        self.missing: list[Tensor] = []

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(id(t))
        if g is not None and self._tensors.get(id(t)) is t:
            return g
        self.missing.append(t)
        _logger.warning("tensor %s is not on the tape; returning zero gradient", t.name or t.shape)
        return np.zeros(t.shape)

    def __contains__(self, t: Tensor) -> bool:
        return self._tensors.get(id(t)) is t


_CORRUPTED: set[str] = set()


@contextlib.contextmanager
def corrupt_vjp(name: str, factor: float = 1.5):
    """Debug hook: scale the VJP of ``name`` by ``factor`` (negative control)."""
    _CORRUPTED.add(name)
    prev = _corrupt_factor.get(name)
    _corrupt_factor[name] = factor
    try:
        yield
    finally:
        _CORRUPTED.discard(name)
        if prev is None:
            _corrupt_factor.pop(name, None)


_corrupt_factor: dict[str, float] = {}


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Reverse pass over ``tape``.  The tape is emptied afterwards."""
    if loss.size != 1 or loss.ndim > 1:
        raise ShapeError("backward", "loss must be a scalar of shape () or (1,)", loss.shape)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    keep: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.get(id(node.output))
        if g is None or keep.get(id(node.output)) is not node.output:
            continue
        in_grads = node.op.vjp(g, node.ctx, **node.params)
        if node.op.name in _CORRUPTED:
            f = _corrupt_factor[node.op.name]
            in_grads = tuple(None if gi is None else gi * f for gi in in_grads)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise ShapeError(node.op.name, "VJP returned wrong shape", (gi.shape, t.shape))
            k = id(t)
            if k in grads and keep[k] is t:
                grads[k] = grads[k] + gi
            else:
                grads[k] = gi
                keep[k] = t
        node.ctx = None
    tape.nodes.clear()
    return Gradients(grads, keep)


# ---------------------------------------------------------------------------
# op registry


@dataclass(frozen=True)
class OpDef:
    name: str
    forward: Callable
    vjp: Callable
    sample: Callable | None = None
    tol: float = 1e-4


OPS: dict[str, OpDef] = {}


def defop(name: str, forward: Callable, vjp: Callable, *, sample: Callable | None = None,
          tol: float = 1e-4) -> OpDef:
    op = OpDef(name, forward, vjp, sample, tol)
    OPS[name] = op
    return op


def apply(name: str, *inputs, **params) -> Tensor:
    op = OPS[name]
    ins = tuple(as_tensor(x) for x in inputs)
    out, ctx = op.forward(*(t.data for t in ins), **params)
    tape = active_tape()
    record = tape is not None and any(t.requires_grad for t in ins)
    res = Tensor(out, requires_grad=record)
    if record:
        tape.record(Node(op, ins, res, ctx, params))
    return res


def forward_op(op_kind: str, inputs: Sequence[Tensor], params: dict | None = None) -> Tensor:
    return apply(op_kind, *inputs, **(params or {}))


# ---------------------------------------------------------------------------
# elementwise


def _same_or_scalar(op, a, b):
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        if a.size == 1 and b.size == 1 and a.shape != b.shape:
            raise ShapeError(op, "scalar shapes differ", (a.shape, b.shape))
        return
    raise ShapeError(op, "shapes must match (only scalar broadcasting)", (a.shape, b.shape))


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def _add_f(a, b):
    _same_or_scalar("add", a, b)
    return a + b, (a.shape, b.shape)


def _add_b(g, ctx):
    sa, sb = ctx
    return _reduce_to(g, sa), _reduce_to(g, sb)


def _sub_f(a, b):
    _same_or_scalar("sub", a, b)
    return a - b, (a.shape, b.shape)


def _sub_b(g, ctx):
    sa, sb = ctx
    return _reduce_to(g, sa), _reduce_to(-g, sb)


def _mul_f(a, b):
    _same_or_scalar("mul", a, b)
    return a * b, (a, b)


def _mul_b(g, ctx):
    a, b = ctx
    return _reduce_to(g * b, a.shape), _reduce_to(g * a, b.shape)


def _div_f(a, b):
    _same_or_scalar("div", a, b)
    return a / b, (a, b)


def _div_b(g, ctx):
    a, b = ctx
    return _reduce_to(g / b, a.shape), _reduce_to(-g * a / (b * b), b.shape)


def _neg_f(a):
    return -a, None


def _neg_b(g, ctx):
    return (-g,)


def _scale_f(a, c):
    return a * c, None


def _scale_b(g, ctx, c):
    return (g * c,)


def _shift_f(a, c):
    return a + c, None


def _shift_b(g, ctx, c):
    return (g,)


def _lrelu_f(a, slope=0.1):
    mask = a > 0
    return np.where(mask, a, slope * a), mask


def _lrelu_b(g, mask, slope=0.1):
    return (np.where(mask, g, slope * g),)


def _exp_f(a):
    out = np.exp(a)
    return out, out


def _exp_b(g, out):
    return (g * out,)


def _log_f(a):
    if np.any(a <= 0):
        raise ValueError("log: non-positive input")
    return np.log(a), a


def _log_b(g, a):
    return (g / a,)


def _sqrt_f(a):
    # clamped at zero; the gradient at zero is taken as zero
    out = np.sqrt(np.maximum(a, 0.0))
    return out, out


def _sqrt_b(g, out):
    safe = np.where(out > 0, out, 1.0)
    return (np.where(out > 0, g / (2.0 * safe), 0.0),)


def _softplus_f(a):
    out = np.logaddexp(0.0, a)
    return out, a


def _softplus_b(g, a):
    return (g / (1.0 + np.exp(-a)),)


# ---------------------------------------------------------------------------
# linear algebra / structural


def _matmul_f(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", "expected (..., m, k) @ (..., k, n) with equal batch dims",
                         (a.shape, b.shape))
    return a @ b, (a, b)


def _matmul_b(g, ctx):
    a, b = ctx
    return g @ np.swapaxes(b, -1, -2), np.swapaxes(a, -1, -2) @ g


def _transpose_f(a, axes):
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("transpose", "axes must permute all dimensions", (a.shape, axes))
    return np.transpose(a, axes), None


def _transpose_b(g, ctx, axes):
    return (np.transpose(g, np.argsort(axes)),)


def _reshape_f(a, shape):
    try:
        out = a.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", "element count mismatch", (a.shape, shape)) from None
    return out, a.shape


def _reshape_b(g, shape_in, shape):
    return (g.reshape(shape_in),)


def _sum_f(a, axis=None, keepdims=False):
    return np.asarray(a.sum(axis=axis, keepdims=keepdims)), a.shape


def _expand_back(g, shape_in, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.asarray(g).reshape((1,) * len(shape_in)), shape_in)
    if not keepdims:
        axes = tuple(ax % len(shape_in) for ax in axis)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape_in)


def _sum_b(g, shape_in, axis=None, keepdims=False):
    return (np.array(_expand_back(g, shape_in, axis, keepdims)),)


def _mean_f(a, axis=None, keepdims=False):
    return np.asarray(a.mean(axis=axis, keepdims=keepdims)), a.shape


def _mean_b(g, shape_in, axis=None, keepdims=False):
    if axis is None:
        n = int(np.prod(shape_in))
    else:
        n = int(np.prod([shape_in[ax] for ax in axis]))
    return (np.array(_expand_back(g, shape_in, axis, keepdims)) / n,)


def _concat_f(*arrs, axis=0):
    ref = arrs[0].shape
    ax = axis % len(ref)
    for a in arrs[1:]:
        if a.ndim != len(ref) or any(a.shape[d] != ref[d] for d in range(len(ref)) if d != ax):
            raise ShapeError("concat", "non-concatenated dims must agree", (ref, a.shape))
    return np.concatenate(arrs, axis=ax), [a.shape[ax] for a in arrs]


def _concat_b(g, sizes, axis=0):
    idx = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, idx, axis=axis))


def _slice_f(a, key):
    out = a[key]
    return np.array(out), a.shape


def _slice_b(g, shape_in, key):
    z = np.zeros(shape_in)
    z[key] = g
    return (z,)


# ---------------------------------------------------------------------------
# convolution (NHWC, weights (kh, kw, cin, cout))


def _conv_geometry(x, w, stride, padding, dilation):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d", "expected x (B,H,W,C) and w (kh,kw,cin,cout)", (x.shape, w.shape))
    if x.shape[3] != w.shape[2]:
        raise ShapeError("conv2d", "input channels do not match kernel", (x.shape[3], w.shape[2]))
    kh, kw = w.shape[:2]
    H, W = x.shape[1] + 2 * padding, x.shape[2] + 2 * padding
    eh, ew = dilation * (kh - 1) + 1, dilation * (kw - 1) + 1
    if H < eh or W < ew:
        raise ShapeError("conv2d", "kernel larger than padded input", (H, W, eh, ew))
    return (H - eh) // stride + 1, (W - ew) // stride + 1


def im2col(xp, kh, kw, stride, dilation, Ho, Wo):
    B, _, _, C = xp.shape
    cols = np.empty((B, Ho, Wo, kh, kw, C))
    for i in range(kh):
        r0 = i * dilation
        for j in range(kw):
            c0 = j * dilation
            cols[:, :, :, i, j, :] = xp[:, r0:r0 + stride * (Ho - 1) + 1:stride,
                                        c0:c0 + stride * (Wo - 1) + 1:stride, :]
    return cols.reshape(B * Ho * Wo, kh * kw * C)


def col2im(cols, xp_shape, kh, kw, stride, dilation, Ho, Wo):
    B, _, _, C = xp_shape
    cols = cols.reshape(B, Ho, Wo, kh, kw, C)
    out = np.zeros(xp_shape)
    for i in range(kh):
        r0 = i * dilation
        for j in range(kw):
            c0 = j * dilation
            out[:, r0:r0 + stride * (Ho - 1) + 1:stride,
                c0:c0 + stride * (Wo - 1) + 1:stride, :] += cols[:, :, :, i, j, :]
    return out


def _conv_f(x, w, b, stride=1, padding=0, dilation=1):
    Ho, Wo = _conv_geometry(x, w, stride, padding, dilation)
    if b.shape != (w.shape[3],):
        raise ShapeError("conv2d", "bias must have cout entries", (b.shape, w.shape[3]))
    kh, kw, cin, cout = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x
    if kh == 1 and kw == 1 and stride == 1:
        cols = xp.reshape(-1, cin)
    else:
        cols = im2col(xp, kh, kw, stride, dilation, Ho, Wo)
    out = cols @ w.reshape(-1, cout) + b
    return out.reshape(x.shape[0], Ho, Wo, cout), (cols, xp.shape, w, Ho, Wo)


def _conv_b(g, ctx, stride=1, padding=0, dilation=1):
    cols, xp_shape, w, Ho, Wo = ctx
    kh, kw, cin, cout = w.shape
    g2 = g.reshape(-1, cout)
    gw = (cols.T @ g2).reshape(w.shape)
    gb = g2.sum(axis=0)
    gcols = g2 @ w.reshape(-1, cout).T
    if kh == 1 and kw == 1 and stride == 1:
        gxp = gcols.reshape(xp_shape)
    else:
        gxp = col2im(gcols, xp_shape, kh, kw, stride, dilation, Ho, Wo)
    if padding:
        gxp = gxp[:, padding:-padding, padding:-padding, :]
    return np.ascontiguousarray(gxp), gw, gb


# ---------------------------------------------------------------------------
# gradcheck samples (shapes kept <= 6x6x4)


def _s_pair(rng):
    shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
    return [rng.uniform(-1, 1, shape), rng.uniform(-1, 1, shape)], {}


def _s_one(rng):
    shape = tuple(rng.integers(1, 6, size=rng.integers(1, 4)))
    return [rng.uniform(-1, 1, shape)], {}


def _s_div(rng):
    a, b = _s_pair(rng)[0]
    return [a, np.sign(b) * (0.5 + np.abs(b))], {}


def _s_pos(rng):
    shape = tuple(rng.integers(1, 6, size=2))
    return [rng.uniform(0.3, 2.0, shape)], {}


def _s_lrelu(rng):
    x = rng.uniform(-1, 1, (4, 5))
    x[np.abs(x) < 0.05] = 0.3  # stay clear of the kink
    return [x], {"slope": 0.1}


def _s_scale(rng):
    return [rng.uniform(-1, 1, (3, 4))], {"c": float(rng.uniform(-2, 2))}


def _s_matmul(rng):
    m, k, n = rng.integers(1, 6, size=3)
    return [rng.uniform(-1, 1, (2, m, k)), rng.uniform(-1, 1, (2, k, n))], {}


def _s_transpose(rng):
    return [rng.uniform(-1, 1, (2, 3, 4))], {"axes": (2, 0, 1)}


def _s_reshape(rng):
    return [rng.uniform(-1, 1, (2, 3, 4))], {"shape": (6, 4)}


def _s_reduce(rng):
    return [rng.uniform(-1, 1, (3, 4, 2))], {"axis": (1,), "keepdims": False}


def _s_concat(rng):
    return [rng.uniform(-1, 1, (2, 3, 2)), rng.uniform(-1, 1, (2, 3, 4))], {"axis": 2}


def _s_slice(rng):
    return [rng.uniform(-1, 1, (4, 5, 3))], {"key": (slice(1, 3), slice(None), 1)}


def _s_conv(rng):
    x = rng.uniform(-1, 1, (1, 6, 6, 3))
    w = rng.uniform(-1, 1, (3, 3, 3, 4))
    b = rng.uniform(-1, 1, (4,))
    return [x, w, b], {"stride": 2, "padding": 1, "dilation": 1}


defop("add", _add_f, _add_b, sample=_s_pair)
defop("sub", _sub_f, _sub_b, sample=_s_pair)
defop("mul", _mul_f, _mul_b, sample=_s_pair)
defop("div", _div_f, _div_b, sample=_s_div)
defop("neg", _neg_f, _neg_b, sample=_s_one)
defop("scale", _scale_f, _scale_b, sample=_s_scale)
defop("shift", _shift_f, _shift_b, sample=_s_scale)
defop("leaky_relu", _lrelu_f, _lrelu_b, sample=_s_lrelu)
defop("exp", _exp_f, _exp_b, sample=_s_one)
defop("log", _log_f, _log_b, sample=_s_pos)
defop("sqrt", _sqrt_f, _sqrt_b, sample=_s_pos)
defop("softplus", _softplus_f, _softplus_b, sample=_s_one)
defop("matmul", _matmul_f, _matmul_b, sample=_s_matmul)
defop("transpose", _transpose_f, _transpose_b, sample=_s_transpose)
defop("reshape", _reshape_f, _reshape_b, sample=_s_reshape)
defop("sum", _sum_f, _sum_b, sample=_s_reduce)
defop("mean", _mean_f, _mean_b, sample=_s_reduce)
defop("concat", _concat_f, _concat_b, sample=_s_concat)
defop("slice", _slice_f, _slice_b, sample=_s_slice)
defop("conv2d", _conv_f, _conv_b, sample=_s_conv)


# thin functional wrappers ---------------------------------------------------

def add(a, b): return apply("add", a, b)
def sub(a, b): return apply("sub", a, b)
def mul(a, b): return apply("mul", a, b)
def div(a, b): return apply("div", a, b)
def exp(a): return apply("exp", a)
def log(a): return apply("log", a)
def sqrt(a): return apply("sqrt", a)
def softplus(a): return apply("softplus", a)
def matmul(a, b): return apply("matmul", a, b)
def leaky_relu(a, slope: float = 0.1): return apply("leaky_relu", a, slope=slope)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return apply("concat", *tensors, axis=axis)


def conv2d(x, w, b, stride: int = 1, padding: int = 0, dilation: int = 1) -> Tensor:
    return apply("conv2d", x, w, b, stride=stride, padding=padding, dilation=dilation)


# ---------------------------------------------------------------------------
# finite-difference oracle


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max relative error between tape gradient and central differences.

    Error per coordinate is ``|a - n| / max(1, |a|, |n|)``.
    """
    x0 = np.array(as_tensor(x).data, dtype=np.float64)
    with Tape() as tape:
        xt = Tensor(x0.copy(), requires_grad=True)
        y = f(xt)
    analytic = backward(tape, y)[xt].reshape(-1)
    bad = np.flatnonzero(~np.isfinite(analytic))
    if bad.size:
        raise GradCheckError(f"non-finite analytic gradient at coordinate {bad[0]}")
    numeric = np.empty(x0.size)
    for i in range(x0.size):
        xp = x0.copy()
        xp.reshape(-1)[i] += eps
        fp = f(Tensor(xp)).item()
        xm = x0.copy()
        xm.reshape(-1)[i] -= eps
        fm = f(Tensor(xm)).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise GradCheckError(f"non-finite function value at coordinate {i}")
        numeric[i] = (fp - fm) / (2 * eps)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if x0.size else 0.0


def check_op(name: str, rng: np.random.Generator, eps: float = 1e-5) -> float:
    """Grad-check every input of a registered op against a random cotangent."""
    op = OPS[name]
    if op.sample is None:
        raise ValueError(f"op {name!r} has no gradcheck sample")
    inputs, params = op.sample(rng)
    out, _ = op.forward(*inputs, **params)
    proj = Tensor(rng.uniform(-1, 1, np.shape(out)))
    worst = 0.0
    for k in range(len(inputs)):
        def f(xk, k=k):
            ins = [xk if j == k else Tensor(a) for j, a in enumerate(inputs)]
            return apply("sum", apply("mul", apply(name, *ins, **params), proj))
        worst = max(worst, grad_check(f, inputs[k], eps))
    return worst
