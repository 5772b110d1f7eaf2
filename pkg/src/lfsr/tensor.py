"""Dense float tensors with reverse-mode automatic differentiation.

The primitive set is deliberately closed: exactly the operations the
light-field network needs, each with a hand-written gradient. Storage is
numpy, row-major, float32 by default; the finite-difference machinery
promotes to float64. Tensors are immutable once built, and gradient
recording happens on an explicit :class:`Tape` so that forward evaluation
without an active tape has zero bookkeeping cost.

Thread model: tensors are safe to read concurrently; each Tape is
single-writer (build and backward must be serialized per tape, but
independent tapes may run in parallel threads).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "ShapeError",
    "NumericError",
    "tensor",
    "apply",
    "backward",
    "grad_check",
    "GradCheckReport",
    "set_debug_checks",
    "set_fault_injection",
    "add",
    "sub",
    "mul",
    "matmul",
    "conv2d",
    "layer_norm",
    "silu",
    "softplus",
    "exp",
    "sigmoid",
    "abs_",
    "concat",
    "slice_",
    "reshape",
    "permute",
    "pixel_shuffle",
    "sum_",
    "mean",
]

FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand extents do not conform to a primitive's contract."""


class NumericError(RuntimeError):
    """Raised on non-finite values or other numeric breakdowns."""


_DEBUG_FINITE = False
_FAULT: Optional[str] = None


def set_debug_checks(enabled: bool) -> None:
    """Enable per-primitive finite checks (slow; for debugging and tests)."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(enabled)


def set_fault_injection(kind: Optional[str]) -> None:
    """Install a deliberate gradient fault (test fixture; None clears it).

    Supported kinds: ``"matmul-grad"``, ``"scan-grad"``.
    """
    global _FAULT
    _FAULT = kind


def fault_kind() -> Optional[str]:
    return _FAULT


# ---------------------------------------------------------------------------
# Tensor / Parameter


class Tensor:
    """Immutable dense array of float32 or float64 values."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        else:
            arr = arr.copy()
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # Internal: takes ownership of a freshly computed array, no copy.
        out = object.__new__(cls)
        if not isinstance(arr, np.ndarray):  # numpy scalar from 0-d arithmetic
            arr = np.asarray(arr)
        arr.flags.writeable = False
        out.data = arr
        out.requires_grad = requires_grad
        out.grad = None
        return out

    # -- introspection ------------------------------------------------------

    @property
    def shape(self):
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

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Read-only view of the stored values."""
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other, self))

    def __radd__(self, other):
        return add(_coerce(other, self), self)

    def __sub__(self, other):
        return sub(self, _coerce(other, self))

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self))

    def __rmul__(self, other):
        return mul(_coerce(other, self), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def abs(self):
        return abs_(self)


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value, dtype=like.data.dtype), False)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


class Parameter(Tensor):
    """A named learnable tensor with a persistent gradient accumulator."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def assign(self, data: np.ndarray) -> None:
        """Replace the stored value (training/pruning; exclusive access)."""
        arr = np.asarray(data, dtype=self.data.dtype)
        if arr.shape != self.data.shape:
            raise ShapeError(
                f"parameter {self.name}: assign shape {arr.shape} != {self.data.shape}"
            )
        arr = arr.copy()
        arr.flags.writeable = False
        self.data = arr

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


# ---------------------------------------------------------------------------
# Tape


@dataclass
class _Node:
    op: str
    inputs: tuple
    out: Tensor
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


_TLS = threading.local()


def _tape_stack() -> list:
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = []
        _TLS.stack = stack
    return stack


class Tape:
    """Ordered record of primitive applications for reverse-mode traversal."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self

    def backward(self, loss: Tensor) -> dict:
        """Reverse traversal from a scalar loss.

        Populates ``.grad`` on every leaf tensor that requires a gradient
        (Parameters accumulate across calls) and returns a mapping from
        those leaves to their gradient arrays.
        """
        if not self.nodes:
            raise NumericError("backward on an empty tape")
        if loss.data.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        holders: dict[int, Tensor] = {id(loss): loss}
        produced = {id(node.out) for node in self.nodes}

        for node in reversed(self.nodes):
            gout = grads.pop(id(node.out), None)
            holders.pop(id(node.out), None)
            if gout is None:
                continue
            for tens, gin in zip(node.inputs, node.vjp(gout)):
                if gin is None or not tens.requires_grad:
                    continue
                key = id(tens)
                if key in grads:
                    grads[key] = grads[key] + gin
                else:
                    grads[key] = gin
                    holders[key] = tens

        result: dict[Tensor, np.ndarray] = {}
        for key, g in grads.items():
            tens = holders[key]
            if id(tens) in produced:
                continue  # non-leaf left over (unused branch)
            if isinstance(tens, Parameter):
                tens.grad = tens.grad + g
            else:
                tens.grad = g if tens.grad is None else tens.grad + g
            result[tens] = tens.grad
        return result


def backward(tape: Tape, loss: Tensor) -> dict:
    return tape.backward(loss)


def active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def record(op: str, out_data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Finalize a primitive: wrap the output and register it on the tape.

    Also the extension point for composite operators (the selective scan
    registers itself here rather than through :func:`apply`).
    """
    if _DEBUG_FINITE and not np.all(np.isfinite(out_data)):
        raise NumericError(f"non-finite values produced by primitive '{op}'")
    requires = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(out_data, requires)
    tape = active_tape()
    if requires and tape is not None:
        tape.nodes.append(_Node(op, tuple(inputs), out, vjp))
    return out


# ---------------------------------------------------------------------------
# Broadcasting helpers (leading-extent rule only)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    if len(sa) > len(sb):
        big, small = sa, sb
    else:
        big, small = sb, sa
    if small == big[len(big) - len(small):]:
        return
    raise ShapeError(
        f"{op}: shapes {sa} and {sb} do not conform "
        "(broadcast is over leading extents only)"
    )


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # clip keeps exp in range for float32; saturation is exact there anyway
    z = np.exp(np.clip(v, -80.0, 80.0))
    return z / (1.0 + z)


# ---------------------------------------------------------------------------
# Primitives


def add(x: Tensor, y: Tensor) -> Tensor:
    _check_broadcast("add", x, y)
    out = x.data + y.data

    def vjp(g):
        return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)

    return record("add", out, (x, y), vjp)


def sub(x: Tensor, y: Tensor) -> Tensor:
    _check_broadcast("sub", x, y)
    out = x.data - y.data

    def vjp(g):
        return _unbroadcast(g, x.shape), -_unbroadcast(g, y.shape)

    return record("sub", out, (x, y), vjp)


def mul(x: Tensor, y: Tensor) -> Tensor:
    _check_broadcast("mul", x, y)
    out = x.data * y.data
    xd, yd = x.data, y.data

    def vjp(g):
        return _unbroadcast(g * yd, x.shape), _unbroadcast(g * xd, y.shape)

    return record("mul", out, (x, y), vjp)


def matmul(x: Tensor, y: Tensor) -> Tensor:
    if x.ndim < 2 or y.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {x.shape} @ {y.shape}")
    if x.shape[-1] != y.shape[-2]:
        raise ShapeError(
            f"matmul: inner extents differ, {x.shape} @ {y.shape}"
        )
    if x.ndim != y.ndim:
        # leading-broadcast: the shorter operand must be a pure matrix stack suffix
        short, long_ = (x, y) if x.ndim < y.ndim else (y, x)
        if short.ndim != 2:
            raise ShapeError(
                f"matmul: leading broadcast only against a 2-D operand, got {x.shape} @ {y.shape}"
            )
    out = np.matmul(x.data, y.data)
    xd, yd = x.data, y.data

    def vjp(g):
        gx = np.matmul(g, np.swapaxes(yd, -1, -2))
        gy = np.matmul(np.swapaxes(xd, -1, -2), g)
        if _FAULT == "matmul-grad":
            gx = gx * 1.03125  # deliberate corruption for the negative control
        return _unbroadcast(gx, x.shape), _unbroadcast(gy, y.shape)

    return record("matmul", out, (x, y), vjp)


def _fold_padding(gpad: np.ndarray, pad_mode: str) -> np.ndarray:
    # gpad: (N, H+2, W+2, C) -> (N, H, W, C)
    core = gpad[:, 1:-1, 1:-1, :].copy()
    if pad_mode == "replicate":
        core[:, 0, :, :] += gpad[:, 0, 1:-1, :]
        core[:, -1, :, :] += gpad[:, -1, 1:-1, :]
        core[:, :, 0, :] += gpad[:, 1:-1, 0, :]
        core[:, :, -1, :] += gpad[:, 1:-1, -1, :]
        core[:, 0, 0, :] += gpad[:, 0, 0, :]
        core[:, 0, -1, :] += gpad[:, 0, -1, :]
        core[:, -1, 0, :] += gpad[:, -1, 0, :]
        core[:, -1, -1, :] += gpad[:, -1, -1, :]
    return core


def conv2d(x: Tensor, w: Tensor, pad: str = "zero", groups: int = 1) -> Tensor:
    """3x3 convolution, stride 1, same-size output, channels-last.

    ``x``: (N, H, W, Cin); ``w``: (3, 3, Cin // groups, Cout). groups == Cin
    with Cout == Cin is the depthwise case and takes a fast path.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be (N,H,W,C), got {x.shape}")
    if w.ndim != 4 or w.shape[0] != 3 or w.shape[1] != 3:
        raise ShapeError(f"conv2d: kernel must be (3,3,Cin/g,Cout), got {w.shape}")
    if pad not in ("zero", "replicate"):
        raise ShapeError(f"conv2d: unknown pad mode {pad!r}")
    n, h, wd, cin = x.shape
    _, _, cin_pg, cout = w.shape
    if cin_pg * groups != cin:
        raise ShapeError(
            f"conv2d: Cin {cin} != kernel per-group Cin {cin_pg} * groups {groups}"
        )
    if cout % groups:
        raise ShapeError(f"conv2d: Cout {cout} not divisible by groups {groups}")
    mode = "edge" if pad == "replicate" else "constant"
    xpad = np.pad(x.data, ((0, 0), (1, 1), (1, 1), (0, 0)), mode=mode)

    depthwise = groups == cin and cout == cin
    if depthwise:
        out = np.zeros((n, h, wd, cout), dtype=x.data.dtype)
        for i in range(3):
            for j in range(3):
                out += xpad[:, i : i + h, j : j + wd, :] * w.data[i, j, 0, :]

        wd_arr = w.data

        def vjp(g):
            gpad = np.zeros_like(xpad)
            gw = np.zeros_like(wd_arr)
            for i in range(3):
                for j in range(3):
                    gpad[:, i : i + h, j : j + wd, :] += g * wd_arr[i, j, 0, :]
                    gw[i, j, 0, :] = (xpad[:, i : i + h, j : j + wd, :] * g).sum(
                        axis=(0, 1, 2)
                    )
            return _fold_padding(gpad, pad), gw

        return record("conv2d", out, (x, w), vjp)

    # im2col + BLAS; grouped layouts run one matmul per channel group
    win = np.lib.stride_tricks.sliding_window_view(xpad, (3, 3), axis=(1, 2))
    # win: (N, H, W, Cin, 3, 3) -> (N*H*W, 3, 3, Cin)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        n * h * wd, 3, 3, cin
    )
    cout_pg = cout // groups
    outs = []
    flat_groups = []
    for gi in range(groups):
        cg = cols[:, :, :, gi * cin_pg : (gi + 1) * cin_pg].reshape(-1, 9 * cin_pg)
        wg = w.data[:, :, :, gi * cout_pg : (gi + 1) * cout_pg].reshape(9 * cin_pg, cout_pg)
        flat_groups.append((cg, wg))
        outs.append(cg @ wg)
    out = np.concatenate(outs, axis=1).reshape(n, h, wd, cout)

    def vjp(g):
        gflat = g.reshape(n * h * wd, cout)
        gw = np.zeros_like(w.data)
        gpad = np.zeros_like(xpad)
        for gi in range(groups):
            cg, wg = flat_groups[gi]
            gg = gflat[:, gi * cout_pg : (gi + 1) * cout_pg]
            gw[:, :, :, gi * cout_pg : (gi + 1) * cout_pg] = (cg.T @ gg).reshape(
                3, 3, cin_pg, cout_pg
            )
            gcols = (gg @ wg.T).reshape(n, h, wd, 3, 3, cin_pg)
            sl = slice(gi * cin_pg, (gi + 1) * cin_pg)
            for i in range(3):
                for j in range(3):
                    gpad[:, i : i + h, j : j + wd, sl] += gcols[:, :, :, i, j, :]
        return _fold_padding(gpad, pad), gw

    return record("conv2d", out, (x, w), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalization over the channel (last) extent with learnable scale/shift."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"layer_norm: scale/shift must have shape ({c},), got {gamma.shape}/{beta.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    gd = gamma.data

    def vjp(g):
        axes = tuple(range(x.ndim - 1))
        gbeta = g.sum(axis=axes)
        ggamma = (g * xhat).sum(axis=axes)
        gh = g * gd
        gx = inv * (
            gh
            - gh.mean(axis=-1, keepdims=True)
            - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggamma, gbeta

    return record("layer_norm", out, (x, gamma, beta), vjp)


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    out = x.data * s

    def vjp(g):
        return (g * (s + x.data * s * (1.0 - s)),)

    return record("silu", out, (x,), vjp)


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(np.zeros((), dtype=x.data.dtype), x.data)

    def vjp(g):
        return (g * _sigmoid(x.data),)

    return record("softplus", out, (x,), vjp)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def vjp(g):
        return (g * out,)

    return record("exp", out, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return record("sigmoid", out, (x,), vjp)


def abs_(x: Tensor) -> Tensor:
    out = np.abs(x.data)
    # subgradient at 0 is defined as 0 (sign(0) == 0)
    sgn = np.sign(x.data)

    def vjp(g):
        return (g * sgn,)

    return record("abs", out, (x,), vjp)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat: need at least one input")
    shapes = [t.shape for t in tensors]
    base = list(shapes[0])
    for s in shapes[1:]:
        if len(s) != len(base):
            raise ShapeError(f"concat: rank mismatch {shapes}")
        for ax, (a, b) in enumerate(zip(base, s)):
            if ax != axis % len(base) and a != b:
                raise ShapeError(f"concat: extent mismatch on axis {ax}: {shapes}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis))

    return record("concat", out, tuple(tensors), vjp)


def slice_(x: Tensor, key) -> Tensor:
    out = np.asarray(x.data[key])
    if not out.flags.c_contiguous:
        out = np.ascontiguousarray(out)

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    return record("slice", out, (x,), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = x.data.reshape(shape)  # row-major sequence preserved bitwise
    src_shape = x.shape

    def vjp(g):
        return (g.reshape(src_shape),)

    return record("reshape", out.copy() if not out.flags.c_contiguous else out, (x,), vjp)


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: axes {axes} is not a permutation of rank {x.ndim}")
    out = np.ascontiguousarray(x.data.transpose(axes))
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return record("permute", out, (x,), vjp)


def pixel_shuffle(x: Tensor, factor: int) -> Tensor:
    """Rearrange (..., C*a*a, H, W) -> (..., C, a*H, a*W).

    out[..., c, a*h + r, a*w + s] = in[..., c*a*a + r*a + s, h, w]
    """
    a = int(factor)
    if x.ndim < 3:
        raise ShapeError(f"pixel_shuffle: need at least (C,H,W), got {x.shape}")
    *lead, ctot, h, w = x.shape
    if ctot % (a * a):
        raise ShapeError(
            f"pixel_shuffle: channel extent {ctot} not divisible by factor^2 = {a * a}"
        )
    c = ctot // (a * a)
    lead = tuple(lead)
    nl = len(lead)
    tmp = x.data.reshape(lead + (c, a, a, h, w))
    order = tuple(range(nl)) + (nl, nl + 3, nl + 1, nl + 4, nl + 2)
    out = np.ascontiguousarray(tmp.transpose(order)).reshape(lead + (c, a * h, a * w))

    def vjp(g):
        gt = g.reshape(lead + (c, h, a, w, a))
        inv = tuple(range(nl)) + (nl, nl + 2, nl + 4, nl + 1, nl + 3)
        return (
            np.ascontiguousarray(gt.transpose(inv)).reshape(lead + (ctot, h, w)),
        )

    return record("pixel_shuffle", out, (x,), vjp)


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ax = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=ax, keepdims=keepdims)
    src_shape = x.shape

    def vjp(g):
        if ax is None:
            return (np.broadcast_to(g, src_shape).copy(),)
        gk = g if keepdims else np.expand_dims(g, ax)
        return (np.broadcast_to(gk, src_shape).copy(),)

    return record("sum", np.asarray(out), (x,), vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ax = _norm_axis(axis, x.ndim)
    out = x.data.mean(axis=ax, keepdims=keepdims)
    src_shape = x.shape
    if ax is None:
        count = x.size
    else:
        count = int(np.prod([src_shape[a] for a in ax]))

    def vjp(g):
        scale = np.asarray(1.0 / count, dtype=g.dtype)
        if ax is None:
            return (np.broadcast_to(g * scale, src_shape).copy(),)
        gk = g if keepdims else np.expand_dims(g, ax)
        return (np.broadcast_to(gk * scale, src_shape).copy(),)

    return record("mean", np.asarray(out), (x,), vjp)


# ---------------------------------------------------------------------------
# Generic dispatch

_PRIMITIVES: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "matmul": matmul,
    "conv2d": conv2d,
    "layer_norm": layer_norm,
    "silu": silu,
    "softplus": softplus,
    "exp": exp,
    "sigmoid": sigmoid,
    "abs": abs_,
    "concat": lambda *ts, axis: concat(ts, axis=axis),
    "slice": lambda x, key: slice_(x, key),
    "reshape": lambda x, shape: reshape(x, shape),
    "permute": lambda x, axes: permute(x, axes),
    "pixel_shuffle": lambda x, factor: pixel_shuffle(x, factor),
    "sum": sum_,
    "mean": mean,
}


def apply(kind: str, *inputs, **attributes) -> Tensor:
    """Apply a primitive by name (the closed set; see module docstring)."""
    fn = _PRIMITIVES.get(kind)
    if fn is None:
        raise ShapeError(f"unknown primitive kind {kind!r}")
    return fn(*inputs, **attributes)


# ---------------------------------------------------------------------------
# Gradient checking


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    n_checked: int
    tolerance: float
    worst: str = ""
    per_param: dict = field(default_factory=dict)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"grad_check {status}: max rel err {self.max_rel_error:.3e} over "
            f"{self.n_checked} coordinates (tol {self.tolerance:g}, worst {self.worst})"
        )


def grad_check(
    fn: Callable[[], Tensor],
    parameters: Sequence[Parameter],
    tolerance: float = 1e-3,
    h: float = 1e-3,
    max_coords: int = 10_000,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of ``fn`` against central differences.

    ``fn`` must evaluate a scalar from the given parameters and be
    deterministic. Parameters are promoted to float64 for the check and
    restored afterwards. Above ``max_coords`` total coordinates a seeded
    random subsample is checked instead of every coordinate.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    parameters = list(parameters)
    saved = [(p.data, p.grad) for p in parameters]
    try:
        for p in parameters:
            arr = p.data.astype(np.float64)
            arr.flags.writeable = False
            p.data = arr
            p.grad = np.zeros_like(arr)

        base1 = float(fn().item())
        base2 = float(fn().item())
        if base1 != base2:
            raise NumericError(
                "grad_check: non-reproducible function (outputs differ across identical calls)"
            )

        with Tape() as tape:
            loss = fn()
        tape.backward(loss)
        analytic = {p.name: p.grad.copy() for p in parameters}

        total = sum(p.size for p in parameters)
        rng = np.random.default_rng(seed)
        coords: list[tuple[Parameter, int]] = []
        if total <= max_coords:
            for p in parameters:
                coords.extend((p, i) for i in range(p.size))
        else:
            quota = {p.name: max(1, int(round(max_coords * p.size / total))) for p in parameters}
            for p in parameters:
                take = min(p.size, quota[p.name])
                for i in rng.choice(p.size, size=take, replace=False):
                    coords.append((p, int(i)))

        max_err = 0.0
        worst = ""
        per_param: dict[str, float] = {}
        for p, flat_idx in coords:
            base = p.data
            bumped = base.copy()
            bumped.reshape(-1)[flat_idx] = base.reshape(-1)[flat_idx] + h
            p.data = _ro(bumped)
            f_plus = float(fn().item())
            bumped = base.copy()
            bumped.reshape(-1)[flat_idx] = base.reshape(-1)[flat_idx] - h
            p.data = _ro(bumped)
            f_minus = float(fn().item())
            p.data = base
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[p.name].reshape(-1)[flat_idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            per_param[p.name] = max(per_param.get(p.name, 0.0), err)
            if err > max_err:
                max_err = err
                worst = f"{p.name}[{flat_idx}] analytic={a:.6e} numeric={numeric:.6e}"

        return GradCheckReport(
            passed=max_err < tolerance,
            max_rel_error=max_err,
            n_checked=len(coords),
            tolerance=tolerance,
            worst=worst,
            per_param=per_param,
        )
    finally:
        for p, (data, grad) in zip(parameters, saved):
            p.data = data
            p.grad = grad


def _ro(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr
