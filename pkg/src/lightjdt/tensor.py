"""Dense float64 tensors with a reverse-mode tape.

Only the shape rules documented on each operation are legal; nothing is
broadcast implicitly. Every kernel that performs multiply-accumulates
reports them to the active :func:`count_macs` counter, which is how the
profiler checks its closed-form formulas against executed forwards.
"""
from __future__ import annotations

import contextlib
import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DimensionError(ValueError):
    """Operand shapes violate an operation's shape rule."""


class UnsupportedConfigError(ValueError):
    """Valid shapes, but a configuration this library does not implement."""


class TapeError(RuntimeError):
    pass


class EvaluationError(ArithmeticError):
    pass


_seq = itertools.count()


class MacCounter:
    def __init__(self) -> None:
        self.total = 0

    def add(self, n: int) -> None:
        self.total += int(n)


_counters: list[MacCounter] = []


@contextlib.contextmanager
def count_macs():
    """Count multiply-accumulates executed by forward kernels inside the block.

    >>> with count_macs() as c:
    ...     _ = matmul(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))))
    >>> c.total
    8
    """
    counter = MacCounter()
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.remove(counter)


def _macs(n: int) -> None:
    for c in _counters:
        c.add(n)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "_tape_used", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None) -> None:
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._seq = next(_seq)
        self._tape_used = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Run the tape from this scalar back to every leaf that requires grad."""
        if self.data.size != 1:
            raise DimensionError("backward() starts from a single-element tensor")
        if self._tape_used:
            raise TapeError("backward already ran on this graph; build a new graph or call reset_tape()")
        tape = Tape(self)
        tape.backward()
        self._tape_used = True

    def reset_tape(self) -> None:
        self._tape_used = False

    # operator sugar; all of these follow the strict shape rules below
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else shift(self, -float(other))

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of the operations reachable from a root.

    Creation order is a topological order of the graph, so walking it
    backwards visits every node after all of its consumers.
    """

    def __init__(self, root: Tensor) -> None:
        seen: dict[int, Tensor] = {}
        stack = [root]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen[id(t)] = t
            stack.extend(t._parents)
        self.root = root
        self.nodes = sorted(seen.values(), key=lambda t: t._seq)

    def backward(self) -> None:
        grads: dict[int, np.ndarray] = {id(self.root): np.ones_like(self.root.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._parents:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._seq = next(_seq)
    out._tape_used = False
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, s: float) -> Tensor:
    return _result(a.data * s, (a,), lambda g: (g * s,))


def shift(a: Tensor, s: float) -> Tensor:
    return _result(a.data + s, (a,), lambda g: (g,))


def add_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Add a constant (non-differentiable) array of identical shape."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != a.shape:
        raise DimensionError(f"add_const: shapes {a.shape} and {c.shape} differ")
    return _result(a.data + c, (a,), lambda g: (g,))


def mul_const(a: Tensor, c: np.ndarray) -> Tensor:
    c = np.asarray(c, dtype=np.float64)
    if c.shape != a.shape:
        raise DimensionError(f"mul_const: shapes {a.shape} and {c.shape} differ")
    return _result(a.data * c, (a,), lambda g: (g * c,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x[..., C] + b[C]: the one broadcasting rule, along the trailing axis."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"add_bias: bias {b.shape} does not match trailing axis of {x.shape}")
    lead = tuple(range(x.ndim - 1))
    return _result(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = np.empty_like(x.data)
    pos = x.data >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    s[~pos] = e / (1.0 + e)
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return _result(e, (x,), lambda g: (g * e,))


def log(x: Tensor) -> Tensor:
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def absolute(x: Tensor) -> Tensor:
    return _result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "minimum")
    pick_a = a.data <= b.data
    return _result(np.where(pick_a, a.data, b.data), (a, b), lambda g: (g * pick_a, g * ~pick_a))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "maximum")
    pick_a = a.data >= b.data
    return _result(np.where(pick_a, a.data, b.data), (a, b), lambda g: (g * pick_a, g * ~pick_a))


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    return _result(a.data / b.data, (a, b), lambda g: (g / b.data, -g * a.data / b.data**2))


# ---------------------------------------------------------------- reductions

def sum_all(x: Tensor) -> Tensor:
    return _result(np.array([x.data.sum()]), (x,), lambda g: (np.full_like(x.data, g[0]),))


def sum_axis(x: Tensor, axis: int) -> Tensor:
    axis = axis % x.ndim
    if x.ndim == 1:
        return sum_all(x)

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _result(x.data.sum(axis=axis), (x,), back)


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.data.size)


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if math.prod(shape) != x.data.size:
        raise DimensionError(f"reshape: {x.shape} -> {shape}")
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),))


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(x, axes)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    if not xs:
        raise DimensionError("concat of nothing")
    axis = axis % xs[0].ndim
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or any(
            x.shape[i] != xs[0].shape[i] for i in range(x.ndim) if i != axis
        ):
            raise DimensionError(f"concat: {x.shape} vs {xs[0].shape} along axis {axis}")
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def back(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs))
        )

    return _result(np.concatenate([x.data for x in xs], axis=axis), tuple(xs), back)


def take(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice ``[start:stop]`` along ``axis``."""
    axis = axis % x.ndim
    if not 0 <= start < stop <= x.shape[axis]:
        raise DimensionError(f"take: [{start}:{stop}] out of range for axis of size {x.shape[axis]}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def back(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _result(x.data[index].copy(), (x,), back)


def gather_rows(x: Tensor, idx: Sequence[int]) -> Tensor:
    """Rows ``x[idx]`` along axis 0 (repeats allowed)."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise DimensionError("gather_rows: index out of range")

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _result(x.data[idx], (x,), back)


def expand(x: Tensor, n: int) -> Tensor:
    """Stack ``n`` copies of ``x`` along a new leading axis."""
    return _result(
        np.broadcast_to(x.data, (n,) + x.shape).copy(), (x,), lambda g: (g.sum(axis=0),)
    )


def stack(xs: Sequence[Tensor]) -> Tensor:
    return concat([reshape(x, (1,) + x.shape) for x in xs], axis=0)


# ---------------------------------------------------------------- products

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """[M x K] @ [K x P] -> [M x P]."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    _macs(a.shape[0] * a.shape[1] * b.shape[1])
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x[..., K] @ w[K x P] (+ b[P]) applied to every leading position."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input {x.shape} vs weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias {b.shape} vs weight {w.shape}")
    k, p = w.shape
    positions = x.data.size // k
    _macs(positions * k * p)
    flat = x.data.reshape(-1, k)
    y = (flat @ w.data).reshape(x.shape[:-1] + (p,))
    if b is not None:
        y = y + b.data

    def back(g):
        g2 = g.reshape(-1, p)
        gx = (g2 @ w.data.T).reshape(x.shape)
        gw = flat.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _result(y, parents, back)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched product over identical leading axes: [..., M, K] @ [..., K, P]."""
    if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"bmm: {a.shape} @ {b.shape}")
    _macs(math.prod(a.shape) * b.shape[-1])

    def back(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return _result(a.data @ b.data, (a, b), back)


# ---------------------------------------------------------------- normalisers

def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the trailing axis, stabilised by subtracting the row max."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _result(s, (x,), back)


def log_softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return _result(out, (x,), lambda g: (g - s * g.sum(axis=-1, keepdims=True),))


LN_EPS = 1e-5


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm: gamma/beta {gamma.shape}/{beta.shape} vs channels {c}")
    # one MAC per element for the affine step; mean/variance are not counted
    _macs(x.data.size)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    y = xhat * gamma.data + beta.data
    lead = tuple(range(x.ndim - 1))

    def back(g):
        gxhat = g * gamma.data
        gx = rstd * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                     - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(y, (x, gamma, beta), back)


# ---------------------------------------------------------------- convolutions

def conv2d_depthwise(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel k x k convolution, stride 1, zero same-padding.

    x is [B, C, H, W]; kernel is [C, k, k]; bias is [C].
    """
    if x.ndim != 4 or kernel.ndim != 3 or kernel.shape[0] != x.shape[1] or kernel.shape[1] != kernel.shape[2]:
        raise DimensionError(f"conv2d_depthwise: input {x.shape}, kernel {kernel.shape}")
    k = kernel.shape[1]
    if k % 2 == 0:
        raise UnsupportedConfigError(f"depthwise kernel size must be odd, got {k}")
    if bias is not None and bias.shape != (x.shape[1],):
        raise DimensionError(f"conv2d_depthwise: bias {bias.shape}")
    bsz, c, h, w = x.shape
    p = k // 2
    _macs(k * k * x.data.size)
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    y = np.zeros_like(x.data)
    for i in range(k):
        for j in range(k):
            y += xp[:, :, i:i + h, j:j + w] * kernel.data[None, :, i, j, None, None]
    if bias is not None:
        y += bias.data[None, :, None, None]

    def back(g):
        gxp = np.zeros_like(xp)
        gk = np.empty_like(kernel.data)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + h, j:j + w] += g * kernel.data[None, :, i, j, None, None]
                gk[:, i, j] = (g * xp[:, :, i:i + h, j:j + w]).sum(axis=(0, 2, 3))
        gx = gxp[:, :, p:p + h, p:p + w]
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(y, parents, back)


def conv_out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Dense 2-D convolution. x [B, Cin, H, W], weight [Cout, Cin, k, k]."""
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[1] != x.shape[1] or weight.shape[2] != weight.shape[3]:
        raise DimensionError(f"conv2d: input {x.shape}, weight {weight.shape}")
    cout, cin, k, _ = weight.shape
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias {bias.shape}")
    bsz, _, h, w = x.shape
    ho, wo = conv_out_size(h, k, stride, padding), conv_out_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: input {h}x{w} too small for kernel {k}")
    _macs(k * k * cin * cout * ho * wo * bsz)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # cols: [B, Ho, Wo, Cin*k*k]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(bsz, ho, wo, cin * k * k)
    wmat = weight.data.reshape(cout, cin * k * k)
    y = (cols @ wmat.T).transpose(0, 3, 1, 2)
    if bias is not None:
        y = y + bias.data[None, :, None, None]
    y = np.ascontiguousarray(y)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1)  # [B, Ho, Wo, Cout]
        gw = (g2.reshape(-1, cout).T @ cols.reshape(-1, cin * k * k)).reshape(weight.shape)
        gcols = (g2 @ wmat).reshape(bsz, ho, wo, cin, k, k)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding:padding + h, padding:padding + w]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(y, parents, back)


def _pool_bounds(n: int, out: int) -> list[tuple[int, int]]:
    return [((i * n) // out, -((-(i + 1) * n) // out)) for i in range(out)]


def adaptive_avg_pool2d(x: Tensor, out_size: int) -> Tensor:
    """Average over adaptive windows (floor start, ceil end) to out_size x out_size."""
    if x.ndim != 4:
        raise DimensionError(f"adaptive_avg_pool2d: input {x.shape}")
    _, _, h, w = x.shape
    rows, cols = _pool_bounds(h, out_size), _pool_bounds(w, out_size)
    y = np.empty(x.shape[:2] + (out_size, out_size))
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            y[:, :, i, j] = x.data[:, :, r0:r1, c0:c1].mean(axis=(2, 3))

    def back(g):
        gx = np.zeros_like(x.data)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                gx[:, :, r0:r1, c0:c1] += g[:, :, i, j, None, None] / ((r1 - r0) * (c1 - c0))
        return (gx,)

    return _result(y, (x,), back)


# ---------------------------------------------------------------- checking

def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-6) -> float:
    """Largest relative error between tape gradients and central differences.

    ``f`` rebuilds the graph from ``params`` on each call and returns a
    single-element tensor.
    """
    if not 0 < eps <= 1e-3:
        raise ValueError("eps must lie in (0, 1e-3]")
    params = list(params)
    for p in params:
        p.grad = None
        p.requires_grad = True
    out = f()
    if not np.all(np.isfinite(out.data)):
        raise EvaluationError("f returned a non-finite value")
    out.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise EvaluationError("f returned a non-finite value")
            num = (fp - fm) / (2 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
