"""Dense-tensor arithmetic with reverse-mode differentiation.

Only the operations the detector actually needs are implemented. Every op
records a vector-Jacobian product so a scalar loss can be backpropagated;
`grad_check` verifies any op or composite against central finite differences
in 64-bit mode.

Storage is 32-bit by default; pass float64 arrays (or dtype=np.float64) to
run the same kernels in 64-bit for gradient checks. Kernels are
single-threaded apart from the BLAS calls behind `np.matmul`, and reductions
always run in a fixed order, so repeated runs are bit-identical for a given
thread count.
"""

from __future__ import annotations

import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ConfigurationError,
    ContractViolation,
    DimensionError,
    GraphError,
)

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """A dense N-dimensional float array, optionally tracked for gradients.

    `data` is row-major float32 or float64. `grad` is allocated lazily by
    backward() and only ever exists on tensors with requires_grad=True.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_op", "_spent")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw arrays, not Tensors")
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None
        self._op = None
        self._spent = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self):
        """Backpropagate from this tensor (gradient seeded with ones)."""
        BackwardGraph(self).run()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Convenience operators; all delegate to the module-level ops.
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_const(self, other)

    def __radd__(self, other):
        return add_const(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_const(self, -other)

    def __rsub__(self, other):
        return add_const(neg(self), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __truediv__(self, other):
        return div(self, other) if isinstance(other, Tensor) else scale(self, 1.0 / other)

    def __neg__(self):
        return neg(self)


class BackwardGraph:
    """Reverse-topological walk over the recorded ops reachable from a root.

    Each node is visited exactly once. Running the graph consumes it: the
    recorded closures are dropped, and a second run (or a second backward on
    the same root) raises GraphError until a new forward pass rebuilds it.
    """

    def __init__(self, root: Tensor):
        if root._spent:
            raise GraphError("backward() already ran on this graph; re-run the forward pass")
        self.root = root
        self.nodes = self._topo_order(root)

    @staticmethod
    def _topo_order(root):
        order = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            if node._spent:
                raise GraphError("graph already consumed by a previous backward(); re-run the forward pass")
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p._vjp is not None:
                    stack.append((p, False))
                elif id(p) not in visited and p.requires_grad:
                    # leaf: participates in accumulation but has no vjp
                    visited.add(id(p))
        return order

    def run(self):
        grads = {id(self.root): np.ones_like(self.root.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._vjp is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._vjp is None:
                    parent.grad = pg if parent.grad is None else parent.grad + pg
                else:
                    key = id(parent)
                    grads[key] = pg if key not in grads else grads[key] + pg
            node._vjp = None
            node._parents = ()
            node._spent = True
        self.root._spent = True


def _make(data, parents, vjp, op):
    req = any(p.requires_grad for p in parents)
    out = Tensor(data)
    if req and _grad_enabled():
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
        out._op = op
    return out


def _check_finite(x: np.ndarray, op: str):
    if not np.isfinite(x).all():
        raise ContractViolation(f"{op}: input contains NaN/Inf")


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shape {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    out = a.data / b.data
    return _make(out, (a, b), lambda g: (g / b.data, -g * out / b.data), "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)
    return _make(a.data * s, (a,), lambda g: (g * s,), "scale")


def add_const(a: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=a.data.dtype)
    return _make(a.data + c, (a,), lambda g: (g,), "add_const")


def mul_const(a: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=a.data.dtype)
    return _make(a.data * c, (a,), lambda g: (g * c,), "mul_const")


def smul(a: Tensor, s: Tensor) -> Tensor:
    """Multiply a tensor by a learnable scalar tensor (shape () or (1,))."""
    if s.data.size != 1:
        raise DimensionError(f"smul: scalar operand has shape {s.data.shape}")
    sval = s.data.reshape(())

    def vjp(g):
        return g * sval, np.sum(g * a.data).reshape(s.data.shape).astype(s.data.dtype)

    return _make(a.data * sval, (a, s), vjp, "smul")


def minimum_const(a: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=a.data.dtype)
    mask = a.data <= c  # ties keep the tensor side (deterministic subgradient)
    return _make(np.minimum(a.data, c), (a,), lambda g: (g * mask,), "minimum_const")


def maximum_const(a: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=a.data.dtype)
    mask = a.data >= c
    return _make(np.maximum(a.data, c), (a,), lambda g: (g * mask,), "maximum_const")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (g * 2 * a.data,), "square")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def atan(a: Tensor) -> Tensor:
    return _make(np.arctan(a.data), (a,), lambda g: (g / (1.0 + a.data * a.data),), "atan")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp may overflow to inf in the far negative tail; 1/(1+inf) saturates
    # to exactly 0.0, so the result is still finite everywhere.
    with np.errstate(over="ignore"):
        out = np.exp(-x)
    out += 1.0
    np.reciprocal(out, out=out)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(a: Tensor) -> Tensor:
    sig = _sigmoid(a.data)
    out = a.data * sig

    def vjp(g):
        d = 1.0 - sig
        d *= out
        d += sig
        d *= g
        return (d,)

    return _make(out, (a,), vjp, "silu")


# ---------------------------------------------------------------------------
# reductions


def sum_all(a: Tensor) -> Tensor:
    def vjp(g):
        return (np.full_like(a.data, g.reshape(())),)

    return _make(np.sum(a.data, dtype=a.data.dtype).reshape(()), (a,), vjp, "sum_all")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def vjp(g):
        return (np.full_like(a.data, g.reshape(()) / n),)

    return _make((np.sum(a.data, dtype=a.data.dtype) / n).reshape(()), (a,), vjp, "mean_all")


# ---------------------------------------------------------------------------
# structure


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),), "reshape")


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(
        np.ascontiguousarray(a.data.transpose(axes)),
        (a,),
        lambda g: (np.ascontiguousarray(g.transpose(inverse)),),
        "permute",
    )


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"slice_cols: expected 2-D, got {a.data.shape}")

    def vjp(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _make(np.ascontiguousarray(a.data[:, start:stop]), (a,), vjp, "slice_cols")


def gather_rows(a: Tensor, idx) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"gather_rows: expected 2-D, got {a.data.shape}")
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), vjp, "gather_rows")


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
        raise DimensionError(f"concat_cols: shape {a.data.shape} vs {b.data.shape}")
    na = a.data.shape[1]
    return _make(
        np.concatenate([a.data, b.data], axis=1),
        (a, b),
        lambda g: (g[:, :na], g[:, na:]),
        "concat_cols",
    )


def add_rowvec(a: Tensor, b: Tensor) -> Tensor:
    """Add a length-N row vector to every row of an [M, N] matrix."""
    if a.data.ndim != 2 or b.data.shape != (a.data.shape[1],):
        raise DimensionError(f"add_rowvec: shape {a.data.shape} vs {b.data.shape}")
    return _make(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)), "add_rowvec")


def select_batch(a: Tensor, index: int) -> Tensor:
    """Pick sample `index` from a batched tensor; backward scatters into zeros."""

    def vjp(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _make(np.ascontiguousarray(a.data[index]), (a,), vjp, "select_batch")


def stack_first(tensors) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    tensors = list(tensors)
    base = tensors[0].data.shape
    for t in tensors[1:]:
        if t.data.shape != base:
            raise DimensionError(f"stack_first: shape {base} vs {t.data.shape}")
    out = np.stack([t.data for t in tensors], axis=0)
    return _make(out, tuple(tensors), lambda g: tuple(g[i] for i in range(len(tensors))), "stack_first")


def _channel_axis(x: np.ndarray, op: str) -> int:
    if x.ndim == 3:
        return 0
    if x.ndim == 4:
        return 1
    raise DimensionError(f"{op}: expected [C,H,W] or [B,C,H,W], got {x.shape}")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    ax = _channel_axis(a.data, "concat_channels")
    if a.data.ndim != b.data.ndim or a.data.shape[ax + 1:] != b.data.shape[ax + 1:] or (
        ax == 1 and a.data.shape[0] != b.data.shape[0]
    ):
        raise DimensionError(f"concat_channels: shape {a.data.shape} vs {b.data.shape}")
    ca = a.data.shape[ax]
    out = np.concatenate([a.data, b.data], axis=ax)

    def vjp(g):
        if ax == 0:
            return g[:ca], g[ca:]
        return g[:, :ca], g[:, ca:]

    return _make(out, (a, b), vjp, "concat_channels")


# ---------------------------------------------------------------------------
# matmul / conv / pooling


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: shape {a.data.shape} vs {b.data.shape}")

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), vjp, "matmul")


def _as_batched(x: np.ndarray, op: str):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"{op}: expected [C,H,W] or [B,C,H,W], got {x.shape}")


def conv2d(x: Tensor, w: Tensor, b: Tensor = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation with square odd kernel; accepts [C,H,W] or [B,C,H,W]."""
    xb, squeeze = _as_batched(x.data, "conv2d")
    if w.data.ndim != 4 or w.data.shape[2] != w.data.shape[3]:
        raise DimensionError(f"conv2d: kernel must be [Co,Ci,k,k], got {w.data.shape}")
    co, ci, k, _ = w.data.shape
    if k % 2 == 0:
        raise ConfigurationError(f"conv2d: kernel size {k} must be odd")
    bs, c, h, wd = xb.shape
    if c != ci:
        raise DimensionError(f"conv2d: input channels {c} vs kernel {w.data.shape}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ConfigurationError(
            f"conv2d: output extent {ho}x{wo} < 1 for input {h}x{wd}, k={k}, stride={stride}, pad={pad}"
        )
    xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xb
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    col = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(bs * ho * wo, ci * k * k)
    out = col @ w.data.reshape(co, -1).T
    if b is not None:
        if b.data.shape != (co,):
            raise DimensionError(f"conv2d: bias shape {b.data.shape} vs {co} channels")
        out = out + b.data
    out = out.reshape(bs, ho, wo, co).transpose(0, 3, 1, 2)
    hp, wp = xp.shape[2], xp.shape[3]

    def vjp(g):
        if squeeze:
            g = g[None]
        gflat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(bs * ho * wo, co)
        dw = (gflat.T @ col).reshape(w.data.shape)
        dcol = (gflat @ w.data.reshape(co, -1)).reshape(bs, ho, wo, ci, k, k)
        dxp = np.zeros((bs, ci, hp, wp), dtype=xb.dtype)
        for ki in range(k):
            for kj in range(k):
                dxp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += dcol[
                    :, :, :, :, ki, kj
                ].transpose(0, 3, 1, 2)
        dx = dxp[:, :, pad:hp - pad, pad:wp - pad] if pad else dxp
        if squeeze:
            dx = dx[0]
        grads = [dx, dw]
        if b is not None:
            grads.append(gflat.sum(axis=0))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out[0] if squeeze else out, parents, vjp, "conv2d")


def channel_affine(x: Tensor, scale_t: Tensor, shift_t: Tensor) -> Tensor:
    """Per-channel y = x * scale + shift; the normalization stand-in inside conv blocks."""
    xb, squeeze = _as_batched(x.data, "channel_affine")
    c = xb.shape[1]
    if scale_t.data.shape != (c,) or shift_t.data.shape != (c,):
        raise DimensionError(
            f"channel_affine: {scale_t.data.shape}/{shift_t.data.shape} vs {c} channels"
        )
    s = scale_t.data.reshape(1, c, 1, 1)
    out = xb * s + shift_t.data.reshape(1, c, 1, 1)

    def vjp(g):
        if squeeze:
            g = g[None]
        dx = g * s
        dscale = np.einsum("bchw,bchw->c", g, xb)
        dshift = g.sum(axis=(0, 2, 3))
        if squeeze:
            dx = dx[0]
        return dx, dscale.astype(scale_t.data.dtype), dshift

    return _make(out[0] if squeeze else out, (x, scale_t, shift_t), vjp, "channel_affine")


def maxpool2d(x: Tensor, k: int, stride: int = 1, pad: int = 0) -> Tensor:
    xb, squeeze = _as_batched(x.data, "maxpool2d")
    bs, c, h, wd = xb.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ConfigurationError(f"maxpool2d: output extent {ho}x{wo} < 1")
    if pad:
        xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    else:
        xp = xb
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(bs, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    hp, wp = xp.shape[2], xp.shape[3]

    def vjp(g):
        if squeeze:
            g = g[None]
        dxp = np.zeros((bs, c, hp, wp), dtype=xb.dtype)
        oy, ox = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
        rows = oy[None, None] * stride + arg // k
        cols = ox[None, None] * stride + arg % k
        bidx = np.arange(bs)[:, None, None, None]
        cidx = np.arange(c)[None, :, None, None]
        np.add.at(dxp, (bidx, cidx, rows, cols), g)
        dx = dxp[:, :, pad:hp - pad, pad:wp - pad] if pad else dxp
        return (dx[0] if squeeze else dx,)

    return _make(np.ascontiguousarray(out[0] if squeeze else out), (x,), vjp, "maxpool2d")


def upsample_nearest2x(x: Tensor) -> Tensor:
    xb, squeeze = _as_batched(x.data, "upsample_nearest2x")
    out = xb.repeat(2, axis=2).repeat(2, axis=3)

    def vjp(g):
        if squeeze:
            g = g[None]
        bs, c, h2, w2 = g.shape
        dx = g.reshape(bs, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))
        return (dx[0] if squeeze else dx,)

    return _make(out[0] if squeeze else out, (x,), vjp, "upsample_nearest2x")


# ---------------------------------------------------------------------------
# softmax / losses


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of an [M, N] matrix, overflow-safe via per-row max subtraction.

    Exponentials and the normalizing sums run in float64 regardless of the
    storage dtype so each output row sums to 1 within 1e-6 even for inputs of
    magnitude 1e3.
    """
    if x.data.ndim != 2:
        raise DimensionError(f"softmax_rows: expected 2-D, got {x.data.shape}")
    _check_finite(x.data, "softmax_rows")
    x64 = x.data.astype(np.float64)
    x64 -= x64.max(axis=1, keepdims=True)
    ex = np.exp(x64)
    w = ex / ex.sum(axis=1, keepdims=True)
    out = w.astype(x.data.dtype)

    def vjp(g):
        dot = np.sum(g * out, axis=1, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (x,), vjp, "softmax_rows")


def bce_with_logits(logits: Tensor, targets, weights=None) -> Tensor:
    """Mean binary cross-entropy against constant targets, in stable log-sum-exp form.

    `weights`, when given, rescales each element's contribution; the mean is
    still taken over all elements.
    """
    t = np.asarray(targets, dtype=logits.data.dtype)
    if t.shape != logits.data.shape:
        raise DimensionError(f"bce_with_logits: shape {logits.data.shape} vs targets {t.shape}")
    if t.size and (t.min() < 0.0 or t.max() > 1.0):
        raise ContractViolation("bce_with_logits: targets outside [0,1]")
    z = logits.data
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = max(z.size, 1)
    if weights is not None:
        warr = np.asarray(weights, dtype=z.dtype)
        loss = loss * warr
    else:
        warr = None
    val = (np.sum(loss, dtype=z.dtype) / n).reshape(())

    def vjp(g):
        d = (_sigmoid(z) - t) / n
        if warr is not None:
            d = d * warr
        return (g.reshape(()) * d,)

    return _make(val, (logits,), vjp, "bce_with_logits")


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(fn, input_shapes, seed=0, step=1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    `fn` maps positional Tensors (one per shape in `input_shapes`) to a
    Tensor of any shape; a fixed random linear readout reduces the output
    to a scalar. Inputs are seeded float64 and perturbed element by element
    with the given step. Relative error uses max(|a|, |b|, 1e-4) as the
    denominator so near-zero gradients are judged on absolute error.
    """
    rng = np.random.default_rng(seed)
    base = [rng.uniform(-1.0, 1.0, size=shape).astype(np.float64) for shape in input_shapes]
    probe = None

    def run(arrays):
        nonlocal probe
        tensors = [Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]
        out = fn(*tensors)
        if probe is None:
            probe = np.random.default_rng(seed + 1).uniform(-1.0, 1.0, size=out.data.shape)
        loss = sum_all(mul_const(out, probe))
        return loss, tensors

    loss, tensors = run(base)
    loss.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    max_err = 0.0
    for i, arr in enumerate(base):
        flat = arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            lp, _ = run(base)
            flat[j] = orig - step
            lm, _ = run(base)
            flat[j] = orig
            fd = (lp.item() - lm.item()) / (2 * step)
            ad = analytic[i].reshape(-1)[j]
            denom = max(abs(ad), abs(fd), 1e-4)
            max_err = max(max_err, abs(ad - fd) / denom)
    return max_err
