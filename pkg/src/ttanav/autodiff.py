"""Reverse-mode automatic differentiation on numpy arrays.

Sized for small vision models: a Tensor wraps one float array, operations
record their inputs and a backward closure, and ``Tensor.backward`` replays
the recorded graph in exact reverse execution order. Arrays are float32 by
default; every op preserves the dtype of its inputs so test oracles can run
the same graph in float64.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

_ids = itertools.count()
_grad_enabled = True


class no_grad:
    """Context manager that suspends graph recording (pure inference)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-dimensional float array with an optional gradient.

    ``data`` is always a numpy float32/float64 array. ``grad`` is filled in
    (same shape) by ``backward``. Operations never mutate their inputs;
    gradients accumulate additively when a tensor feeds multiple consumers.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Backpropagate from this tensor through the recorded graph.

        Visits nodes in exact reverse execution order (creation order is a
        topological order because ops only consume already-built tensors).
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() on non-scalar output requires an explicit gradient")
            grad = np.ones_like(self.data)
        nodes = []
        seen = set()
        stack = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen or not t.requires_grad:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda t: t._id, reverse=True)
        self._accum(np.asarray(grad, dtype=self.data.dtype))
        for t in nodes:
            if t._backward is not None:
                t._backward(t.grad)

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _as_tensor(x, dtype=np.float32) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def make_op(out_data, parents, backward) -> Tensor:
    """Wrap ``out_data`` as the result of an op over ``parents``.

    ``backward(grad)`` must accumulate into each parent via ``p._accum``.
    Recording is skipped when grads are globally disabled or no parent
    requires them.
    """
    out = Tensor(out_data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape))

    return make_op(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.data.shape))

    return make_op(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return make_op(out, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    out = a.data * c

    def backward(g):
        if a.requires_grad:
            a._accum(g * c)

    return make_op(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def backward(g):
        if a.requires_grad:
            a._accum(g * (a.data > 0))

    return make_op(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    # Exponentiate only non-positive magnitudes so large |x| cannot overflow.
    x = a.data
    neg = x < 0
    e = np.exp(np.where(neg, x, -x))
    out = np.where(neg, e / (1.0 + e), 1.0 / (1.0 + e)).astype(x.dtype, copy=False)

    def backward(g):
        if a.requires_grad:
            a._accum(g * out * (1.0 - out))

    return make_op(out, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum(g * (1.0 - out * out))

    return make_op(out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum(g * out)

    return make_op(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive value")
    out = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum(g / a.data)

    return make_op(out, (a,), backward)


# -- shape ops ---------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accum(g.reshape(a.data.shape))

    return make_op(out, (a,), backward)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + n)
                t._accum(g[tuple(idx)])
            offset += n

    return make_op(out, tuple(tensors), backward)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows of a 2-D tensor: out[k] = a[idx[k]] (backward scatter-adds)."""
    idx = np.asarray(idx, dtype=np.int64)
    out = a.data[idx]

    def backward(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
            a._accum(ga)

    return make_op(out, (a,), backward)


def mean(a: Tensor) -> Tensor:
    out = a.data.mean(dtype=a.data.dtype)
    n = a.data.size

    def backward(g):
        if a.requires_grad:
            a._accum(np.full_like(a.data, g / n))

    return make_op(out, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    out = a.data.sum(dtype=a.data.dtype)

    def backward(g):
        if a.requires_grad:
            a._accum(np.full_like(a.data, g))

    return make_op(out, (a,), backward)


def global_avg_pool(a: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    n_, c_, h, w = a.data.shape
    out = a.data.mean(axis=(2, 3))

    def backward(g):
        if a.requires_grad:
            a._accum(np.broadcast_to(g[:, :, None, None] / (h * w), a.data.shape).astype(a.data.dtype))

    return make_op(out, (a,), backward)


def upsample2_nearest(a: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C, 2H, 2W) by pixel duplication."""
    out = a.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        if a.requires_grad:
            n_, c_, h2, w2 = g.shape
            a._accum(g.reshape(n_, c_, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)))

    return make_op(out, (a,), backward)


# -- linear layers -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return make_op(out, (a, b), backward)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: (N, D) @ (D, M) + (M,)."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise ValueError(f"dense: inner dims disagree: {x.data.shape} vs {w.data.shape}")
    out = x.data @ w.data + b.data

    def backward(g):
        if x.requires_grad:
            x._accum(g @ w.data.T)
        if w.requires_grad:
            w._accum(x.data.T @ g)
        if b.requires_grad:
            b._accum(g.sum(axis=0))

    return make_op(out, (x, w, b), backward)


def _im2col(xp, kh, kw, stride, oh, ow):
    """Strided view (N, C, KH, KW, OH, OW) over padded input, then flatten."""
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(n, c * kh * kw, oh * ow)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2D convolution, NCHW input, OIKK weights, zero padding.

    Output size must divide exactly: H' = (H + 2*pad - K)/stride + 1.
    """
    n, c, h, wd = x.data.shape
    o, ci, kh, kw = w.data.shape
    if ci != c:
        raise ValueError(f"conv2d: weight expects {ci} input channels, got {c}")
    if pad < 0 or stride < 1:
        raise ValueError("conv2d: pad must be >= 0 and stride >= 1")
    if (h + 2 * pad - kh) % stride or (wd + 2 * pad - kw) % stride:
        raise ValueError("conv2d: non-integral output size")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ValueError("conv2d: kernel does not fit input")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    wmat = w.data.reshape(o, -1)
    out = np.matmul(wmat, cols)  # (N, O, OH*OW) via broadcast
    out += b.data.reshape(1, o, 1)
    out = out.reshape(n, o, oh, ow)

    def backward(g):
        gmat = g.reshape(n, o, oh * ow)
        if b.requires_grad:
            b._accum(gmat.sum(axis=(0, 2)))
        if w.requires_grad:
            gw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0)
            w._accum(gw.reshape(w.data.shape))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, gmat)  # (N, C*KH*KW, OH*OW)
            dcols = dcols.reshape(n, c, kh, kw, oh, ow)
            dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[:, :, i, j]
            if pad:
                dxp = dxp[:, :, pad : pad + h, pad : pad + wd]
            x._accum(dxp)

    return make_op(out, (x, w, b), backward)


# -- losses and probability ops ----------------------------------------------

def _softmax(z):
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(logits: Tensor) -> Tensor:
    p = _softmax(logits.data)

    def backward(g):
        if logits.requires_grad:
            dot = (g * p).sum(axis=-1, keepdims=True)
            logits._accum(p * (g - dot))

    return make_op(p, (logits,), backward)


def entropy(logits: Tensor) -> Tensor:
    """Mean Shannon entropy (nats) of row-wise softmax distributions."""
    if logits.data.ndim != 2 or logits.data.shape[1] < 2:
        raise ValueError("entropy expects (N, A) logits with A >= 2")
    n = logits.data.shape[0]
    p = _softmax(logits.data)
    logp = np.log(np.maximum(p, np.finfo(p.dtype).tiny))
    h_rows = -(p * logp).sum(axis=1)
    out = h_rows.mean(dtype=logits.data.dtype)

    def backward(g):
        if logits.requires_grad:
            dz = -p * (logp + h_rows[:, None])
            logits._accum(g * dz / n)

    return make_op(out, (logits,), backward)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences over all elements."""
    if pred.data.shape != target.data.shape:
        raise ValueError(f"mse_loss: shape mismatch {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.mean(diff * diff, dtype=pred.data.dtype)

    def backward(g):
        coef = 2.0 * g / n
        if pred.requires_grad:
            pred._accum(coef * diff)
        if target.requires_grad:
            target._accum(-coef * diff)

    return make_op(out, (pred, target), backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.data.shape[0]
    p = _softmax(logits.data)
    picked = p[np.arange(n), labels]
    out = -np.mean(np.log(np.maximum(picked, np.finfo(p.dtype).tiny)), dtype=logits.data.dtype)

    def backward(g):
        if logits.requires_grad:
            dz = p.copy()
            dz[np.arange(n), labels] -= 1.0
            logits._accum(g * dz / n)

    return make_op(out, (logits,), backward)


def assert_finite(t: Tensor, what: str = "tensor"):
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"non-finite values in {what}")


# -- gradient checking ---------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    per_input: list = field(default_factory=list)


def grad_check(fn, inputs, eps: float = 1e-6, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of scalar-valued ``fn`` against central differences.

    Inputs are promoted to float64 so the finite-difference oracle is not
    drowned by float32 roundoff; relative error is |a - n| / max(|a|, |n|, 1).
    """
    ts = [Tensor(np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64), requires_grad=True) for x in inputs]
    out = fn(*ts)
    if out.data.size != 1:
        raise ValueError("grad_check expects a scalar-valued fn")
    for t in ts:
        t.zero_grad()
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in ts]

    max_err = 0.0
    per_input = []
    for t, a in zip(ts, analytic):
        num = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = fn(*ts).item()
            flat[i] = orig - eps
            f_minus = fn(*ts).item()
            flat[i] = orig
            nflat[i] = (f_plus - f_minus) / (2 * eps)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), 1.0)
        err = float(np.max(np.abs(a - num) / denom)) if flat.size else 0.0
        per_input.append(err)
        max_err = max(max_err, err)
    return GradCheckReport(max_rel_err=max_err, passed=max_err < tol, per_input=per_input)
