"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Operations executed while a :class:`Tape` is active are recorded in order
together with a vector-Jacobian closure. :func:`backward` replays the
closures in exact reverse order and accumulates adjoints additively, so a
tensor used twice receives the sum of both path contributions.

Example
-------
>>> x = Tensor([1.0, 2.0], requires_grad=True)
>>> with Tape() as tape:
...     loss = (x * x).sum()
>>> backward(loss, tape, wrt=[x])[0]
array([2., 4.])
"""

from __future__ import annotations

import threading

import numpy as np
from scipy.special import expit

from .errors import ConfigError, ContractError, DimensionError, EvaluationError

__all__ = [
    "Tensor",
    "Tape",
    "as_tensor",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "square",
    "absolute",
    "reshape",
    "transpose",
    "tsum",
    "tmean",
    "activation",
    "pad_reflect",
    "conv2d",
    "conv2d_stride",
    "trace_sqrt_psd",
    "finite_diff_check",
]

_state = threading.local()


def _active_tape():
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array node.

    The wrapped array is not copied when it is already float64, so a
    parameter Tensor and the array it was built from share storage.
    """

    __slots__ = ("data", "requires_grad", "grad", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by constants")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    """Wrap ``x`` as a constant Tensor unless it already is one."""
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; operations run inside the ``with`` block on
    tensors that require gradients are appended to :attr:`records`. A tape
    belongs to the thread that entered it.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss, wrt=None):
        return backward(loss, self, wrt)


def _make(data, inputs, vjp):
    """Create an op output and record it on the active tape when needed."""
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape = _active_tape()
        if tape is not None:
            tape.records.append((out, inputs, vjp))
    return out


def backward(loss, tape, wrt=None):
    """Propagate ``d loss`` back through ``tape``.

    Every leaf tensor that requires gradients and took part in the recorded
    computation gets its ``.grad`` set. When ``wrt`` is given, a list with
    one gradient array per requested tensor is returned, zeros for tensors
    that are not on any path to the loss. Otherwise a ``{tensor: grad}``
    mapping over the reachable leaves is returned.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    produced = set()
    leaves = {}
    for out, inputs, _ in tape.records:
        produced.add(id(out))
        for t in inputs:
            if t.requires_grad:
                leaves[id(t)] = t
    for out, inputs, vjp in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    result = {}
    for key, t in leaves.items():
        if key in produced:
            continue
        g = grads.get(key)
        t.grad = np.zeros_like(t.data) if g is None else np.asarray(g).reshape(t.shape)
        result[t] = t.grad
    if loss.requires_grad and id(loss) not in produced:
        loss.grad = np.ones_like(loss.data)
        result[loss] = loss.grad
    if wrt is None:
        return result
    out = []
    for t in wrt:
        if t in result:
            out.append(result[t])
        else:
            t.grad = np.zeros_like(t.data)
            out.append(t.grad)
    return out


# ---------------------------------------------------------------- elementwise


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from exc
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise DimensionError(f"cannot subtract shapes {a.shape} and {b.shape}") from exc
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc

    def vjp(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), vjp)


def square(x):
    x = as_tensor(x)
    return _make(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


def absolute(x):
    """Elementwise ``|x|`` with subgradient 0 at 0."""
    x = as_tensor(x)
    return _make(np.abs(x.data), (x,), lambda g: (np.sign(x.data) * g,))


# ------------------------------------------------------------------- shaping


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from exc
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x):
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    return _make(x.data.T, (x,), lambda g: (g.T,))


def tsum(x, axis=None):
    x = as_tensor(x)
    if axis is None:
        return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))
    out = x.data.sum(axis=axis)

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(out, (x,), vjp)


def tmean(x):
    x = as_tensor(x)
    n = x.data.size
    return _make(np.asarray(x.data.mean()), (x,), lambda g: (np.full(x.shape, float(g) / n),))


# -------------------------------------------------------------------- linear


def matmul(a, b):
    """Matrix product of an ``m x k`` and a ``k x n`` tensor."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not align")

    def vjp(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), vjp)


# --------------------------------------------------------------- activations


def _softplus_parts(x):
    e = np.exp(-np.abs(x))
    return np.maximum(x, 0.0) + np.log1p(e), e


def activation(x, kind):
    """Apply ``softplus``, ``relu``, ``sigmoid`` or ``softmax_over_all``.

    ``softmax_over_all`` normalizes over every entry of ``x`` (flattened)
    and returns an array of the same shape.
    """
    x = as_tensor(x)
    if kind == "softplus":
        out, e = _softplus_parts(x.data)

        def vjp(g):
            # logistic sigmoid from the cached exp(-|x|)
            r = 1.0 / (1.0 + e)
            return (g * np.where(x.data >= 0, r, e * r),)

        return _make(out, (x,), vjp)
    if kind == "relu":
        mask = x.data > 0
        return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))
    if kind == "sigmoid":
        s = expit(x.data)
        return _make(s, (x,), lambda g: (g * s * (1.0 - s),))
    if kind == "softmax_over_all":
        z = np.exp(x.data - x.data.max())
        s = z / z.sum()
        return _make(s, (x,), lambda g: (s * (g - np.sum(g * s)),))
    raise ConfigError(f"unknown activation {kind!r}")


# ------------------------------------------------------------- convolutions


def _reflect_index(n, pad):
    return np.pad(np.arange(n), pad, mode="reflect") if pad else np.arange(n)


def _fold(g, idx, n, axis):
    """Adjoint of gathering ``idx`` along ``axis``: scatter-add back to size ``n``."""
    g = np.moveaxis(g, axis, 0)
    pad = (len(idx) - n) // 2
    out = g[pad:pad + n].copy()
    for j in list(range(pad)) + list(range(pad + n, len(idx))):
        out[idx[j]] += g[j]
    return np.moveaxis(out, 0, axis)


def pad_reflect(x, pad):
    """Reflect-pad the two leading (spatial) axes of ``x`` by ``pad``."""
    x = as_tensor(x)
    if pad == 0:
        return x
    h, w = x.shape[:2]
    ri, ci = _reflect_index(h, pad), _reflect_index(w, pad)
    out = x.data[ri][:, ci]

    def vjp(g):
        return (_fold(_fold(g, ci, w, 1), ri, h, 0),)

    return _make(out, (x,), vjp)


def conv2d(x, weight, bias=None):
    """Same-size multichannel convolution with reflect padding, stride 1.

    ``x`` is ``H x W x Cin``, ``weight`` is ``k x k x Cin x Cout`` and
    ``bias`` (optional) has length ``Cout``. Cross-correlation convention:
    ``out[i, j] = sum_{u, v} xpad[i + u, j + v] @ weight[u, v]``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[2] != x.shape[2]:
        raise DimensionError(f"conv2d shapes {x.shape} and {weight.shape} do not align")
    k = weight.shape[0]
    if k % 2 == 0 or weight.shape[1] != k:
        raise ConfigError(f"conv2d needs an odd square kernel, got {weight.shape[:2]}")
    xp = pad_reflect(x, (k - 1) // 2)
    h, w, cin = x.shape
    cout = weight.shape[3]
    offsets = [(u, v) for u in range(k) for v in range(k)]
    # im2col with (u, v, cin) ordering matches weight.reshape(k*k*cin, cout)
    cols = np.concatenate([xp.data[u:u + h, v:v + w] for u, v in offsets], axis=2)
    cols = cols.reshape(h * w, k * k * cin)
    wmat = weight.data.reshape(k * k * cin, cout)
    out = cols @ wmat

    def vjp(g):
        g2 = g.reshape(h * w, cout)
        gx = gw = None
        if weight.requires_grad:
            gw = (cols.T @ g2).reshape(weight.shape)
        if xp.requires_grad:
            gcols = (g2 @ wmat.T).reshape(h, w, k * k, cin)
            gx = np.zeros(xp.shape)
            for j, (u, v) in enumerate(offsets):
                gx[u:u + h, v:v + w] += gcols[:, :, j]
        return gx, gw

    y = _make(out.reshape(h, w, cout), (xp, weight), vjp)
    if bias is not None:
        y = add(y, bias)
    return y


def conv2d_stride(x, kernel, stride):
    """Convolve each channel of ``x`` with one shared 2-D kernel, then subsample.

    ``x`` is ``H x W x C`` and ``kernel`` is ``k x k`` with ``k`` odd. The
    input is reflect-padded by ``(k - 1) / 2`` so the output is
    ``ceil(H / stride) x ceil(W / stride) x C``. Cross-correlation
    convention, windows anchored at multiples of ``stride``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 2:
        raise DimensionError(f"conv2d_stride shapes {x.shape} and {kernel.shape} invalid")
    k = kernel.shape[0]
    if k % 2 == 0 or kernel.shape[1] != k:
        raise ConfigError(f"kernel must be odd and square, got {kernel.shape}")
    if int(stride) != stride or stride < 1:
        raise ConfigError(f"stride must be a positive integer, got {stride}")
    s = int(stride)
    xp = pad_reflect(x, (k - 1) // 2)
    h, w, c = x.shape
    ho, wo = -(-h // s), -(-w // s)
    kd = kernel.data
    out = np.zeros((ho, wo, c))
    for u in range(k):
        for v in range(k):
            out += kd[u, v] * xp.data[u:u + s * (ho - 1) + 1:s, v:v + s * (wo - 1) + 1:s]

    def vjp(g):
        gx = gk = None
        if kernel.requires_grad:
            gk = np.empty((k, k))
            for u in range(k):
                for v in range(k):
                    gk[u, v] = np.sum(g * xp.data[u:u + s * (ho - 1) + 1:s, v:v + s * (wo - 1) + 1:s])
        if xp.requires_grad:
            gx = np.zeros(xp.shape)
            for u in range(k):
                for v in range(k):
                    gx[u:u + s * (ho - 1) + 1:s, v:v + s * (wo - 1) + 1:s] += kd[u, v] * g
        return gx, gk

    return _make(out, (xp, kernel), vjp)


# ------------------------------------------------------------- spectral ops


def trace_sqrt_psd(gram, eps=1e-12):
    """``sum_i sqrt(lambda_i + eps)`` over eigenvalues of a symmetric PSD matrix.

    Applied to ``A.T @ A`` this is the (regularized) nuclear norm of ``A``.
    The gradient ``U diag(1 / (2 sqrt(lambda + eps))) U^T`` needs no
    eigengap, so repeated singular values are handled.
    """
    gram = as_tensor(gram)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise DimensionError(f"expected a square matrix, got {gram.shape}")
    sym = 0.5 * (gram.data + gram.data.T)
    if not np.all(np.isfinite(sym)):
        # propagate instead of failing inside LAPACK; callers check finiteness
        return _make(np.asarray(np.nan), (gram,), lambda g: (np.full(gram.shape, np.nan),))
    lam, u = np.linalg.eigh(sym)
    root = np.sqrt(np.clip(lam, 0.0, None) + eps)

    def vjp(g):
        return (float(g) * ((u / (2.0 * root)) @ u.T),)

    return _make(np.asarray(root.sum()), (gram,), vjp)


# ------------------------------------------------------------ verification


def finite_diff_check(f, params, step=1e-5):
    """Largest relative gap between tape gradients and central differences.

    ``f`` is a zero-argument callable returning a scalar Tensor computed from
    ``params`` (a list of Tensors that are perturbed in place and restored).
    The error per entry is ``|analytic - fd| / (|analytic| + 1e-12)``.
    """
    if not 1e-8 <= step <= 1e-3:
        raise ConfigError(f"step must lie in [1e-8, 1e-3], got {step}")
    with Tape() as tape:
        loss = f()
    analytic = backward(loss, tape, wrt=params)
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.flat
        gflat = ga.reshape(-1)
        for i in range(p.data.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise EvaluationError(f"non-finite value while perturbing entry {i}")
            fd = (fp - fm) / (2.0 * step)
            err = abs(gflat[i] - fd) / (abs(gflat[i]) + 1e-12)
            worst = max(worst, err)
    return worst
