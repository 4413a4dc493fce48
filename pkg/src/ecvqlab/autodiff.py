"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

The computation graph is built implicitly: every operation returns a new
:class:`Tensor` holding references to its parents and a backward closure.
``backward(loss)`` walks the graph once in reverse topological order and
accumulates gradients into ``Tensor.grad``. Accumulation order is fixed by
the (deterministic) construction order, so repeated runs with identical
inputs produce bit-identical gradients.

Everything is float64. GELU uses the exact erf form. The straight-through
estimator is available both as a generic wrapper (:func:`ste_quantize`) and
as a codebook-aware lookup (:func:`ste_lookup`) that additionally routes
exact gradients into the codebook rows it selected.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf, expit

from .errors import NonFiniteGradientError, ShapeError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)
LOG2E = 1.0 / math.log(2.0)

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (forward only)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A dense float64 array plus optional gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _tracked(self):
        return self.requires_grad or self._backward is not None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, op={self._op}{tag})"

    # Operator sugar; the module-level functions are the actual ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    out = Tensor(data)
    if _grad_enabled and any(p._tracked() for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    else:
        out._op = op
    return out


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward(g, out):
        if a._tracked():
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b._tracked():
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward, "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def backward(g, out):
        if a._tracked():
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b._tracked():
            _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward(g, out):
        if a._tracked():
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b._tracked():
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward, "mul")


def scale(a, c):
    """Multiply by a python scalar."""
    a = _as_tensor(a)
    c = float(c)

    def backward(g, out):
        if a._tracked():
            _accumulate(a, g * c)

    return _make(a.data * c, (a,), backward, "scale")


def exp(a):
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g, out):
        if a._tracked():
            _accumulate(a, g * out.data)

    return _make(out_data, (a,), backward, "exp")


def log(a):
    a = _as_tensor(a)
    out_data = np.log(a.data)

    def backward(g, out):
        if a._tracked():
            _accumulate(a, g / a.data)

    return _make(out_data, (a,), backward, "log")


def tanh(a):
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g, out):
        if a._tracked():
            _accumulate(a, g * (1.0 - out.data * out.data))

    return _make(out_data, (a,), backward, "tanh")


def sigmoid(a):
    a = _as_tensor(a)
    out_data = expit(a.data)

    def backward(g, out):
        if a._tracked():
            _accumulate(a, g * out.data * (1.0 - out.data))

    return _make(out_data, (a,), backward, "sigmoid")


def softplus(a):
    a = _as_tensor(a)
    out_data = np.logaddexp(0.0, a.data)

    def backward(g, out):
        if a._tracked():
            _accumulate(a, g * expit(a.data))

    return _make(out_data, (a,), backward, "softplus")


def gelu(a):
    """Exact GELU: x * Phi(x) with the Gaussian CDF via erf."""
    a = _as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out_data = a.data * cdf

    def backward(g, out):
        if a._tracked():
            pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
            _accumulate(a, g * (cdf + a.data * pdf))

    return _make(out_data, (a,), backward, "gelu")


# ---------------------------------------------------------------------------
# linear layers


def affine(x, w, b):
    """Fully-connected layer ``x @ w + b`` for 2-d ``x``."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeError(f"affine: expected 2-d input and weight, got {x.shape} and {w.shape}")
    if x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"affine: input dim {x.shape} incompatible with weight {w.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ShapeError(f"affine: bias shape {b.shape} does not match weight {w.shape}")
    out_data = x.data @ w.data + b.data

    def backward(g, out):
        if x._tracked():
            _accumulate(x, g @ w.data.T)
        if w._tracked():
            _accumulate(w, x.data.T @ g)
        if b._tracked():
            _accumulate(b, g.sum(axis=0))

    return _make(out_data, (x, w, b), backward, "affine")


def coordwise_affine(x, w, b):
    """Batched per-coordinate affine: (B,k,i) x (k,i,o) + (k,o) -> (B,k,o).

    Used by the per-coordinate scalar CDF networks, where each of the k
    coordinates owns an independent set of small weight matrices.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeError(f"coordwise_affine: expected 3-d input/weight, got {x.shape} and {w.shape}")
    if x.data.shape[1] != w.data.shape[0] or x.data.shape[2] != w.data.shape[1]:
        raise ShapeError(f"coordwise_affine: input {x.shape} incompatible with weight {w.shape}")
    if b.data.shape != (w.data.shape[0], w.data.shape[2]):
        raise ShapeError(f"coordwise_affine: bias shape {b.shape} does not match weight {w.shape}")
    out_data = np.einsum("bki,kio->bko", x.data, w.data) + b.data

    def backward(g, out):
        if x._tracked():
            _accumulate(x, np.einsum("bko,kio->bki", g, w.data))
        if w._tracked():
            _accumulate(w, np.einsum("bki,bko->kio", x.data, g))
        if b._tracked():
            _accumulate(b, g.sum(axis=0))

    return _make(out_data, (x, w, b), backward, "coordwise_affine")


# ---------------------------------------------------------------------------
# reductions and vector ops


def tsum(a, axis=None):
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis)

    def backward(g, out):
        if not a._tracked():
            return
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            g_exp = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g_exp, a.data.shape).copy())

    return _make(out_data, (a,), backward, "sum")


def tmean(a, axis=None):
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis), 1.0 / n)


def mse(a, b):
    """Mean squared error over all elements, as a scalar tensor."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    n = diff.size
    out_data = np.float64((diff * diff).sum() / n)

    def backward(g, out):
        coeff = (2.0 / n) * float(g)
        if a._tracked():
            _accumulate(a, coeff * diff)
        if b._tracked():
            _accumulate(b, -coeff * diff)

    return _make(out_data, (a, b), backward, "mse")


def reshape(a, shape):
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward(g, out):
        if a._tracked():
            _accumulate(a, g.reshape(a.data.shape))

    return _make(out_data, (a,), backward, "reshape")


def softmax(a, axis=-1):
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g, out):
        if a._tracked():
            dot = (g * out.data).sum(axis=axis, keepdims=True)
            _accumulate(a, out.data * (g - dot))

    return _make(out_data, (a,), backward, "softmax")


def gather_rows(table, idx):
    """Select rows ``table[idx]``; backward scatter-adds into the table."""
    table = _as_tensor(table)
    idx = np.asarray(idx)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError("gather_rows: idx must be a 1-d integer array")
    out_data = table.data[idx]

    def backward(g, out):
        if table._tracked():
            acc = np.zeros_like(table.data)
            np.add.at(acc, idx, g)
            _accumulate(table, acc)

    return _make(out_data, (table,), backward, "gather_rows")


def gather_cols(x, idx):
    """Per-row column pick: out[i] = x[i, idx[i]] for 2-d ``x``."""
    x = _as_tensor(x)
    idx = np.asarray(idx)
    if x.data.ndim != 2:
        raise ShapeError(f"gather_cols: expected 2-d input, got {x.shape}")
    if idx.shape != (x.data.shape[0],):
        raise ShapeError(f"gather_cols: idx shape {idx.shape} does not match rows of {x.shape}")
    rows = np.arange(x.data.shape[0])
    out_data = x.data[rows, idx]

    def backward(g, out):
        if x._tracked():
            acc = np.zeros_like(x.data)
            acc[rows, idx] = g
            _accumulate(x, acc)

    return _make(out_data, (x,), backward, "gather_cols")


def ste_quantize(y, q):
    """Straight-through quantization: forward q(y), backward identity.

    ``q`` maps the raw array to an equal-shape quantized array. Gradients
    pass through unchanged, as if the node were the identity.
    """
    y = _as_tensor(y)
    q_data = np.asarray(q(y.data), dtype=np.float64)
    if q_data.shape != y.data.shape:
        raise ShapeError(f"ste_quantize: quantizer changed shape {y.shape} -> {q_data.shape}")

    def backward(g, out):
        if y._tracked():
            _accumulate(y, g)

    return _make(q_data, (y,), backward, "ste_quantize")


def ste_lookup(y, codebook, idx):
    """Codeword substitution with straight-through encoder gradients.

    Forward output is ``codebook[idx]``. The backward pass treats the
    output as identity in ``y`` (straight-through) while the codebook rows
    receive their exact scatter-add gradient.
    """
    y, codebook = _as_tensor(y), _as_tensor(codebook)
    idx = np.asarray(idx)
    if y.data.ndim != 2 or codebook.data.ndim != 2:
        raise ShapeError(f"ste_lookup: expected 2-d latents/codebook, got {y.shape} and {codebook.shape}")
    if y.data.shape[1] != codebook.data.shape[1]:
        raise ShapeError(f"ste_lookup: latent dim {y.shape} does not match codebook {codebook.shape}")
    if idx.shape != (y.data.shape[0],):
        raise ShapeError(f"ste_lookup: idx shape {idx.shape} does not match batch of {y.shape}")
    out_data = codebook.data[idx]

    def backward(g, out):
        if y._tracked():
            _accumulate(y, g)
        if codebook._tracked():
            acc = np.zeros_like(codebook.data)
            np.add.at(acc, idx, g)
            _accumulate(codebook, acc)

    return _make(out_data, (y, codebook), backward, "ste_lookup")


def _accumulate(t, g):
    if t.grad is None:
        t.grad = g if g.flags.owndata else g.copy()
    else:
        t.grad = t.grad + g


# ---------------------------------------------------------------------------
# backward pass


def topo_order(root):
    """Parents-before-children ordering of the graph below ``root``."""
    order = []
    seen = set()
    stack = [(root, False)]
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
    return order


def backward(loss, params=None):
    """Populate ``grad`` for every tracked tensor below the scalar ``loss``.

    If ``params`` is given, any parameter the loss does not reach gets an
    explicit zero gradient.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    order = topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad, node)
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Bias-corrected Adam over a list of (named) tensors."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        """Apply one update. Raises on non-finite gradients."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(p.name or f"param{i}")
            m = self._m[i]
            v = self._v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckReport:
    """Per-parameter relative errors of analytic vs central-difference grads.

    The error metric is ``|a - fd| / max(1, |a|, |fd|)``: relative for
    large gradients, absolute for small ones (central differences with
    step h carry O(h^2) truncation noise that would otherwise dominate).
    """

    tolerance: float
    errors: dict = field(default_factory=dict)

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self):
        return self.max_error < self.tolerance

    def __str__(self):
        lines = [f"gradient check (tol {self.tolerance:g}): "
                 f"{'PASS' if self.passed else 'FAIL'} max={self.max_error:.3e}"]
        for name, err in sorted(self.errors.items()):
            lines.append(f"  {name}: {err:.3e}")
        return "\n".join(lines)


def gradient_check(loss_fn, params, h=1e-4, tolerance=1e-4):
    """Compare analytic gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the graph from the shared ``params`` on every
    call and be deterministic (fix any noise realization before calling).
    Cost is O(total parameters x forward), so the check refuses graphs with
    more than 10^4 parameters.
    """
    total = sum(p.size for p in params)
    if total > 10_000:
        raise ValueError(f"gradient_check: {total} parameters exceeds the 10^4 limit")
    for p in params:
        p.grad = None
    loss = loss_fn()
    backward(loss, params=params)
    analytic = [p.grad.copy() for p in params]

    report = GradCheckReport(tolerance=tolerance)
    for i, p in enumerate(params):
        flat = p.data.reshape(-1)
        fd = np.zeros_like(flat)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            with no_grad():
                hi = float(loss_fn().data)
            flat[j] = orig - h
            with no_grad():
                lo = float(loss_fn().data)
            flat[j] = orig
            fd[j] = (hi - lo) / (2.0 * h)
        a = analytic[i].reshape(-1)
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(fd)))
        err = float(np.max(np.abs(a - fd) / denom)) if flat.size else 0.0
        report.errors[p.name or f"param{i}"] = err
    return report
