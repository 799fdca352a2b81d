"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

The op set is deliberately closed: ``conv2d``, ``dense``, ``global_avg_pool``,
``apply_unary`` (relu, softplus, log, exp), ``softmax_xent``, plus elementwise
``add``/``mul`` with numpy broadcasting and a ``reshape``. Everything else
(sums, sigmoids, straight-through estimators) is composed from these.

Spatial ops take ``H x W x C`` tensors, or ``N x H x W x C`` batches with a
leading sample axis.
"""

import math

import numpy as np

from .errors import DomainError, ShapeError, StateError
from . import rng as _rng


class Tensor:
    """A node in the computation graph.

    Leaves are created directly; interior nodes are produced by the ops in
    this module and remember their parents plus a closure mapping the output
    gradient to one gradient per parent.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, data, requires_grad=False, name=None, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dims(self):
        return list(self.data.shape)

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn):
    parents = tuple(parents)
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, parents=parents if req else (),
                  backward_fn=backward_fn if req else None)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# elementwise -----------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"cannot add {a.shape} and {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"cannot multiply {a.shape} and {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(out, (a, b), backward)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from exc
    return _node(out, (a,), lambda g: (g.reshape(a.shape),))


def softplus_array(x):
    # log(1+e^x) = max(x,0) + log1p(e^-|x|), never overflows
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid_array(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# while grad_check runs, relu appends its activation pattern here
_KINK_LOG = None


def apply_unary(a, fn):
    """Apply ``relu``, ``softplus``, ``log`` or ``exp`` elementwise."""
    a = as_tensor(a)
    x = a.data
    if fn == "relu":
        out = np.maximum(x, 0.0)
        if _KINK_LOG is not None:
            _KINK_LOG.append(x > 0)
        return _node(out, (a,), lambda g: (g * (x > 0),))
    if fn == "softplus":
        out = softplus_array(x)
        return _node(out, (a,), lambda g: (g * sigmoid_array(x),))
    if fn == "log":
        if np.any(x <= 0):
            raise DomainError("log of nonpositive value")
        out = np.log(x)
        return _node(out, (a,), lambda g: (g / x,))
    if fn == "exp":
        out = np.exp(x)
        return _node(out, (a,), lambda g: (g * out,))
    raise ValueError(f"unknown unary function {fn!r}")


def relu(a):
    return apply_unary(a, "relu")


def softplus(a):
    return apply_unary(a, "softplus")


def log(a):
    return apply_unary(a, "log")


def exp(a):
    return apply_unary(a, "exp")


# layers ----------------------------------------------------------------------

def _windows(xp, k, stride, ho, wo):
    # xp: N x Hp x Wp x C  ->  N x Ho x Wo x K x K x C
    n, _, _, c = xp.shape
    s0, s1, s2, s3 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, shape=(n, ho, wo, k, k, c),
        strides=(s0, s1 * stride, s2 * stride, s1, s2, s3), writeable=False)


def conv2d(x, kernels, stride=1, padding=0, bias=None):
    """Zero-padded 2-D convolution (cross-correlation) of HxWxCin with KxKxCinxCout."""
    x, kernels = as_tensor(x), as_tensor(kernels)
    batched = x.data.ndim == 4
    xd = x.data if batched else x.data[None]
    if xd.ndim != 4 or kernels.data.ndim != 4:
        raise ShapeError("conv2d expects HxWxC input and KxKxCinxCout kernels")
    n, h, w, cin = xd.shape
    k, k2, kcin, cout = kernels.shape
    if k != k2:
        raise ShapeError("kernels must be square")
    if kcin != cin:
        raise ShapeError(f"input has {cin} channels, kernels expect {kcin}")
    if stride < 1 or padding < 0:
        raise ShapeError("stride must be positive and padding nonnegative")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise ShapeError("kernel larger than padded input")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    xp = np.pad(xd, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    cols = _windows(xp, k, stride, ho, wo).reshape(n * ho * wo, k * k * cin)
    wmat = kernels.data.reshape(k * k * cin, cout)
    out = (cols @ wmat).reshape(n, ho, wo, cout)
    parents = [x, kernels]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        gb = g if batched else g[None]
        gmat = gb.reshape(n * ho * wo, cout)
        gw = (cols.T @ gmat).reshape(kernels.shape)
        gcols = (gmat @ wmat.T).reshape(n, ho, wo, k, k, cin)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, padding:padding + h, padding:padding + w, :]
        if not batched:
            gx = gx[0]
        grads = [gx, gw]
        if bias is not None:
            grads.append(gmat.sum(axis=0))
        return tuple(grads)

    return _node(out if batched else out[0], parents, backward)


def dense(x, weights, bias):
    """``out_j = sum_i in_i W_ij + b_j``; a leading batch axis is kept if present."""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    xd = x.data
    batched = xd.ndim == 2
    flat = xd if batched else xd.reshape(-1)
    if weights.data.ndim != 2 or flat.shape[-1] != weights.shape[0]:
        raise ShapeError(f"input length {flat.shape[-1]} does not match weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError("bias length must equal weight columns")
    out = flat @ weights.data + bias.data

    def backward(g):
        gx = (g @ weights.data.T).reshape(x.shape)
        if batched:
            gw = flat.T @ g
            gbias = g.sum(axis=0)
        else:
            gw = np.outer(flat, g)
            gbias = g
        return gx, gw, gbias

    return _node(out, (x, weights, bias), backward)


def global_avg_pool(x):
    """Mean over the two spatial axes: HxWxC -> C (or NxHxWxC -> NxC)."""
    x = as_tensor(x)
    if x.data.ndim not in (3, 4):
        raise ShapeError("global_avg_pool expects HxWxC or NxHxWxC")
    h, w = x.shape[-3], x.shape[-2]
    if h < 1 or w < 1:
        raise ShapeError("empty spatial extent")
    out = x.data.mean(axis=(-3, -2))

    def backward(g):
        g = np.expand_dims(g, (-3, -2))
        return (np.broadcast_to(g / (h * w), x.shape).copy(),)

    return _node(out, (x,), backward)


def softmax_xent(logits, label):
    """Cross entropy ``-log softmax(logits)[label]``.

    With a batch of logits (N x K) and N labels, returns the mean loss.
    """
    logits = as_tensor(logits)
    z = logits.data
    batched = z.ndim == 2
    z2 = z if batched else z[None]
    labels = np.atleast_1d(np.asarray(label))
    k = z2.shape[1]
    if labels.shape[0] != z2.shape[0]:
        raise ShapeError("one label per row of logits required")
    if np.any(labels < 0) or np.any(labels >= k):
        raise IndexError(f"label out of range 0..{k - 1}")
    labels = labels.astype(np.int64)
    shifted = z2 - z2.max(axis=1, keepdims=True)
    # the max entry contributes exactly 1; log1p keeps tiny losses accurate
    rest = np.exp(shifted)
    rest[np.arange(z2.shape[0]), z2.argmax(axis=1)] = 0.0
    lse = np.log1p(rest.sum(axis=1))
    rows = np.arange(z2.shape[0])
    losses = lse - shifted[rows, labels]
    out = losses.mean()

    def backward(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, labels] -= 1.0
        p *= g / z2.shape[0]
        return (p if batched else p[0],)

    return _node(np.asarray(out), (logits,), backward)


def total(x):
    """Sum of all entries, composed as a dense layer with unit weights."""
    x = as_tensor(x)
    flat = reshape(x, (x.data.size,))
    return reshape(dense(flat, np.ones((x.data.size, 1)), np.zeros(1)), ())


# graph -----------------------------------------------------------------------

def topo_order(root):
    order, seen = [], set()
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, leaves=None):
    """Accumulate d(loss)/d(node) into ``.grad`` of every leaf.

    Returns the gradient for each leaf in ``leaves`` (zeros for leaves the
    loss does not depend on).
    """
    if loss.data.size != 1:
        raise ShapeError("backward needs a scalar loss")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    if leaves is None:
        return None
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]


def zero_grad(params):
    for p in params:
        p.grad = None


class Graph:
    """A loss function bound to named parameter leaves.

    ``fn(params, *args)`` builds the forward graph and returns a scalar
    Tensor. ``forward`` records the result; ``backward`` differentiates it.
    """

    def __init__(self, params, fn):
        self.params = params
        self.fn = fn
        self.loss = None

    def forward(self, *args, **kwargs):
        zero_grad(self.params.values())
        self.loss = self.fn(self.params, *args, **kwargs)
        if not np.all(np.isfinite(self.loss.data)):
            raise DomainError("non-finite loss in forward pass")
        return float(self.loss.data)

    def backward(self):
        if self.loss is None:
            raise StateError("backward called before forward")
        names = list(self.params)
        grads = backward(self.loss, [self.params[n] for n in names])
        return dict(zip(names, grads))


# initialization and optimization ----------------------------------------------

def glorot_uniform(gen, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(gen.uniform(-limit, limit, size=shape), requires_grad=True)


def conv_param(gen, k, cin, cout):
    return glorot_uniform(gen, (k, k, cin, cout), k * k * cin, k * k * cout)


def dense_param(gen, n, m):
    return glorot_uniform(gen, (n, m), n, m)


def zeros_param(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def init_stream(seed):
    return _rng.stream(seed, "init")


class SGD:
    """SGD with heavy-ball momentum and L2 weight decay.

    ``v <- momentum*v + grad + weight_decay*param``; ``param <- param - lr*v``.
    """

    def __init__(self, lr=0.1, momentum=0.9, weight_decay=4e-5, lr_scale=None):
        if lr < 0:
            raise ValueError("lr must be nonnegative")
        if not 0 <= momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_scale = lr_scale or {}
        self.velocity = {}

    def step(self, params, grads):
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} != param shape {p.data.shape} for {name}")
            v = self.velocity.get(name)
            upd = g + self.weight_decay * p.data
            v = upd if v is None else self.momentum * v + upd
            self.velocity[name] = v
            p.data = p.data - self.lr * self.lr_scale.get(name, 1.0) * v


def sgd_step(params, grads, lr, momentum=0.0, weight_decay=0.0, velocity=None):
    """Functional single step on dicts of arrays; returns (params, velocity)."""
    if lr < 0 or not 0 <= momentum < 1:
        raise ValueError("need lr >= 0 and 0 <= momentum < 1")
    velocity = dict(velocity or {})
    new = {}
    for name, p in params.items():
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"shape mismatch for {name}")
        v = momentum * velocity.get(name, np.zeros_like(p)) + g + weight_decay * p
        velocity[name] = v
        new[name] = p - lr * v
    return new, velocity


# gradient checking -------------------------------------------------------------

def relative_error(analytic, numeric, floor=1e-8):
    """``|a - n| / (|a| + |n|)``, with ``floor`` guarding the all-zero case."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)


def tensor_relative_error(analytic, numeric, floor=1e-8):
    """Norm-wise ``||a - n|| / (||a|| + ||n||)`` over one parameter tensor."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), floor))


class GradCheckReport:
    """Per-parameter comparison results.

    ``max_error``/``mean_error`` summarize the norm-wise relative error of
    each parameter tensor. Entry-wise errors are kept for diagnosis; on
    entries whose true gradient is near zero they are dominated by
    difference-quotient round-off (about ulp(loss) / 2h) rather than by the
    analytic gradient.
    """

    def __init__(self, per_param):
        self.per_param = per_param

    @property
    def skipped(self):
        """Entries left out because the difference stencil crossed a relu kink."""
        return sum(r.get("skipped", 0) for r in self.per_param.values())

    @property
    def max_error(self):
        return max((r["error"] for r in self.per_param.values()), default=0.0)

    @property
    def mean_error(self):
        errs = [r["error"] for r in self.per_param.values()]
        return float(np.mean(errs)) if errs else 0.0

    @property
    def max_entry_error(self):
        return max((r["max"] for r in self.per_param.values()), default=0.0)

    def passed(self, tolerance):
        return self.max_error < tolerance

    def __str__(self):
        lines = [f"{name:>16s}  err={r['error']:.3e}  entry max={r['max']:.3e}  n={len(r['errors'])}"
                 for name, r in self.per_param.items()]
        lines.append(f"{'overall':>16s}  max={self.max_error:.3e}  mean={self.mean_error:.3e}"
                     f"  skipped={self.skipped}")
        return "\n".join(lines)


def grad_check(graph, *args, h=1e-6, max_entries=None, seed=0, floor=1e-8,
               corrupt=None, skip_kinks=True, **kwargs):
    """Compare analytic gradients of ``graph`` with central differences.

    ``max_entries`` limits how many randomly chosen entries of each parameter
    are probed. ``corrupt`` optionally maps the analytic gradient dict before
    comparison (used to prove the checker detects errors). With
    ``skip_kinks`` an entry whose +-h stencil flips any relu input sign is
    left out and counted in the report: the loss is not differentiable
    across the flip, so the difference quotient is meaningless there.
    """
    graph.forward(*args, **kwargs)
    analytic = graph.backward()
    if corrupt is not None:
        analytic = corrupt(analytic)
    base = _eval_logged(graph, "base", *args, **kwargs)[1]
    gen = _rng.stream(seed, "check")
    per_param = {}
    for name, p in graph.params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(gen.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        smooth = np.ones(idx.size, dtype=bool)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp, kp = _eval_logged(graph, name, *args, **kwargs)
            flat[i] = orig - h
            fm, km = _eval_logged(graph, name, *args, **kwargs)
            flat[i] = orig
            numeric[j] = (fp - fm) / (2 * h)
            if skip_kinks:
                smooth[j] = _same_pattern(base, kp) and _same_pattern(base, km)
        a_kept = analytic[name].reshape(-1)[idx][smooth]
        errs = relative_error(a_kept, numeric[smooth], floor=floor)
        per_param[name] = {"error": tensor_relative_error(a_kept, numeric[smooth], floor=floor),
                           "errors": errs, "max": float(errs.max(initial=0.0)),
                           "mean": float(errs.mean()) if errs.size else 0.0,
                           "skipped": int((~smooth).sum())}
    return GradCheckReport(per_param)


def _same_pattern(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def _eval_logged(graph, name, *args, **kwargs):
    global _KINK_LOG
    _KINK_LOG = []
    try:
        val = _eval(graph, name, *args, **kwargs)
        return val, _KINK_LOG
    finally:
        _KINK_LOG = None


def _eval(graph, name, *args, **kwargs):
    val = graph.fn(graph.params, *args, **kwargs).data
    if not np.all(np.isfinite(val)):
        raise DomainError(f"non-finite forward value while perturbing {name}")
    return float(val)
