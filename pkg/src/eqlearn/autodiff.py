"""Dense float64 tensors with reverse-mode automatic differentiation.

The computation graph is rebuilt on every forward pass (define-by-run):
each primitive returns a new :class:`Tensor` holding the forward value,
references to its parent nodes, and a closure that scatters the incoming
gradient to those parents.  ``backward`` walks the graph once in reverse
topological order, so every node's local gradient runs exactly once.

All data is float64.  Forward primitives raise :class:`NonFiniteError`
when an output contains NaN or Inf (set ``autodiff.check_finite = False``
to trade that guard for speed in inner loops).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

# Inputs to exp are clamped here so an untrained network cannot overflow.
EXP_CLAMP = 20.0

check_finite = True


class NonFiniteError(FloatingPointError):
    """A forward primitive produced NaN or Inf."""


class ShapeError(ValueError):
    """Operands do not conform for the requested primitive."""


class Tensor:
    """A node of the differentiation tape.

    ``data`` is the cached forward value, ``_parents`` the input nodes and
    ``_bwd`` the local-gradient closure (both empty for leaves).  ``grad``
    is populated by :func:`backward`.
    """

    __slots__ = ("data", "grad", "_parents", "_bwd")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = ()
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # Light operator sugar; scalars are folded in as constants.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return affine(self, float(other), 0.0)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return affine(self, -1.0, 0.0)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return affine(self, 1.0, -float(other))
        return add(self, affine(other, -1.0, 0.0))

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A trainable leaf.  Frozen entries hold value 0 and receive gradient 0."""

    __slots__ = ("frozen_mask",)

    def __init__(self, data):
        super().__init__(data)
        self.frozen_mask = np.zeros(self.data.shape, dtype=bool)

    def freeze_where(self, mask):
        """Zero the masked entries and exclude them from future updates."""
        mask = np.asarray(mask, dtype=bool)
        self.data[mask] = 0.0
        self.frozen_mask |= mask


def _node(data, parents, bwd):
    if check_finite and not np.isfinite(data.sum()):
        raise NonFiniteError("non-finite value in forward pass")
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t._parents = parents
    t._bwd = bwd
    return t


def _acc(t, g):
    # New-array accumulation avoids aliasing views produced by closures.
    t.grad = g if t.grad is None else t.grad + g


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, emitted = stack.pop()
        if emitted:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order  # inputs before consumers


def backward(loss):
    """Accumulate d(loss)/d(node) into ``grad`` for every node in the graph.

    ``loss`` must be scalar.  Frozen entries of every :class:`Parameter`
    are zeroed after accumulation.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad)
    for node in order:
        if isinstance(node, Parameter) and node.grad is not None:
            node.grad = np.where(node.frozen_mask, 0.0, node.grad)


def zero_grad(params):
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def constant(x):
    """Wrap an array as a gradient-less leaf."""
    return Tensor(x)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul {a.data.shape} @ {b.data.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        _acc(a, g @ bd.T)
        _acc(b, ad.T @ g)

    return _node(ad @ bd, (a, b), bwd)


def add(a, b):
    if isinstance(b, (int, float)):
        return affine(a, 1.0, float(b))
    if a.data.shape == b.data.shape:
        def bwd(g):
            _acc(a, g)
            _acc(b, g)
        return _node(a.data + b.data, (a, b), bwd)
    if b.data.ndim == 1 and a.data.ndim >= 2 and a.data.shape[-1] == b.data.shape[0]:
        # bias broadcast over leading axes
        axes = tuple(range(a.data.ndim - 1))

        def bwd(g):
            _acc(a, g)
            _acc(b, g.sum(axis=axes))
        return _node(a.data + b.data, (a, b), bwd)
    raise ShapeError(f"add {a.data.shape} + {b.data.shape}")


def affine(a, scale, shift):
    """scale * a + shift with float constants."""
    def bwd(g):
        _acc(a, scale * g)
    return _node(scale * a.data + shift, (a,), bwd)


def mul(a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul {a.data.shape} * {b.data.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        _acc(a, g * bd)
        _acc(b, g * ad)

    return _node(ad * bd, (a, b), bwd)


def square(a):
    ad = a.data

    def bwd(g):
        _acc(a, 2.0 * ad * g)

    return _node(ad * ad, (a,), bwd)


def sin(a):
    ad = a.data

    def bwd(g):
        _acc(a, np.cos(ad) * g)

    return _node(np.sin(ad), (a,), bwd)


def exp(a):
    """exp with the input clamped at EXP_CLAMP; gradient is 0 where clamped."""
    ad = a.data
    out = np.exp(np.minimum(ad, EXP_CLAMP))

    def bwd(g):
        _acc(a, np.where(ad <= EXP_CLAMP, out, 0.0) * g)

    return _node(out, (a,), bwd)


def sigmoid(a):
    out = expit(a.data)

    def bwd(g):
        _acc(a, out * (1.0 - out) * g)

    return _node(out, (a,), bwd)


def relu(a):
    ad = a.data

    def bwd(g):
        _acc(a, (ad > 0.0) * g)

    return _node(np.maximum(ad, 0.0), (a,), bwd)


def clamp(a, lo=None, hi=None):
    """Clip to [lo, hi]; gradient passes only through the interior."""
    ad = a.data
    out = np.clip(ad, lo, hi)
    inside = np.ones(ad.shape, dtype=bool)
    if lo is not None:
        inside &= ad > lo
    if hi is not None:
        inside &= ad < hi

    def bwd(g):
        _acc(a, inside * g)

    return _node(out, (a,), bwd)


def mean(a):
    n = a.data.size

    def bwd(g):
        _acc(a, np.full(a.data.shape, float(g) / n))

    return _node(np.asarray(a.data.mean()), (a,), bwd)


def mse(pred, target):
    """Mean squared error against a constant target array."""
    target = np.asarray(target, dtype=np.float64)
    if pred.data.shape != target.shape:
        raise ShapeError(f"mse {pred.data.shape} vs {target.shape}")
    diff = pred.data - target
    n = diff.size

    def bwd(g):
        _acc(pred, (2.0 * float(g) / n) * diff)

    return _node(np.asarray((diff * diff).mean()), (pred,), bwd)


def reshape(a, shape):
    old = a.data.shape

    def bwd(g):
        _acc(a, g.reshape(old))

    return _node(a.data.reshape(shape), (a,), bwd)


def rows(a, i0, i1):
    """Row slice of a 2-D tensor."""
    if a.data.ndim < 2:
        raise ShapeError("rows expects a batched tensor")

    def bwd(g):
        full = np.zeros_like(a.data)
        full[i0:i1] = g
        _acc(a, full)

    return _node(a.data[i0:i1].copy(), (a,), bwd)


def cols(a, j0, j1):
    """Column slice of a 2-D tensor."""
    if a.data.ndim != 2:
        raise ShapeError("cols expects a 2-D tensor")

    def bwd(g):
        full = np.zeros_like(a.data)
        full[:, j0:j1] = g
        _acc(a, full)

    return _node(a.data[:, j0:j1].copy(), (a,), bwd)


def hstack(tensors):
    """Concatenate 2-D tensors along columns."""
    tensors = tuple(tensors)
    widths = [t.data.shape[1] for t in tensors]
    offs = np.concatenate([[0], np.cumsum(widths)])

    def bwd(g):
        for t, j0, j1 in zip(tensors, offs[:-1], offs[1:]):
            _acc(t, g[:, j0:j1].copy())

    return _node(np.concatenate([t.data for t in tensors], axis=1), tensors, bwd)


def conv2d(x, w):
    """2-D convolution, stride 1, zero 'same' padding.

    x: (B, H, W, Cin), w: (K, K, Cin, Cout) with K odd -> (B, H, W, Cout).
    """
    if x.data.ndim != 4 or w.data.ndim != 4 or x.data.shape[3] != w.data.shape[2]:
        raise ShapeError(f"conv2d {x.data.shape} * {w.data.shape}")
    k = w.data.shape[0]
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (B,H,W,Cin,K,K)
    out = np.tensordot(win, w.data, axes=([4, 5, 3], [0, 1, 2]))

    def bwd(g):
        dw = np.tensordot(win, g, axes=([0, 1, 2], [0, 1, 2]))  # (Cin,K,K,Cout)
        _acc(w, dw.transpose(1, 2, 0, 3))
        gp = np.pad(g, ((0, 0), (p, p), (p, p), (0, 0)))
        gwin = sliding_window_view(gp, (k, k), axis=(1, 2))
        wflip = w.data[::-1, ::-1].transpose(0, 1, 3, 2)  # (K,K,Cout,Cin)
        _acc(x, np.tensordot(gwin, wflip, axes=([4, 5, 3], [0, 1, 2])))

    return _node(out, (x, w), bwd)


def conv1d(x, w):
    """1-D convolution, stride 1, zero 'same' padding.

    x: (B, T, Cin), w: (K, Cin, Cout) with K odd -> (B, T, Cout).
    """
    if x.data.ndim != 3 or w.data.ndim != 3 or x.data.shape[2] != w.data.shape[1]:
        raise ShapeError(f"conv1d {x.data.shape} * {w.data.shape}")
    k = w.data.shape[0]
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (p, p), (0, 0)))
    win = sliding_window_view(xp, k, axis=1)  # (B,T,Cin,K)
    out = np.tensordot(win, w.data, axes=([3, 2], [0, 1]))

    def bwd(g):
        dw = np.tensordot(win, g, axes=([0, 1], [0, 1]))  # (Cin,K,Cout)
        _acc(w, dw.transpose(1, 0, 2))
        gp = np.pad(g, ((0, 0), (p, p), (0, 0)))
        gwin = sliding_window_view(gp, k, axis=1)
        wflip = w.data[::-1].transpose(0, 2, 1)  # (K,Cout,Cin)
        _acc(x, np.tensordot(gwin, wflip, axes=([3, 2], [0, 1])))

    return _node(out, (x, w), bwd)


def maxpool2d(x, size=2):
    """Max pooling with a square window and matching stride.

    Ties split the gradient evenly; input height/width must divide the size.
    """
    b, h, w, c = x.data.shape
    if h % size or w % size:
        raise ShapeError(f"maxpool2d: {h}x{w} not divisible by {size}")
    v = x.data.reshape(b, h // size, size, w // size, size, c)
    out = v.max(axis=(2, 4))

    def bwd(g):
        oexp = out.reshape(b, h // size, 1, w // size, 1, c)
        mask = (v == oexp)
        cnt = mask.sum(axis=(2, 4), keepdims=True)
        dv = mask * (g.reshape(oexp.shape) / cnt)
        _acc(x, dv.reshape(b, h, w, c))

    return _node(out, (x,), bwd)


# ---------------------------------------------------------------------------
# gradient oracle
# ---------------------------------------------------------------------------

def finite_difference_check(loss_fn, params, eps=1e-5, max_entries=None, seed=0):
    """Compare backward() gradients with central finite differences.

    ``loss_fn()`` must rebuild the graph from ``params`` and return a scalar
    Tensor.  Returns the max relative error over checked entries, with
    denominator max(|analytic|, |numeric|, 1e-8).  Frozen entries are
    skipped.  When ``max_entries`` is set, at most that many entries per
    parameter are sampled (seeded), keeping the check tractable for large
    convolution kernels.
    """
    zero_grad(params)
    loss = loss_fn()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        frozen = p.frozen_mask.reshape(-1)
        an_flat = an.reshape(-1)
        idx = np.arange(flat.size)[~frozen]
        if max_entries is not None and idx.size > max_entries:
            idx = rng.choice(idx, size=max_entries, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(loss_fn().data)
            flat[i] = orig - eps
            lo = float(loss_fn().data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            denom = max(abs(an_flat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(an_flat[i] - numeric) / denom)
    return worst
