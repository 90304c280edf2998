"""Float64 tensors with reverse-mode autodiff, including gradients of gradients.

Every differentiable result carries a :class:`Node` naming the primitive that
produced it, its input tensors and the attributes needed by the backward rule.
The nodes reachable from a root form its tape; :func:`backward` replays it in
reverse topological order.

Backward rules are written with the same tensor primitives as the forward
pass.  With ``create_graph=False`` they run on detached inputs, so nothing is
recorded.  With ``create_graph=True`` they run on the live tensors and the
returned gradients are themselves differentiable, which is what a gradient
penalty needs.
"""

import warnings

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when a primitive receives operands of incompatible shape."""


class NonFiniteError(FloatingPointError):
    """Raised by :func:`check_finite` when NaN or Inf values are found."""


class GradientWarning(UserWarning):
    """Emitted when a requested gradient target is not reachable from the root."""


def _as_array(data):
    arr = np.asarray(data, dtype=np.float64)
    if arr.dtype != np.float64:
        arr = arr.astype(np.float64)
    return arr


class Node:
    """One tape entry: the primitive, its inputs and saved attributes."""

    __slots__ = ("op", "inputs", "attrs")

    def __init__(self, op, inputs, attrs):
        self.op = op
        self.inputs = inputs
        self.attrs = attrs


class Tensor:
    __slots__ = ("data", "requires_grad", "node")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, node=None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # operator sugar
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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = shape[0]
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = axes[0]
        return transpose(self, axes or None)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def constant(data):
    return data if isinstance(data, Tensor) else Tensor(data)


def check_finite(t, name="tensor"):
    """Validation hook: raise :class:`NonFiniteError` if ``t`` holds NaN/Inf."""
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if not np.all(np.isfinite(data)):
        bad = int(np.size(data) - np.count_nonzero(np.isfinite(data)))
        raise NonFiniteError(f"{name}: {bad} non-finite value(s) in shape {np.shape(data)}")
    return t


def _make(op, inputs, data, attrs=None):
    needs = False
    for t in inputs:
        if t.requires_grad:
            needs = True
            break
    if needs:
        return Tensor(data, True, Node(op, inputs, attrs))
    return Tensor(data)


def _norm_axes(axis, ndim, op):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for a in axis:
        if not -ndim <= a < ndim:
            raise ShapeError(f"{op}: axis {a} out of range for rank {ndim}")
        out.append(a % ndim)
    return tuple(sorted(set(out)))


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = constant(a), constant(b)
    _broadcast_shape("add", a, b)
    return _make("add", (a, b), a.data + b.data)


def sub(a, b):
    a, b = constant(a), constant(b)
    _broadcast_shape("sub", a, b)
    return _make("sub", (a, b), a.data - b.data)


def mul(a, b):
    a, b = constant(a), constant(b)
    _broadcast_shape("mul", a, b)
    return _make("mul", (a, b), a.data * b.data)


def div(a, b):
    a, b = constant(a), constant(b)
    _broadcast_shape("div", a, b)
    return _make("div", (a, b), a.data / b.data)


def neg(a):
    return _make("neg", (a,), -a.data)


def exp(a):
    return _make("exp", (a,), np.exp(a.data))


def log(a):
    return _make("log", (a,), np.log(a.data))


def tanh(a):
    return _make("tanh", (a,), np.tanh(a.data))


def relu(a):
    return _make("relu", (a,), np.maximum(a.data, 0.0))


def leaky_relu(a, slope=0.2):
    return _make("leaky_relu", (a,), np.where(a.data > 0, a.data, slope * a.data), slope)


def absolute(a):
    return _make("abs", (a,), np.abs(a.data))


def power(a, p):
    """``a ** p`` for a constant real exponent ``p``."""
    p = float(p)
    return _make("pow", (a,), a.data ** p, p)


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    axes = _norm_axes(axis, a.ndim, "sum")
    return _make("sum", (a,), a.data.sum(axis=axes, keepdims=keepdims), (axes, keepdims))


def mean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim, "mean")
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return sum(a, axes, keepdims) * (1.0 / count)


def _first_max_mask(x, axes):
    """One-hot mask of the first maximal element (row-major) over ``axes``."""
    keep = [i for i in range(x.ndim) if i not in axes]
    moved = np.transpose(x, keep + list(axes))
    lead = moved.shape[:len(keep)]
    flat = moved.reshape(lead + (-1,))
    idx = np.argmax(flat, axis=-1)
    mask = np.zeros_like(flat)
    np.put_along_axis(mask, idx[..., None], 1.0, axis=-1)
    mask = mask.reshape(moved.shape)
    inv = np.argsort(keep + list(axes))
    return np.transpose(mask, inv)


def amax(a, axis=None, keepdims=False):
    """Max over ``axis``; the subgradient goes to the first maximal element."""
    axes = _norm_axes(axis, a.ndim, "max")
    mask = _first_max_mask(a.data, axes)
    return _make("max", (a,), a.data.max(axis=axes, keepdims=keepdims), (axes, keepdims, mask))


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _make("reshape", (a,), data)


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: bad permutation {axes} for rank {a.ndim}")
    return _make("transpose", (a,), np.ascontiguousarray(a.data.transpose(axes)), axes)


def swap_last(a):
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def broadcast_to(a, shape):
    shape = tuple(shape)
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {a.shape} to {shape}") from None
    return _make("broadcast", (a,), data)


def _sum_to_array(x, shape):
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1)
    out = x.sum(axis=axes, keepdims=True) if axes else x
    return out.reshape(shape)


def sum_to(a, shape):
    """Sum ``a`` down to ``shape`` (the adjoint of broadcasting)."""
    shape = tuple(shape)
    if a.shape == shape:
        return a
    return _make("sum_to", (a,), _sum_to_array(a.data, shape))


def concat(tensors, axis=0):
    tensors = [constant(t) for t in tensors]
    ndim = tensors[0].ndim
    (ax,) = _norm_axes(axis, ndim, "concat")
    for t in tensors[1:]:
        if t.ndim != ndim or any(
                t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError(
                f"concat: shapes {[x.shape for x in tensors]} differ off axis {ax}")
    sizes = tuple(t.shape[ax] for t in tensors)
    return _make("concat", tuple(tensors), np.concatenate([t.data for t in tensors], axis=ax),
                 (ax, sizes))


def getitem(a, index):
    """Basic (slice/int) indexing; the backward scatters into zeros."""
    return _make("getitem", (a,), np.array(a.data[index]), index)


def _scatter(g, index, shape):
    return _make("scatter", (g,), _scatter_array(g.data, index, shape), (index, shape))


def _scatter_array(g, index, shape):
    out = np.zeros(shape)
    out[index] = g
    return out


# ---------------------------------------------------------------------------
# linear algebra and image ops


def matmul(a, b):
    a, b = constant(a), constant(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} differ") from None
    return _make("matmul", (a, b), np.matmul(a.data, b.data))


def im2col(x, k, stride=1, pad=0):
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be (N, C, H, W), got {x.shape}")
    h, w = x.shape[2], x.shape[3]
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {x.shape}")
    return _make("im2col", (x,), kernels.im2col(x.data, k, k, stride, pad),
                 (x.shape, k, stride, pad))


def col2im(cols, shape, k, stride=1, pad=0):
    return _make("col2im", (cols,), kernels.col2im(cols.data, shape, k, k, stride, pad),
                 (shape, k, stride, pad))


def conv2d(x, w, b=None, stride=1, pad=0):
    """Cross-correlation of ``x`` (N, C, H, W) with ``w`` (O, C, k, k)."""
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: kernel must be (O, C, k, k), got {w.shape}")
    if x.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} does not match kernel {w.shape}")
    n, _, h, wd = x.shape
    o, c, k, _ = w.shape
    ho = kernels.out_size(h, k, stride, pad)
    wo = kernels.out_size(wd, k, stride, pad)
    cols = im2col(x, k, stride, pad)
    out = matmul(reshape(w, (o, c * k * k)), cols)
    out = transpose(reshape(out, (o, n, ho, wo)), (1, 0, 2, 3))
    if b is not None:
        out = out + reshape(b, (1, o, 1, 1))
    return out


def upsample2x(x):
    if x.ndim != 4:
        raise ShapeError(f"upsample: input must be (N, C, H, W), got {x.shape}")
    return _make("upsample2x", (x,), kernels.upsample2x(x.data))


def sumpool2x(x):
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"sumpool: input must be (N, C, 2H, 2W), got {x.shape}")
    return _make("sumpool2x", (x,), kernels.sumpool2x(x.data))


def l2norm(x, naxes):
    """Euclidean norm over the trailing ``naxes`` axes."""
    if not 1 <= naxes <= x.ndim:
        raise ShapeError(f"l2norm: cannot reduce {naxes} trailing axes of {x.shape}")
    axes = tuple(range(x.ndim - naxes, x.ndim))
    return _make("l2norm", (x,), np.sqrt((x.data * x.data).sum(axis=axes)), axes)


# ---------------------------------------------------------------------------
# composites


def softmax(x, axis=-1):
    (ax,) = _norm_axes(axis, x.ndim, "softmax")
    shift = Tensor(x.data.max(axis=ax, keepdims=True))
    e = exp(x - shift)
    return e / sum(e, ax, keepdims=True)


def sigmoid(x):
    return tanh(x * 0.5) * 0.5 + 0.5


# ---------------------------------------------------------------------------
# backward rules: (grad_out, out, inputs, attrs) -> tuple of input grads


def _bw_add(g, out, ins, attrs, needs):
    a, b = ins
    return sum_to(g, a.shape), sum_to(g, b.shape)


def _bw_sub(g, out, ins, attrs, needs):
    a, b = ins
    return sum_to(g, a.shape), neg(sum_to(g, b.shape))


def _bw_mul(g, out, ins, attrs, needs):
    a, b = ins
    ga = sum_to(mul(g, b), a.shape) if needs[0] else None
    gb = sum_to(mul(g, a), b.shape) if needs[1] else None
    return ga, gb


def _bw_div(g, out, ins, attrs, needs):
    a, b = ins
    ga = sum_to(div(g, b), a.shape) if needs[0] else None
    gb = sum_to(neg(div(mul(g, out), b)), b.shape) if needs[1] else None
    return ga, gb


def _bw_neg(g, out, ins, attrs, needs):
    return (neg(g),)


def _bw_exp(g, out, ins, attrs, needs):
    return (mul(g, out),)


def _bw_log(g, out, ins, attrs, needs):
    return (div(g, ins[0]),)


def _bw_tanh(g, out, ins, attrs, needs):
    return (mul(g, sub(1.0, mul(out, out))),)


def _bw_relu(g, out, ins, attrs, needs):
    return (mul(g, Tensor((ins[0].data > 0).astype(np.float64))),)


def _bw_leaky_relu(g, out, ins, attrs, needs):
    return (mul(g, Tensor(np.where(ins[0].data > 0, 1.0, attrs))),)


def _bw_abs(g, out, ins, attrs, needs):
    return (mul(g, Tensor(np.sign(ins[0].data))),)


def _bw_pow(g, out, ins, attrs, needs):
    p = attrs
    if p == 1.0:
        return (g,)
    return (mul(g, mul(p, power(ins[0], p - 1.0))),)


def _expand_reduced(g, shape, axes, keepdims):
    if not keepdims:
        kshape = tuple(1 if i in axes else s for i, s in enumerate(shape))
        g = reshape(g, kshape)
    return broadcast_to(g, shape)


def _bw_sum(g, out, ins, attrs, needs):
    axes, keepdims = attrs
    return (_expand_reduced(g, ins[0].shape, axes, keepdims),)


def _bw_max(g, out, ins, attrs, needs):
    axes, keepdims, mask = attrs
    return (mul(_expand_reduced(g, ins[0].shape, axes, keepdims), Tensor(mask)),)


def _bw_reshape(g, out, ins, attrs, needs):
    return (reshape(g, ins[0].shape),)


def _bw_transpose(g, out, ins, attrs, needs):
    return (transpose(g, tuple(np.argsort(attrs))),)


def _bw_broadcast(g, out, ins, attrs, needs):
    return (sum_to(g, ins[0].shape),)


def _bw_sum_to(g, out, ins, attrs, needs):
    return (broadcast_to(g, ins[0].shape),)


def _bw_concat(g, out, ins, attrs, needs):
    ax, sizes = attrs
    grads = []
    start = 0
    for size in sizes:
        index = (slice(None),) * ax + (slice(start, start + size),)
        grads.append(getitem(g, index))
        start += size
    return tuple(grads)


def _bw_getitem(g, out, ins, attrs, needs):
    return (_scatter(g, attrs, ins[0].shape),)


def _bw_scatter(g, out, ins, attrs, needs):
    index, _ = attrs
    return (getitem(g, index),)


def _bw_matmul(g, out, ins, attrs, needs):
    a, b = ins
    ga = sum_to(matmul(g, swap_last(b)), a.shape) if needs[0] else None
    gb = sum_to(matmul(swap_last(a), g), b.shape) if needs[1] else None
    return ga, gb


def _bw_im2col(g, out, ins, attrs, needs):
    shape, k, stride, pad = attrs
    return (col2im(g, shape, k, stride, pad),)


def _bw_col2im(g, out, ins, attrs, needs):
    _, k, stride, pad = attrs
    return (im2col(g, k, stride, pad),)


def _bw_upsample2x(g, out, ins, attrs, needs):
    return (sumpool2x(g),)


def _bw_sumpool2x(g, out, ins, attrs, needs):
    return (upsample2x(g),)


def _bw_l2norm(g, out, ins, attrs, needs):
    (x,) = ins
    axes = attrs
    kshape = out.shape + (1,) * len(axes)
    # zero norm: x is zero there too, so any finite divisor gives the zero subgradient
    safe = add(reshape(out, kshape), Tensor((out.data == 0).astype(np.float64).reshape(kshape)))
    return (mul(x, div(reshape(g, kshape), safe)),)


BACKWARD = {
    "add": _bw_add, "sub": _bw_sub, "mul": _bw_mul, "div": _bw_div, "neg": _bw_neg,
    "exp": _bw_exp, "log": _bw_log, "tanh": _bw_tanh, "relu": _bw_relu,
    "leaky_relu": _bw_leaky_relu, "abs": _bw_abs, "pow": _bw_pow, "sum": _bw_sum,
    "max": _bw_max, "reshape": _bw_reshape, "transpose": _bw_transpose,
    "broadcast": _bw_broadcast, "sum_to": _bw_sum_to, "concat": _bw_concat,
    "getitem": _bw_getitem, "scatter": _bw_scatter, "matmul": _bw_matmul,
    "im2col": _bw_im2col, "col2im": _bw_col2im, "upsample2x": _bw_upsample2x,
    "sumpool2x": _bw_sumpool2x, "l2norm": _bw_l2norm,
}


# ---------------------------------------------------------------------------
# tape traversal


def tape(root):
    """Topologically ordered list of recorded tensors reachable from ``root``."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for x in t.node.inputs:
                if x.requires_grad and id(x) not in seen:
                    stack.append((x, False))
    return order


def backward(root, wrt, create_graph=False):
    """Gradients of scalar ``root`` with respect to each tensor in ``wrt``.

    Targets that ``root`` does not depend on receive zeros and trigger a
    :class:`GradientWarning`.  With ``create_graph`` the returned tensors are
    recorded and can be differentiated again.
    """
    if root.size != 1:
        raise ShapeError(f"backward: root must be a scalar, got shape {root.shape}")
    wrt = list(wrt)
    wanted = {id(w) for w in wrt}
    found = {}
    order = tape(root) if root.requires_grad else []
    grads = {id(root): Tensor(np.ones_like(root.data))} if order else {}

    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if id(t) in wanted:
            found[id(t)] = g
        node = t.node
        if node is None:
            continue
        needs = tuple(x.requires_grad for x in node.inputs)
        if create_graph:
            ins, out = node.inputs, t
        else:
            ins = tuple(Tensor(x.data) for x in node.inputs)
            out = Tensor(t.data)
        in_grads = BACKWARD[node.op](g, out, ins, node.attrs, needs)
        for x, gx in zip(node.inputs, in_grads):
            if gx is None or not x.requires_grad:
                continue
            key = id(x)
            prev = grads.get(key)
            grads[key] = gx if prev is None else add(prev, gx)

    result = []
    missing = []
    for w in wrt:
        g = found.get(id(w))
        if g is None:
            missing.append(w)
            g = Tensor(np.zeros_like(w.data))
        elif not create_graph and g.requires_grad:
            g = Tensor(g.data)
        result.append(g)
    if missing:
        warnings.warn(f"backward: {len(missing)} target(s) not on the tape of root; "
                      "returning zero gradients", GradientWarning, stacklevel=2)
    return result


def grad(f, x, create_graph=False):
    """Convenience: gradient of scalar ``f(x)`` with respect to a fresh leaf."""
    leaf = Tensor(x.data if isinstance(x, Tensor) else x, requires_grad=True)
    (g,) = backward(f(leaf), [leaf], create_graph=create_graph)
    return g


def finite_diff_grad(f, x, step=1e-5):
    """Central-difference gradient of scalar-valued ``f`` at ``x``."""
    if step <= 0:
        raise ValueError("finite_diff_grad: step must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    flat = base.reshape(-1)
    out = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = _scalar_value(f(Tensor(base.copy())))
        flat[i] = orig - step
        fm = _scalar_value(f(Tensor(base.copy())))
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * step)
    return Tensor(out.reshape(base.shape))


def _scalar_value(v):
    data = v.data if isinstance(v, Tensor) else np.asarray(v)
    if np.size(data) != 1:
        raise ShapeError(f"finite_diff_grad: function must return a scalar, got shape "
                         f"{np.shape(data)}")
    return float(np.reshape(data, -1)[0])


def rel_error(analytic, numeric):
    """Largest absolute deviation divided by the largest magnitude of either side.

    Scaling by the overall magnitude keeps near-zero entries from dominating;
    the 1e-8 floor makes two all-zero gradients compare equal.
    """
    a = analytic.data if isinstance(analytic, Tensor) else np.asarray(analytic)
    b = numeric.data if isinstance(numeric, Tensor) else np.asarray(numeric)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), 1e-8)
    return float(np.max(np.abs(a - b), initial=0.0) / scale)
