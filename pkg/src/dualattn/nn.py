"""Parameter registry, initialisers and the small layers the networks share."""

import math

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


class ParamStore:
    """Named parameters keyed by dotted path, iterated in sorted path order.

    Tensors are never mutated in place; the optimiser builds a new store.
    """

    def __init__(self, tensors=None, trainable=None):
        self._tensors = dict(tensors or {})
        self._trainable = dict(trainable or {p: True for p in self._tensors})

    def register(self, path, value, trainable=True):
        if path in self._tensors:
            raise KeyError(f"parameter {path!r} registered twice")
        self._tensors[path] = value if isinstance(value, Tensor) else Tensor(value)
        self._trainable[path] = trainable
        return self._tensors[path]

    def __getitem__(self, path):
        return self._tensors[path]

    def __contains__(self, path):
        return path in self._tensors

    def __len__(self):
        return len(self._tensors)

    def __iter__(self):
        return iter(self.paths())

    def paths(self, prefix=""):
        return sorted(p for p in self._tensors if p.startswith(prefix))

    def items(self, prefix=""):
        return [(p, self._tensors[p]) for p in self.paths(prefix)]

    def is_trainable(self, path):
        return self._trainable[path]

    def count(self, prefix=""):
        """Total number of scalar parameters under ``prefix``."""
        return int(np.sum([self._tensors[p].size for p in self.paths(prefix)], dtype=np.int64))

    def scope(self, prefix):
        return Scope(self, prefix)

    def arrays(self):
        return {p: self._tensors[p].data for p in self.paths()}

    def replace(self, arrays):
        """New store with the given paths swapped for fresh constant tensors."""
        tensors = dict(self._tensors)
        for path, arr in arrays.items():
            if path not in tensors:
                raise KeyError(f"unknown parameter {path!r}")
            tensors[path] = Tensor(arr)
        return ParamStore(tensors, self._trainable)

    def with_grad(self, prefixes):
        """Copy whose trainable params under ``prefixes`` are fresh grad leaves.

        Returns ``(store, leaves)`` where ``leaves`` maps path to leaf tensor.
        Everything else is a constant, so it does not enter the tape.
        """
        if isinstance(prefixes, str):
            prefixes = (prefixes,)
        tensors = {}
        leaves = {}
        for path in self.paths():
            data = self._tensors[path].data
            if self._trainable[path] and any(path.startswith(p) for p in prefixes):
                leaf = Tensor(data, requires_grad=True)
                leaves[path] = leaf
                tensors[path] = leaf
            else:
                tensors[path] = Tensor(data)
        return ParamStore(tensors, self._trainable), leaves

    def frozen(self):
        return self.with_grad(())[0]


class Scope:
    """View of a :class:`ParamStore` under a path prefix."""

    __slots__ = ("store", "prefix")

    def __init__(self, store, prefix):
        self.store = store
        self.prefix = prefix

    def __getitem__(self, name):
        return self.store[f"{self.prefix}.{name}"]

    def __contains__(self, name):
        return f"{self.prefix}.{name}" in self.store

    def scope(self, name):
        return Scope(self.store, f"{self.prefix}.{name}")

    def register(self, name, value, trainable=True):
        return self.store.register(f"{self.prefix}.{name}", value, trainable)


def init_param(shape, scheme, rng=None, fan_in=None):
    """Fresh parameter array.

    ``scaled-uniform`` draws from U(-b, b) with ``b = sqrt(6 / fan_in)``; the
    fan-in defaults to the product of all but the leading axis.
    """
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape):
        raise ValueError(f"init_param: invalid shape {shape}")
    if scheme == "zeros":
        return np.zeros(shape)
    if scheme == "ones":
        return np.ones(shape)
    if scheme == "scaled-uniform":
        if rng is None:
            raise ValueError("init_param: scaled-uniform needs a seeded generator")
        if fan_in is None:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
        bound = math.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)
    raise ValueError(f"init_param: unknown scheme {scheme!r}")


# ---------------------------------------------------------------------------
# pooling


def _check_rank4(op, h):
    if h.ndim != 4:
        raise ShapeError(f"{op}: expected (N, C, H, W), got shape {h.shape}")


def global_pool_channels(h, mode):
    """Per-channel mean or max over all spatial sites: (N, C, H, W) -> (N, C, 1, 1)."""
    _check_rank4("global_pool_channels", h)
    if mode == "avg":
        return T.mean(h, (2, 3), keepdims=True)
    if mode == "max":
        return T.amax(h, (2, 3), keepdims=True)
    raise ValueError(f"global_pool_channels: unknown mode {mode!r}")


def spatial_pool(h, mode):
    """Per-pixel mean or max across channels: (N, C, H, W) -> (N, 1, H, W)."""
    _check_rank4("spatial_pool", h)
    if mode == "avg":
        return T.mean(h, 1, keepdims=True)
    if mode == "max":
        return T.amax(h, 1, keepdims=True)
    raise ValueError(f"spatial_pool: unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# layers


def linear(x, w, b=None):
    """``x @ w.T + b`` for ``x`` of shape (N, in) and ``w`` of shape (out, in)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    out = T.matmul(x, T.transpose(w, (1, 0)))
    if b is not None:
        out = out + b
    return out


def conv1x1(x, w, b=None):
    """Pointwise channel mixing of ``x`` (N, C, H, W) by ``w`` (O, C)."""
    if x.ndim != 4 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1x1: input {x.shape} does not match weight {w.shape}")
    n, c, h, wd = x.shape
    out = T.matmul(w, T.reshape(x, (n, c, h * wd)))
    out = T.reshape(out, (n, w.shape[0], h, wd))
    if b is not None:
        out = out + T.reshape(b, (1, w.shape[0], 1, 1))
    return out


def conv3x3(x, w, b=None, stride=1):
    return T.conv2d(x, w, b, stride=stride, pad=1)


def one_hot(ids, depth):
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= depth):
        raise ValueError(f"token id out of range [0, {depth})")
    out = np.zeros(ids.shape + (depth,))
    np.put_along_axis(out, ids[..., None], 1.0, axis=-1)
    return out


# ---------------------------------------------------------------------------
# recurrent cells


def init_gated_cell(scope, input_dim, hidden, rng):
    for gate in ("z", "h"):
        scope.register(f"w_{gate}", init_param((hidden, input_dim), "scaled-uniform", rng))
        scope.register(f"u_{gate}", init_param((hidden, hidden), "scaled-uniform", rng))
        scope.register(f"b_{gate}", init_param((hidden,), "zeros"))


def recurrent_cell_step(state, x, params):
    """One step of the minimal gated cell (one update gate, one candidate).

    ``z = sigmoid(W_z x + U_z h + b_z)``, ``c = tanh(W_h x + U_h h + b_h)``,
    ``h' = (1 - z) h + z c``.  Starting from a bounded state the output stays
    inside (-1, 1).
    """
    hidden = params["u_z"].shape[0]
    if state.ndim != 2 or state.shape[1] != hidden:
        raise ShapeError(f"recurrent_cell_step: state {state.shape} vs hidden size {hidden}")
    if x.ndim != 2 or x.shape[1] != params["w_z"].shape[1]:
        raise ShapeError(f"recurrent_cell_step: input {x.shape} vs weight "
                         f"{params['w_z'].shape}")
    z = T.sigmoid(linear(x, params["w_z"]) + linear(state, params["u_z"]) + params["b_z"])
    cand = T.tanh(linear(x, params["w_h"]) + linear(state, params["u_h"]) + params["b_h"])
    return state + z * (cand - state)


def init_lstm_cell(scope, input_dim, hidden, rng):
    for gate in ("i", "f", "o", "g"):
        scope.register(f"w_{gate}", init_param((hidden, input_dim), "scaled-uniform", rng))
        scope.register(f"u_{gate}", init_param((hidden, hidden), "scaled-uniform", rng))
        scope.register(f"b_{gate}", init_param((hidden,), "zeros"))


def lstm_cell_step(state, x, params):
    """Standard LSTM step; ``state`` is the pair ``(h, c)``."""
    h, c = state
    if x.ndim != 2 or x.shape[1] != params["w_i"].shape[1]:
        raise ShapeError(f"lstm_cell_step: input {x.shape} vs weight {params['w_i'].shape}")

    def pre(g):
        return linear(x, params[f"w_{g}"]) + linear(h, params[f"u_{g}"]) + params[f"b_{g}"]

    i, f, o = T.sigmoid(pre("i")), T.sigmoid(pre("f")), T.sigmoid(pre("o"))
    c = f * c + i * T.tanh(pre("g"))
    return o * T.tanh(c), c
