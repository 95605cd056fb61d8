"""Dense float64 tensors with reverse-mode autodiff, plus MLP building blocks.

Every operation records its inputs and a closure that maps the output
adjoint to input adjoints. ``Tensor.backward`` orders the recorded graph
topologically and replays the closures in reverse.
"""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .exceptions import ClassIndexError, DimensionError

LOG_EPS = 1e-12


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Backpropagate from this tensor. Scalars default to a unit seed."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(
                    f"backward() without a seed needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.broadcast_to(grad, self.shape))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # arithmetic -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mul(tsum(self), 1.0 / self.data.size)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, True, tuple(parents), backward)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _node(out_data, (a, b), backward)


def neg(a):
    def backward(g):
        a._accumulate(-g)

    return _node(-a.data, (a,), backward)


def mul(a, b):
    """Elementwise product; ``b`` may be a Tensor, array or scalar."""
    a = _as_tensor(a)
    if not isinstance(b, Tensor):
        const = np.asarray(b, dtype=np.float64)

        def backward_const(g):
            a._accumulate(_unbroadcast(g * const, a.shape))

        return _node(a.data * const, (a,), backward_const)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), backward)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _node(a.data @ b.data, (a, b), backward)


def relu(a):
    a = _as_tensor(a)
    active = a.data > 0

    def backward(g):
        a._accumulate(g * active)

    return _node(np.where(active, a.data, 0.0), (a,), backward)


def tsum(a):
    def backward(g):
        a._accumulate(np.broadcast_to(g, a.shape))

    return _node(np.sum(a.data), (a,), backward)


def take(a, key):
    """Basic or fancy indexing; gradients scatter back into the source."""
    out = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        if isinstance(key, slice):
            full[key] = g
        else:
            np.add.at(full, key, g)
        a._accumulate(full)

    return _node(out, (a,), backward)


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"cannot concatenate shapes {shapes}") from exc
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _node(out, tuple(tensors), backward)


def softmax(logits):
    """Softmax over the last axis, max-shifted for stability."""
    logits = _as_tensor(logits)
    if not np.all(np.isfinite(logits.data)):
        raise FloatingPointError("softmax received non-finite logits")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        logits._accumulate(p * (g - (g * p).sum(axis=-1, keepdims=True)))

    return _node(p, (logits,), backward)


def _target_matrix(target, n_rows, k):
    t = np.asarray(target)
    if t.ndim >= 1 and t.shape[-1] == k and np.issubdtype(t.dtype, np.floating):
        return np.broadcast_to(t.astype(np.float64), (n_rows, k)) if t.ndim == 1 else t
    idx = t.astype(np.int64).reshape(-1)
    if idx.size != n_rows:
        raise DimensionError(f"{idx.size} hard targets for {n_rows} rows")
    bad = (idx < 0) | (idx >= k)
    if bad.any():
        raise ClassIndexError(f"class index {int(idx[bad][0])} outside [0, {k})")
    onehot = np.zeros((n_rows, k))
    onehot[np.arange(n_rows), idx] = 1.0
    return onehot


def cross_entropy(target, probs, reduction="mean"):
    """``-sum_k target_k * ln(probs_k + 1e-12)`` per row.

    ``target`` is either integer class indices or float distributions of the
    same width as ``probs``. ``reduction`` is ``"mean"``, ``"sum"`` or
    ``"none"`` (per-row losses). A 1-D ``probs`` is treated as a single row
    and returns a scalar for any reduction.
    """
    probs = _as_tensor(probs)
    single = probs.data.ndim == 1
    p = probs.data.reshape(1, -1) if single else probs.data
    n, k = p.shape
    tgt = _target_matrix(target, n, k)
    per_row = -(tgt * np.log(p + LOG_EPS)).sum(axis=1)
    grad_p = -tgt / (p + LOG_EPS)

    if single or reduction == "mean":
        scale = 1.0 / n
        out = per_row.sum() * scale
    elif reduction == "sum":
        scale = 1.0
        out = per_row.sum()
    elif reduction == "none":
        scale = None
        out = per_row
    else:
        raise ValueError(f"unknown reduction {reduction!r}")

    def backward(g):
        if scale is None:
            gp = grad_p * g[:, None]
        else:
            gp = grad_p * (g * scale)
        probs._accumulate(gp.reshape(probs.shape))

    return _node(out, (probs,), backward)


# layers ---------------------------------------------------------------


def glorot_uniform(fan_in, fan_out, rng):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Module:
    """Owns named parameters and child modules, registered in attribute order."""

    def __init__(self):
        self._params = OrderedDict()
        self._children = OrderedDict()

    def add_param(self, name, value):
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def add_child(self, name, module):
        self._children[name] = module
        return module

    def named_parameters(self, prefix=""):
        out = OrderedDict()
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, child in self._children.items():
            out.update(child.named_parameters(prefix + name + "."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def num_parameters(self):
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return OrderedDict((k, v.data.copy()) for k, v in self.named_parameters().items())

    def load_state_dict(self, state):
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch; missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {value.shape} != {p.shape}")
            p.data = value.copy()


class Linear(Module):
    def __init__(self, fan_in, fan_out, rng):
        super().__init__()
        self.fan_in, self.fan_out = fan_in, fan_out
        self.weight = self.add_param("weight", glorot_uniform(fan_in, fan_out, rng))
        self.bias = self.add_param("bias", np.zeros(fan_out))

    def __call__(self, x):
        x = _as_tensor(x)
        if x.shape[-1] != self.fan_in:
            raise DimensionError(f"Linear expects width {self.fan_in}, got input shape {x.shape}")
        return matmul(x, self.weight) + self.bias


class MLP(Module):
    """Affine layers with ReLU between them.

    ``sizes`` lists every width from input to output. With
    ``final_activation=True`` a ReLU is also applied after the last layer,
    which is how encoders producing features are built.
    """

    def __init__(self, sizes, rng, final_activation=False):
        super().__init__()
        if len(sizes) < 2:
            raise ValueError("MLP needs at least an input and an output width")
        self.sizes = tuple(int(s) for s in sizes)
        self.final_activation = final_activation
        self.layers = [
            self.add_child(str(i), Linear(a, b, rng))
            for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:]))
        ]

    @property
    def in_features(self):
        return self.sizes[0]

    @property
    def out_features(self):
        return self.sizes[-1]

    def __call__(self, x):
        return mlp_forward(self, x)


def mlp_forward(model, x):
    x = _as_tensor(x)
    if x.shape[-1] != model.in_features:
        raise DimensionError(
            f"input width {x.shape[-1]} does not match first layer width {model.in_features}"
        )
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        x = layer(x)
        if i < last or model.final_activation:
            x = relu(x)
    return x


# checkpoints ----------------------------------------------------------


def save_checkpoint(path, state, **extra):
    """Write named float64 arrays to an ``.npz`` archive.

    Keys are the dotted parameter names from ``Module.state_dict``; each
    array keeps its shape. Optional ``extra`` arrays (optimizer moments,
    counters) are stored under ``__extra__.<name>``.
    """
    arrays = {f"param.{k}": np.asarray(v, dtype=np.float64) for k, v in state.items()}
    for k, v in extra.items():
        arrays[f"__extra__.{k}"] = np.asarray(v)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Return ``(state, extra)`` dictionaries from :func:`save_checkpoint` output."""
    state, extra = OrderedDict(), {}
    with np.load(path, allow_pickle=False) as npz:
        for key in npz.files:
            if key.startswith("param."):
                state[key[len("param."):]] = npz[key]
            elif key.startswith("__extra__."):
                extra[key[len("__extra__."):]] = npz[key]
    return state, extra
