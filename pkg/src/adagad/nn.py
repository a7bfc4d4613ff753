"""Small dense-tensor autograd engine and the layers the two training stages use.

Everything here is built on numpy (plus scipy.sparse for the normalized
adjacency product). Tensors are at most 2-D.
"""
from __future__ import annotations

import hashlib
import json
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import scipy.sparse as sp

# Working float type. Gradient checks need float64; large graphs can run in float32.
DEFAULT_DTYPE = np.float64

# Set to False to skip per-op finiteness checks (faster, less safe).
CHECK_FINITE = True


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "frozen", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None, _op="leaf"):
        self.data = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self.frozen = False
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Reverse-mode sweep from this tensor; accumulates into ``.grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar tensor")
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
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


@contextmanager
def precision(dtype):
    """Temporarily switch the working float type ('float32' or 'float64')."""
    global DEFAULT_DTYPE
    new = np.dtype(dtype).type
    if new not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype!r}")
    old, DEFAULT_DTYPE = DEFAULT_DTYPE, new
    try:
        yield
    finally:
        DEFAULT_DTYPE = old


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def input_matrix(x, max_density: float = 0.1):
    """Attribute matrix in the working dtype, as CSR when mostly zeros.

    Sparse inputs are constants: matmul and dropout accept them and the
    first layer then costs O(nnz) instead of O(n·d).
    """
    x = np.asarray(x)
    if x.size and np.count_nonzero(x) <= max_density * x.size:
        return sp.csr_matrix(x, dtype=DEFAULT_DTYPE)
    return np.asarray(x, dtype=DEFAULT_DTYPE)


def _make(data, parents, backward, op):
    # a sum is non-finite whenever any summand is, and is much cheaper than isfinite
    if CHECK_FINITE and not np.isfinite(np.sum(data)) and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by op '{op}'")
    rg = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=rg, _parents=parents if rg else (), _backward=backward if rg else None, _op=op)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ----------------------------------------------------------------------------
# elementwise / linear algebra ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), bw, "div")


def matmul(a, b):
    if sp.issparse(a):
        b = as_tensor(b)
        at = a.T.tocsr()

        def sbw(g):
            return (np.asarray(at @ g),)

        return _make(np.asarray(a @ b.data), (b,), sbw, "matmul")
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return (g @ b.data.T if a.requires_grad else None, a.data.T @ g if b.requires_grad else None)

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def transpose(a):
    def bw(g):
        return (g.T,)

    return _make(a.data.T, (a,), bw, "transpose")


def spmm(matrix: sp.spmatrix, x):
    """Constant sparse matrix times a dense tensor."""
    x = as_tensor(x)
    mt = matrix.T.tocsr()

    def bw(g):
        return (np.asarray(mt @ g),)

    return _make(np.asarray(matrix @ x.data), (x,), bw, "spmm")


def reduce_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "sum")


def square(a):
    def bw(g):
        return (2.0 * a.data * g,)

    return _make(a.data * a.data, (a,), bw, "square")


def exp(a):
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return _make(out, (a,), bw, "exp")


def log(a):
    def bw(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), bw, "log")


def power(a, exponent: float):
    out = np.power(a.data, exponent)

    def bw(g):
        return (g * exponent * np.power(a.data, exponent - 1.0),)

    return _make(out, (a,), bw, "power")


def clamp_min(a, floor: float):
    mask = a.data > floor

    def bw(g):
        return (g * mask,)

    return _make(np.where(mask, a.data, floor), (a,), bw, "clamp_min")


def relu(a):
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return _make(a.data * mask, (a,), bw, "relu")


def leaky_relu(a, negative_slope=0.2):
    slope = np.where(a.data > 0, 1.0, negative_slope)

    def bw(g):
        return (g * slope,)

    return _make(a.data * slope, (a,), bw, "leaky_relu")


def _logistic_(x):
    """In-place logistic via 0.5·(1 + tanh(x/2)); several times faster than expit."""
    x *= 0.5
    np.tanh(x, out=x)
    x *= 0.5
    x += 0.5
    return x


def sigmoid(a):
    out = _logistic_(np.array(a.data, dtype=DEFAULT_DTYPE))

    def bw(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), bw, "sigmoid")


def row_norm(a):
    """Euclidean norm of every row; returns an (n, 1) tensor.

    The gradient at an exactly-zero row is taken as zero.
    """
    norms = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))

    def bw(g):
        safe = np.where(norms > 0, norms, 1.0)
        return (np.where(norms > 0, g * a.data / safe, 0.0),)

    return _make(norms, (a,), bw, "row_norm")


def gather_rows(a, index: np.ndarray):
    n = a.shape[0]

    def bw(g):
        out = np.zeros((n,) + g.shape[1:], dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), bw, "gather_rows")


def scatter_add_rows(a, index: np.ndarray, n: int):
    out = np.zeros((n,) + a.shape[1:], dtype=a.data.dtype)
    np.add.at(out, index, a.data)

    def bw(g):
        return (g[index],)

    return _make(out, (a,), bw, "scatter_add_rows")


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool):
    """Inverted dropout. Identity when not training or when rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if sp.issparse(x):
        if not training or rate == 0.0:
            return x
        # zeros stay zero, so only stored entries need a draw
        out = x.copy()
        out.data *= (rng.random(out.nnz, dtype=np.float32) >= rate) / (1.0 - rate)
        return out
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape, dtype=np.float32) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return mul(x, Tensor(keep))


def frobenius_sq(a, b):
    """Squared Frobenius norm of ``a - b`` as one op (one n×n temporary)."""
    a, b = as_tensor(a), as_tensor(b)
    r = a.data - b.data

    def bw(g):
        ga = (2.0 * g) * r
        return (ga if a.requires_grad else None, -ga if b.requires_grad else None)

    return _make(np.asarray(np.einsum("ij,ij->", r, r)), (a, b), bw, "frobenius_sq")


def gram_sigmoid(z):
    """logistic(Z Zᵀ), fused so the backward pass needs no extra graph nodes."""
    z = as_tensor(z)
    out = _logistic_(z.data @ z.data.T)

    def bw(g):
        gs = out * out
        np.subtract(out, gs, out=gs)
        gs *= g
        return (gs @ z.data + gs.T @ z.data,)

    return _make(out, (z,), bw, "gram_sigmoid")


# ----------------------------------------------------------------------------
# graph context for message passing


class GraphContext:
    """Message-passing structure for one graph.

    ``norm_adj`` is the self-loop-augmented symmetric normalization used by GCN
    layers. ``src``/``dst`` list the directed closed-neighborhood pairs
    (each undirected edge both ways plus one self pair per node) used by GAT.
    """

    def __init__(self, n: int, edges: np.ndarray):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.n = n
        loops = np.arange(n, dtype=np.int64)
        self.src = np.concatenate([edges[:, 0], edges[:, 1], loops])
        self.dst = np.concatenate([edges[:, 1], edges[:, 0], loops])
        deg = np.bincount(self.dst, minlength=n).astype(DEFAULT_DTYPE)
        inv_sqrt = 1.0 / np.sqrt(deg)
        vals = inv_sqrt[self.dst] * inv_sqrt[self.src]
        self.norm_adj = sp.csr_matrix((vals, (self.dst, self.src)), shape=(n, n))
        self._dense_adj = None

    def dense_adjacency(self) -> np.ndarray:
        if self._dense_adj is None:
            m = len(self.src) - self.n
            a = np.zeros((self.n, self.n), dtype=DEFAULT_DTYPE)
            a[self.dst[:m], self.src[:m]] = 1.0
            self._dense_adj = a
        return self._dense_adj

    def closed_neighborhood_matrix(self) -> sp.csr_matrix:
        ones = np.ones(len(self.src), dtype=DEFAULT_DTYPE)
        return sp.csr_matrix((ones, (self.dst, self.src)), shape=(self.n, self.n))


# ----------------------------------------------------------------------------
# modules


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out)).astype(DEFAULT_DTYPE)


def parameter(data: np.ndarray, name: str) -> Tensor:
    return Tensor(np.array(data, dtype=DEFAULT_DTYPE), requires_grad=True, name=name)


class Module:
    """Minimal parameter container. Subclasses register params/children as attributes."""

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{prefix}{key}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def freeze(self):
        for p in self.parameters():
            p.frozen = True
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for k, p in own.items():
            if p.data.shape != state[k].shape:
                raise ValueError(f"shape mismatch for {k}: {p.data.shape} vs {state[k].shape}")
            p.data = np.array(state[k], dtype=DEFAULT_DTYPE)


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, bias=True, activation=None):
        self.weight = parameter(glorot(rng, in_dim, out_dim), "weight")
        self.bias = parameter(np.zeros((1, out_dim)), "bias") if bias else None
        self.activation = activation

    def __call__(self, h):
        out = matmul(h, self.weight)
        if self.bias is not None:
            out = add(out, self.bias)
        return self.activation(out) if self.activation else out


class GCNConv(Module):
    """out = act(Â · H · W + b), Â = D̃^{-1/2}(A + I)D̃^{-1/2}."""

    def __init__(self, in_dim, out_dim, rng, activation=None, bias=True):
        self.weight = parameter(glorot(rng, in_dim, out_dim), "weight")
        self.bias = parameter(np.zeros((1, out_dim)), "bias") if bias else None
        self.activation = activation

    def __call__(self, ctx: GraphContext, h):
        h = h if sp.issparse(h) else as_tensor(h)
        in_dim, out_dim = self.weight.shape
        if h.shape[1] != in_dim:
            raise ValueError(f"GCNConv expects {in_dim} input features, got {h.shape[1]}")
        # cheaper association when the layer shrinks the width
        if out_dim <= in_dim or sp.issparse(h):
            out = spmm(ctx.norm_adj, matmul(h, self.weight))
        else:
            out = matmul(spmm(ctx.norm_adj, h), self.weight)
        if self.bias is not None:
            out = add(out, self.bias)
        return self.activation(out) if self.activation else out


class GATConv(Module):
    """Single-head graph attention over closed neighborhoods."""

    def __init__(self, in_dim, out_dim, rng, activation=None, negative_slope=0.2, bias=True):
        self.weight = parameter(glorot(rng, in_dim, out_dim), "weight")
        self.att_src = parameter(glorot(rng, out_dim, 1), "att_src")
        self.att_dst = parameter(glorot(rng, out_dim, 1), "att_dst")
        self.bias = parameter(np.zeros((1, out_dim)), "bias") if bias else None
        self.activation = activation
        self.negative_slope = negative_slope

    def attention(self, ctx: GraphContext, wh):
        """Per-pair attention weights, shape (len(ctx.src), 1)."""
        s_src = matmul(wh, self.att_src)
        s_dst = matmul(wh, self.att_dst)
        logits = leaky_relu(add(gather_rows(s_dst, ctx.dst), gather_rows(s_src, ctx.src)), self.negative_slope)
        # subtracting the per-segment max is softmax-invariant, so it is held constant
        seg_max = np.full((ctx.n, 1), -np.inf)
        np.maximum.at(seg_max, ctx.dst, logits.data)
        ex = exp(sub(logits, Tensor(seg_max[ctx.dst])))
        denom = scatter_add_rows(ex, ctx.dst, ctx.n)
        return div(ex, gather_rows(denom, ctx.dst))

    def __call__(self, ctx: GraphContext, h):
        h = h if sp.issparse(h) else as_tensor(h)
        if h.shape[1] != self.weight.shape[0]:
            raise ValueError(f"GATConv expects {self.weight.shape[0]} input features, got {h.shape[1]}")
        wh = matmul(h, self.weight)
        alpha = self.attention(ctx, wh)
        out = scatter_add_rows(mul(gather_rows(wh, ctx.src), alpha), ctx.dst, ctx.n)
        if self.bias is not None:
            out = add(out, self.bias)
        return self.activation(out) if self.activation else out


# ----------------------------------------------------------------------------
# optimizer


class Adam:
    """Adaptive-moment optimizer with decoupled weight decay.

    Frozen parameters are excluded from the state and never updated.
    """

    def __init__(self, params, lr=0.005, weight_decay=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.params = [p for p in params if not p.frozen]
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for i, p in enumerate(self.params):
            if p.frozen:
                continue
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter '{p.name}'")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            update = (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.data = p.data - self.lr * self.weight_decay * p.data - self.lr * update


# ----------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, state: dict[str, np.ndarray], config_hash: str, meta: dict | None = None):
    header = {"config_hash": config_hash, "shapes": {k: list(v.shape) for k, v in state.items()}}
    if meta:
        header["meta"] = meta
    arrays = {f"param/{k}": v for k, v in state.items()}
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


class CheckpointMismatch(ValueError):
    pass


def load_checkpoint(path, expected_hash: str | None = None):
    with np.load(path) as npz:
        header = json.loads(bytes(npz["__header__"]).decode())
        state = {k[len("param/"):]: npz[k] for k in npz.files if k.startswith("param/")}
    if expected_hash is not None and header["config_hash"] != expected_hash:
        raise CheckpointMismatch(
            f"checkpoint {path} was written for config {header['config_hash']}, expected {expected_hash}"
        )
    for k, shape in header["shapes"].items():
        if list(state[k].shape) != shape:
            raise CheckpointMismatch(f"checkpoint {path}: shape header disagrees for {k}")
    return state, header


def state_digest(state: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for k in sorted(state):
        h.update(k.encode())
        h.update(np.ascontiguousarray(state[k]).tobytes())
    return h.hexdigest()
