"""Reverse-mode automatic differentiation over numpy arrays.

Small fixed op set, chosen to cover gated recurrences with attention:
matmul, add, mul, concat/split, sigmoid, tanh, row softmax (optionally
masked), inverted dropout, embedding lookup, and a fused row-wise
cross-entropy. Every op validates that its output is finite so numerical
blowups surface at the op that produced them, not three modules later.

Graphs are rebuilt from scratch each call; `backward` walks the recorded
nodes in reverse topological order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by op {name!r}")


class Tensor:
    """Node in the computation graph: value, accumulated gradient, backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, parents=(), requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def gradient(self):
        """Accumulated gradient, with no-flow reported as exact zeros."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"


class Parameter(Tensor):
    """Trainable leaf tensor. Always participates in gradients."""

    def __init__(self, data, name):
        super().__init__(data, requires_grad=True, name=name)


def constant(value, dtype=None):
    return Tensor(np.asarray(value, dtype=dtype))


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a, b):
    if a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data @ b.data, (a, b))
    _finite("matmul", out.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    out._backward = bw
    return out


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    out = Tensor(a.data + b.data, (a, b))
    _finite("add", out.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    out._backward = bw
    return out


def mul(a, b):
    """Elementwise product with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    out = Tensor(a.data * b.data, (a, b))
    _finite("mul", out.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    out._backward = bw
    return out


def scale(a, c):
    """Multiply by a python scalar constant."""
    c = float(c)
    out = Tensor(a.data * c, (a,))
    _finite("scale", out.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * c)

    out._backward = bw
    return out


def concat(tensors, axis=1):
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tensors)
    _finite("concat", out.data)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate(g[tuple(idx)])

    out._backward = bw
    return out


def split(t, sizes, axis=1):
    """Inverse of concat: cut `t` into chunks of the given sizes along `axis`."""
    if sum(sizes) != t.data.shape[axis]:
        raise ValueError(f"split sizes {sizes} do not cover axis of length {t.data.shape[axis]}")
    outs = []
    offsets = np.cumsum([0] + list(sizes))
    for lo, hi in zip(offsets[:-1], offsets[1:]):
        idx = [slice(None)] * t.data.ndim
        idx[axis] = slice(lo, hi)
        piece = Tensor(t.data[tuple(idx)].copy(), (t,))
        _finite("split", piece.data)

        def bw(g, idx=tuple(idx)):
            if t.requires_grad:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad[idx] += g

        piece._backward = bw
        outs.append(piece)
    return outs


def sigmoid(x):
    out = Tensor(1.0 / (1.0 + np.exp(-x.data)), (x,))
    _finite("sigmoid", out.data)

    def bw(g):
        if x.requires_grad:
            x.accumulate(g * out.data * (1.0 - out.data))

    out._backward = bw
    return out


def tanh(x):
    out = Tensor(np.tanh(x.data), (x,))
    _finite("tanh", out.data)

    def bw(g):
        if x.requires_grad:
            x.accumulate(g * (1.0 - out.data * out.data))

    out._backward = bw
    return out


def softmax_rows(x, mask=None):
    """Row-wise softmax, numerically stabilized by max subtraction.

    With `mask` (0/1 array broadcastable to x), masked positions get exactly
    zero probability and the rest renormalize over the unmasked support.
    Every row must keep at least one unmasked entry.
    """
    z = x.data
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask), z.shape)
        if not np.all(m.sum(axis=-1) > 0):
            raise ValueError("softmax_rows: some row is fully masked")
        neg = np.where(m > 0, z, -np.inf)
        shifted = z - neg.max(axis=-1, keepdims=True)
        e = np.where(m > 0, np.exp(shifted), 0.0)
    else:
        e = np.exp(z - z.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p, (x,))
    _finite("softmax_rows", out.data)

    def bw(g):
        if x.requires_grad:
            dot = (g * p).sum(axis=-1, keepdims=True)
            x.accumulate(p * (g - dot))

    out._backward = bw
    return out


def dropout(x, keep_prob, rng, train):
    """Inverted dropout: at train time keep each entry with probability
    `keep_prob` and rescale by 1/keep_prob; identity at evaluation time."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    if not train or keep_prob == 1.0:
        return x
    m = (rng.random(x.data.shape) < keep_prob).astype(x.data.dtype) / keep_prob
    out = Tensor(x.data * m, (x,))
    _finite("dropout", out.data)

    def bw(g):
        if x.requires_grad:
            x.accumulate(g * m)

    out._backward = bw
    return out


def embed_lookup(table, ids):
    """Gather rows of `table` at integer `ids` (any shape); output appends the
    embedding axis."""
    ids = np.asarray(ids)
    out = Tensor(table.data[ids], (table,))
    _finite("embed_lookup", out.data)

    def bw(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, g)

    out._backward = bw
    return out


def cross_entropy_rows(logits, targets, weights=None, denom=None):
    """Weighted mean of per-row cross-entropy losses, as a scalar tensor.

    Row i contributes ``weights[i] * (logsumexp(logits[i]) - logits[i, targets[i]])``;
    the sum is divided by `denom` (default: sum of weights). Computed in log
    space, stabilized by the row max.
    """
    targets = np.asarray(targets)
    z = logits.data
    n = z.shape[0]
    w = np.ones(n, dtype=z.dtype) if weights is None else np.asarray(weights, dtype=z.dtype)
    d = float(w.sum()) if denom is None else float(denom)
    if d <= 0:
        raise ValueError("cross_entropy_rows: denominator must be positive")
    zmax = z.max(axis=1, keepdims=True)
    exps = np.exp(z - zmax)
    sums = exps.sum(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(sums[:, 0])
    picked = z[np.arange(n), targets]
    loss = float((w * (lse - picked)).sum() / d)
    out = Tensor(np.asarray(loss, dtype=z.dtype), (logits,))
    _finite("cross_entropy_rows", out.data)
    probs = exps / sums

    def bw(g):
        if logits.requires_grad:
            dz = probs * (w / d)[:, None]
            dz[np.arange(n), targets] -= w / d
            logits.accumulate(dz * g)

    out._backward = bw
    return out


def backward(loss):
    """Accumulate d(loss)/d(leaf) into .grad over the graph below `loss`."""
    if loss.data.size != 1:
        raise ValueError("backward expects a scalar loss")
    topo, visited = [], set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params):
    for p in params:
        p.grad = None


def global_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    return float(np.sqrt(total))


def clip_gradients(params, max_norm):
    """Rescale all gradients jointly so the global L2 norm is at most
    `max_norm`. Returns the pre-clip norm."""
    norm = global_norm(params)
    if norm > max_norm:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm


def glorot_uniform(shape, rng, dtype=np.float32, fans=None):
    """Uniform(-L, L) init with L = sqrt(6 / (fan_in + fan_out)).

    Fans default to the first/last axis lengths; `fans` overrides for shapes
    whose role differs from their geometry (e.g. score vectors).
    """
    if fans is None:
        if len(shape) == 1:
            fans = (shape[0], 1)
        else:
            fans = (shape[0], shape[-1])
    limit = np.sqrt(6.0 / (fans[0] + fans[1]))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Adam:
    """Adam optimizer with bias correction; first and second moments are kept
    per parameter and exposed for checkpointing."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("parameters must have unique names")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            g = p.grad
            if g is None:
                continue
            m = self.m[p.name]
            v = self.v[p.name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)


def rng_stream(seed, name):
    """Independent deterministic generator for (seed, purpose-name)."""
    tag = int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "big")
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))


def finite_diff(f, x, h=1e-5):
    """Central-difference gradient of scalar-valued `f` with respect to array
    `x`, perturbing x in place one entry at a time. Independent of the graph
    machinery; used to validate it."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * h)
    return g
