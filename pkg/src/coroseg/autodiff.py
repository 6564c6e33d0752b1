"""Dense 2-D tensors with a reverse-mode differentiation tape.

Just the operations the message-passing layers need, in float64. Any op
producing a non-finite value raises immediately; gradients use fixed
subgradient conventions (relu'(0) = 0, max-pool ties to the lowest index)
so runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class AutodiffError(RuntimeError):
    """Shape mismatch, non-finite value, or tape misuse."""


class Tensor:
    """A rows x cols float64 array, optionally recorded on the tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2:
            raise AutodiffError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._done = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def zero_grad(self):
        if self.grad is not None:
            self.grad[:] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise AutodiffError("non-finite result")
    out = Tensor(data)
    if _tracked(*parents):
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    out = g
    if shape[0] == 1 and g.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise AutodiffError(f"matmul shape mismatch {a.shape} x {b.shape}")
    data = a.data @ b.data

    def backward(g, a=a, b=b):
        return (g @ b.data.T, a.data.T @ g)

    return _result(data, (a, b), backward)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise AutodiffError(f"add shape mismatch {a.shape} + {b.shape}") from exc

    def backward(g, a=a, b=b):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return _result(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise AutodiffError(f"mul shape mismatch {a.shape} * {b.shape}") from exc

    def backward(g, a=a, b=b):
        return (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))

    return _result(data, (a, b), backward)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g, m=mask: (g * m,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    data = np.where(mask, a.data, slope * a.data)
    return _result(data, (a,), lambda g, m=mask: (g * np.where(m, 1.0, slope),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    return _result(data, (a,), lambda g, d=data: (g * d,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    return _result(data, (a,), lambda g, a=a: (g / a.data,))


def row_softmax(a) -> Tensor:
    """Softmax per row, stabilized by row-max subtraction."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g, y=y):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return _result(y, (a,), backward)


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    rows = {t.shape[0] for t in ts}
    if len(rows) != 1:
        raise AutodiffError("concat_cols row mismatch")
    data = np.concatenate([t.data for t in ts], axis=1)
    widths = [t.shape[1] for t in ts]
    splits = np.cumsum(widths)[:-1]

    def backward(g, splits=splits):
        return tuple(np.split(g, splits, axis=1))

    return _result(data, tuple(ts), backward)


def l2_normalize_rows(a, eps_free: bool = True) -> Tensor:
    """Rows scaled to unit l2 norm; zero rows stay zero with zero gradient."""
    a = _as_tensor(a)
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    y = a.data / safe

    def backward(g, a=a, y=y, safe=safe, norms=norms):
        dot = (g * y).sum(axis=1, keepdims=True)
        grad = (g - y * dot) / safe
        return (np.where(norms > 0, grad, 0.0),)

    return _result(y, (a,), backward)


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    data = np.array([[a.data.sum()]])
    return _result(data, (a,), lambda g, a=a: (np.full(a.shape, g[0, 0]),))


class IndexGroups:
    """Per-row neighbor index sets, flattened for vectorized pooling.

    Built once per graph; row i of a pooled output aggregates the source
    rows listed in groups[i]. Empty groups are allowed.
    """

    def __init__(self, groups: Sequence[np.ndarray]):
        self.n_rows = len(groups)
        sizes = np.array([len(g) for g in groups], dtype=np.int64)
        self.sizes = sizes
        self.flat = (
            np.concatenate([np.asarray(g, dtype=np.int64) for g in groups if len(g)])
            if sizes.sum()
            else np.zeros(0, dtype=np.int64)
        )
        self.nonempty = np.flatnonzero(sizes)
        starts_all = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self.starts = starts_all[self.nonempty]

    @classmethod
    def from_adjacency(cls, adj: np.ndarray) -> "IndexGroups":
        return cls([np.flatnonzero(adj[i]) for i in range(adj.shape[0])])


def row_sum_pool(a, groups: IndexGroups) -> Tensor:
    """Row i of the output is the sum of a's rows in groups[i]."""
    a = _as_tensor(a)
    data = np.zeros((groups.n_rows, a.shape[1]))
    if len(groups.flat):
        gathered = a.data[groups.flat]
        data[groups.nonempty] = np.add.reduceat(gathered, groups.starts, axis=0)

    def backward(g, a=a, groups=groups):
        ga = np.zeros(a.shape)
        if len(groups.flat):
            expanded = np.repeat(g, groups.sizes, axis=0)
            np.add.at(ga, groups.flat, expanded)
        return (ga,)

    return _result(data, (a,), backward)


def row_max_pool(a, groups: IndexGroups) -> Tensor:
    """Row i is the elementwise max over a's rows in groups[i]; empty -> 0.

    Gradient routes to the contributing entry with the lowest flat index,
    so tie-breaking is deterministic.
    """
    a = _as_tensor(a)
    data = np.zeros((groups.n_rows, a.shape[1]))
    winners = None
    if len(groups.flat):
        gathered = a.data[groups.flat]
        pooled = np.maximum.reduceat(gathered, groups.starts, axis=0)
        data[groups.nonempty] = pooled
        pooled_back = np.repeat(pooled, groups.sizes[groups.nonempty], axis=0)
        is_max = gathered == pooled_back
        cand = np.where(is_max, np.arange(len(gathered))[:, None], len(gathered))
        winners = np.minimum.reduceat(cand, groups.starts, axis=0)

    def backward(g, a=a, groups=groups, winners=winners):
        ga = np.zeros(a.shape)
        if winners is not None:
            rows = groups.flat[winners]          # (G, d) source row per entry
            gg = g[groups.nonempty]
            cols = np.broadcast_to(np.arange(a.shape[1]), rows.shape)
            np.add.at(ga, (rows.ravel(), cols.ravel()), gg.ravel())
        return (ga,)

    return _result(data, (a,), backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray, mask=None) -> Tensor:
    """Mean -log softmax(logits)[label] over selected rows (fused op)."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (logits.shape[0],):
        raise AutodiffError("labels must be one class index per row")
    if np.any((labels < 0) | (labels >= logits.shape[1])):
        raise AutodiffError("label out of range")
    sel = np.ones(len(labels), dtype=bool) if mask is None else np.asarray(mask, bool)
    if not sel.any():
        raise AutodiffError("empty selection")
    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    n_sel = int(sel.sum())
    loss = -logp[sel, labels[sel]].mean()

    def backward(g, logits=logits, labels=labels, sel=sel, logp=logp, n_sel=n_sel):
        p = np.exp(logp)
        p[np.arange(len(labels)), labels] -= 1.0
        p[~sel] = 0.0
        return (g[0, 0] * p / n_sel,)

    return _result(np.array([[loss]]), (logits,), backward)


def backward(loss: Tensor):
    """Reverse pass from a scalar loss; populates .grad on parameter tensors."""
    if loss.shape != (1, 1):
        raise AutodiffError("loss must be a 1x1 tensor")
    if loss._done:
        raise AutodiffError("backward already run for this tape; re-record first")
    loss._done = True

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad += g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if id(parent) in grads:
                grads[id(parent)] += pg
            else:
                grads[id(parent)] = np.array(pg, dtype=np.float64, copy=True)


@dataclass
class AdamState:
    """Bias-corrected Adam moments keyed by parameter name."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState):
    """One Adam update, in place on the parameter tensors."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise AutodiffError(f"gradient shape mismatch for {name!r}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m += (1 - state.beta1) * (g - m)
        v += (1 - state.beta2) * (g * g - v)
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
