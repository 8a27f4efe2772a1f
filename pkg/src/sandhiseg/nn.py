"""Small reverse-mode autodiff kernel over float64 numpy arrays.

Only the operations the encoder-decoder needs are provided. LSTM cells,
attention and softmax cross-entropy are fused nodes with hand-written
backward passes; everything else is elementwise or linear algebra.

LSTM gate order in every weight matrix is input, forget, cell candidate,
output (i, f, g, o), each block ``hidden`` rows tall.
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

DTYPE = np.float64
INIT_SCALE = 0.08

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Var:
    """An array plus the bookkeeping needed to backpropagate into it."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents: tuple = ()
        self.backward_fn = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Var{tag}(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad=None) -> None:
        backward(self, grad)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x, dtype=DTYPE))


def parameter(data, name: str | None = None) -> Var:
    return Var(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


def _node(data, parents: tuple, backward_fn) -> Var:
    out = Var(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
    return out


def _topo_order(root: Var) -> list[Var]:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Var, grad=None) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable leaf.

    Leaves are Vars created with ``requires_grad=True``; their ``.grad`` is
    added to, so zero it between steps (see :func:`zero_grad`).
    """
    if not root.requires_grad:
        return
    if grad is None:
        if root.data.size != 1:
            raise ValueError("grad must be given for a non-scalar root")
        grad = np.ones_like(root.data)
    grads = {id(root): np.asarray(grad, dtype=DTYPE)}
    for node in reversed(_topo_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def gradients(loss: Var, params: Mapping[str, Var]) -> dict[str, np.ndarray]:
    """Fresh gradients of ``loss`` for each named parameter (zeros if unreachable)."""
    zero_grad(params.values())
    backward(loss)
    return {
        k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()
    }


def zero_grad(params: Iterable[Var]) -> None:
    for p in params:
        p.grad = None


# -- elementwise / linear ---------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )


def scale(a, c: float) -> Var:
    a = as_var(a)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def sum_all(a) -> Var:
    a = as_var(a)
    return _node(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.data.shape).copy(),))


def add_n(terms: Sequence[Var]) -> Var:
    """Sum of same-shaped Vars as a single node."""
    terms = [as_var(t) for t in terms]
    total = terms[0].data.copy()
    for t in terms[1:]:
        total = total + t.data
    return _node(total, tuple(terms), lambda g: tuple(g for _ in terms))


def tanh(a) -> Var:
    a = as_var(a)
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid_array(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(a) -> Var:
    a = as_var(a)
    y = sigmoid_array(a.data)
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


def affine(x, W, b=None) -> Var:
    """x @ W.T + b for x of shape [B, d], W [k, d], b [k]."""
    x, W = as_var(x), as_var(W)
    y = x.data @ W.data.T
    if b is None:
        return _node(y, (x, W), lambda g: (g @ W.data, g.T @ x.data))
    b = as_var(b)
    y = y + b.data
    return _node(y, (x, W, b), lambda g: (g @ W.data, g.T @ x.data, g.sum(axis=0)))


def concat(parts: Sequence[Var], axis: int = -1) -> Var:
    parts = [as_var(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    return _node(
        np.concatenate([p.data for p in parts], axis=axis),
        tuple(parts),
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def stack(parts: Sequence[Var], axis: int = 1) -> Var:
    parts = [as_var(p) for p in parts]
    n = len(parts)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _node(np.stack([p.data for p in parts], axis=axis), tuple(parts), bw)


def embedding(table, ids) -> Var:
    """Row lookup; ``ids`` is an integer array of any shape."""
    table = as_var(table)
    ids = np.asarray(ids, dtype=np.int64)

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return (gt,)

    return _node(table.data[ids], (table,), bw)


def blend(new, old, keep_new: np.ndarray) -> Var:
    """Rows where ``keep_new`` holds take ``new``, the others keep ``old`` bit-exactly."""
    new, old = as_var(new), as_var(old)
    m = np.asarray(keep_new, dtype=bool).reshape(-1, 1)
    return _node(
        np.where(m, new.data, old.data),
        (new, old),
        lambda g: (np.where(m, g, 0.0), np.where(m, 0.0, g)),
    )


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Var:
    """Inverted dropout; identity outside training or when ``rate`` is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_var(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return _node(x.data * mask, (x,), lambda g: (g * mask,))


# -- LSTM -------------------------------------------------------------------

@dataclass
class LstmLayerParams:
    """Weights of one LSTM layer: W [4h, d], U [4h, h], b [4h]."""

    W: Var
    U: Var
    b: Var

    def __post_init__(self):
        self.W, self.U, self.b = as_var(self.W), as_var(self.U), as_var(self.b)
        four_h, _ = self.W.data.shape
        if four_h % 4 or self.U.data.shape != (four_h, four_h // 4) or self.b.data.shape != (four_h,):
            raise ValueError(
                f"inconsistent LSTM shapes W{self.W.data.shape} U{self.U.data.shape} b{self.b.data.shape}"
            )

    @property
    def input_size(self) -> int:
        return self.W.data.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.U.data.shape[1]


def _lstm_gates(x: Var, h: Var, p: LstmLayerParams) -> Var:
    """Activated gates [B, 4h]: sigmoid on i, f, o blocks and tanh on g."""
    W, U, b = p.W, p.U, p.b
    H = p.hidden_size
    z = x.data @ W.data.T + h.data @ U.data.T + b.data
    a = sigmoid_array(z)
    a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])

    def bw(g):
        d = a * (1.0 - a)
        ag = a[:, 2 * H:3 * H]
        d[:, 2 * H:3 * H] = 1.0 - ag * ag
        dz = g * d
        return dz @ W.data, dz @ U.data, dz.T @ x.data, dz.T @ h.data, dz.sum(axis=0)

    return _node(a, (x, h, W, U, b), bw)


def _lstm_cell_state(a: Var, c_prev: Var, H: int) -> Var:
    i, f, gg = a.data[:, :H], a.data[:, H:2 * H], a.data[:, 2 * H:3 * H]
    c = f * c_prev.data + i * gg

    def bw(g):
        da = np.zeros_like(a.data)
        da[:, :H] = g * gg
        da[:, H:2 * H] = g * c_prev.data
        da[:, 2 * H:3 * H] = g * i
        return da, g * f

    return _node(c, (a, c_prev), bw)


def _lstm_hidden(a: Var, c: Var, H: int) -> Var:
    o = a.data[:, 3 * H:]
    tc = np.tanh(c.data)

    def bw(g):
        da = np.zeros_like(a.data)
        da[:, 3 * H:] = g * tc
        return da, g * o * (1.0 - tc * tc)

    return _node(o * tc, (a, c), bw)


def lstm_cell(x, h_prev, c_prev, p: LstmLayerParams) -> tuple[Var, Var]:
    """One LSTM step. Inputs may be unbatched ([d], [h], [h]) or batched ([B, d], ...).

    c = f * c_prev + i * g,  h = o * tanh(c).
    """
    x, h_prev, c_prev = as_var(x), as_var(h_prev), as_var(c_prev)
    d, H = p.input_size, p.hidden_size
    unbatched = x.data.ndim == 1
    if x.data.shape[-1] != d or h_prev.data.shape[-1] != H or c_prev.data.shape[-1] != H:
        raise ValueError(
            f"lstm_cell shape mismatch: x{x.data.shape} h{h_prev.data.shape} c{c_prev.data.shape} "
            f"for input size {d}, hidden size {H}"
        )
    if unbatched:
        x, h_prev, c_prev = (_reshape(v, (1, -1)) for v in (x, h_prev, c_prev))
    a = _lstm_gates(x, h_prev, p)
    c = _lstm_cell_state(a, c_prev, H)
    h = _lstm_hidden(a, c, H)
    if unbatched:
        h, c = _reshape(h, (H,)), _reshape(c, (H,))
    return h, c


def _reshape(a: Var, shape) -> Var:
    orig = a.data.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


# -- attention --------------------------------------------------------------

def attention(query, states, mask: np.ndarray | None = None) -> tuple[Var, np.ndarray]:
    """Global dot-product attention.

    query [B, h] (or [h]), states [B, n, h] (or [n, h]); ``mask`` [B, n] marks
    valid positions. Returns the context Var and the weight array. A row with
    no valid position gets all-zero weights and a zero context.
    """
    query, states = as_var(query), as_var(states)
    unbatched = query.data.ndim == 1
    if unbatched:
        query, states = _reshape(query, (1, -1)), _reshape(states, (1,) + states.data.shape)
    q, S = query.data, states.data
    if S.shape[1] == 0:
        raise ValueError("attention needs at least one encoder state")
    if S.shape[0] != q.shape[0] or S.shape[2] != q.shape[1]:
        raise ValueError(f"attention shape mismatch: query{q.shape} states{S.shape}")
    valid = np.ones(S.shape[:2], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    scores = np.einsum("bh,bnh->bn", q, S)
    scores = np.where(valid, scores, -np.inf)
    top = scores.max(axis=1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(valid, np.exp(scores - top), 0.0)
    z = e.sum(axis=1, keepdims=True)
    w = np.divide(e, z, out=np.zeros_like(e), where=z > 0)
    ctx = np.einsum("bn,bnh->bh", w, S)

    def bw(g):
        dw = np.einsum("bh,bnh->bn", g, S)
        ds = w * (dw - (w * dw).sum(axis=1, keepdims=True))
        dq = np.einsum("bn,bnh->bh", ds, S)
        dS = w[:, :, None] * g[:, None, :] + ds[:, :, None] * q[:, None, :]
        return dq, dS

    out = _node(ctx, (query, states), bw)
    if unbatched:
        return _reshape(out, (q.shape[1],)), w[0]
    return out, w


# -- loss -------------------------------------------------------------------

def softmax_array(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, targets, mask: np.ndarray | None = None) -> tuple[Var, np.ndarray]:
    """Summed negative log-likelihood of ``targets`` under softmax(logits).

    logits [B, V] with integer targets [B] (or [V] with a scalar target).
    Rows where ``mask`` is false contribute exactly zero. Returns the scalar
    loss Var and the probability array.
    """
    logits = as_var(logits)
    L = logits.data
    unbatched = L.ndim == 1
    L2 = L.reshape(1, -1) if unbatched else L
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    V = L2.shape[1]
    if t.shape[0] != L2.shape[0]:
        raise ValueError(f"{t.shape[0]} targets for {L2.shape[0]} rows of logits")
    if np.any((t < 0) | (t >= V)):
        raise ValueError(f"target id out of range [0, {V})")
    m = np.ones(t.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    shifted = L2 - L2.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1, keepdims=True)
    probs = e / z
    rows = np.arange(t.shape[0])
    nll = np.log(z[:, 0]) - shifted[rows, t]
    loss = np.asarray(math.fsum(nll[m]))

    def bw(g):
        d = probs.copy()
        d[rows, t] -= 1.0
        d *= m[:, None] * g
        return (d.reshape(L.shape),)

    out = _node(loss, (logits,), bw)
    return out, (probs[0] if unbatched else probs)


# -- optimisation -----------------------------------------------------------

class NonFiniteGradientError(FloatingPointError):
    pass


class Adam:
    """Adam with bias correction; holds first/second moments and the step count."""

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not lr > 0:
            raise ValueError(f"lr must be positive, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got ({beta1}, {beta2})")
        if not eps > 0:
            raise ValueError(f"eps must be positive, got {eps}")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient in parameter {name!r}")
            if g.shape != params[name].shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[name] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: Adam) -> Adam:
    state.step(params, grads)
    return state


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> float:
    """Rescale all gradients in place so their joint L2 norm is at most ``max_norm``."""
    total = math.sqrt(math.fsum(float(np.vdot(g, g)) for g in grads.values()))
    if total > max_norm > 0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def init_uniform(rng: np.random.Generator, shape, scale: float = INIT_SCALE) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape).astype(DTYPE)
