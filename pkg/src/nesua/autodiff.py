"""Dense reverse-mode automatic differentiation on float64 numpy buffers.

Every operation returns a new Tensor that remembers its inputs and a
closure implementing the exact reverse rule, so the executed ops form a
computation record that backward() replays in reverse topological order.
Only the primitives needed by the attention pipeline and the network
power loss are provided; there is no broadcasting beyond what those
compositions use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError


class Tensor:
    """A dense float64 array with an accumulated gradient buffer."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad=False, _parents=()):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = None

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


def _result(values, parents, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(values, requires_grad=needs, _parents=tuple(parents) if needs else ())
    if needs:
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    # collapse gradient of a broadcast operand back to its original shape
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not align") from None


# ---------------------------------------------------------------------------
# elementwise and linear-algebra primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    out_values = a.values + b.values

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return _result(out_values, (a, b), backward)


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("subtract", a, b)
    out_values = a.values - b.values

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.shape))

    return _result(out_values, (a, b), backward)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("multiply", a, b)
    out_values = a.values * b.values

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.values, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.values, b.shape))

    return _result(out_values, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        x.accumulate(g * c)

    return _result(x.values * c, (x,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    va, vb = a.values, b.values
    if va.ndim != 2 or vb.ndim not in (1, 2):
        raise ShapeError(f"matmul: unsupported ranks {va.shape} @ {vb.shape}")
    if va.shape[1] != vb.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {va.shape} @ {vb.shape}")
    out_values = va @ vb

    def backward(g):
        if vb.ndim == 2:
            if a.requires_grad:
                a.accumulate(g @ vb.T)
            if b.requires_grad:
                b.accumulate(va.T @ g)
        else:
            if a.requires_grad:
                a.accumulate(np.outer(g, vb))
            if b.requires_grad:
                b.accumulate(va.T @ g)

    return _result(out_values, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    if x.values.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {x.shape}")

    def backward(g):
        x.accumulate(g.T)

    return _result(x.values.T, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def backward(g):
        x.accumulate(g.reshape(x.shape))

    return _result(x.values.reshape(shape), (x,), backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[0]:
        raise ShapeError(f"slice_rows: [{start}:{stop}] out of range for shape {x.shape}")

    def backward(g):
        buf = np.zeros_like(x.values)
        buf[start:stop] = g
        x.accumulate(buf)

    return _result(x.values[start:stop].copy(), (x,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    ndim = tensors[0].values.ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.values.ndim != ndim:
            raise ShapeError(
                f"concat: rank mismatch, {tensors[0].shape} vs {t.shape}"
            )
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t.accumulate(piece)

    return _result(np.concatenate([t.values for t in tensors], axis=axis), tuple(tensors), backward)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0

    def backward(g):
        x.accumulate(g * mask)

    return _result(np.where(mask, x.values, 0.0), (x,), backward)


def leaky_relu(x: Tensor, negative_slope: float) -> Tensor:
    # subgradient at 0 taken as 1
    slope = float(negative_slope)
    mask = x.values >= 0

    def backward(g):
        x.accumulate(g * np.where(mask, 1.0, slope))

    return _result(np.where(mask, x.values, slope * x.values), (x,), backward)


def exp(x: Tensor) -> Tensor:
    out_values = np.exp(x.values)

    def backward(g):
        x.accumulate(g * out_values)

    return _result(out_values, (x,), backward)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    # gradient passes through on [lo, hi] (boundary counts as inside), zero outside
    inside = (x.values >= lo) & (x.values <= hi)

    def backward(g):
        x.accumulate(g * inside)

    return _result(np.clip(x.values, lo, hi), (x,), backward)


def row_softmax_masked(x: Tensor, mask) -> Tensor:
    """Softmax over the unmasked entries of each row.

    Masked entries are exactly 0 in the output and receive exactly 0
    gradient. Every row must keep at least one unmasked entry.
    """
    keep = (mask.values if isinstance(mask, Tensor) else np.asarray(mask)) != 0
    if keep.shape != x.shape:
        raise ShapeError(f"row_softmax_masked: mask {keep.shape} vs input {x.shape}")
    if not keep.any(axis=1).all():
        raise ContractError("row_softmax_masked: a row has no unmasked entries")
    shifted = np.where(keep, x.values, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        x.accumulate(s * (g - dot))

    return _result(s, (x,), backward)


# ---------------------------------------------------------------------------
# reductions


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        x.accumulate(np.full(x.shape, float(g)))

    return _result(x.values.sum(), (x,), backward)


def row_sum(x: Tensor) -> Tensor:
    if x.values.ndim != 2:
        raise ShapeError(f"row_sum: expected a matrix, got shape {x.shape}")

    def backward(g):
        x.accumulate(np.broadcast_to(g[:, None], x.shape).copy())

    return _result(x.values.sum(axis=1), (x,), backward)


def trace_of_gram(x: Tensor) -> Tensor:
    """Sum of squared entries, i.e. the trace of x @ x.T."""

    def backward(g):
        x.accumulate(2.0 * float(g) * x.values)

    return _result((x.values**2).sum(), (x,), backward)


def l2_norm(x: Tensor) -> Tensor:
    norm = float(np.sqrt((x.values**2).sum()))

    def backward(g):
        if norm > 0.0:
            x.accumulate(float(g) * x.values / norm)

    return _result(norm, (x,), backward)


def complement_product_gate(s: Tensor) -> Tensor:
    """Per column n of a K-by-N matrix: 1 - prod_k (1 - s[k, n]).

    0 when the column is all zeros, 1 as soon as any entry is 1; smooth in
    between. Used as the differentiable on/off gate of a cell.
    """
    if s.values.ndim != 2:
        raise ShapeError(f"complement_product_gate: expected a matrix, got {s.shape}")
    q = 1.0 - s.values
    out_values = 1.0 - q.prod(axis=0)

    def backward(g):
        # leave-one-out products via prefix/suffix cumulative products,
        # exact even when some factor is 0
        prefix = np.ones_like(q)
        suffix = np.ones_like(q)
        if q.shape[0] > 1:
            prefix[1:] = np.cumprod(q[:-1], axis=0)
            suffix[:-1] = np.cumprod(q[::-1], axis=0)[-2::-1]
        s.accumulate(g[None, :] * prefix * suffix)

    return _result(out_values, (s,), backward)


# ---------------------------------------------------------------------------
# reverse pass


def _topo_order(root: Tensor):
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
            if p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Populate .grad for every tensor the scalar loss depends on.

    Gradients accumulate across calls; use zero_grad() between steps.
    """
    if loss.shape != ():
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    loss.accumulate(np.ones(()))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grad(tensors):
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Moment buffers and step counter for bias-corrected Adam."""

    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stability: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=5e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps_stability=eps,
            m=[np.zeros_like(p.values) for p in params],
            v=[np.zeros_like(p.values) for p in params],
        )

    def to_dict(self):
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps_stability": self.eps_stability,
            "step": self.step,
            "m": [buf.tolist() for buf in self.m],
            "v": [buf.tolist() for buf in self.v],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            lr=d["lr"],
            beta1=d["beta1"],
            beta2=d["beta2"],
            eps_stability=d["eps_stability"],
            step=d["step"],
            m=[np.asarray(buf, dtype=np.float64) for buf in d["m"]],
            v=[np.asarray(buf, dtype=np.float64) for buf in d["v"]],
        )


def adam_step(params, grads, state: AdamState):
    """One in-place bias-corrected Adam update over matched param/grad lists."""
    if len(params) != len(state.m):
        raise ShapeError(
            f"adam_step: {len(params)} params vs state sized for {len(state.m)}"
        )
    state.step += 1
    t = state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.values.shape:
            raise ShapeError(f"adam_step: grad {g.shape} vs param {p.values.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g**2
        m_hat = state.m[i] / (1.0 - state.beta1**t)
        v_hat = state.v[i] / (1.0 - state.beta2**t)
        p.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps_stability)
