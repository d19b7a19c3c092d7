"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph doubles as the tape: every differentiable op stamps a TapeNode
with a monotonically increasing sequence number, so creation order is a
topological order and ``backward`` can sweep reachable nodes newest-first.
Gradients for one backward pass are accumulated in a scratch map and only
added into each tensor's persistent ``.grad`` at the end; calling
``backward`` twice without ``zero_grad`` therefore doubles every gradient
exactly.

Broadcasting is deliberately restricted to row-bias addition
(matrix[m,n] + vector[n]); every other shape mix raises DimensionError so
each backward rule stays auditable.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable

import numpy as np

from .errors import (
    ContractError,
    DegenerateVectorError,
    DimensionError,
    NumericError,
)

_STAMP = itertools.count()

# Probability floor applied before every log in the loss layer.
PROB_FLOOR = 1e-12


class TapeNode:
    """One recorded primitive: inputs, output, and its vector-Jacobian rule."""

    __slots__ = ("stamp", "inputs", "output", "vjp")

    def __init__(self, inputs: tuple["Tensor", ...], output: "Tensor", vjp):
        self.stamp = next(_STAMP)
        self.inputs = inputs
        self.output = output
        self.vjp = vjp  # Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


class Tensor:
    """Row-major float64 array plus an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64, order="C", copy=True)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: TapeNode | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def const(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def _forge(data: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    """Build an op output, recording a tape node only when gradients can flow."""
    out = Tensor(data)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = TapeNode(inputs, out, vjp)
    return out


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(tensor) into .grad of every reachable tensor.

    root must be a scalar (shape ()). Each tensor's contribution is the sum
    over all of its downstream uses.
    """
    if root.shape != ():
        raise ContractError(f"backward root must be a scalar, got shape {root.shape}")

    # Collect reachable nodes; creation stamps give a topological order.
    nodes: list[TapeNode] = []
    seen: set[int] = set()
    stack = [root]
    while stack:
        t = stack.pop()
        node = t.node
        if node is not None and id(node) not in seen:
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node.inputs)
    nodes.sort(key=lambda n: n.stamp, reverse=True)

    scratch: dict[int, np.ndarray] = {id(root): np.ones(())}
    holders: dict[int, Tensor] = {id(root): root}
    for node in nodes:
        g_out = scratch.get(id(node.output))
        if g_out is None:
            continue
        grads_in = node.vjp(g_out)
        for t, g in zip(node.inputs, grads_in):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in scratch:
                scratch[key] += g
            else:
                scratch[key] = np.array(g, dtype=np.float64, copy=True)
                holders[key] = t

    for key, g in scratch.items():
        t = holders[key]
        if not t.requires_grad:
            continue
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _forge(out, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; the one allowed broadcast is matrix + row bias."""
    if a.shape == b.shape:
        def vjp(g):
            return g, g
        return _forge(a.data + b.data, (a, b), vjp)
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        def vjp(g):
            return g, g.sum(axis=0)
        return _forge(a.data + b.data, (a, b), vjp)
    raise DimensionError(f"add shapes incompatible: {a.shape} + {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub shapes incompatible: {a.shape} - {b.shape}")

    def vjp(g):
        return g, -g

    return _forge(a.data - b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul shapes incompatible: {a.shape} * {b.shape}")

    def vjp(g):
        return g * b.data, g * a.data

    return _forge(a.data * b.data, (a, b), vjp)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def vjp(g):
        return (g * c,)

    return _forge(x.data * c, (x,), vjp)


def smul(x: Tensor, s: Tensor) -> Tensor:
    """Multiply by a scalar tensor (e.g. a learnable temperature)."""
    if s.shape != ():
        raise DimensionError(f"smul scalar must have shape (), got {s.shape}")

    def vjp(g):
        return g * s.data, np.asarray((g * x.data).sum())

    return _forge(x.data * s.data, (x, s), vjp)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def vjp(g):
        return (g * out,)

    return _forge(out, (x,), vjp)


def log(x: Tensor) -> Tensor:
    def vjp(g):
        return (g / x.data,)

    return _forge(np.log(x.data), (x,), vjp)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _forge(out, (x,), vjp)


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); gradient is zero on clamped entries."""
    mask = x.data > floor

    def vjp(g):
        return (g * mask,)

    return _forge(np.maximum(x.data, floor), (x,), vjp)


def sum_all(x: Tensor) -> Tensor:
    def vjp(g):
        return (np.full_like(x.data, float(g)),)

    return _forge(np.asarray(x.data.sum()), (x,), vjp)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size

    def vjp(g):
        return (np.full_like(x.data, float(g) / n),)

    return _forge(np.asarray(x.data.mean()), (x,), vjp)


def mean_rows(x: Tensor) -> Tensor:
    """Column-wise mean of a [m, n] matrix -> vector of length n."""
    if x.data.ndim != 2:
        raise DimensionError(f"mean_rows expects a matrix, got shape {x.shape}")
    m = x.shape[0]

    def vjp(g):
        return (np.tile(g / m, (m, 1)),)

    return _forge(x.data.mean(axis=0), (x,), vjp)


def mean_rows_grouped(x: Tensor, group: int) -> Tensor:
    """Mean over consecutive row groups: [b*group, n] -> [b, n].

    Used to pool per-frame rows into per-clip features without a 3-D tensor.
    """
    if x.data.ndim != 2:
        raise DimensionError(f"mean_rows_grouped expects a matrix, got {x.shape}")
    rows, n = x.shape
    if group < 1 or rows % group != 0:
        raise DimensionError(f"row count {rows} not divisible by group {group}")
    b = rows // group
    out = x.data.reshape(b, group, n).mean(axis=1)

    def vjp(g):
        return (np.repeat(g / group, group, axis=0),)

    return _forge(out, (x,), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    orig = x.shape

    def vjp(g):
        return (g.reshape(orig),)

    return _forge(x.data.reshape(shape), (x,), vjp)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")

    def vjp(g):
        return (np.ascontiguousarray(g.T),)

    return _forge(np.ascontiguousarray(x.data.T), (x,), vjp)


def softmax_row(x: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction; accepts a vector as one row."""
    if not np.isfinite(x.data).all():
        raise NumericError("softmax_row input contains NaN/Inf")
    vec = x.data.ndim == 1
    raw = x.data[None, :] if vec else x.data
    if raw.ndim != 2:
        raise DimensionError(f"softmax_row expects a vector or matrix, got {x.shape}")
    shifted = raw - raw.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = y[0] if vec else y

    def vjp(g):
        gm = g[None, :] if vec else g
        dx = y * (gm - (gm * y).sum(axis=1, keepdims=True))
        return (dx[0] if vec else dx,)

    return _forge(out, (x,), vjp)


def cosine_rows(x: Tensor, y: Tensor) -> Tensor:
    """Pairwise cosine similarity between rows: [m,d] x [n,d] -> [m,n].

    Vectors are accepted as single rows. Rows with norm below 1e-12 are
    rejected rather than silently producing garbage directions.
    """
    xv = x.data.ndim == 1
    yv = y.data.ndim == 1
    xr = x.data[None, :] if xv else x.data
    yr = y.data[None, :] if yv else y.data
    if xr.ndim != 2 or yr.ndim != 2 or xr.shape[1] != yr.shape[1]:
        raise DimensionError(f"cosine_rows shapes incompatible: {x.shape} vs {y.shape}")
    nx = np.linalg.norm(xr, axis=1)
    ny = np.linalg.norm(yr, axis=1)
    if (nx < 1e-12).any() or (ny < 1e-12).any():
        raise DegenerateVectorError("cosine_rows: a row has near-zero norm")
    xn = xr / nx[:, None]
    yn = yr / ny[:, None]
    c = xn @ yn.T

    def vjp(g):
        gm = np.atleast_2d(g)
        gc = (gm * c)
        dx = (gm @ yn - gc.sum(axis=1, keepdims=True) * xn) / nx[:, None]
        dy = (gm.T @ xn - gc.sum(axis=0)[:, None] * yn) / ny[:, None]
        if xv:
            dx = dx[0]
        if yv:
            dy = dy[0]
        return dx, dy

    out = c
    if xv and yv:
        out = c[0, 0]
    elif xv:
        out = c[0]
    elif yv:
        out = c[:, 0]

    def vjp_shaped(g):
        g2 = np.asarray(g, dtype=np.float64)
        if xv and yv:
            g2 = g2.reshape(1, 1)
        elif xv:
            g2 = g2.reshape(1, -1)
        elif yv:
            g2 = g2.reshape(-1, 1)
        return vjp(g2)

    return _forge(np.asarray(out), (x, y), vjp_shaped)


# ---------------------------------------------------------------------------
# dropout (inverted, replayable mask)
# ---------------------------------------------------------------------------

def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """Inverted-dropout mask: entries are 0 or 1/(1-rate).

    The mask is plain data, so a training step can draw it once and a
    finite-difference check can replay the identical mask.
    """
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def apply_mask(x: Tensor, mask: np.ndarray) -> Tensor:
    if mask.shape != x.shape:
        raise DimensionError(f"mask shape {mask.shape} != tensor shape {x.shape}")
    return mul(x, const(mask))


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def finite_diff_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
) -> dict[str, float]:
    """Compare backward() gradients of f against central finite differences.

    f must rebuild its graph on every call and be deterministic (freeze any
    dropout masks and noise draws before checking). Returns the max relative
    error |g_ad - g_fd| / max(1, |g_fd|) per parameter; tensors with
    requires_grad=False are excluded. The overall max is stored under the
    key "__max__".
    """
    if h <= 0:
        raise ContractError(f"finite-difference step must be positive, got {h}")
    checked = {k: p for k, p in params.items() if p.requires_grad}
    for p in checked.values():
        p.grad = None
    root = f()
    if root.shape != ():
        raise ContractError("finite_diff_check target must return a scalar")
    if not np.isfinite(root.data):
        raise NumericError("finite_diff_check: function value is not finite")
    backward(root)
    analytic = {
        k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for k, p in checked.items()
    }

    report: dict[str, float] = {}
    worst = 0.0
    for name, p in checked.items():
        flat = p.data.reshape(-1)
        g_ad = analytic[name].reshape(-1)
        err = 0.0
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            fp = f().item()
            flat[i] = keep - h
            fm = f().item()
            flat[i] = keep
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(
                    f"finite_diff_check: non-finite value while perturbing {name}"
                )
            g_fd = (fp - fm) / (2.0 * h)
            err = max(err, abs(g_ad[i] - g_fd) / max(1.0, abs(g_fd)))
        report[name] = err
        worst = max(worst, err)
    report["__max__"] = worst
    return report


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
