"""Reverse-mode automatic differentiation over dense float64 arrays.

Record-replay engine sized for small MLP encoders and batch-level loss
surfaces: each operation on a `Tensor` records a node whose closure maps the
output gradient back to input gradients, and `backward()` replays the recorded
graph in reverse dependency order. No general tensor broadcasting beyond the
bias-row case, no GPU, no mixed precision.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "matmul",
    "relu",
    "segment_mean",
    "pairwise_dist",
    "take_rows",
    "finite_diff_check",
    "zero_grads",
]

# Guard used inside the square root of the non-squared pairwise distance so the
# gradient at coincident points is defined (as exactly zero) instead of NaN.
DIST_EPS = 1e-12


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy's broadcast of that operand."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """Float64 array plus the bookkeeping for reverse-mode gradients.

    A tensor built from constants has `requires_grad=False` and records
    nothing, so a forward pass through frozen weights leaves no graph behind.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray]] | None = None

    @classmethod
    def from_op(cls, data, parents: Sequence["Tensor"], backward) -> "Tensor":
        """Record one primitive: `backward(g)` returns one gradient per parent."""
        out = cls(data, requires_grad=any(p.requires_grad for p in parents))
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @staticmethod
    def as_tensor(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph replay --------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate gradients of `self` into every reachable parameter."""
        if grad is None:
            grad = np.ones_like(self.data)
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad = self.grad + np.asarray(grad, dtype=np.float64)

        # iterative post-order: recorded ops are replayed strictly after every
        # op that consumed their output
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if not parent.requires_grad or g is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = Tensor.as_tensor(other)
        a, b = self, other
        out = a.data + b.data
        return Tensor.from_op(
            out, (a, b),
            lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        return self + (-Tensor.as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return Tensor.as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = Tensor.as_tensor(other)
        a, b = self, other
        out = a.data * b.data
        return Tensor.from_op(
            out, (a, b),
            lambda g: (
                _unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape),
            ),
        )

    __rmul__ = __mul__

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def sum(self) -> "Tensor":
        a = self
        return Tensor.from_op(
            np.asarray(a.data.sum()), (a,), lambda g: (np.full_like(a.data, float(g)),)
        )

    def sum_rows(self) -> "Tensor":
        """Row-wise sum of a 2-D tensor; output shape (N,)."""
        a = self
        return Tensor.from_op(
            a.data.sum(axis=1), (a,),
            lambda g: (np.repeat(g[:, None], a.data.shape[1], axis=1),),
        )

    def mean_rows(self) -> "Tensor":
        """Mean over axis 0 (e.g. temporal pooling of a T x d sequence)."""
        a = self
        t = a.data.shape[0]
        if t == 0:
            raise ValueError("mean over an empty sequence")
        return Tensor.from_op(
            a.data.mean(axis=0, keepdims=True), (a,),
            lambda g: (np.repeat(g / t, t, axis=0),),
        )

    def relu(self) -> "Tensor":
        return relu(self)


class Parameter(Tensor):
    """Named trainable tensor; its gradient buffer persists across steps."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.data.shape})"


def zero_grads(params: Sequence[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product; backward is dA = g @ B^T, dB = A^T @ g."""
    a = Tensor.as_tensor(a)
    b = Tensor.as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data
    return Tensor.from_op(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the gradient at exactly 0 is defined as 0."""
    x = Tensor.as_tensor(x)
    keep = x.data > 0
    return Tensor.from_op(np.where(keep, x.data, 0.0), (x,), lambda g: (g * keep,))


def segment_mean(x: Tensor, lengths: Sequence[int]) -> Tensor:
    """Mean-pool contiguous row segments of `x`; one output row per segment.

    Used to pool per-frame features over time for a whole batch at once:
    sequences are concatenated along axis 0 and `lengths` gives each
    sequence's frame count. The gradient of a pooled row is distributed as
    g / T_i to each of that segment's rows.
    """
    x = Tensor.as_tensor(x)
    lens = np.asarray(lengths, dtype=np.int64)
    if lens.size == 0 or np.any(lens < 1):
        raise ValueError("every segment must contain at least one frame")
    if int(lens.sum()) != x.data.shape[0]:
        raise ValueError("segment lengths do not cover the input rows")
    offsets = np.concatenate(([0], np.cumsum(lens)[:-1]))
    pooled = np.add.reduceat(x.data, offsets, axis=0) / lens[:, None]
    return Tensor.from_op(
        pooled, (x,), lambda g: (np.repeat(g / lens[:, None], lens, axis=0),)
    )


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor; backward scatter-adds into the source."""
    x = Tensor.as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return Tensor.from_op(x.data[idx], (x,), bwd)


def pairwise_dist(z: Tensor, squared: bool = False) -> Tensor:
    """N x N Euclidean (or squared Euclidean) distances between rows of `z`.

    Symmetric with an exactly-zero diagonal. In non-squared mode the gradient
    at coincident rows (distance 0) is defined as 0 via `DIST_EPS` inside the
    square root; everywhere else it is the exact analytic gradient.
    """
    z = Tensor.as_tensor(z)
    diff = z.data[:, None, :] - z.data[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    if squared:
        return Tensor.from_op(sq, (z,), lambda g: (_sq_dist_backward(g, z.data),))

    zero = sq <= 0.0
    dist = np.sqrt(sq + DIST_EPS * zero)
    dist[zero] = 0.0

    def bwd(g):
        g_sq = np.where(zero, 0.0, g / (2.0 * np.where(zero, 1.0, dist)))
        return (_sq_dist_backward(g_sq, z.data),)

    return Tensor.from_op(dist, (z,), bwd)


def _sq_dist_backward(g_sq: np.ndarray, z: np.ndarray) -> np.ndarray:
    # d(sq_ij)/dz = 2 (z_i - z_j) routed through both index slots
    s = g_sq + g_sq.T
    return 2.0 * (s.sum(axis=1)[:, None] * z - s @ z)


def finite_diff_check(
    fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    step: float = 1e-5,
) -> float:
    """Compare analytic gradients of `fn()` against central differences.

    `fn` rebuilds the scalar loss from the current parameter values. Returns
    the max over all parameter coordinates of
    |analytic - numeric| / max(1, |numeric|).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    zero_grads(params)
    loss = fn()
    if not np.isfinite(loss.data):
        raise ValueError("loss is not finite at the evaluation point")
    loss.backward()
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = fn().item()
            flat[i] = orig - step
            f_minus = fn().item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise ValueError("loss became non-finite during finite differencing")
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(ana.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
