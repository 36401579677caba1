"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation returns a new :class:`Tensor`.  When at least one input
requires a gradient (and recording is enabled), the output keeps references
to its inputs together with a vector-Jacobian product.  :func:`backward`
linearises that graph into a :class:`Tape` and sweeps it once in reverse.

The engine only covers what the model needs: affine maps, a few pointwise
nonlinearities, two-operand ``einsum``, concatenation, indexing and
reductions.  Broadcasting in binary ops follows numpy rules and gradients
are summed back to the operand shape.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, NonFiniteError, OracleError

EXP_CLAMP = 30.0

_local = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in the current thread."""
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


class Tensor:
    """A float64 array that may participate in a differentiable graph."""

    __slots__ = ("data", "requires_grad", "name", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a 1-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out._op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shapes(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


# --------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "add")
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "sub")
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        )

    return _make(out, (a, b), vjp, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,), "log")


def activation(x, kind: str) -> Tensor:
    """Apply ``relu``, ``tanh``, ``sigmoid`` or ``exp`` elementwise.

    ``exp`` clamps its input to [-30, 30] first; the gradient is zero on the
    clamped region.
    """
    x = as_tensor(x)
    if kind == "relu":
        mask = x.data > 0
        return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")
    if kind == "tanh":
        out = np.tanh(x.data)
        return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")
    if kind == "sigmoid":
        out = expit(x.data)
        return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")
    if kind == "exp":
        inside = np.abs(x.data) <= EXP_CLAMP
        out = np.exp(np.clip(x.data, -EXP_CLAMP, EXP_CLAMP))
        return _make(out, (x,), lambda g: (g * out * inside,), "exp")
    raise ValueError(f"unknown activation {kind!r}")


def relu(x) -> Tensor:
    return activation(x, "relu")


def tanh(x) -> Tensor:
    return activation(x, "tanh")


def sigmoid(x) -> Tensor:
    return activation(x, "sigmoid")


def exp(x) -> Tensor:
    return activation(x, "exp")


# --------------------------------------------------------------------------
# linear algebra


def affine(x, weight, bias) -> Tensor:
    """``weight @ x + bias`` for a vector, or row-wise for a (B, in) batch."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.ndim != 2 or bias.ndim != 1 or x.ndim not in (1, 2):
        raise DimensionError(
            f"affine: expected x 1-D/2-D, weight 2-D, bias 1-D; got {x.shape}, {weight.shape}, {bias.shape}"
        )
    n_out, n_in = weight.shape
    if x.shape[-1] != n_in:
        raise DimensionError(f"affine: input width {x.shape[-1]} does not match weight {weight.shape}")
    if bias.shape[0] != n_out:
        raise DimensionError(f"affine: bias length {bias.shape[0]} does not match output width {n_out}")
    out = x.data @ weight.data.T + bias.data

    def vjp(g):
        gx = g @ weight.data
        if x.ndim == 1:
            gw = np.outer(g, x.data)
            gb = g
        else:
            gw = g.T @ x.data
            gb = g.sum(axis=0)
        return gx, gw, gb

    return _make(out, (x, weight, bias), vjp, "affine")


def einsum(subscripts: str, a, b) -> Tensor:
    """Two-operand einsum without repeated indices inside one operand."""
    a, b = as_tensor(a), as_tensor(b)
    inputs, out_sub = subscripts.replace(" ", "").split("->")
    sa, sb = inputs.split(",")
    try:
        out = np.einsum(subscripts, a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"einsum {subscripts}: {exc}") from exc

    def vjp(g):
        ga = np.einsum(f"{out_sub},{sb}->{sa}", g, b.data)
        gb = np.einsum(f"{out_sub},{sa}->{sb}", g, a.data)
        return ga, gb

    return _make(out, (a, b), vjp, "einsum")


# --------------------------------------------------------------------------
# structural ops


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from exc
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tensors, vjp, "concat")


def take(x, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the gradient."""
    x = as_tensor(x)
    idx = np.asarray(indices)
    axis = axis % x.ndim
    if idx.size and (idx.min() < -x.shape[axis] or idx.max() >= x.shape[axis]):
        raise DimensionError(f"take: index out of range for axis {axis} of size {x.shape[axis]}")
    out = np.take(x.data, idx, axis=axis)

    def vjp(g):
        gx = np.zeros_like(x.data)
        moved = np.moveaxis(gx, axis, 0)
        g_moved = np.moveaxis(g, list(range(axis, axis + idx.ndim)), list(range(idx.ndim)))
        np.add.at(moved, idx, g_moved)
        return (gx,)

    return _make(out, (x,), vjp, "take")


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = x.data[index]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _make(np.array(out, dtype=np.float64), (x,), vjp, "getitem")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError as exc:
        raise DimensionError(f"broadcast_to: {exc}") from exc
    return _make(out, (x,), lambda g: (_unbroadcast(g, x.shape),), "broadcast_to")


def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (x,), vjp, "sum")


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))


# --------------------------------------------------------------------------
# parameters and the tape


class ParamStore:
    """Named trainable tensors plus one gradient slot per parameter."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.grads: dict[str, np.ndarray | None] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        tensor = Tensor(value, requires_grad=True, name=name)
        self._params[name] = tensor
        self.grads[name] = None
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._params.items()

    def zero_grad(self) -> None:
        for name, p in self._params.items():
            self.grads[name] = np.zeros_like(p.data)

    def grad(self, name: str) -> np.ndarray:
        g = self.grads[name]
        if g is None:
            raise ContractError(f"no gradient computed for {name!r}; call backward first")
        return g

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, value in state.items():
            p = self._params[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"{name}: stored shape {value.shape} != parameter shape {p.shape}")
            p.data = value.copy()

    def num_values(self) -> int:
        return int(np.sum([p.size for p in self._params.values()]))


class Tape:
    """Topologically ordered records of the ops that produced ``output``."""

    def __init__(self, records: list[Tensor]):
        self.records = records

    @classmethod
    def from_output(cls, output: Tensor) -> Tape:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.records)

    def run_backward(self, seed: np.ndarray) -> dict[int, np.ndarray]:
        """Propagate ``seed`` from the last record; returns grads keyed by ``id``."""
        grads: dict[int, np.ndarray] = {id(self.records[-1]): seed}
        for node in reversed(self.records):
            g = grads.get(id(node))
            if g is None or node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return grads


def backward(loss: Tensor, store: ParamStore) -> None:
    """Fill ``store.grads`` with d(loss)/d(param); parameters are not modified."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    store.zero_grad()
    if not loss.requires_grad:
        return
    tape = Tape.from_output(loss)
    grads = tape.run_backward(np.ones_like(loss.data))
    for name, p in store.items():
        g = grads.get(id(p))
        if g is not None:
            store.grads[name] = np.asarray(g, dtype=np.float64).reshape(p.shape).copy()


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    store: ParamStore,
    eps: float = 1e-5,
    names: Iterable[str] | None = None,
) -> float:
    """Compare autodiff gradients with central differences.

    The error for a parameter is ``max|autodiff - fd| / (max|fd| + 1e-8)``;
    the maximum over parameters is returned.  ``loss_fn`` takes no
    arguments and must read parameter values from ``store`` on every call.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    first = float(loss_fn())
    second = float(loss_fn())
    if first != second:
        raise OracleError(f"loss_fn is not deterministic ({first!r} != {second!r})")

    backward(loss_fn(), store)
    names = list(store.names() if names is None else names)
    worst = 0.0
    with no_grad():
        for name in names:
            param = store[name]
            analytic = store.grad(name)
            numeric = np.zeros_like(param.data)
            flat = param.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = float(loss_fn())
                flat[i] = orig - eps
                down = float(loss_fn())
                flat[i] = orig
                numeric.reshape(-1)[i] = (up - down) / (2.0 * eps)
            err = np.max(np.abs(analytic - numeric), initial=0.0) / (np.max(np.abs(numeric), initial=0.0) + 1e-8)
            worst = max(worst, float(err))
    return worst
