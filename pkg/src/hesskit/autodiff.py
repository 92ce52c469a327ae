"""Dense float64 tensors with reverse-mode differentiation.

The engine is deliberately small: a fresh computation record is built for
every evaluation (while gradients are enabled), and ``backward`` walks that
record in reverse topological order, accumulating into ``Parameter``
gradients. Only the primitives the toolkit actually needs are provided:
matrix multiply, bias add, elementwise arithmetic and scaling, tanh, the
leaky rectifier, softplus, square, sum / mean / variance / max reductions,
stacking, reshaping and feature normalization.

Everything is float64; finite-difference losses divide second differences
by epsilon**2 and need the headroom. Any primitive that produces a
non-finite value raises :class:`NumericError` naming the op instead of
propagating NaNs.

Evaluations on separate records are independent and may run concurrently;
a single record must stay confined to one thread. Parameters are
read-shared during evaluation and must be held exclusively while gradients
are applied.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, NumericError

_GRAD_STATE = threading.local()  # per-thread, so parallel oracles cannot race


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block; evaluation runs off-record."""
    previous = grad_enabled()
    _GRAD_STATE.enabled = False
    try:
        yield
    finally:
        _GRAD_STATE.enabled = previous


def grad_enabled() -> bool:
    return getattr(_GRAD_STATE, "enabled", True)


class Tensor:
    """Immutable-by-convention wrapper around a float64 ndarray.

    Tensors created by primitives carry the op kind, their parents and a
    backward closure, which together form the computation record.
    """

    __slots__ = ("values", "requires_grad", "op", "_parents", "_vjp", "_fwd")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite values in tensor construction")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None
        self._fwd = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractViolation(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{req})"

    # arithmetic sugar over the primitives below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def sum(self, axis=None):
        return _reduce_sum(self, axis)

    def mean(self, axis=None):
        return _reduce_mean(self, axis)

    def var(self, axis=None, ddof: int = 1):
        return _reduce_var(self, axis, ddof)

    def max(self, axis=None):
        return _reduce_max(self, axis)

    def reshape(self, shape):
        return reshape(self, shape)


class Parameter(Tensor):
    """Named leaf tensor with a persistent gradient accumulator.

    Gradients accumulate additively across backward calls until
    :meth:`zero_grad` resets them. Set ``requires_grad = False`` to freeze
    the parameter (its accumulator is then never touched).
    """

    __slots__ = ("name", "grad")

    def __init__(self, name: str, values):
        super().__init__(values, requires_grad=True)
        self.name = str(name)
        self.grad = np.zeros_like(self.values)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.values)

    def assign(self, values) -> None:
        """Replace the value in an optimizer step; shape must be preserved."""
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != self.values.shape:
            raise ContractViolation(
                f"parameter {self.name!r}: assign shape {arr.shape} != {self.values.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite update for parameter {self.name!r}")
        self.values = arr
        if self.grad.shape != arr.shape:
            self.grad = np.zeros_like(arr)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(kind: str, out_values: np.ndarray, parents: tuple, vjp, fwd) -> Tensor:
    """Wrap a primitive result, recording it when gradients are enabled."""
    if not np.all(np.isfinite(out_values)):
        raise NumericError(f"non-finite result in op {kind!r}")
    out = Tensor.__new__(Tensor)
    out.values = out_values
    out.op = kind
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
        out._fwd = fwd
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
        out._fwd = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape numpy broadcast it from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gs, ts) in enumerate(zip(g.shape, shape)):
        if ts == 1 and gs != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    try:
        out = a.values + b.values
    except ValueError as exc:
        raise ContractViolation(f"add: shapes {a.shape} and {b.shape} do not conform") from exc

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", out, (a, b), vjp, lambda: a.values + b.values)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    try:
        out = a.values - b.values
    except ValueError as exc:
        raise ContractViolation(f"sub: shapes {a.shape} and {b.shape} do not conform") from exc

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", out, (a, b), vjp, lambda: a.values - b.values)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    try:
        out = a.values * b.values
    except ValueError as exc:
        raise ContractViolation(f"mul: shapes {a.shape} and {b.shape} do not conform") from exc

    def vjp(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return _make("mul", out, (a, b), vjp, lambda: a.values * b.values)


def scale(a, c: float) -> Tensor:
    a = _coerce(a)
    if not np.isscalar(c) and not isinstance(c, (int, float)):
        raise ContractViolation("scale: factor must be a python scalar")
    c = float(c)
    if not np.isfinite(c):
        raise NumericError("scale: non-finite factor")
    return _make("scale", a.values * c, (a,), lambda g: (g * c,), lambda: a.values * c)


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ContractViolation(f"matmul: expects 1-D or 2-D operands, got {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.values, b.values)
    except ValueError as exc:
        raise ContractViolation(f"matmul: shapes {a.shape} and {b.shape} do not conform") from exc

    def vjp(g):
        av, bv = a.values, b.values
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        if av.ndim == 1 and bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        return g * bv, g * av  # 1-D dot product

    return _make("matmul", out, (a, b), vjp, lambda: np.matmul(a.values, b.values))


def transpose(a) -> Tensor:
    a = _coerce(a)
    if a.ndim != 2:
        raise ContractViolation(f"transpose: expects a matrix, got shape {a.shape}")
    return _make(
        "transpose",
        np.ascontiguousarray(a.values.T),
        (a,),
        lambda g: (np.ascontiguousarray(g.T),),
        lambda: np.ascontiguousarray(a.values.T),
    )


def tanh(a) -> Tensor:
    a = _coerce(a)
    out = np.tanh(a.values)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out * out),), lambda: np.tanh(a.values))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _coerce(a)
    out = np.where(a.values >= 0.0, a.values, slope * a.values)

    def vjp(g):
        return (g * np.where(a.values >= 0.0, 1.0, slope),)

    return _make(
        "leaky_relu", out, (a,), vjp, lambda: np.where(a.values >= 0.0, a.values, slope * a.values)
    )


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus(a) -> Tensor:
    a = _coerce(a)
    out = _softplus(a.values)

    def vjp(g):
        x = a.values
        sig = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))
        return (g * sig,)

    return _make("softplus", out, (a,), vjp, lambda: _softplus(a.values))


def square(a) -> Tensor:
    a = _coerce(a)
    return _make(
        "square",
        a.values * a.values,
        (a,),
        lambda g: (2.0 * a.values * g,),
        lambda: a.values * a.values,
    )


def _expand(g: np.ndarray, axis, shape: tuple[int, ...]) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def _reduce_sum(a, axis) -> Tensor:
    a = _coerce(a)
    out = np.sum(a.values, axis=axis)
    return _make(
        "sum",
        out,
        (a,),
        lambda g: (_expand(g, axis, a.shape),),
        lambda: np.sum(a.values, axis=axis),
    )


def _reduce_mean(a, axis) -> Tensor:
    a = _coerce(a)
    n = a.size if axis is None else a.shape[axis]
    if n == 0:
        raise ContractViolation("mean of an empty tensor")
    out = np.mean(a.values, axis=axis)
    return _make(
        "mean",
        out,
        (a,),
        lambda g: (_expand(g, axis, a.shape) / n,),
        lambda: np.mean(a.values, axis=axis),
    )


def _reduce_var(a, axis, ddof: int) -> Tensor:
    a = _coerce(a)
    n = a.size if axis is None else a.shape[axis]
    if n <= ddof:
        raise ContractViolation(f"variance over {n} values with ddof={ddof}")
    out = np.var(a.values, axis=axis, ddof=ddof)
    centered = a.values - np.mean(a.values, axis=axis, keepdims=axis is not None)

    def vjp(g):
        return (_expand(g, axis, a.shape) * (2.0 / (n - ddof)) * centered,)

    return _make("var", out, (a,), vjp, lambda: np.var(a.values, axis=axis, ddof=ddof))


def _reduce_max(a, axis) -> Tensor:
    a = _coerce(a)
    if a.size == 0:
        raise ContractViolation("max of an empty tensor")
    out = np.max(a.values, axis=axis)

    def vjp(g):
        # gradient routed to the first maximal entry, matching np.argmax ties
        grad = np.zeros_like(a.values)
        if axis is None:
            grad.flat[np.argmax(a.values)] = g
        else:
            idx = np.expand_dims(np.argmax(a.values, axis=axis), axis)
            np.put_along_axis(grad, idx, np.expand_dims(g, axis), axis)
        return (grad,)

    return _make("max", out, (a,), vjp, lambda: np.max(a.values, axis=axis))


def stack(tensors, axis: int = 0) -> Tensor:
    parts = tuple(_coerce(t) for t in tensors)
    if not parts:
        raise ContractViolation("stack of zero tensors")
    if any(p.shape != parts[0].shape for p in parts):
        raise ContractViolation("stack: all tensors must share one shape")
    out = np.stack([p.values for p in parts], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return _make("stack", out, parts, vjp, lambda: np.stack([p.values for p in parts], axis=axis))


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    try:
        out = np.reshape(a.values, shape)
    except ValueError as exc:
        raise ContractViolation(f"reshape: cannot view {a.shape} as {shape}") from exc
    return _make(
        "reshape",
        out,
        (a,),
        lambda g: (np.reshape(g, a.shape),),
        lambda: np.reshape(a.values, shape),
    )


def feature_normalize(a, delta: float = 1e-8) -> Tensor:
    """Divide each row by the root mean square of its entries.

    Computes x / sqrt(mean_j(x_j**2) + delta) along the last axis.
    """
    a = _coerce(a)
    if a.ndim < 1:
        raise ContractViolation("feature_normalize: scalar input")
    m = a.shape[-1]

    def kernel():
        r = np.mean(a.values * a.values, axis=-1, keepdims=True)
        return a.values / np.sqrt(r + delta)

    r = np.mean(a.values * a.values, axis=-1, keepdims=True)
    s = np.sqrt(r + delta)
    out = a.values / s

    def vjp(g):
        inner = np.sum(g * a.values, axis=-1, keepdims=True)
        return (g / s - a.values * inner / (m * s**3),)

    return _make("feature_normalize", out, (a,), vjp, kernel)


# ---------------------------------------------------------------------------
# record traversal, backward, replay


def record(root: Tensor) -> list[Tensor]:
    """The computation record: op applications in topological order."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(parameter) into every reachable Parameter."""
    if not isinstance(loss, Tensor):
        raise ContractViolation("backward: loss must be a Tensor")
    if loss.values.shape != ():
        raise ContractViolation(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = record(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad = node.grad + g
            continue
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            held = grads.get(id(parent))
            grads[id(parent)] = pg if held is None else held + pg


def replay(root: Tensor) -> bool:
    """Re-execute every recorded op; True iff all outputs reproduce bit-identically."""
    for node in record(root):
        if node._fwd is not None and not np.array_equal(node._fwd(), node.values):
            return False
    return True


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradientCheckReport:
    """Per-parameter max relative error of analytic vs central-difference gradients."""

    step: float
    tolerance: float
    per_parameter: dict[str, float] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(self.per_parameter.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def gradient_check(loss_fn, parameters, step: float, tolerance: float) -> GradientCheckReport:
    """Compare backward() gradients of ``loss_fn()`` against central finite differences.

    ``loss_fn`` must be a deterministic closure over ``parameters`` returning a
    scalar Tensor. Existing gradient accumulators are reset.
    """
    if step <= 0.0 or tolerance <= 0.0:
        raise ContractViolation("gradient_check: step and tolerance must be positive")
    params = list(parameters)
    report = GradientCheckReport(step=step, tolerance=tolerance)
    if not params:
        return report
    for p in params:
        if not np.all(np.isfinite(p.values)):
            raise ContractViolation(f"gradient_check: parameter {p.name!r} is not finite")
        p.zero_grad()
    backward(loss_fn())
    analytic = {p.name: p.grad.copy() for p in params}
    with no_grad():
        for p in params:
            fd = np.zeros_like(p.values)
            for i in range(p.values.size):
                orig = p.values.flat[i]
                p.values.flat[i] = orig + step
                f_plus = loss_fn().item()
                p.values.flat[i] = orig - step
                f_minus = loss_fn().item()
                p.values.flat[i] = orig
                fd.flat[i] = (f_plus - f_minus) / (2.0 * step)
            a = analytic[p.name]
            denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-8)
            report.per_parameter[p.name] = float(np.max(np.abs(a - fd) / denom))
    return report
