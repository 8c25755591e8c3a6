"""Tape-based reverse-mode differentiation over numpy arrays.

Every differentiable operation in hmoe goes through ``record_op``: it computes the
forward value eagerly and, when a ``Tape`` is active and some input requires a
gradient, appends a node holding the backward rule. ``backward`` replays the tape
once in reverse and writes ``.grad`` on leaf tensors (parameters and any input the
caller marked ``requires_grad``).

Outside of a ``Tape`` block nothing is recorded, which is how inference runs.
"""

import contextvars
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DataError, DimensionError, MathDomainError

logger = logging.getLogger(__name__)

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "hmoe_active_tape", default=None
)


class Tensor:
    """Dense float64 array with an attached gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name")
    # numpy scalars on the left of an operator defer to Tensor's reflected methods
    __array_priority__ = 100

    def __init__(self, data: Any, requires_grad: bool = False, name: str | None = None):
        self.data: np.ndarray = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def parameter(cls, data: Any, name: str | None = None) -> "Tensor":
        """Create a trainable leaf that owns a private copy of ``data``."""
        return cls(np.array(data, dtype=DTYPE, copy=True), requires_grad=True, name=name)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # operators

    def __add__(self, other: Any) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: Any) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: Any) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, key: Any) -> "Tensor":
        return getitem(self, key)

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


@dataclass
class TapeNode:
    """One executed operation: its output, inputs and the rule mapping dL/dout to dL/dinputs."""

    op: str
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; operations executed inside the block are recorded.
    Nodes are appended in execution order, so inputs always precede their consumers.
    """

    def __init__(self) -> None:
        self.nodes: list[TapeNode] = []
        self._token: contextvars.Token | None = None

    def record(self, op: str, output: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn):
        self.nodes.append(TapeNode(op=op, output=output, inputs=inputs, backward=backward))

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc_info: Any) -> None:
        if self._token is not None:
            _active_tape.reset(self._token)
            self._token = None


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording for the enclosed block."""
    token = _active_tape.set(None)
    try:
        yield
    finally:
        _active_tape.reset(token)


def as_tensor(value: Any) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def record_op(
    op: str, data: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn
) -> Tensor:
    """Wrap ``data`` as the output of ``op`` and record it on the active tape if needed.

    ``backward`` receives dL/dout and returns one gradient (or None) per input.
    Extension operations such as the gradient reversal layer are built on this.
    """
    tape = _active_tape.get()
    inputs = tuple(inputs)
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        tape.record(op, out, inputs, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from e


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------


def add(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record_op("add", a.data + b.data, (a, b), backward)


def sub(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record_op("sub", a.data - b.data, (a, b), backward)


def mul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record_op("mul", a.data * b.data, (a, b), backward)


def div(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)

    def backward(g: np.ndarray):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return record_op("div", a.data / b.data, (a, b), backward)


def neg(a: Any) -> Tensor:
    a = as_tensor(a)
    return record_op("neg", -a.data, (a,), lambda g: (-g,))


def exp(a: Any) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record_op("exp", out, (a,), lambda g: (g * out,))


def log(a: Any) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise MathDomainError(f"log of non-positive value (min={a.data.min():.3g})")
    return record_op("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def square(a: Any) -> Tensor:
    a = as_tensor(a)
    return record_op("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def relu(a: Any) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return record_op("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Any) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return record_op("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a: Any) -> Tensor:
    """x * sigmoid(x)."""
    a = as_tensor(a)
    s = _sigmoid(a.data)

    def backward(g: np.ndarray):
        return (g * s * (1.0 + a.data * (1.0 - s)),)

    return record_op("silu", a.data * s, (a,), backward)


def clamp_min(a: Any, floor: float) -> Tensor:
    a = as_tensor(a)
    mask = a.data >= floor
    return record_op("clamp_min", np.maximum(a.data, floor), (a,), lambda g: (g * mask,))


ELEMENTWISE: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "exp": exp,
    "log": log,
    "square": square,
    "relu": relu,
    "silu": silu,
    "sigmoid": sigmoid,
}


def elementwise(op: str, *args: Any) -> Tensor:
    """Dispatch a pointwise operation by name."""
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op '{op}'") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# Linear algebra and shape
# ---------------------------------------------------------------------------


def matmul(a: Any, b: Any) -> Tensor:
    """Matrix product; leading (batch) dimensions broadcast like ``numpy.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g: np.ndarray):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record_op("matmul", np.matmul(a.data, b.data), (a, b), backward)


def reshape(a: Any, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as e:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from e
    return record_op("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def getitem(a: Any, key: Any) -> Tensor:
    """Basic or fancy indexing; repeated indices accumulate in the backward pass."""
    a = as_tensor(a)
    try:
        out = a.data[key]
    except IndexError as e:
        raise DimensionError(f"index {key!r} out of range for shape {a.shape}") from e

    def backward(g: np.ndarray):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return record_op("getitem", np.array(out, dtype=DTYPE), (a,), backward)


def stack(tensors: Sequence[Any], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"stack: {e}") from e

    def backward(g: np.ndarray):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return record_op("stack", out, tensors, backward)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def _check_axis(a: Tensor, axis: int | None) -> None:
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} is invalid for a {a.ndim}-d tensor")


def _expand_grad(g: np.ndarray, a: Tensor, axis: int | None, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, a.shape)


def reduce_sum(a: Any, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return record_op("sum", out, (a,), lambda g: (_expand_grad(g, a, axis, keepdims),))


def reduce_mean(a: Any, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis)
    n = a.size if axis is None else a.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)
    return record_op("mean", out, (a,), lambda g: (_expand_grad(g, a, axis, keepdims) / n,))


REDUCTIONS: dict[str, Callable[..., Tensor]] = {"sum": reduce_sum, "mean": reduce_mean}


def reduce(op: str, a: Any, axis: int | None = None, keepdims: bool = False) -> Tensor:
    try:
        fn = REDUCTIONS[op]
    except KeyError:
        raise ContractError(f"unknown reduction '{op}'") from None
    return fn(a, axis=axis, keepdims=keepdims)


# ---------------------------------------------------------------------------
# Softmax family and fused losses
# ---------------------------------------------------------------------------


def _stable_softmax(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a: Any, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis)
    if not np.all(np.isfinite(a.data)):
        raise MathDomainError("softmax of non-finite input")
    out = _stable_softmax(a.data, axis)

    def backward(g: np.ndarray):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record_op("softmax", out, (a,), backward)


def log_softmax(a: Any, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g: np.ndarray):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return record_op("log_softmax", out, (a,), backward)


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(
            f"class labels must lie in [0, {n_classes}); got {labels.min()}..{labels.max()}"
        )
    out = np.zeros((labels.size, n_classes), dtype=DTYPE)
    out[np.arange(labels.size), labels] = 1.0
    return out


def cross_entropy(logits: Any, targets: Any) -> Tensor:
    """Mean cross-entropy fused from logits.

    ``targets`` is either integer class indices of shape [batch] or a matrix of
    per-row target distributions of shape [batch x classes] (soft labels, as
    produced by mixup).
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects [batch x classes] logits, got {logits.shape}")
    batch, n_classes = logits.shape
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets)
    if t.ndim == 1:
        t = one_hot(t, n_classes)
    t = t.astype(DTYPE)
    if t.shape != logits.shape:
        raise DimensionError(f"cross_entropy: targets {t.shape} do not match logits {logits.shape}")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -(t * log_probs).sum() / batch

    def backward(g: np.ndarray):
        probs = np.exp(log_probs)
        return (g * (probs * t.sum(axis=1, keepdims=True) - t) / batch,)

    return record_op("cross_entropy", np.asarray(loss), (logits,), backward)


def mse_loss(pred: Any, target: Any) -> Tensor:
    """Mean squared error; ``target`` is reshaped to ``pred``'s shape when sizes agree."""
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=DTYPE)
    if target.size != pred.size:
        raise DimensionError(f"mse: target size {target.size} != prediction size {pred.size}")
    return reduce_mean(square(pred - Tensor(target.reshape(pred.shape))))


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def backward(tape: Tape, root: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Populate ``.grad`` on every leaf reachable from the scalar ``root``.

    Gradients accumulate into existing ``.grad`` values; zero them at the start of
    a training step. Tensors in ``params`` that are unreachable get a zero gradient.
    """
    if root.size != 1:
        raise ContractError(f"backward root must be a scalar, got shape {root.shape}")

    produced = {id(node.output) for node in tape.nodes}
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    leaves: dict[int, Tensor] = {}
    if root.requires_grad and id(root) not in produced:
        leaves[id(root)] = root

    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, ig in zip(node.inputs, node.backward(g)):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = grads[key] + ig if key in grads else ig
            if key not in produced:
                leaves[key] = inp

    for key, tensor in leaves.items():
        g = np.asarray(grads[key], dtype=DTYPE).reshape(tensor.shape)
        tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g

    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------


def numerical_gradient(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-6) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to ``param.data``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = fn().item()
            flat[i] = original - h
            minus = fn().item()
            flat[i] = original
            out[i] = (plus - minus) / (2.0 * h)
    return grad


def gradient_check(
    fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-6
) -> dict[str, float]:
    """Relative error between tape gradients and central differences, per parameter.

    The error of a parameter is ``|analytic - numeric|_2 / max(|analytic|_2, |numeric|_2, 1e-8)``.
    """
    zero_grad(params)
    with Tape() as tape:
        loss = fn()
    backward(tape, loss, params)

    errors: dict[str, float] = {}
    for i, p in enumerate(params):
        analytic = p.grad.copy()
        numeric = numerical_gradient(fn, p, h)
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
        errors[p.name or f"param_{i}"] = float(np.linalg.norm(analytic - numeric) / scale)
    return errors
