"""
Dense Tensor with Reverse-Mode Automatic Differentiation

A small numpy-backed tensor type and the operation set the attention engine
and the models need. Every operation applied to a tensor that requires grad
records a node carrying a monotonically increasing sequence number; backward
replays the reachable nodes in exact reverse recording order.

Storage is always row-major contiguous. Broadcasting is limited to scalars and
a trailing-dimension vector (biases); matmul additionally accepts a 2-D right
operand shared across leading dimensions (weights).
"""

import contextlib
import contextvars
import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DataError, DimensionError, EmptyAttentionRowError, GradCheckError, NumericalError


GELU_TANH_COEFF = math.sqrt(2.0 / math.pi)
GELU_CUBIC_COEFF = 0.044715
LAYERNORM_EPS = 1e-5

_SEQUENCE = itertools.count()
_GRAD_ENABLED = contextvars.ContextVar("grad_enabled", default=True)

_DTYPE_ALIASES = {
    "single": np.float32,
    "float32": np.float32,
    "f32": np.float32,
    "double": np.float64,
    "float64": np.float64,
    "f64": np.float64,
}

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def resolve_dtype(dtype: Any) -> np.dtype:
    if isinstance(dtype, str):
        if dtype not in _DTYPE_ALIASES:
            raise DataError(f"Unknown dtype '{dtype}', expected one of {sorted(_DTYPE_ALIASES)}")
        return np.dtype(_DTYPE_ALIASES[dtype])
    resolved = np.dtype(dtype)
    if resolved not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise DataError(f"Unsupported tensor dtype {resolved}")
    return resolved


@dataclass(eq=False)
class Node:
    """One recorded operation: its inputs and the rule mapping the output gradient to input gradients"""
    op: str
    inputs: Tuple["Tensor", ...]
    backward_fn: BackwardFn
    seq: int = field(default_factory=lambda: next(_SEQUENCE))


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Any = None,
        name: Optional[str] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            arr = np.asarray(data, dtype=resolve_dtype(dtype))
        else:
            arr = np.asarray(data)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(np.float32)
        self.data: np.ndarray = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None
        self.name = name

    # ------------------------------------------------------------------ info
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.size != 1:
            raise DimensionError("item", self.shape, detail="only single-element tensors convert to a scalar")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"

    # ------------------------------------------------------------- operators
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return self.__mul__(other)

    def __truediv__(self, other: float) -> "Tensor":
        if not isinstance(other, (int, float)):
            raise DimensionError("div", self.shape, np.shape(other), detail="only division by a python scalar")
        return scale(self, 1.0 / float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, key: Any) -> "Tensor":
        return getitem(self, key)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, axes or None)


# ---------------------------------------------------------------- recording
def is_grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block"""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def custom_op(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """
    Wrap `data` as the output of a recorded operation.

    `backward_fn` receives the output gradient and returns one gradient (or None)
    per input, each with that input's shape.
    """
    out = Tensor(data, dtype=data.dtype if data.dtype in (np.float32, np.float64) else None)
    if _GRAD_ENABLED.get() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, tuple(inputs), backward_fn)
    return out


def as_tensor(value: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=like.dtype if like is not None else None)


@dataclass
class Graph:
    """Recorded operations reachable from a root, in recording order"""
    nodes: List[Node]

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        seen = {}
        stack = [root.node] if root.node is not None else []
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen[id(node)] = node
            for inp in node.inputs:
                if inp.node is not None and id(inp.node) not in seen:
                    stack.append(inp.node)
        return cls(sorted(seen.values(), key=lambda n: n.seq))

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, graph: Optional[Graph] = None) -> None:
    """
    Populate `.grad` on every leaf tensor that requires grad and reaches `loss`.

    Leaf gradients accumulate across calls; intermediate gradients are not retained.
    """
    if loss.size != 1:
        raise DimensionError("backward", loss.shape, detail="seed must be a scalar loss")
    if not loss.requires_grad or loss.node is None:
        return
    graph = graph or Graph.trace(loss)
    pending = {id(loss.node): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        grad_out = pending.pop(id(node), None)
        if grad_out is None:
            continue
        input_grads = node.backward_fn(grad_out)
        for inp, grad_in in zip(node.inputs, input_grads):
            if grad_in is None or not inp.requires_grad:
                continue
            if grad_in.shape != inp.shape:
                raise DimensionError(f"backward[{node.op}]", grad_in.shape, inp.shape)
            if inp.node is None:
                grad_in = np.asarray(grad_in, dtype=inp.dtype)
                inp.grad = grad_in.copy() if inp.grad is None else inp.grad + grad_in
            else:
                key = id(inp.node)
                pending[key] = grad_in if key not in pending else pending[key] + grad_in


# ---------------------------------------------------------------- helpers
def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    if a.shape == b.shape:
        return a.shape
    for big, small in ((a, b), (b, a)):
        if small.size == 1 and small.ndim <= big.ndim:
            return big.shape
        if small.ndim == 1 and big.ndim >= 1 and small.shape[0] == big.shape[-1]:
            return big.shape
    raise DimensionError(op, a.shape, b.shape, detail="only scalar and trailing-vector broadcasting")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _is_basic_index(key: Any) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


# ------------------------------------------------------------ element-wise
def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)
    return custom_op(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)
    return custom_op(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)
    return custom_op(
        "mul", a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a: Tensor, factor: float) -> Tensor:
    return custom_op("scale", a.data * a.dtype.type(factor), (a,), lambda g: (g * a.dtype.type(factor),))


def _pair(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    like = a if isinstance(a, Tensor) else b if isinstance(b, Tensor) else None
    return as_tensor(a, like), as_tensor(b, like)


# ----------------------------------------------------------------- linear
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    C[..., i, j] = Σ_t A[..., i, t] · B[..., t, j].

    B may be 2-D and shared across A's leading dimensions; otherwise leading
    dimensions must match exactly.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul", a.shape, b.shape, detail="inner dimensions must agree")
    shared = b.ndim == 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError("matmul", a.shape, b.shape, detail="leading dimensions must match")

    def backward_fn(g):
        grad_a = g @ np.swapaxes(b.data, -1, -2)
        if shared and a.ndim > 2:
            grad_b = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            grad_b = np.swapaxes(a.data, -1, -2) @ g
        return grad_a, grad_b

    return custom_op("matmul", a.data @ b.data, (a, b), backward_fn)


# ------------------------------------------------------------------ shape
def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    out = a.data.reshape(tuple(shape))
    return custom_op("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(a.data, axes))
    return custom_op("transpose", out, (a,), lambda g: (np.ascontiguousarray(np.transpose(g, inverse)),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return [np.ascontiguousarray(part) for part in np.split(g, splits, axis=axis)]

    return custom_op("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, backward_fn)


def getitem(a: Tensor, key: Any) -> Tensor:
    out = np.ascontiguousarray(a.data[key])
    basic = _is_basic_index(key)

    def backward_fn(g):
        grad = np.zeros_like(a.data)
        if basic:
            grad[key] = g
        else:
            np.add.at(grad, key, g)
        return (grad,)

    return custom_op("getitem", out, (a,), backward_fn)


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup: out[..., :] = table[ids[...], :]"""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DataError(f"take_rows: ids outside [0, {table.shape[0]})")

    def backward_fn(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return custom_op("take_rows", table.data[ids], (table,), backward_fn)


def set_rows(base: Tensor, rows_idx: Sequence[int], rows: Tensor) -> Tensor:
    """Copy of `base` whose rows (axis -2) at `rows_idx` are replaced by `rows`"""
    rows_idx = np.asarray(rows_idx, dtype=np.int64)
    expected = base.shape[:-2] + (len(rows_idx), base.shape[-1])
    if rows.shape != expected:
        raise DimensionError("set_rows", base.shape, rows.shape)
    out = base.data.copy()
    out[..., rows_idx, :] = rows.data

    def backward_fn(g):
        grad_base = g.copy()
        grad_base[..., rows_idx, :] = 0
        return grad_base, np.ascontiguousarray(g[..., rows_idx, :])

    return custom_op("set_rows", out, (base, rows), backward_fn)


# -------------------------------------------------------------- reductions
def tsum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return custom_op("sum", out, (a,), backward_fn)


def mean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# --------------------------------------------------------- neural network
def masked_softmax(x: Tensor, mask: Union[np.ndarray, Tensor, None] = None) -> Tensor:
    """
    Softmax over the last axis restricted to `mask`; masked entries are exactly 0.

    Raises EmptyAttentionRowError if any row has no unmasked entry.
    """
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=bool)
    try:
        mask = np.broadcast_to(mask, x.shape)
    except ValueError as exc:
        raise DimensionError("masked_softmax", x.shape, mask.shape) from exc
    row_has_key = mask.any(axis=-1)
    if not row_has_key.all():
        empty = int((~row_has_key).sum())
        raise EmptyAttentionRowError(f"masked_softmax: {empty} row(s) have no unmasked entry")
    logits = np.where(mask, x.data, -np.inf)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.where(mask, np.exp(shifted), 0.0).astype(x.dtype, copy=False)
    probs = exp / exp.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        return (probs * (g - (g * probs).sum(axis=-1, keepdims=True)),)

    return custom_op("masked_softmax", probs, (x,), backward_fn)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError("layernorm", x.shape, gamma.shape, beta.shape)
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def backward_fn(g):
        grad_gamma = _unbroadcast(g * xhat, gamma.shape)
        grad_beta = _unbroadcast(g, beta.shape)
        gxhat = g * gamma.data
        grad_x = inv_std * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return grad_x, grad_gamma, grad_beta

    return custom_op("layernorm", out, (x, gamma, beta), backward_fn)


def gelu(x: Tensor) -> Tensor:
    """GeLU, tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))"""
    v = x.data
    inner = GELU_TANH_COEFF * (v + GELU_CUBIC_COEFF * v ** 3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def backward_fn(g):
        d_inner = GELU_TANH_COEFF * (1.0 + 3.0 * GELU_CUBIC_COEFF * v ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t ** 2) * d_inner),)

    return custom_op("gelu", out, (x,), backward_fn)


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool = True) -> Tensor:
    """Inverted dropout; identity when not training, p == 0 or no generator"""
    if not training or p <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype)
    keep *= x.dtype.type(1.0 / (1.0 - p))
    return custom_op("dropout", x.data * keep, (x,), lambda g: (g * keep,))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(
    logits: Tensor,
    targets: Sequence[int],
    weight: Union[np.ndarray, Tensor, None] = None,
) -> Tensor:
    """Weighted mean negative log-likelihood in nats over rows of `logits` [t, V]"""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise DimensionError("cross_entropy", logits.shape, targets.shape)
    vocab = logits.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        bad = targets[(targets < 0) | (targets >= vocab)]
        raise DataError(f"cross_entropy: target ids {bad[:5].tolist()} outside [0, {vocab})")
    if weight is None:
        w = np.ones(targets.shape, dtype=logits.dtype)
    else:
        w = np.asarray(weight.data if isinstance(weight, Tensor) else weight, dtype=logits.dtype)
        if w.shape != targets.shape:
            raise DimensionError("cross_entropy", targets.shape, w.shape, detail="weight")
    if (w < 0).any() or w.sum() <= 0:
        raise DataError("cross_entropy: weights must be non-negative with a positive sum")
    total = w.sum()
    logp = log_softmax(logits.data)
    rows = np.arange(targets.size)
    nll = -logp[rows, targets]
    loss = np.asarray((w * nll).sum() / total, dtype=logits.dtype)

    def backward_fn(g):
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        return (grad * (g * w / total)[:, None],)

    return custom_op("cross_entropy", loss, (logits,), backward_fn)


def bits_per_char(loss_nats: Union[float, Tensor]) -> float:
    value = loss_nats.item() if isinstance(loss_nats, Tensor) else float(loss_nats)
    return value / math.log(2.0)


# ------------------------------------------------------------ verification
def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
    samples: int = 32,
    seed: int = 0,
) -> float:
    """
    Max over sampled coordinates of |analytic − central difference| / max(1, |central difference|).

    `f` must rebuild its graph from the current parameter values on every call.
    """
    params = list(params)
    for p in params:
        if p.dtype != np.float64:
            raise GradCheckError(f"grad_check requires double precision, got {p.dtype} for {p.name or p.shape}")
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericalError("grad_check: loss is not finite")
    backward(loss)
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

    sizes = np.array([p.size for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    picks = rng.choice(int(offsets[-1]), size=min(samples, int(offsets[-1])), replace=False)

    worst = 0.0
    for flat in np.sort(picks):
        index = int(np.searchsorted(offsets, flat, side="right") - 1)
        local = int(flat - offsets[index])
        values = params[index].data.reshape(-1)
        original = values[local]
        with no_grad():
            values[local] = original + eps
            plus = f().item()
            values[local] = original - eps
            minus = f().item()
        values[local] = original
        if not (math.isfinite(plus) and math.isfinite(minus)):
            raise NumericalError("grad_check: non-finite loss under perturbation")
        numeric = (plus - minus) / (2.0 * eps)
        error = abs(float(analytic[index].reshape(-1)[local]) - numeric) / max(1.0, abs(numeric))
        worst = max(worst, error)
    return worst
