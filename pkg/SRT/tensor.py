import logging

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import ArrayLike

from .errors import DimensionError, ParameterError, LabelIndexError, ContractError

logger = logging.getLogger(__name__)

class Tensor:
    """Immutable dense float64 array. Entries are stored row-major."""

    __slots__ = ("_data",)

    _data: np.ndarray

    def __init__(self, data: ArrayLike) -> None:
        array = np.array(data, dtype=np.float64)
        array.setflags(write=False)
        self._data = array

    @classmethod
    def wrap(cls, array: np.ndarray) -> "Tensor":
        tensor = cls.__new__(cls)
        view = np.asarray(array, dtype=np.float64).view()
        view.setflags(write=False)
        tensor._data = view
        return tensor

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "Tensor":
        return cls.wrap(np.zeros(tuple(shape)))

    @classmethod
    def ones(cls, shape: Sequence[int]) -> "Tensor":
        return cls.wrap(np.ones(tuple(shape)))

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def size(self) -> int:
        return int(self._data.size)

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def item(self) -> float:
        return float(self._data.reshape(-1)[0])

    def __array__(self, dtype=None, copy=None) -> np.ndarray:
        if dtype is None:
            return self._data.copy() if copy else self._data
        return self._data.astype(dtype)

    def __len__(self) -> int:
        return self._data.shape[0]

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

@dataclass(eq=False)
class TapeNode:
    tape: "Tape" = field(repr=False)
    id: int
    op: str
    inputs: tuple[int, ...]
    value: Tensor
    requires_grad: bool
    name: Optional[str] = None
    vjp: Optional[VJP] = field(default=None, repr=False)
    adjoint: Optional[Tensor] = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

class Tape:
    """Single-threaded record of one forward pass. Consumed by `backward`."""

    nodes: list[TapeNode]
    freed: bool

    def __init__(self) -> None:
        self.nodes = []
        self.freed = False
        self._names: set[str] = set()

    def push(self, op: str, inputs: tuple[int, ...], value: Tensor, requires_grad: bool, name: Optional[str] = None, vjp: Optional[VJP] = None) -> TapeNode:
        if self.freed:
            raise ContractError("tape was already consumed by backward")

        node = TapeNode(self, len(self.nodes), op, inputs, value, requires_grad, name, vjp)
        self.nodes.append(node)
        return node

    def variable(self, value: Union[Tensor, ArrayLike], name: str) -> TapeNode:
        if name in self._names:
            raise ContractError(f"variable {name!r} registered twice on the same tape")
        self._names.add(name)

        tensor = value if isinstance(value, Tensor) else Tensor(value)
        return self.push("variable", (), tensor, True, name=name)

    def constant(self, value: Union[Tensor, ArrayLike]) -> TapeNode:
        tensor = value if isinstance(value, Tensor) else Tensor(value)
        return self.push("constant", (), tensor, False)

    def free(self) -> None:
        self.nodes = []
        self.freed = True

Operand = Union[Tensor, TapeNode, np.ndarray]

def value_of(x: Operand) -> np.ndarray:
    if isinstance(x, TapeNode):
        return x.value.data
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)

def _apply(op: str, operands: Sequence[Operand], value: np.ndarray, vjp: VJP) -> Union[Tensor, TapeNode]:
    tape = next((o.tape for o in operands if isinstance(o, TapeNode)), None)
    if tape is None:
        return Tensor.wrap(value)

    nodes: list[TapeNode] = []
    for operand in operands:
        if isinstance(operand, TapeNode):
            if operand.tape is not tape:
                raise ContractError(f"{op}: operands recorded on different tapes")
            nodes.append(operand)
        else:
            nodes.append(tape.constant(operand))

    requires_grad = any(node.requires_grad for node in nodes)
    return tape.push(op, tuple(node.id for node in nodes), Tensor.wrap(value), requires_grad, vjp=vjp if requires_grad else None)

def matmul(a: Operand, b: Operand) -> Union[Tensor, TapeNode]:
    A, B = value_of(a), value_of(b)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {A.shape} by {B.shape}")

    return _apply("matmul", (a, b), A @ B, lambda g: (g @ B.T, A.T @ g))

def transpose(x: Operand) -> Union[Tensor, TapeNode]:
    X = value_of(x)
    if X.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {X.shape}")

    return _apply("transpose", (x,), X.T.copy(), lambda g: (g.T,))

def conv2d(x: Operand, kernels: Operand) -> Union[Tensor, TapeNode]:
    """Valid stride-1 cross-correlation.

    `x` is c_in×h×w or a batch b×c_in×h×w; `kernels` is c_out×c_in×kh×kw.
    """
    X, K = value_of(x), value_of(kernels)
    batched = X.ndim == 4
    if X.ndim not in (3, 4) or K.ndim != 4:
        raise DimensionError(f"conv2d: unsupported shapes {X.shape} and {K.shape}")

    X4 = X if batched else X[None]
    _, c_in, h, w = X4.shape
    _, k_in, kh, kw = K.shape
    if k_in != c_in:
        raise DimensionError(f"conv2d: input has {c_in} channels, kernels {K.shape} expect {k_in}")
    if kh > h or kw > w:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than input {h}x{w}")

    windows = sliding_window_view(X4, (kh, kw), axis=(2, 3))
    out = np.einsum("bcijkl,ockl->boij", windows, K)

    def vjp(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g4 = g if batched else g[None]
        d_kernels = np.einsum("boij,bcijkl->ockl", g4, windows)
        padded = np.pad(g4, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        spread = sliding_window_view(padded, (kh, kw), axis=(2, 3))
        d_x = np.einsum("boijkl,ockl->bcij", spread, K[:, :, ::-1, ::-1])
        return (d_x if batched else d_x[0], d_kernels)

    return _apply("conv2d", (x, kernels), out if batched else out[0], vjp)

def relu(x: Operand) -> Union[Tensor, TapeNode]:
    X = value_of(x)
    return _apply("relu", (x,), np.maximum(X, 0.0), lambda g: (g * (X > 0),))

def add(a: Operand, b: Operand) -> Union[Tensor, TapeNode]:
    A, B = value_of(a), value_of(b)
    if A.shape != B.shape:
        raise DimensionError(f"add: shapes {A.shape} and {B.shape} differ")

    return _apply("add", (a, b), A + B, lambda g: (g, g))

def add_bias(x: Operand, bias: Operand) -> Union[Tensor, TapeNode]:
    X, b = value_of(x), value_of(bias)
    if X.ndim < 2 or b.ndim != 1 or X.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias: bias {b.shape} does not match axis 1 of {X.shape}")

    trailing = (1,) * (X.ndim - 2)
    reduce_axes = (0,) + tuple(range(2, X.ndim))
    return _apply("add_bias", (x, bias), X + b.reshape((1, -1) + trailing), lambda g: (g, g.sum(axis=reduce_axes)))

def scale(x: Operand, s: float) -> Union[Tensor, TapeNode]:
    X = value_of(x)
    s = float(s)
    return _apply("scale", (x,), X * s, lambda g: (g * s,))

def mul(a: Operand, b: Operand) -> Union[Tensor, TapeNode]:
    A, B = value_of(a), value_of(b)
    if A.shape != B.shape:
        raise DimensionError(f"mul: shapes {A.shape} and {B.shape} differ")

    return _apply("mul", (a, b), A * B, lambda g: (g * B, g * A))

def total(x: Operand) -> Union[Tensor, TapeNode]:
    X = value_of(x)
    return _apply("total", (x,), np.asarray(X.sum()), lambda g: (np.full(X.shape, float(g)),))

def mean_over_batch(x: Operand) -> Union[Tensor, TapeNode]:
    X = value_of(x)
    if X.ndim < 1 or X.shape[0] == 0:
        raise DimensionError(f"mean_over_batch: empty batch {X.shape}")

    n = X.shape[0]
    return _apply("mean_over_batch", (x,), X.mean(axis=0), lambda g: (np.broadcast_to(g / n, X.shape).copy(),))

def reshape(x: Operand, shape: Sequence[int]) -> Union[Tensor, TapeNode]:
    X = value_of(x)
    try:
        out = X.reshape(tuple(shape))
    except ValueError as err:
        raise DimensionError(f"reshape: {X.shape} -> {tuple(shape)}: {err}")

    return _apply("reshape", (x,), out.copy(), lambda g: (g.reshape(X.shape),))

def flatten(x: Operand) -> Union[Tensor, TapeNode]:
    X = value_of(x)
    return reshape(x, (X.shape[0], -1))

def gaussian_noise(shape: Sequence[int], sigma: float, rng: np.random.Generator) -> Tensor:
    if sigma < 0:
        raise ParameterError(f"gaussian_noise: sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return Tensor.zeros(shape)

    return Tensor.wrap(rng.standard_normal(tuple(shape)) * sigma)

def softmax_cross_entropy(logits: Operand, labels: ArrayLike) -> Union[Tensor, TapeNode]:
    Z = value_of(logits)
    y = np.asarray(labels, dtype=np.int64)
    if Z.ndim != 2 or y.shape != (Z.shape[0],):
        raise DimensionError(f"softmax_cross_entropy: logits {Z.shape} vs labels {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= Z.shape[1]):
        raise LabelIndexError(f"softmax_cross_entropy: labels must lie in [0, {Z.shape[1]})")

    rows = np.arange(Z.shape[0])
    shifted = Z - Z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = np.mean(log_norm - shifted[rows, y])

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        probs = np.exp(shifted - log_norm[:, None])
        probs[rows, y] -= 1.0
        return (probs * (float(g) / Z.shape[0]),)

    return _apply("softmax_cross_entropy", (logits,), np.asarray(loss), vjp)

def backward(loss: Operand) -> dict[str, Tensor]:
    """Reverse sweep from a scalar loss. Returns {variable name: gradient}."""
    if not isinstance(loss, TapeNode):
        raise ContractError("backward needs a tape-recorded loss")
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    tape = loss.tape
    if tape.freed:
        raise ContractError("tape was already consumed by backward")

    adjoints: dict[int, np.ndarray] = {loss.id: np.ones(loss.shape)}

    for node in reversed(tape.nodes[:loss.id + 1]):
        grad = adjoints.get(node.id)
        if grad is None or node.vjp is None:
            continue

        for input_id, input_grad in zip(node.inputs, node.vjp(grad)):
            if input_grad is None or not tape.nodes[input_id].requires_grad:
                continue
            if input_id in adjoints:
                adjoints[input_id] = adjoints[input_id] + input_grad
            else:
                adjoints[input_id] = input_grad

    gradients: dict[str, Tensor] = {}
    for node in tape.nodes:
        grad = adjoints.get(node.id)
        node.adjoint = Tensor.wrap(grad) if grad is not None else Tensor.zeros(node.shape)
        if node.op == "variable" and node.name is not None:
            gradients[node.name] = node.adjoint

    logger.debug("backward: %d nodes, %d variables", len(tape.nodes), len(gradients))
    tape.free()
    return gradients
