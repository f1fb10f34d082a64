import logging

from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike

from .config import ModelSpec
from .errors import DimensionError, ParameterError, ContractError
from .srt_types import GroupLabel, Mode
from .tensor import (
    Tensor, Tape, TapeNode, Operand,
    matmul, transpose, conv2d, relu, add, add_bias, scale, flatten,
    gaussian_noise, softmax_cross_entropy, backward, value_of
)

logger = logging.getLogger(__name__)

INPUT_ID = "input"

@dataclass(frozen=True)
class LayerSpec:
    kind: str
    member: int
    index: int
    params: tuple[str, ...] = ()
    shape: tuple[int, ...] = ()

    def record(self) -> str:
        return (
            f"kind={self.kind};member={self.member};index={self.index};"
            f"params={','.join(self.params)};shape={','.join(str(s) for s in self.shape)}"
        )

@dataclass
class Parameter:
    pid: str
    value: Tensor
    groups: tuple[GroupLabel, ...] = ()
    prunable: bool = True

@dataclass(frozen=True)
class BlockSpec:
    in_features: int
    width: int
    blocks: int
    num_classes: int

class Model:
    spec: ModelSpec
    input_shape: tuple[int, ...]
    num_classes: int
    members: list[list[LayerSpec]]
    registry: list[Parameter]

    def __init__(self, spec: ModelSpec, input_shape: Sequence[int], num_classes: int, members: list[list[LayerSpec]], registry: list[Parameter]) -> None:
        self.spec = spec
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.members = members
        self.registry = registry

        seen: set[str] = set()
        for param in registry:
            if param.pid in seen:
                raise ContractError(f"parameter {param.pid!r} registered twice")
            seen.add(param.pid)

    @property
    def n(self) -> int:
        return len(self.members)

    @property
    def sigma(self) -> float:
        return self.spec.sigma

    @property
    def skip(self) -> bool:
        return self.spec.skip

    @property
    def is_residual(self) -> bool:
        return any(layer.kind == "residual" for member in self.members for layer in member)

    def parameters(self) -> dict[str, Tensor]:
        return {param.pid: param.value for param in self.registry}

    def values(self) -> dict[str, np.ndarray]:
        return {param.pid: param.value.data for param in self.registry}

    def prunable_ids(self) -> list[str]:
        return [param.pid for param in self.registry if param.prunable]

    def groups(self) -> list[GroupLabel]:
        return [label for param in self.registry for label in param.groups]

    def group_map(self) -> dict[str, tuple[GroupLabel, ...]]:
        return {param.pid: param.groups for param in self.registry if param.groups}

    def parameter_count(self) -> int:
        return sum(param.value.size for param in self.registry)

    def layer_records(self) -> list[str]:
        return [layer.record() for member in self.members for layer in member]

    def load_parameters(self, values: Mapping[str, ArrayLike]) -> None:
        index = {param.pid: param for param in self.registry}

        for pid, value in values.items():
            param = index.get(pid)
            if param is None:
                raise ContractError(f"unknown parameter {pid!r}")
            array = np.asarray(value, dtype=np.float64)
            if array.shape != param.value.shape:
                raise DimensionError(f"parameter {pid!r}: expected {param.value.shape}, got {array.shape}")
            param.value = Tensor(array)

    def copy(self) -> "Model":
        registry = [Parameter(p.pid, p.value, p.groups, p.prunable) for p in self.registry]
        return Model(self.spec, self.input_shape, self.num_classes, [list(m) for m in self.members], registry)

    def __repr__(self) -> str:
        return f"Model(family={self.spec.family!r}, n={self.n}, sigma={self.sigma}, skip={self.skip}, params={self.parameter_count()})"

class _Builder:
    """Accumulates layers and parameters for one model, numbering weighted layers globally."""

    def __init__(self, rng: np.random.Generator) -> None:
        self.rng = rng
        self.registry: list[Parameter] = []
        self.layer_no = 0

    def _uniform(self, shape: tuple[int, ...], fan_in: int) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        return Tensor.wrap(self.rng.uniform(-bound, bound, size=shape))

    def _weighted(self, kind: str, member: int, index: int, shape: tuple[int, ...]) -> LayerSpec:
        prefix = f"m{member}.l{index}"
        fan_in = int(np.prod(shape[1:]))
        rows, row_size = shape[0], fan_in

        groups = tuple(
            GroupLabel(f"{prefix}.weight", self.layer_no, g, _readonly(np.arange(g * row_size, (g + 1) * row_size)))
            for g in range(rows)
        )
        self.registry.append(Parameter(f"{prefix}.weight", self._uniform(shape, fan_in), groups))
        self.registry.append(Parameter(f"{prefix}.bias", self._uniform((rows,), fan_in)))
        self.layer_no += 1

        return LayerSpec(kind, member, index, (f"{prefix}.weight", f"{prefix}.bias"), shape)

    def linear(self, member: int, index: int, fan_in: int, fan_out: int) -> LayerSpec:
        return self._weighted("linear", member, index, (fan_out, fan_in))

    def conv(self, member: int, index: int, c_in: int, c_out: int, kernel: int) -> LayerSpec:
        return self._weighted("conv", member, index, (c_out, c_in, kernel, kernel))

    def residual(self, member: int, index: int, width: int) -> LayerSpec:
        return self._weighted("residual", member, index, (width, width))

def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array

def _check_widths(widths: Sequence[int]) -> None:
    if any(int(w) < 1 for w in widths):
        raise ParameterError(f"layer widths must be positive, got {list(widths)}")

def _mlp_member(builder: _Builder, member: int, input_shape: tuple[int, ...], widths: Sequence[int]) -> list[LayerSpec]:
    layers: list[LayerSpec] = []
    if len(input_shape) > 1:
        layers.append(LayerSpec("flatten", member, len(layers)))

    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        if i > 0:
            layers.append(LayerSpec("relu", member, len(layers)))
        layers.append(builder.linear(member, len(layers), fan_in, fan_out))

    return layers

def build_mlp(widths: Sequence[int], activation: str = "relu", members: int = 1, seed: int = 0, input_shape: Optional[Sequence[int]] = None) -> Model:
    if len(widths) < 2:
        raise ParameterError(f"build_mlp needs at least two widths, got {list(widths)}")
    if activation != "relu":
        raise ParameterError(f"unsupported activation {activation!r}")
    if members < 1:
        raise ParameterError(f"ensemble size must be >= 1, got {members}")
    _check_widths(widths)

    shape = tuple(input_shape) if input_shape is not None else (int(widths[0]),)
    if int(np.prod(shape)) != widths[0]:
        raise DimensionError(f"input shape {shape} does not flatten to width {widths[0]}")

    builder = _Builder(np.random.default_rng(seed))
    layers = [_mlp_member(builder, m, shape, widths) for m in range(members)]
    spec = ModelSpec(family="mlp", hidden=tuple(int(w) for w in widths[1:-1]), members=members)
    return Model(spec, shape, int(widths[-1]), layers, builder.registry)

def build_conv_net(input_shape: Sequence[int], channels: Sequence[int], kernel: int, num_classes: int, members: int = 1, seed: int = 0) -> Model:
    if len(input_shape) != 3:
        raise DimensionError(f"conv nets take c_in×h×w inputs, got {tuple(input_shape)}")
    if members < 1:
        raise ParameterError(f"ensemble size must be >= 1, got {members}")
    _check_widths(list(channels) + [kernel, num_classes])

    c_in, h, w = (int(s) for s in input_shape)
    h_out, w_out = h - len(channels) * (kernel - 1), w - len(channels) * (kernel - 1)
    if h_out < 1 or w_out < 1:
        raise DimensionError(f"{len(channels)} valid {kernel}x{kernel} convolutions do not fit a {h}x{w} input")

    builder = _Builder(np.random.default_rng(seed))
    members_layers: list[list[LayerSpec]] = []

    for m in range(members):
        layers: list[LayerSpec] = []
        previous = c_in
        for c_out in channels:
            layers.append(builder.conv(m, len(layers), previous, c_out, kernel))
            layers.append(LayerSpec("relu", m, len(layers)))
            previous = c_out
        layers.append(LayerSpec("flatten", m, len(layers)))
        layers.append(builder.linear(m, len(layers), previous * h_out * w_out, num_classes))
        members_layers.append(layers)

    spec = ModelSpec(family="conv", channels=tuple(int(c) for c in channels), kernel=kernel, members=members)
    return Model(spec, (c_in, h, w), num_classes, members_layers, builder.registry)

def build_residual_ensemble(n: int, block: BlockSpec, sigma: float, seed: int = 0, input_shape: Optional[Sequence[int]] = None, eval_noise: bool = False) -> Model:
    """n independently parameterised residual nets whose logits are averaged.

    Each block maps x to x + W·relu(x) + b + noise, noise ~ N(0, sigma²) drawn per forward.
    """
    if n < 1:
        raise ParameterError(f"ensemble size must be >= 1, got {n}")
    if sigma < 0:
        raise ParameterError(f"noise std must be >= 0, got {sigma}")
    _check_widths([block.in_features, block.width, block.num_classes])

    shape = tuple(input_shape) if input_shape is not None else (block.in_features,)
    builder = _Builder(np.random.default_rng(seed))
    members_layers: list[list[LayerSpec]] = []

    for m in range(n):
        layers: list[LayerSpec] = []
        if len(shape) > 1:
            layers.append(LayerSpec("flatten", m, len(layers)))
        layers.append(builder.linear(m, len(layers), block.in_features, block.width))
        for _ in range(block.blocks):
            layers.append(builder.residual(m, len(layers), block.width))
        layers.append(LayerSpec("relu", m, len(layers)))
        layers.append(builder.linear(m, len(layers), block.width, block.num_classes))
        members_layers.append(layers)

    spec = ModelSpec(family="residual", width=block.width, blocks=block.blocks, members=n, sigma=float(sigma), skip=True, eval_noise=eval_noise)
    return Model(spec, shape, block.num_classes, members_layers, builder.registry)

def build_model(spec: ModelSpec, input_shape: Sequence[int], num_classes: int, seed: int = 0) -> Model:
    features = int(np.prod(input_shape))

    if spec.family == "mlp":
        model = build_mlp([features, *spec.hidden, num_classes], members=spec.members, seed=seed, input_shape=input_shape)
    elif spec.family == "conv":
        model = build_conv_net(input_shape, spec.channels, spec.kernel, num_classes, members=spec.members, seed=seed)
    elif spec.family == "residual":
        block = BlockSpec(features, spec.width, spec.blocks, num_classes)
        model = build_residual_ensemble(spec.members, block, spec.sigma, seed=seed, input_shape=input_shape, eval_noise=spec.eval_noise)
        if not spec.skip:
            model = strip_skip_connections(model)
    else:
        raise ParameterError(f"unknown model family {spec.family!r}")

    model.spec = spec
    return model

def strip_skip_connections(model: Model) -> Model:
    if not model.is_residual:
        raise ContractError("strip_skip_connections needs a model with residual blocks")

    stripped = model.copy()
    stripped.spec = replace(model.spec, skip=False)
    return stripped

def residual_block(h: Operand, weight: Operand, bias: Operand, skip: bool, sigma: float, rng: Optional[np.random.Generator]) -> Union[Tensor, TapeNode]:
    out = add_bias(matmul(relu(h), transpose(weight)), bias)
    if skip:
        out = add(h, out)
    if sigma > 0:
        if rng is None:
            raise ParameterError("noise injection needs an rng")
        out = add(out, gaussian_noise(value_of(out).shape, sigma, rng))
    return out

def _run_member(model: Model, layers: list[LayerSpec], h: Operand, params: Mapping[str, Operand], sigma: float, rng: Optional[np.random.Generator]) -> Union[Tensor, TapeNode]:
    for layer in layers:
        if layer.kind == "linear":
            h = add_bias(matmul(h, transpose(params[layer.params[0]])), params[layer.params[1]])
        elif layer.kind == "conv":
            h = add_bias(conv2d(h, params[layer.params[0]]), params[layer.params[1]])
        elif layer.kind == "relu":
            h = relu(h)
        elif layer.kind == "flatten":
            h = flatten(h)
        elif layer.kind == "residual":
            h = residual_block(h, params[layer.params[0]], params[layer.params[1]], model.skip, sigma, rng)
        else:
            raise ContractError(f"unknown layer kind {layer.kind!r}")
    return h  # type: ignore[return-value]

def forward(model: Model, batch: Union[Operand, ArrayLike], mode: Mode = "eval", rng: Optional[np.random.Generator] = None, tape: Optional[Tape] = None) -> Union[Tensor, TapeNode]:
    """Ensemble-mean logits for a batch.

    Train mode records on a tape and injects noise. Eval mode is noise-free and
    tape-free unless a tape is passed in or the model has eval-time noise enabled.
    """
    if mode not in ("train", "eval"):
        raise ParameterError(f"unknown mode {mode!r}")

    if isinstance(batch, TapeNode):
        tape = batch.tape
        x: Operand = batch
    else:
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        if mode == "train" and tape is None:
            tape = Tape()

    shape = value_of(x).shape
    if shape[1:] != model.input_shape:
        raise DimensionError(f"batch shape {shape} does not match model input {model.input_shape}")

    params: dict[str, Operand]
    if tape is not None:
        params = {param.pid: tape.variable(param.value, param.pid) for param in model.registry}
    else:
        params = dict(model.parameters())

    noisy = mode == "train" or model.spec.eval_noise
    sigma = model.sigma if noisy else 0.0

    total: Optional[Operand] = None
    for layers in model.members:
        out = _run_member(model, layers, x, params, sigma, rng)
        total = out if total is None else add(total, out)

    return scale(total, 1.0 / model.n)  # type: ignore[arg-type]

def loss_and_gradients(model: Model, x: ArrayLike, y: ArrayLike, mode: Mode = "train", rng: Optional[np.random.Generator] = None, wrt_input: bool = False) -> tuple[float, dict[str, np.ndarray]]:
    tape = Tape()
    inputs = tape.variable(x, INPUT_ID) if wrt_input else tape.constant(x)
    loss = softmax_cross_entropy(forward(model, inputs, mode, rng, tape), y)
    gradients = backward(loss)
    return value_of(loss).item(), {key: grad.data for key, grad in gradients.items()}

def predict(model: Model, x: ArrayLike, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    return np.argmax(value_of(forward(model, x, "eval", rng)), axis=1)
