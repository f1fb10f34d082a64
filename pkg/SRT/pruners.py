"""Relaxed splitting pruners (RVSM, RGSM) and the ADMM baseline.

Every step works on plain parameter maps {parameter id: array}. The weights w
take a gradient step on the relaxed Lagrangian, then the auxiliary variables u
are refreshed by the proximal map of the sparsity penalty applied to the new w.
"""

import logging

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike

from .errors import DimensionError, ParameterError, ContractError, EstimationError
from .models import Model
from .srt_types import GroupLabel, Algorithm

logger = logging.getLogger(__name__)

ParamMap = dict[str, np.ndarray]
Weights = Union[Mapping[str, ArrayLike], ArrayLike]
GroupMap = Mapping[str, Sequence[GroupLabel]]

@dataclass
class GroupView:
    label: Optional[GroupLabel]
    values: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

@dataclass
class PrunerState:
    algorithm: Algorithm
    w: ParamMap
    u: ParamMap
    z: Optional[ParamMap] = None
    beta: float = 1.0
    lam: float = 0.0
    lam1: float = 0.0
    lam2: float = 0.0
    eta: float = 0.1
    prox: str = "gl"
    groups: dict[str, tuple[GroupLabel, ...]] = field(default_factory=dict)
    history: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if min(self.beta, self.lam, self.lam1, self.lam2) < 0:
            raise ParameterError("beta, lam, lam1 and lam2 must be >= 0")
        if self.eta <= 0:
            raise ParameterError(f"step size eta must be > 0, got {self.eta}")
        if self.prox not in ("gl", "gl0"):
            raise ParameterError(f"unknown group prox {self.prox!r}")
        if self.algorithm == "admm" and self.z is None:
            raise ContractError("admm state needs dual variables z")

# proximal maps

def hard_threshold(w: ArrayLike, a: float) -> np.ndarray:
    if a < 0:
        raise ParameterError(f"hard_threshold: threshold must be >= 0, got {a}")
    W = np.asarray(w, dtype=np.float64)
    return np.where(np.abs(W) > a, W, 0.0)

def soft_threshold(w: ArrayLike, a: float) -> np.ndarray:
    if a < 0:
        raise ParameterError(f"soft_threshold: threshold must be >= 0, got {a}")
    W = np.asarray(w, dtype=np.float64)
    return np.sign(W) * np.maximum(np.abs(W) - a, 0.0)

def prox_group_lasso(g: GroupView, lam: float) -> GroupView:
    if lam < 0:
        raise ParameterError(f"prox_group_lasso: lam must be >= 0, got {lam}")
    norm = g.norm
    if norm <= lam:
        return GroupView(g.label, np.zeros_like(g.values))
    return GroupView(g.label, g.values * (1.0 - lam / norm))

def prox_group_l0(g: GroupView, lam: float) -> GroupView:
    if lam < 0:
        raise ParameterError(f"prox_group_l0: lam must be >= 0, got {lam}")
    if g.norm <= np.sqrt(2.0 * lam):
        return GroupView(g.label, np.zeros_like(g.values))
    return GroupView(g.label, g.values.copy())

GROUP_PROX: dict[str, Callable[[GroupView, float], GroupView]] = {
    "gl": prox_group_lasso,
    "gl0": prox_group_l0,
}

def rvsm_threshold(lam: float, beta: float) -> float:
    if lam == 0:
        return 0.0
    if beta == 0:
        return float("inf")
    return float(np.sqrt(2.0 * lam / beta))

# penalties

def _flat(w: Weights, pid: str) -> np.ndarray:
    if isinstance(w, Mapping):
        return np.asarray(w[pid], dtype=np.float64).reshape(-1)
    return np.asarray(w, dtype=np.float64).reshape(-1)

def _as_map(w: Weights) -> dict[str, np.ndarray]:
    if isinstance(w, Mapping):
        return {key: np.asarray(value, dtype=np.float64) for key, value in w.items()}
    return {"": np.asarray(w, dtype=np.float64)}

def _labels(groups: Union[GroupMap, Sequence[GroupLabel]]) -> list[GroupLabel]:
    if isinstance(groups, Mapping):
        return [label for labels in groups.values() for label in labels]
    return list(groups)

def check_partition(groups: Union[GroupMap, Sequence[GroupLabel]]) -> None:
    by_pid: dict[str, list[np.ndarray]] = {}
    for label in _labels(groups):
        by_pid.setdefault(label.pid, []).append(label.coordinates)

    for pid, coords in by_pid.items():
        joined = np.concatenate(coords)
        if np.unique(joined).size != joined.size:
            raise ContractError(f"groups of {pid!r} overlap")

def group_norms(w: Weights, groups: Union[GroupMap, Sequence[GroupLabel]]) -> np.ndarray:
    labels = _labels(groups)
    return np.array([np.linalg.norm(_flat(w, label.pid)[label.coordinates]) for label in labels], dtype=np.float64)

def group_lasso_penalty(w: Weights, groups: Union[GroupMap, Sequence[GroupLabel]]) -> float:
    check_partition(groups)
    return float(group_norms(w, groups).sum())

def group_l0_penalty(w: Weights, groups: Union[GroupMap, Sequence[GroupLabel]]) -> float:
    check_partition(groups)
    return float(np.count_nonzero(group_norms(w, groups)))

def l0_penalty(w: Weights) -> float:
    return float(sum(np.count_nonzero(value) for value in _as_map(w).values()))

def l1_penalty(w: Weights) -> float:
    return float(sum(np.abs(value).sum() for value in _as_map(w).values()))

def lagrangian_value(f_val: float, w: Weights, u: Weights, lam: float, beta: float, kind: str = "l0", groups: Optional[Union[GroupMap, Sequence[GroupLabel]]] = None, z: Optional[Weights] = None) -> float:
    """f + lam * penalty(u) (+ <z, w - u>) + beta/2 * ||w - u||^2."""
    W, U = _as_map(w), _as_map(u)
    if W.keys() != U.keys():
        raise DimensionError("w and u hold different parameters")
    for key in W:
        if W[key].shape != U[key].shape:
            raise DimensionError(f"{key or 'w'}: shape {W[key].shape} vs u {U[key].shape}")

    if kind == "l0":
        penalty = l0_penalty(U)
    elif kind == "l1":
        penalty = l1_penalty(U)
    elif kind in ("gl", "gl0"):
        if groups is None:
            raise ContractError(f"penalty {kind!r} needs group labels")
        penalty = group_lasso_penalty(u, groups) if kind == "gl" else group_l0_penalty(u, groups)
    else:
        raise ParameterError(f"unknown penalty kind {kind!r}")

    gap = sum(float(np.sum((W[key] - U[key]) ** 2)) for key in W)
    value = float(f_val) + lam * penalty + 0.5 * beta * gap

    if z is not None:
        Z = _as_map(z)
        value += sum(float(np.sum(Z[key] * (W[key] - U[key]))) for key in W)

    return value

# steps

def _group_map(groups: Union[GroupMap, Sequence[GroupLabel], None]) -> dict[str, tuple[GroupLabel, ...]]:
    if groups is None:
        return {}
    out: dict[str, list[GroupLabel]] = {}
    for label in _labels(groups):
        out.setdefault(label.pid, []).append(label)
    return {pid: tuple(labels) for pid, labels in out.items()}

def _check_grad(state: PrunerState, grad: Mapping[str, ArrayLike]) -> None:
    missing = [pid for pid in state.w if pid not in grad]
    if missing:
        raise ContractError(f"missing gradient for prunable parameters {missing}")

def _check_algorithm(state: PrunerState, expected: str) -> None:
    if state.algorithm != expected:
        raise ContractError(f"{expected}_step called on a {state.algorithm!r} state")

def apply_group_prox(w: Mapping[str, np.ndarray], groups: GroupMap, lam: float, prox: str = "gl") -> ParamMap:
    """Per-group prox on grouped coordinates; ungrouped coordinates are copied."""
    fn = GROUP_PROX[prox]
    out: ParamMap = {}

    for pid, value in w.items():
        flat = np.asarray(value, dtype=np.float64).reshape(-1).copy()
        for label in groups.get(pid, ()):
            flat[label.coordinates] = fn(GroupView(label, flat[label.coordinates]), lam).values
        out[pid] = flat.reshape(np.shape(value))

    return out

def group_lasso_subgradient(w: Mapping[str, np.ndarray], groups: GroupMap) -> ParamMap:
    """w_g / ||w_g|| on every group, 0 on zero groups and ungrouped coordinates."""
    out: ParamMap = {}

    for pid, value in w.items():
        flat = np.asarray(value, dtype=np.float64).reshape(-1)
        sub = np.zeros_like(flat)
        for label in groups.get(pid, ()):
            norm = np.linalg.norm(flat[label.coordinates])
            if norm > 0:
                sub[label.coordinates] = flat[label.coordinates] / norm
        out[pid] = sub.reshape(np.shape(value))

    return out

def _gradient_step(state: PrunerState, grad: Mapping[str, ArrayLike]) -> ParamMap:
    eta, beta = state.eta, state.beta
    return {
        pid: w - eta * np.asarray(grad[pid], dtype=np.float64) - eta * beta * (w - state.u[pid])
        for pid, w in state.w.items()
    }

def sgd_step(state: PrunerState, grad: Mapping[str, ArrayLike], f_val: Optional[float] = None) -> PrunerState:
    _check_algorithm(state, "none")
    _check_grad(state, grad)

    history = state.history if f_val is None else state.history + [float(f_val)]
    w = {pid: value - state.eta * np.asarray(grad[pid], dtype=np.float64) for pid, value in state.w.items()}
    return replace(state, w=w, u={pid: value.copy() for pid, value in w.items()}, history=history)

def rvsm_step(state: PrunerState, grad: Mapping[str, ArrayLike], f_val: Optional[float] = None) -> PrunerState:
    _check_algorithm(state, "rvsm")
    _check_grad(state, grad)

    history = state.history
    if f_val is not None:
        history = history + [lagrangian_value(f_val, state.w, state.u, state.lam, state.beta, "l0")]

    w = _gradient_step(state, grad)
    threshold = rvsm_threshold(state.lam, state.beta)
    u = {pid: hard_threshold(value, threshold) for pid, value in w.items()}
    return replace(state, w=w, u=u, history=history)

def rgsm_lagrangian(state: PrunerState, f_val: float) -> float:
    # the u-update minimises lam1*beta*P(u) + beta/2*||w - u||^2, so P is weighted by lam1*beta
    labels = [label for labels in state.groups.values() for label in labels]
    smooth = float(f_val) + state.lam2 * (group_lasso_penalty(state.w, labels) if labels else 0.0)
    if not labels:
        return lagrangian_value(smooth, state.w, state.u, 0.0, state.beta, "l0")
    return lagrangian_value(smooth, state.w, state.u, state.lam1 * state.beta, state.beta, state.prox, labels)

def rgsm_step(state: PrunerState, grad: Mapping[str, ArrayLike], groups: Union[GroupMap, Sequence[GroupLabel], None] = None, f_val: Optional[float] = None) -> PrunerState:
    _check_algorithm(state, "rgsm")
    _check_grad(state, grad)

    group_map = _group_map(groups) if groups is not None else state.groups
    if groups is not None:
        state = replace(state, groups=group_map)

    history = state.history
    if f_val is not None:
        history = history + [rgsm_lagrangian(state, f_val)]

    sub = group_lasso_subgradient(state.w, group_map)
    effective = {pid: np.asarray(grad[pid], dtype=np.float64) + state.lam2 * sub[pid] for pid in state.w}
    w = _gradient_step(state, effective)
    u = apply_group_prox(w, group_map, state.lam1, state.prox)
    return replace(state, w=w, u=u, history=history)

def admm_step(state: PrunerState, grad: Mapping[str, ArrayLike], f_val: Optional[float] = None) -> PrunerState:
    _check_algorithm(state, "admm")
    if state.beta == 0:
        raise ParameterError("admm dual update needs beta > 0")
    if state.z is None:
        raise ContractError("admm state needs dual variables z")
    _check_grad(state, grad)

    history = state.history
    if f_val is not None:
        history = history + [lagrangian_value(f_val, state.w, state.u, state.lam, state.beta, "l1", z=state.z)]

    eta, beta, z = state.eta, state.beta, state.z
    w = {
        pid: value - eta * (np.asarray(grad[pid], dtype=np.float64) + z[pid] + beta * (value - state.u[pid]))
        for pid, value in state.w.items()
    }
    u = {pid: soft_threshold(w[pid] + z[pid] / beta, state.lam / beta) for pid in w}
    z_next = {pid: z[pid] + beta * (w[pid] - u[pid]) for pid in w}
    return replace(state, w=w, u=u, z=z_next, history=history)

def step(state: PrunerState, grad: Mapping[str, ArrayLike], f_val: Optional[float] = None) -> PrunerState:
    if state.algorithm == "rvsm":
        return rvsm_step(state, grad, f_val)
    if state.algorithm == "rgsm":
        return rgsm_step(state, grad, f_val=f_val)
    if state.algorithm == "admm":
        return admm_step(state, grad, f_val)
    if state.algorithm == "none":
        return sgd_step(state, grad, f_val)
    raise ParameterError(f"unknown algorithm {state.algorithm!r}")

def expected_u(state: PrunerState) -> ParamMap:
    """The proximal image of the current w; equals `state.u` after any step."""
    if state.algorithm == "rvsm":
        threshold = rvsm_threshold(state.lam, state.beta)
        return {pid: hard_threshold(value, threshold) for pid, value in state.w.items()}
    if state.algorithm == "rgsm":
        return apply_group_prox(state.w, state.groups, state.lam1, state.prox)
    if state.algorithm == "none":
        return {pid: value.copy() for pid, value in state.w.items()}
    raise ContractError("admm u depends on the previous dual and cannot be recomputed from w")

def init_state(algorithm: Algorithm, w: Mapping[str, ArrayLike], beta: float = 1.0, lam: float = 0.0, lam1: float = 0.0, lam2: float = 0.0, eta: float = 0.1, prox: str = "gl", groups: Union[GroupMap, Sequence[GroupLabel], None] = None) -> PrunerState:
    weights = {pid: np.array(value, dtype=np.float64) for pid, value in w.items()}
    z: Optional[ParamMap] = None

    if algorithm == "admm":
        if beta == 0:
            raise ParameterError("admm needs beta > 0")
        z = {pid: np.zeros_like(value) for pid, value in weights.items()}
        u = {pid: soft_threshold(value, lam / beta) for pid, value in weights.items()}
        return PrunerState(algorithm, weights, u, z, beta, lam, lam1, lam2, eta, prox, _group_map(groups))

    if algorithm not in ("none", "rvsm", "rgsm"):
        raise ParameterError(f"unknown algorithm {algorithm!r}")

    state = PrunerState(algorithm, weights, {}, z, beta, lam, lam1, lam2, eta, prox, _group_map(groups))
    state.u = expected_u(state)
    return state

def lipschitz_estimate(
    grad_oracle: Callable[[np.ndarray], ArrayLike],
    w: ArrayLike,
    n_probes: int,
    radius: float,
    rng: Optional[np.random.Generator] = None,
    along: Sequence[ArrayLike] = (),
    power_steps: int = 0,
) -> float:
    """Largest observed ||grad(w1) - grad(w2)|| / ||w1 - w2|| around w and every point of `along`.

    Each center gets `n_probes` random pairs within `radius`, then `power_steps`
    rounds of power iteration on gradient differences, which drive the ratio
    toward the largest curvature at that center. Passing the iterates of a run
    as `along` covers the region the run visits. A lower bound on the Lipschitz
    constant of the gradient over that region.
    """
    if n_probes < 1:
        raise ParameterError(f"lipschitz_estimate needs n_probes >= 1, got {n_probes}")
    if radius < 0:
        raise ParameterError(f"probe radius must be >= 0, got {radius}")
    if power_steps < 0:
        raise ParameterError(f"power_steps must be >= 0, got {power_steps}")

    rng = rng if rng is not None else np.random.default_rng(0)
    W = np.asarray(w, dtype=np.float64)
    centers = [W]
    for point in along:
        center = np.asarray(point, dtype=np.float64)
        if center.shape != W.shape:
            raise DimensionError(f"lipschitz_estimate: center shape {center.shape} differs from {W.shape}")
        centers.append(center)

    best: Optional[float] = None

    def observe(ratio: float) -> None:
        nonlocal best
        best = ratio if best is None else max(best, ratio)

    for center in centers:
        for _ in range(n_probes):
            w1 = center + rng.uniform(-radius, radius, size=W.shape)
            w2 = center + rng.uniform(-radius, radius, size=W.shape)
            distance = float(np.linalg.norm(w1 - w2))
            if distance == 0:
                continue
            observe(float(np.linalg.norm(np.asarray(grad_oracle(w1)) - np.asarray(grad_oracle(w2)))) / distance)

        if power_steps == 0 or radius == 0 or W.size == 0:
            continue

        base = np.asarray(grad_oracle(center), dtype=np.float64)
        direction = rng.normal(size=W.shape)
        direction /= np.linalg.norm(direction)
        for _ in range(power_steps):
            change = np.asarray(grad_oracle(center + radius * direction), dtype=np.float64) - base
            size = float(np.linalg.norm(change))
            observe(size / radius)
            if size == 0:
                break
            direction = change / size

    if best is None:
        raise EstimationError("every probe pair had zero distance")

    logger.debug("lipschitz_estimate: L_hat=%.6g over %d centers, %d probes each (radius %.3g)", best, len(centers), n_probes, radius)
    return best

def descent_violations(history: Sequence[float], slack: float) -> list[int]:
    return [t for t in range(1, len(history)) if history[t] > history[t - 1] + slack]

def finalize_epoch(state: PrunerState, model: Model) -> Model:
    """A copy of `model` whose pruned parameters hold u."""
    finalized = model.copy()
    finalized.load_parameters(state.u)
    return finalized
