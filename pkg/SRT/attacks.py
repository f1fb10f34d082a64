"""Untargeted l-infinity attacks driven by input gradients of the cross-entropy loss."""

import logging

from typing import Optional

import numpy as np
from numpy.typing import ArrayLike

from .config import check_attack_spec
from .errors import ParameterError
from .models import Model, INPUT_ID, loss_and_gradients
from .srt_types import AttackSpec, Mode
from .tensor import Tensor, value_of

logger = logging.getLogger(__name__)

def input_gradient(model: Model, x: ArrayLike, y: ArrayLike, mode: Mode = "train", rng: Optional[np.random.Generator] = None) -> np.ndarray:
    _, gradients = loss_and_gradients(model, x, y, mode, rng, wrt_input=True)
    return gradients[INPUT_ID]

def check_attack_range(spec: AttackSpec, lo: float, hi: float) -> None:
    """Inputs in [lo, hi] must lie inside the clamp range, or the clamp moves them further than eps."""
    if spec.family != "none" and (lo < spec.lo or hi > spec.hi):
        raise ParameterError(f"input range [{lo}, {hi}] is not inside the {spec.family} clamp range [{spec.lo}, {spec.hi}]")

def _inputs(x: ArrayLike, spec: AttackSpec) -> np.ndarray:
    X = value_of(x)
    if X.size:
        check_attack_range(spec, float(X.min()), float(X.max()))
    return X

def _forward_rng(rng: Optional[np.random.Generator], noise_seed: Optional[int]) -> Optional[np.random.Generator]:
    # a fixed noise seed replays one noise draw in every forward pass
    return np.random.default_rng(noise_seed) if noise_seed is not None else rng

def fgsm(model: Model, x: ArrayLike, y: ArrayLike, spec: AttackSpec, rng: Optional[np.random.Generator] = None, mode: Mode = "train", noise_seed: Optional[int] = None) -> Tensor:
    check_attack_spec(spec)
    X = _inputs(x, spec)
    if spec.eps == 0:
        return Tensor(X)

    step = spec.eps * np.sign(input_gradient(model, X, y, mode, _forward_rng(rng, noise_seed)))
    return Tensor(np.clip(X + step, spec.lo, spec.hi))

def ifgsm(model: Model, x: ArrayLike, y: ArrayLike, spec: AttackSpec, rng: Optional[np.random.Generator] = None, mode: Mode = "train", noise_seed: Optional[int] = None) -> Tensor:
    """Iterated FGSM with projection onto the eps-ball around the original x.

    With `random_init` the start point is x plus uniform noise in [-eps, eps],
    drawn from `rng`. With `noise_seed` every step sees the same model noise.
    """
    check_attack_spec(spec)
    if spec.steps < 1:
        raise ParameterError(f"ifgsm needs at least one step, got {spec.steps}")

    X = _inputs(x, spec)
    if spec.eps == 0:
        return Tensor(X)

    lower, upper = X - spec.eps, X + spec.eps
    current = X.copy()

    if spec.random_init:
        if rng is None:
            raise ParameterError("ifgsm random start needs an rng")
        current = np.clip(X + rng.uniform(-spec.eps, spec.eps, size=X.shape), spec.lo, spec.hi)

    for _ in range(spec.steps):
        grad = input_gradient(model, current, y, mode, _forward_rng(rng, noise_seed))
        current = np.clip(np.clip(current + spec.alpha * np.sign(grad), lower, upper), spec.lo, spec.hi)

    return Tensor(current)

def attack(model: Model, x: ArrayLike, y: ArrayLike, spec: AttackSpec, rng: Optional[np.random.Generator] = None, mode: Mode = "train", noise_seed: Optional[int] = None) -> Tensor:
    if spec.family == "none":
        check_attack_spec(spec)
        return Tensor(value_of(x))
    if spec.family == "fgsm":
        return fgsm(model, x, y, spec, rng, mode, noise_seed)
    if spec.family == "ifgsm":
        return ifgsm(model, x, y, spec, rng, mode, noise_seed)
    raise ParameterError(f"unknown attack family {spec.family!r}")
