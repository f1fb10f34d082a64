import logging

from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike

from .attacks import attack
from .data_io import Dataset
from .errors import ParameterError, ContractError
from .models import Model, predict
from .pruners import group_norms
from .srt_types import AttackSpec, Histogram
from .utils import derive_rng, shards

logger = logging.getLogger(__name__)

ZERO_TOL = 1e-15
SHARD_SIZE = 128

def prunable_values(model: Model) -> np.ndarray:
    values = [param.value.data.reshape(-1) for param in model.registry if param.prunable]
    return np.concatenate(values) if values else np.zeros(0)

def sparsity(model: Model) -> float:
    values = prunable_values(model)
    if values.size == 0:
        return 0.0
    return 100.0 * np.count_nonzero(np.abs(values) <= ZERO_TOL) / values.size

def channel_norms(model: Model) -> np.ndarray:
    groups = model.groups()
    if not groups:
        raise ContractError("model has no group labels")
    return group_norms(model.values(), groups)

def channel_sparsity(model: Model) -> float:
    norms = channel_norms(model)
    return 100.0 * np.count_nonzero(norms < ZERO_TOL) / norms.size

def _shard_correct(model: Model, dataset: Dataset, spec: AttackSpec, seed: int, epoch: int, start: int, index: np.ndarray) -> int:
    rng = derive_rng(seed, epoch, start)
    x = dataset.inputs.data[index]
    y = dataset.labels[index]
    adversarial = attack(model, x, y, spec, rng, mode="eval")
    return int(np.count_nonzero(predict(model, adversarial, rng) == y))

def accuracy(model: Model, dataset: Dataset, spec: AttackSpec, seed: int = 0, epoch: int = 0, workers: int = 1, shard_size: int = SHARD_SIZE) -> float:
    """Percentage of examples still classified correctly after the attack.

    Shards are seeded from (seed, epoch, first example index), so the result
    does not depend on `workers`.
    """
    if len(dataset) == 0:
        raise ParameterError("accuracy needs a nonempty dataset")

    jobs = list(shards(len(dataset), shard_size))
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            correct = sum(pool.map(lambda job: _shard_correct(model, dataset, spec, seed, epoch, *job), jobs))
    else:
        correct = sum(_shard_correct(model, dataset, spec, seed, epoch, *job) for job in jobs)

    return 100.0 * correct / len(dataset)

def robust_accuracies(model: Model, dataset: Dataset, attacks: Sequence[AttackSpec], seed: int = 0, epoch: int = 0, workers: int = 1) -> tuple[float, float, float]:
    """(A1, A2, A3): clean, first fgsm-family attack, first ifgsm-family attack.

    A missing family reports the clean accuracy.
    """
    a1 = accuracy(model, dataset, AttackSpec("none"), seed, epoch, workers)
    fgsm_spec = next((spec for spec in attacks if spec.family == "fgsm"), None)
    ifgsm_spec = next((spec for spec in attacks if spec.family == "ifgsm"), None)
    a2 = accuracy(model, dataset, fgsm_spec, seed, epoch, workers) if fgsm_spec else a1
    a3 = accuracy(model, dataset, ifgsm_spec, seed, epoch, workers) if ifgsm_spec else a1
    return a1, a2, a3

def _check_edges(edges: ArrayLike) -> np.ndarray:
    E = np.asarray(edges, dtype=np.float64)
    if E.ndim != 1 or E.size < 2 or np.any(np.diff(E) <= 0):
        raise ParameterError("histogram bin edges must be strictly increasing")
    return E

def histogram_of(values: np.ndarray, edges: ArrayLike) -> Histogram:
    E = _check_edges(edges)
    counts, _ = np.histogram(values, bins=E)
    inside = int(counts.sum())
    return Histogram(E, counts, int(values.size), int(values.size) - inside)

def weight_histogram(model: Model, edges: ArrayLike) -> Histogram:
    return histogram_of(prunable_values(model), edges)

def small_weight_fraction(model: Model, cutoff: float) -> float:
    values = prunable_values(model)
    if values.size == 0:
        return 0.0
    return 100.0 * np.count_nonzero(np.abs(values) < cutoff) / values.size
