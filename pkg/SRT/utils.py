from typing import Iterable, Any, Generator, Mapping

import numpy as np

def derive_seed(master: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(master), *(int(k) for k in keys)]).generate_state(1)[0])

def derive_rng(master: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master), *(int(k) for k in keys)]))

def minibatches(count: int, size: int, rng: np.random.Generator | None = None) -> Generator[np.ndarray, Any, None]:
    order = rng.permutation(count) if rng is not None else np.arange(count)

    for start in range(0, count, size):
        yield order[start:start + size]

def shards(count: int, size: int) -> Generator[tuple[int, np.ndarray], Any, None]:
    for start in range(0, count, size):
        yield start, np.arange(start, min(start + size, count))

def flatten_params(values: Mapping[str, np.ndarray], keys: Iterable[str]) -> np.ndarray:
    return np.concatenate([np.asarray(values[key], dtype=np.float64).reshape(-1) for key in keys])

def unflatten_params(vector: np.ndarray, like: Mapping[str, np.ndarray], keys: Iterable[str]) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    offset = 0

    for key in keys:
        shape = np.shape(like[key])
        size = int(np.prod(shape))
        out[key] = vector[offset:offset + size].reshape(shape).copy()
        offset += size

    return out
