from dataclasses import dataclass
from typing import TypeVar, Union, Literal

import numpy as np

T = TypeVar('T')

ExecuteResult = Union[
    tuple[Literal[True], T],
    tuple[Literal[False], str]
]

Mode = Literal["train", "eval"]
AttackFamily = Literal["none", "fgsm", "ifgsm"]
Algorithm = Literal["none", "rvsm", "rgsm", "admm"]

@dataclass(frozen=True, eq=False)
class GroupLabel:
    pid: str
    layer: int
    index: int
    coordinates: np.ndarray

    @property
    def size(self) -> int:
        return int(self.coordinates.size)

@dataclass(frozen=True)
class AttackSpec:
    family: AttackFamily = "none"
    eps: float = 0.0
    alpha: float = 0.0
    steps: int = 1
    random_init: bool = False
    lo: float = 0.0
    hi: float = 1.0

@dataclass
class MetricsRecord:
    epoch: int
    a1: float
    a2: float
    a3: float
    sparsity: float
    channel_sparsity: float
    lagrangian: float
    seconds: float = 0.0

@dataclass
class ReportRow:
    config_hash: str
    pruner: str
    split: Literal["val", "test"]
    record: MetricsRecord
    best_val: bool = False

@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    total: int = 0
    outside: int = 0

