import csv
import logging
import struct

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from numpy.typing import ArrayLike

from .config import DatasetSpec
from .errors import ParseError, ValidationError, ParameterError
from .tensor import Tensor

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

PathLike = Union[str, Path]

@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: Tensor
    labels: np.ndarray
    num_classes: int
    provenance: str = ""
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self) -> None:
        X, y = self.inputs.data, self.labels
        if X.ndim < 2 or X.shape[0] < 1:
            raise ValidationError(f"{self.provenance}: dataset needs at least one example, got inputs {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValidationError(f"{self.provenance}: {y.shape[0] if y.ndim else 0} labels for {X.shape[0]} inputs")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValidationError(f"{self.provenance}: labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(X)):
            raise ValidationError(f"{self.provenance}: non-finite inputs")
        if X.min() < self.lo or X.max() > self.hi:
            raise ValidationError(f"{self.provenance}: inputs leave the range [{self.lo}, {self.hi}]")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.inputs.shape[1:]

    def subset(self, index: ArrayLike, provenance: Optional[str] = None) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return make_dataset(self.inputs.data[index], self.labels[index], self.num_classes, provenance or self.provenance, self.lo, self.hi)

def make_dataset(inputs: ArrayLike, labels: ArrayLike, num_classes: Optional[int] = None, provenance: str = "", lo: float = 0.0, hi: float = 1.0) -> Dataset:
    y = np.array(labels, dtype=np.int64)
    y.setflags(write=False)
    classes = int(num_classes) if num_classes is not None else (int(y.max()) + 1 if y.size else 0)
    return Dataset(Tensor(inputs), y, classes, provenance, lo, hi)

# csv

def load_csv(path: PathLike, header: bool = False, num_classes: Optional[int] = None, lo: float = 0.0, hi: float = 1.0) -> Dataset:
    rows: list[list[float]] = []
    labels: list[int] = []
    width: Optional[int] = None

    with open(path, "r", encoding="utf-8", newline="") as file:
        for lineno, row in enumerate(csv.reader(file), start=1):
            if header and lineno == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 2:
                raise ParseError(f"{path}:{lineno}: expected features and a label, got {len(row)} column(s)")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            try:
                rows.append([float(cell) for cell in row[:-1]])
                labels.append(int(row[-1]))
            except ValueError as err:
                raise ParseError(f"{path}:{lineno}: {err}")

    if not rows:
        raise ValidationError(f"{path}: no examples")

    return make_dataset(np.array(rows), np.array(labels), num_classes, f"csv:{path}", lo, hi)

def write_csv(dataset: Dataset, path: PathLike, header: bool = False) -> None:
    X = dataset.inputs.data.reshape(len(dataset), -1)

    with open(path, "w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        if header:
            writer.writerow([f"x{i}" for i in range(X.shape[1])] + ["label"])
        for features, label in zip(X, dataset.labels):
            writer.writerow([repr(float(v)) for v in features] + [int(label)])

# idx

def _idx_header(data: bytes, path: PathLike, magic: int) -> tuple[tuple[int, ...], int]:
    if len(data) < 4:
        raise ParseError(f"{path}: byte 0: truncated magic number")

    (found,) = struct.unpack_from(">I", data, 0)
    if found != magic:
        raise ParseError(f"{path}: byte 0: magic 0x{found:08x}, expected 0x{magic:08x}")

    ndims = magic & 0xFF
    offset = 4
    if len(data) < offset + 4 * ndims:
        raise ParseError(f"{path}: byte {offset}: truncated dimension table")

    dims = struct.unpack_from(f">{ndims}I", data, offset)
    offset += 4 * ndims
    expected = int(np.prod(dims))
    if len(data) - offset != expected:
        raise ParseError(f"{path}: byte {offset}: expected {expected} data bytes, found {len(data) - offset}")

    return tuple(dims), offset

def load_idx(images_path: PathLike, labels_path: PathLike, num_classes: Optional[int] = None) -> Dataset:
    images = Path(images_path).read_bytes()
    labels = Path(labels_path).read_bytes()

    dims, offset = _idx_header(images, images_path, IDX_IMAGES_MAGIC)
    (count,), label_offset = _idx_header(labels, labels_path, IDX_LABELS_MAGIC)
    if count != dims[0]:
        raise ValidationError(f"{images_path}: {dims[0]} images but {count} labels")

    pixels = np.frombuffer(images, dtype=np.uint8, offset=offset).reshape(dims[0], 1, dims[1], dims[2])
    y = np.frombuffer(labels, dtype=np.uint8, offset=label_offset).astype(np.int64)
    return make_dataset(pixels / 255.0, y, num_classes, f"idx:{images_path}")

def write_idx(images: ArrayLike, labels: ArrayLike, images_path: PathLike, labels_path: PathLike) -> None:
    pixels = np.asarray(images)
    y = np.asarray(labels)
    if pixels.ndim != 3 or y.shape != (pixels.shape[0],):
        raise ParameterError(f"write_idx: need N×h×w images and N labels, got {pixels.shape} and {y.shape}")

    Path(images_path).write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, *pixels.shape) + pixels.astype(np.uint8).tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, y.shape[0]) + y.astype(np.uint8).tobytes())

# synthetic generators

def _check_positive(**values: float) -> None:
    for name, value in values.items():
        if value <= 0:
            raise ParameterError(f"{name} must be positive, got {value}")

def make_blobs(n: int, c: int, dim: int, spread: float, seed: int) -> Dataset:
    """n points per class around c well separated centres, clipped to [0, 1]."""
    _check_positive(n=n, c=c, dim=dim)
    if spread < 0:
        raise ParameterError(f"spread must be >= 0, got {spread}")

    rng = np.random.default_rng(seed)
    centres = np.empty((c, dim))
    if dim == 1:
        centres[:, 0] = np.linspace(0.2, 0.8, c) if c > 1 else 0.5
    else:
        angles = 2 * np.pi * np.arange(c) / c
        centres[:, 0] = 0.5 + 0.3 * np.cos(angles)
        centres[:, 1] = 0.5 + 0.3 * np.sin(angles)
        centres[:, 2:] = rng.uniform(0.3, 0.7, size=(c, dim - 2))

    labels = np.repeat(np.arange(c), n)
    points = centres[labels] + rng.normal(0.0, spread, size=(n * c, dim))
    return make_dataset(np.clip(points, 0.0, 1.0), labels, c, f"blobs(n={n},c={c},dim={dim},spread={spread},seed={seed})")

def make_spirals(n: int, turns: float, noise: float, seed: int, classes: int = 2) -> Dataset:
    _check_positive(n=n, turns=turns, classes=classes)

    rng = np.random.default_rng(seed)
    t = np.linspace(0.05, 1.0, n)
    points, labels = [], []

    for k in range(classes):
        angle = 2 * np.pi * turns * t + 2 * np.pi * k / classes
        arm = np.stack([0.5 + 0.45 * t * np.cos(angle), 0.5 + 0.45 * t * np.sin(angle)], axis=1)
        points.append(arm + rng.normal(0.0, noise, size=arm.shape))
        labels.append(np.full(n, k))

    return make_dataset(np.clip(np.concatenate(points), 0.0, 1.0), np.concatenate(labels), classes, f"spirals(n={n},turns={turns},noise={noise},seed={seed})")

def make_tiny_images(n: int, c: int, h: int, w: int, seed: int, channels: int = 1, noise: float = 0.15) -> Dataset:
    """n images per class: a random per-class prototype plus pixel noise."""
    _check_positive(n=n, c=c, h=h, w=w, channels=channels)

    rng = np.random.default_rng(seed)
    prototypes = rng.uniform(0.0, 1.0, size=(c, channels, h, w))
    labels = np.repeat(np.arange(c), n)
    images = prototypes[labels] + rng.normal(0.0, noise, size=(n * c, channels, h, w))
    return make_dataset(np.clip(images, 0.0, 1.0), labels, c, f"tiny_images(n={n},c={c},{channels}x{h}x{w},seed={seed})")

def split_train_val(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0 < fraction < 1:
        raise ParameterError(f"split fraction must lie in (0, 1), got {fraction}")
    if len(dataset) < 2:
        raise ParameterError("cannot split a dataset with fewer than two examples")

    n_val = min(max(int(round(len(dataset) * fraction)), 1), len(dataset) - 1)
    order = np.random.default_rng(seed).permutation(len(dataset))
    return dataset.subset(order[n_val:]), dataset.subset(order[:n_val])

def build_dataset(spec: DatasetSpec, seed: int) -> Dataset:
    if spec.kind == "blobs":
        return make_blobs(spec.per_class, spec.classes, spec.dim, spec.spread, seed)
    if spec.kind == "spirals":
        return make_spirals(spec.per_class, spec.turns, spec.noise, seed, spec.classes)
    if spec.kind == "tiny_images":
        return make_tiny_images(spec.per_class, spec.classes, spec.height, spec.width, seed, spec.channels)
    if spec.kind == "csv":
        return load_csv(spec.path, spec.header)
    if spec.kind == "idx":
        return load_idx(spec.path, spec.labels_path)
    raise ParameterError(f"unknown dataset kind {spec.kind!r}")
