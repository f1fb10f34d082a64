"""Binary checkpoint container for a model and, optionally, its pruner state.

All integers are little-endian u32, all reals little-endian f64.

    magic      8 bytes  b"SRTCKPT\\0"
    version    u32
    nrecords   u32
    records    nrecords × (u32 length, utf-8 bytes)
                 "model:<k=v;...>"   model spec, input_shape, classes
                 "layer:<k=v;...>"   one per layer, in member order
                 "config:<text>"     canonical experiment config (may be empty)
                 "pruner:<k=v;...>"  or "pruner:" when no state is stored
    nparams    u32
    tensors    nparams × tensor, in registry order
    [if pruner present]
      w, u, z  each: u32 count + count × tensor (z count is 0 unless admm)
      history  u32 count + count × f64

    tensor     u32 name length, utf-8 name, u32 ndim, ndim × u32 dims, f64 data
"""

import logging
import struct

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .config import ModelSpec, format_value, parse_value
from .errors import FormatError
from .models import Model, build_model
from .pruners import PrunerState

logger = logging.getLogger(__name__)

MAGIC = b"SRTCKPT\x00"
VERSION = 1

@dataclass
class Checkpoint:
    model: Model
    state: Optional[PrunerState] = None
    config_text: str = ""

class _Writer:
    def __init__(self) -> None:
        self.parts: list[bytes] = []

    def u32(self, value: int) -> None:
        self.parts.append(struct.pack("<I", value))

    def text(self, value: str) -> None:
        data = value.encode("utf-8")
        self.u32(len(data))
        self.parts.append(data)

    def tensor(self, name: str, array: np.ndarray) -> None:
        self.text(name)
        self.u32(array.ndim)
        for dim in array.shape:
            self.u32(dim)
        self.parts.append(np.ascontiguousarray(array, dtype="<f8").tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self.parts)

class _Reader:
    def __init__(self, data: bytes, path: str) -> None:
        self.data = data
        self.offset = 0
        self.path = path

    def _take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise FormatError(f"{self.path}: byte {self.offset}: truncated checkpoint")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def text(self) -> str:
        return self._take(self.u32()).decode("utf-8")

    def tensor(self) -> tuple[str, np.ndarray]:
        name = self.text()
        shape = tuple(self.u32() for _ in range(self.u32()))
        count = int(np.prod(shape)) if shape else 1
        array = np.frombuffer(self._take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        return name, array

def _encode(values: dict[str, object]) -> str:
    return ";".join(f"{key}={format_value(value)}" for key, value in values.items())

def _decode(text: str) -> dict[str, str]:
    return dict(item.split("=", 1) for item in text.split(";") if item)

def _model_record(model: Model) -> str:
    values: dict[str, object] = {f.name: getattr(model.spec, f.name) for f in fields(model.spec)}
    values["input_shape"] = tuple(model.input_shape)
    values["classes"] = model.num_classes
    return _encode(values)

def _pruner_record(state: Optional[PrunerState]) -> str:
    if state is None:
        return ""
    return _encode({
        "algorithm": state.algorithm, "beta": float(state.beta), "lam": float(state.lam),
        "lam1": float(state.lam1), "lam2": float(state.lam2), "eta": float(state.eta), "prox": state.prox,
    })

def checkpoint_bytes(model: Model, state: Optional[PrunerState] = None, config_text: str = "") -> bytes:
    out = _Writer()
    out.parts.append(MAGIC)
    out.u32(VERSION)

    records = [f"model:{_model_record(model)}"]
    records += [f"layer:{record}" for record in model.layer_records()]
    records += [f"config:{config_text}", f"pruner:{_pruner_record(state)}"]
    out.u32(len(records))
    for record in records:
        out.text(record)

    out.u32(len(model.registry))
    for param in model.registry:
        out.tensor(param.pid, param.value.data)

    if state is not None:
        for values in (state.w, state.u, state.z or {}):
            out.u32(len(values))
            for pid, array in values.items():
                out.tensor(pid, array)
        out.u32(len(state.history))
        out.parts.append(np.asarray(state.history, dtype="<f8").tobytes())

    return out.getvalue()

def save_checkpoint(path: Union[str, Path], model: Model, state: Optional[PrunerState] = None, config_text: str = "") -> None:
    Path(path).write_bytes(checkpoint_bytes(model, state, config_text))
    logger.debug("checkpoint written to %s", path)

def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    reader = _Reader(Path(path).read_bytes(), str(path))

    if reader._take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path}: byte 0: not an SRT checkpoint")
    version = reader.u32()
    if version != VERSION:
        raise FormatError(f"{path}: byte 8: unsupported checkpoint version {version}")

    records = [reader.text() for _ in range(reader.u32())]
    sections: dict[str, list[str]] = {}
    for record in records:
        kind, sep, body = record.partition(":")
        if not sep:
            raise FormatError(f"{path}: malformed record {record!r}")
        sections.setdefault(kind, []).append(body)

    if len(sections.get("model", [])) != 1 or len(sections.get("pruner", [])) != 1:
        raise FormatError(f"{path}: expected exactly one model and one pruner record")

    raw = _decode(sections["model"][0])
    base = ModelSpec()
    spec = ModelSpec(**{f.name: parse_value(raw[f.name], getattr(base, f.name)) for f in fields(ModelSpec)})
    input_shape = parse_value(raw["input_shape"], ())
    model = build_model(spec, input_shape, int(raw["classes"]))

    if model.layer_records() != sections.get("layer", []):
        raise FormatError(f"{path}: layer table does not match the model spec")

    params = dict(reader.tensor() for _ in range(reader.u32()))
    if list(params) != [param.pid for param in model.registry]:
        raise FormatError(f"{path}: parameter table does not match the registry")
    model.load_parameters(params)

    state: Optional[PrunerState] = None
    pruner = sections["pruner"][0]
    if pruner:
        meta = _decode(pruner)
        w = dict(reader.tensor() for _ in range(reader.u32()))
        u = dict(reader.tensor() for _ in range(reader.u32()))
        z = dict(reader.tensor() for _ in range(reader.u32()))
        history = np.frombuffer(reader._take(8 * reader.u32()), dtype="<f8").astype(float).tolist()
        state = PrunerState(
            meta["algorithm"], w, u, z if meta["algorithm"] == "admm" else None,
            float(meta["beta"]), float(meta["lam"]), float(meta["lam1"]), float(meta["lam2"]),
            float(meta["eta"]), meta["prox"], model.group_map() if meta["algorithm"] == "rgsm" else {}, history,
        )

    return Checkpoint(model, state, sections.get("config", [""])[0])
