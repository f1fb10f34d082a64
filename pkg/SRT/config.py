import os

from dataclasses import dataclass, field, fields, replace
from hashlib import sha256
from pathlib import Path
from typing import Any, Optional

from yaml import safe_load

from .errors import ConfigFileLoaderError, ParseError, ValidationError, ParameterError
from .srt_types import AttackSpec
from . import __version__ as SRT_VERSION

@dataclass
class CONFIG:
    @dataclass
    class SRT:
        CONFIG_FILE: Optional[Path] = None
        OUTPUT_ROOT: Path = Path(os.environ.get("SRT_OUTPUT_ROOT", "runs"))
        VERSION: str = SRT_VERSION

    @dataclass
    class LOG:
        LEVEL: str = "INFO"

@dataclass(frozen=True)
class ModelSpec:
    family: str = "mlp"
    hidden: tuple[int, ...] = (32, 32)
    channels: tuple[int, ...] = (4, 8)
    kernel: int = 3
    width: int = 16
    blocks: int = 2
    members: int = 1
    sigma: float = 0.0
    skip: bool = True
    eval_noise: bool = False

@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "blobs"
    per_class: int = 100
    classes: int = 2
    dim: int = 2
    spread: float = 0.1
    turns: float = 1.5
    noise: float = 0.05
    channels: int = 1
    height: int = 8
    width: int = 8
    path: str = ""
    labels_path: str = ""
    header: bool = False
    val_fraction: float = 0.1
    test_fraction: float = 0.2

@dataclass(frozen=True)
class PrunerSpec:
    algorithm: str = "rvsm"
    beta: float = 1.0
    lam: float = 1e-3
    lam1: float = 5e-2
    lam2: float = 1e-5
    prox: str = "gl"

@dataclass(frozen=True)
class OptimizerSpec:
    lr: float = 0.1
    momentum: float = 0.0
    epochs: int = 50
    batch_size: int = 32
    decay_epochs: tuple[int, ...] = (20, 30, 40)
    decay_factor: float = 0.1

@dataclass(frozen=True)
class MonitorSpec:
    slack: float = 1e-8
    lipschitz_probes: int = 0
    lipschitz_radius: float = 1e-3

EPS_8 = 8 / 255
ALPHA_2 = 2 / 255

@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output: str = "desk"
    selection: str = "clean"
    timing: bool = False
    redraw: str = "batch"
    model: ModelSpec = field(default_factory=ModelSpec)
    data: DatasetSpec = field(default_factory=DatasetSpec)
    train_attack: AttackSpec = AttackSpec("ifgsm", EPS_8, ALPHA_2, 10, True)
    eval_attacks: tuple[AttackSpec, ...] = (
        AttackSpec("fgsm", EPS_8),
        AttackSpec("ifgsm", EPS_8, ALPHA_2, 20, False),
    )
    pruner: PrunerSpec = field(default_factory=PrunerSpec)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    monitor: MonitorSpec = field(default_factory=MonitorSpec)

MODEL_FAMILIES = ("mlp", "conv", "residual")
DATASET_KINDS = ("blobs", "spirals", "tiny_images", "csv", "idx")
ALGORITHMS = ("none", "rvsm", "rgsm", "admm")
PROX_KINDS = ("gl", "gl0")
ATTACK_FAMILIES = ("none", "fgsm", "ifgsm")

SECTIONS: tuple[tuple[str, str], ...] = (
    ("model", "model"),
    ("data", "data"),
    ("pruner", "pruner"),
    ("optimizer", "optimizer"),
    ("monitor", "monitor"),
)

TOP_LEVEL = ("seed", "output", "selection", "timing")

def check_attack_spec(spec: AttackSpec) -> None:
    if spec.family not in ATTACK_FAMILIES:
        raise ParameterError(f"unknown attack family {spec.family!r}")
    if spec.eps < 0:
        raise ParameterError(f"attack eps must be >= 0, got {spec.eps}")
    if spec.alpha < 0:
        raise ParameterError(f"attack alpha must be >= 0, got {spec.alpha}")
    if spec.family == "ifgsm" and spec.steps < 1:
        raise ParameterError(f"ifgsm needs at least one step, got {spec.steps}")
    if spec.lo > spec.hi:
        raise ParameterError(f"attack clamp range [{spec.lo}, {spec.hi}] is empty")

def format_attack(spec: AttackSpec) -> str:
    if spec.family == "none":
        return "none"
    if spec.family == "fgsm":
        return f"fgsm:eps={spec.eps!r},lo={spec.lo!r},hi={spec.hi!r}"
    return (
        f"ifgsm:eps={spec.eps!r},alpha={spec.alpha!r},steps={spec.steps},"
        f"random_init={int(spec.random_init)},lo={spec.lo!r},hi={spec.hi!r}"
    )

def parse_attack(text: str) -> AttackSpec:
    family, _, rest = text.strip().partition(":")
    values: dict[str, Any] = {"family": family.strip()}

    for item in filter(None, (part.strip() for part in rest.split(","))):
        key, sep, raw = item.partition("=")
        if not sep:
            raise ParseError(f"attack spec {text!r}: expected key=value, got {item!r}")
        key = key.strip()
        try:
            if key in ("eps", "alpha", "lo", "hi"):
                values[key] = float(raw)
            elif key == "steps":
                values[key] = int(raw)
            elif key == "random_init":
                values[key] = _parse_bool(raw)
            else:
                raise ParseError(f"attack spec {text!r}: unknown key {key!r}")
        except ValueError as err:
            raise ParseError(f"attack spec {text!r}: {err}")

    spec = AttackSpec(**values)
    check_attack_spec(spec)
    return spec

def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")

def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)

def parse_value(raw: str, default: Any) -> Any:
    raw = raw.strip()
    if isinstance(default, bool):
        return _parse_bool(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.split(",") if v.strip())
    return raw

def config_items(config: ExperimentConfig) -> list[tuple[str, str]]:
    items = [(key, format_value(getattr(config, key))) for key in TOP_LEVEL]
    items.append(("attack.redraw", config.redraw))
    items.append(("attack.train", format_attack(config.train_attack)))
    items.append(("attack.eval", ";".join(format_attack(spec) for spec in config.eval_attacks)))

    for prefix, attr in SECTIONS:
        section = getattr(config, attr)
        for f in fields(section):
            items.append((f"{prefix}.{f.name}", format_value(getattr(section, f.name))))

    return items

def config_dump(config: ExperimentConfig) -> str:
    return "".join(f"{key}={value}\n" for key, value in config_items(config))

def config_hash(config: ExperimentConfig) -> str:
    # where a run is written does not change what it computes
    text = "".join(f"{key}={value}\n" for key, value in config_items(config) if key != "output")
    return sha256(text.encode("utf-8")).hexdigest()[:12]

def config_from_items(items: dict[str, str]) -> ExperimentConfig:
    base = ExperimentConfig()
    top: dict[str, Any] = {}
    sections: dict[str, dict[str, Any]] = {attr: {} for _, attr in SECTIONS}
    section_of = {prefix: attr for prefix, attr in SECTIONS}

    for key, raw in items.items():
        try:
            if key in TOP_LEVEL:
                top[key] = parse_value(raw, getattr(base, key))
            elif key == "attack.redraw":
                top["redraw"] = raw.strip()
            elif key == "attack.train":
                top["train_attack"] = parse_attack(raw)
            elif key == "attack.eval":
                top["eval_attacks"] = tuple(parse_attack(part) for part in raw.split(";") if part.strip())
            else:
                prefix, _, name = key.partition(".")
                attr = section_of.get(prefix)
                if attr is None or name not in {f.name for f in fields(getattr(base, attr))}:
                    raise ParseError(f"unknown config key {key!r}")
                sections[attr][name] = parse_value(raw, getattr(getattr(base, attr), name))
        except ValueError as err:
            raise ParseError(f"config key {key!r}: {err}")

    for attr, values in sections.items():
        if values:
            top[attr] = replace(getattr(base, attr), **values)

    config = replace(base, **top)
    validate_config(config)
    return config

def config_parse(text: str) -> ExperimentConfig:
    items: dict[str, str] = {}

    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ParseError(f"line {lineno}: expected key=value, got {stripped!r}")
        items[key.strip()] = value.strip()

    return config_from_items(items)

def _flatten_yaml(data: Any, prefix: str = "") -> dict[str, str]:
    items: dict[str, str] = {}

    if not isinstance(data, dict):
        raise ParseError(f"{prefix or 'document'}: expected a mapping")

    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            items.update(_flatten_yaml(value, f"{name}."))
        elif isinstance(value, list):
            items[name] = (";" if name == "attack.eval" else ",").join(str(v) for v in value)
        elif isinstance(value, bool):
            items[name] = "true" if value else "false"
        else:
            items[name] = str(value)

    return items

def config_load(file: str) -> ExperimentConfig:
    try:
        path = Path(file)
        text = path.read_text(encoding="utf-8")

        if path.suffix in (".yaml", ".yml"):
            config = config_from_items(_flatten_yaml(safe_load(text) or {}))
        else:
            config = config_parse(text)

        CONFIG.SRT.CONFIG_FILE = path
        return config
    except OSError:
        raise
    except Exception as err:
        raise ConfigFileLoaderError(f"{file}: {err}")

def validate_config(config: ExperimentConfig) -> None:
    model, data, pruner, opt = config.model, config.data, config.pruner, config.optimizer

    checks: list[tuple[bool, str]] = [
        (model.family in MODEL_FAMILIES, f"model.family must be one of {MODEL_FAMILIES}"),
        (model.members >= 1, "model.members must be >= 1"),
        (model.sigma >= 0, "model.sigma must be >= 0"),
        (model.kernel >= 1 and model.width >= 1 and model.blocks >= 0, "model sizes must be positive"),
        (all(w >= 1 for w in model.hidden + model.channels), "model widths must be positive"),
        (data.kind in DATASET_KINDS, f"data.kind must be one of {DATASET_KINDS}"),
        (0 < data.val_fraction < 1, "data.val_fraction must lie in (0, 1)"),
        (0 < data.test_fraction < 1, "data.test_fraction must lie in (0, 1)"),
        (pruner.algorithm in ALGORITHMS, f"pruner.algorithm must be one of {ALGORITHMS}"),
        (pruner.prox in PROX_KINDS, f"pruner.prox must be one of {PROX_KINDS}"),
        (min(pruner.beta, pruner.lam, pruner.lam1, pruner.lam2) >= 0, "pruner hyperparameters must be >= 0"),
        (pruner.algorithm != "admm" or pruner.beta > 0, "admm needs beta > 0"),
        (opt.lr > 0, "optimizer.lr must be > 0"),
        (0 <= opt.momentum < 1, "optimizer.momentum must lie in [0, 1)"),
        (opt.epochs >= 1, "optimizer.epochs must be >= 1"),
        (opt.batch_size >= 1, "optimizer.batch_size must be >= 1"),
        (all(0 <= e < opt.epochs for e in opt.decay_epochs), "optimizer.decay_epochs must be < optimizer.epochs"),
        (config.selection in ("clean", "robust"), "selection must be clean or robust"),
        (config.redraw in ("batch", "epoch"), "attack.redraw must be batch or epoch"),
        (config.monitor.lipschitz_probes >= 0, "monitor.lipschitz_probes must be >= 0"),
    ]

    for ok, message in checks:
        if not ok:
            raise ValidationError(message)

    for spec in (config.train_attack, *config.eval_attacks):
        try:
            check_attack_spec(spec)
        except ParameterError as err:
            raise ValidationError(str(err))
