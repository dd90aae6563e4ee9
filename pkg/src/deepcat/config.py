"""Flat ``section.key = value`` experiment configuration.

Example::

    # three separable blobs, prototype head
    data.source = blobs
    data.separation = 6
    model.head = prototype
    model.covariance = axis
    train.epochs = 50

Every key has a default; unknown keys, malformed values and violated
constraints raise :class:`ConfigurationError` with the offending line.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigurationError
from .eval import ModelSpec
from .heads import HEAD_KINDS, INIT_SCHEMES, LOGIT_MODES, Covariance
from .optim import TrainConfig

DATA_SOURCES = ("blobs", "multimodal", "idx", "cifar10")


def _bool(text):
    lowered = text.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(parse):
    def inner(text):
        return None if text.lower() in ("none", "") else parse(text)

    return inner


def _list(parse):
    def inner(text):
        return tuple(parse(t.strip()) for t in text.split(",") if t.strip())

    return inner


def _str(text):
    return text


@dataclass(frozen=True)
class DataSpec:
    source: str = "blobs"
    classes: int = 3
    per_class: int = 100
    dim: int = 2
    separation: float = 6.0
    modes: int = 4
    per_mode: int = 50
    spacing: float = 6.0
    seed: int = 0
    images: str | None = None
    labels: str | None = None
    paths: tuple = ()
    limit: int | None = None
    train_fraction: float = 0.8
    split_seed: int = 0


@dataclass(frozen=True)
class EvalSpec:
    human: str | None = None
    sweep: tuple = ()
    replications: int = 1
    embed_sample: int = 3000


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "runs"
    run_id: str = "run"


# key -> parser; the dataclass defaults are the documented defaults
SCHEMA = {
    "data": {
        "source": _str,
        "classes": int,
        "per_class": int,
        "dim": int,
        "separation": float,
        "modes": int,
        "per_mode": int,
        "spacing": float,
        "seed": int,
        "images": _optional(_str),
        "labels": _optional(_str),
        "paths": _list(_str),
        "limit": _optional(int),
        "train_fraction": float,
        "split_seed": int,
    },
    "model": {
        "net": _str,
        "feature_dim": _optional(int),
        "head": _str,
        "k": _optional(int),
        "covariance": _str,
        "logit_mode": _str,
        "frozen_centers": _bool,
        "logdet": _bool,
        "init": _optional(_str),
        "log_prior": _optional(_list(float)),
    },
    "train": {
        "learning_rate": float,
        "decay": float,
        "momentum": float,
        "epochs": int,
        "batch_size": int,
        "seed": int,
        "clip_norm": _optional(float),
    },
    "eval": {"human": _optional(_str), "sweep": _list(int), "replications": int, "embed_sample": int},
    "output": {"dir": _str, "run_id": _str},
}

_SOURCE_KEYS = {
    "blobs": {"classes", "per_class", "dim", "separation", "seed"},
    "multimodal": {"classes", "modes", "per_mode", "dim", "spacing", "seed"},
    "idx": {"images", "labels"},
    "cifar10": {"paths"},
}
_SHARED_DATA_KEYS = {"source", "limit", "train_fraction", "split_seed"}
_MODEL_RENAMES = {"logdet": "use_logdet"}


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSpec = field(default_factory=DataSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSpec = field(default_factory=EvalSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    def to_flat(self) -> dict:
        """Effective configuration as ``{"section.key": value}`` (JSON-friendly)."""
        flat = {}
        for section in SCHEMA:
            obj = getattr(self, section)
            for key in SCHEMA[section]:
                if section == "data" and key not in _SOURCE_KEYS[self.data.source] | _SHARED_DATA_KEYS:
                    continue
                value = getattr(obj, _MODEL_RENAMES.get(key, key) if section == "model" else key)
                flat[f"{section}.{key}"] = list(value) if isinstance(value, tuple) else value
        return flat

    def to_text(self) -> str:
        lines = []
        for key, value in self.to_flat().items():
            if value is None:
                text = "none"
            elif isinstance(value, bool):
                text = str(value).lower()
            elif isinstance(value, list):
                text = ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"

    def with_seed(self, seed: int) -> ExperimentConfig:
        return replace(self, train=replace(self.train, seed=seed))


def _build(values: dict, lines: dict) -> ExperimentConfig:
    def fail(section, exc):
        keys = [k for k in lines if k.startswith(section + ".")]
        line = max((lines[k] for k in keys), default=None)
        raise ConfigurationError(str(exc), line=line) from None

    data_vals = values.get("data", {})
    source = data_vals.get("source", DataSpec.source)
    if source not in DATA_SOURCES:
        raise ConfigurationError(f"unknown data source {source!r}; expected one of {DATA_SOURCES}", line=lines.get("data.source"))
    allowed = _SOURCE_KEYS[source] | _SHARED_DATA_KEYS
    for key in data_vals:
        if key not in allowed:
            raise ConfigurationError(
                f"data.{key} does not apply to data.source = {source} (exactly one data source per experiment)",
                line=lines.get(f"data.{key}"),
            )
    if source == "idx" and not (data_vals.get("images") and data_vals.get("labels")):
        raise ConfigurationError("data.source = idx needs data.images and data.labels", line=lines.get("data.source"))
    if source == "cifar10" and not data_vals.get("paths"):
        raise ConfigurationError("data.source = cifar10 needs data.paths", line=lines.get("data.source"))
    try:
        data = DataSpec(**data_vals)
        if not 0.0 < data.train_fraction < 1.0:
            raise ConfigurationError("data.train_fraction must lie in (0, 1)")
    except ConfigurationError as exc:
        fail("data", exc)

    model_vals = {_MODEL_RENAMES.get(k, k): v for k, v in values.get("model", {}).items()}
    try:
        model = ModelSpec(**model_vals)
        if model.head not in HEAD_KINDS:
            raise ConfigurationError(f"unknown head {model.head!r}; expected one of {HEAD_KINDS}")
        if model.logit_mode not in LOGIT_MODES:
            raise ConfigurationError(f"unknown logit mode {model.logit_mode!r}")
        if model.covariance not in {c.value for c in Covariance}:
            raise ConfigurationError(f"unknown covariance {model.covariance!r}")
        if model.init is not None and model.init not in INIT_SCHEMES:
            raise ConfigurationError(f"unknown init scheme {model.init!r}")
    except ConfigurationError as exc:
        fail("model", exc)

    try:
        train = TrainConfig(**values.get("train", {}))
    except ConfigurationError as exc:
        fail("train", exc)

    try:
        ev = EvalSpec(**values.get("eval", {}))
        if ev.replications < 1 or ev.embed_sample < 0 or any(k < 1 for k in ev.sweep):
            raise ConfigurationError("eval.replications >= 1, eval.embed_sample >= 0 and sweep K >= 1 required")
    except ConfigurationError as exc:
        fail("eval", exc)

    output = OutputSpec(**values.get("output", {}))
    return ExperimentConfig(data, model, train, ev, output)


def parse_config_text(text: str) -> ExperimentConfig:
    values: dict[str, dict] = {}
    lines: dict[str, int] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"expected 'section.key = value', got {raw.strip()!r}", line=line_no)
        name, value = (part.strip() for part in line.split("=", 1))
        section, _, key = name.partition(".")
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigurationError(f"unknown key {name!r}", line=line_no)
        if name in lines:
            raise ConfigurationError(f"{name} set twice (first on line {lines[name]})", line=line_no)
        try:
            parsed = SCHEMA[section][key](value)
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {name}: {exc}", line=line_no) from None
        values.setdefault(section, {})[key] = parsed
        lines[name] = line_no
    return _build(values, lines)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(encoding="utf-8"))


def config_from_flat(flat: dict) -> ExperimentConfig:
    """Rebuild a config from :meth:`ExperimentConfig.to_flat` output."""
    values: dict[str, dict] = {}
    for name, value in flat.items():
        section, _, key = name.partition(".")
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigurationError(f"unknown key {name!r} in config snapshot")
        if isinstance(value, list):
            value = tuple(value)
        values.setdefault(section, {})[key] = value
    return _build(values, {})
