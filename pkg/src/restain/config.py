"""Strict config-file schemas for the command-line interface.

Configs are YAML mappings with a fixed schema per command. Unknown keys and
missing required keys are hard errors naming the key: silent typos are the
main reproducibility hazard. The seed is always required in the file (it can
be overridden, but never defaulted silently).
"""

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigurationError


def load_raw_config(path) -> dict:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigurationError(f"malformed config {path}: {e}") from e
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config {path} must be a mapping, got {type(raw).__name__}")
    return raw


def _type_ok(value, hint) -> bool:
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        return any(_type_ok(value, arg) for arg in typing.get_args(hint))
    if hint is type(None):
        return value is None
    if hint is bool:
        return isinstance(value, bool)
    if hint is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if hint is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if hint is str:
        return isinstance(value, str)
    if hint in (list, tuple) or origin in (list, tuple):
        return isinstance(value, (list, tuple))
    if hint is dict or origin is dict:
        return isinstance(value, dict)
    return True


def _coerce(value, hint):
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        for arg in typing.get_args(hint):
            if _type_ok(value, arg):
                return _coerce(value, arg)
        return value
    if hint is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if (hint is tuple or origin is tuple) and isinstance(value, list):
        return tuple(value)
    return value


def coerce_config(raw: dict, cls, context: str, aliases: dict | None = None):
    """Build a schema dataclass from a raw mapping; unknown keys, missing
    required keys, and wrong-typed values all raise naming the key."""
    aliases = aliases or {}
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    merged = {}
    for key, value in raw.items():
        name = aliases.get(key, key)
        if name not in fields:
            raise ConfigurationError(f"{context}: unknown config key {key!r}")
        if name in merged:
            raise ConfigurationError(f"{context}: duplicate config key {key!r}")
        merged[name] = (key, value)
    kwargs = {}
    for name, f in fields.items():
        if name in merged:
            key, value = merged[name]
            hint = hints.get(name, object)
            if not _type_ok(value, hint):
                raise ConfigurationError(
                    f"{context}: config key {key!r} has invalid type {type(value).__name__}"
                )
            kwargs[name] = _coerce(value, hint)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigurationError(f"{context}: missing required config key {name!r}")
    return cls(**kwargs)


@dataclass(frozen=True)
class GenDataConfig:
    out_dir: str
    n_samples: int
    seed: int
    image_size: int = 64
    n_domains: int = 4
    test_fraction: float = 0.2


@dataclass(frozen=True)
class TrainCliConfig:
    corpus: str
    out: str
    seed: int
    iterations: int = 8000
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 1e-4
    total_steps: int = 100
    beta_min: float = 1e-4
    beta_max: float = 0.02
    null_prob: float = 0.1
    base: int = 16
    mults: tuple = (1, 2, 3)
    emb_dim: int = 64
    flip_augment: bool = True
    log_every: int = 500
    resume: str | None = None


@dataclass(frozen=True)
class AdapterSpec:
    kind: str = "oracle"  # oracle | noisy-oracle | histogram-match | external | identity
    noise_level: float = 0.25
    seed: int = 0
    lookup: dict = field(default_factory=dict)
    reference_split: str = "train"

    def __post_init__(self):
        kinds = ("oracle", "noisy-oracle", "histogram-match", "external", "identity")
        if self.kind not in kinds:
            raise ConfigurationError(f"adapter kind must be one of {kinds} (got {self.kind!r})")


@dataclass(frozen=True)
class TransferCliConfig:
    checkpoint: str
    corpus: str
    seed: int
    source: str | int
    target: str | int
    out_dir: str
    sample_ids: list | None = None  # None = the whole test split
    limit: int | None = None
    lam: float = 0.75
    total_steps: int | None = None
    ist_init: int = 50
    c1: float = 1e-8
    c2: float = 1e-8
    inner_learning_rate: float = 1e-2
    loss_variant: str = "standard-ssim"
    style_condition: str = "null"
    adapter: dict = field(default_factory=dict)
    evaluate: bool = True
    featurizer: str | None = None
    use_cache: bool = True

    def adapter_spec(self) -> AdapterSpec:
        return coerce_config(self.adapter, AdapterSpec, "adapter")


@dataclass(frozen=True)
class SweepCliConfig(TransferCliConfig):
    grid: dict = field(default_factory=dict)

    def grid_values(self) -> tuple:
        """Returns (param, values) with param in {'lam', 'ist_init'}."""
        keys = set(self.grid)
        if keys == {"lambda"}:
            return "lam", list(self.grid["lambda"])
        if keys == {"ist_init"}:
            return "ist_init", list(self.grid["ist_init"])
        raise ConfigurationError("sweep grid must contain exactly one of the keys 'lambda' or 'ist_init'")


@dataclass(frozen=True)
class EvalCliConfig:
    corpus: str
    seed: int
    target: str | int
    out: str
    source: str | int | None = None
    images: str | None = None  # directory of <sample_id>.png outputs to score
    adapter: dict | None = None  # or score an adapter's own outputs directly
    split: str = "test"
    sample_ids: list | None = None
    limit: int | None = None
    featurizer: str | None = None
    lam: float | None = None

    def __post_init__(self):
        if (self.images is None) == (self.adapter is None):
            raise ConfigurationError("eval config needs exactly one of 'images' or 'adapter'")


@dataclass(frozen=True)
class ErrorStudyCliConfig:
    checkpoint: str
    corpus: str
    seed: int
    out_dir: str
    source: str | int
    target: str | int
    n_images: int = 4
    t_grid: list = field(default_factory=lambda: [10, 25, 50, 100])
    ist_init: int = 50
    with_prompts: bool = True


@dataclass(frozen=True)
class ReportCliConfig:
    out_dir: str
    seed: int
    tables: list = field(default_factory=list)
    loss_logs: list = field(default_factory=list)
    error_tables: list = field(default_factory=list)


CONFIG_ALIASES = {"lambda": "lam"}


def parse_command_config(command: str, raw: dict):
    schemas = {
        "gen-data": GenDataConfig,
        "train": TrainCliConfig,
        "transfer": TransferCliConfig,
        "sweep": SweepCliConfig,
        "eval": EvalCliConfig,
        "error-study": ErrorStudyCliConfig,
        "report": ReportCliConfig,
    }
    if command not in schemas:
        raise ConfigurationError(f"unknown command {command!r}")
    return coerce_config(raw, schemas[command], command, aliases=CONFIG_ALIASES)
