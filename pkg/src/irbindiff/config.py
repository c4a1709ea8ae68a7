"""Run configuration: flat ``key = value`` files with dotted section keys.

Example::

    corpus_dir = runs/corpus
    work_dir = runs/demo
    seed = 7
    lm.layers = 2
    ggnn.queue_capacity = 512
    eval.tasks = XC,XO,XA

Values are coerced by the declared field types; unknown keys are rejected
so typos fail loudly. The resolved configuration can be written back in the
same format and round-trips exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import get_origin, get_type_hints

from .errors import ConfigError
from .ggnn import GGNNConfig
from .retrieval import TASK_KINDS


@dataclass
class PrepareSettings:
    min_blocks: int = 5
    min_count: int = 1          # vocabulary frequency floor


@dataclass
class SamplingSettings:
    walks_per_node: int = 2
    max_len: int = 64
    max_examples: int = 0       # 0 keeps the whole corpus


@dataclass
class LMSettings:
    layers: int = 4
    hidden: int = 128
    heads: int = 8
    max_position: int = 128
    ffn_factor: int = 4
    lr: float = 3e-5
    batch_size: int = 256
    epochs: int = 3
    pool: str = "cls"


@dataclass
class SynthSettings:
    n_groups: int = 50


@dataclass
class EvalSettings:
    tasks: list[str] = field(default_factory=lambda: list(TASK_KINDS))
    n_queries: int = 50
    pool_size: int = 100


@dataclass
class PipelineConfig:
    corpus_dir: str = "runs/corpus"
    work_dir: str = "runs/work"
    seed: int = 0
    no_norm: bool = False
    no_plm: bool = False
    no_graph: bool = False
    prepare: PrepareSettings = field(default_factory=PrepareSettings)
    sampling: SamplingSettings = field(default_factory=SamplingSettings)
    lm: LMSettings = field(default_factory=LMSettings)
    ggnn: GGNNConfig = field(default_factory=GGNNConfig)
    synth: SynthSettings = field(default_factory=SynthSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def __post_init__(self):
        for task in self.eval.tasks:
            if task not in TASK_KINDS:
                raise ConfigError(f"unknown eval task {task!r}; "
                                  f"expected one of {TASK_KINDS}")
        # the graph encoder consumes LM block embeddings directly
        if self.ggnn.input_dim != self.lm.hidden:
            self.ggnn = replace(self.ggnn, input_dim=self.lm.hidden)


_SECTIONS = {
    "": PipelineConfig,
    "prepare": PrepareSettings,
    "sampling": SamplingSettings,
    "lm": LMSettings,
    "ggnn": GGNNConfig,
    "synth": SynthSettings,
    "eval": EvalSettings,
}

# set by the pipeline, not the user
_DERIVED = {"ggnn.input_dim"}


def _coerce(key: str, raw: str, typ) -> object:
    raw = raw.strip()
    if typ is bool:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if typ is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}")
    if typ is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}")
    if typ is str:
        return raw
    if get_origin(typ) is list:
        return [part.strip() for part in raw.split(",") if part.strip()]
    raise ConfigError(f"{key}: unsupported option type {typ}")


def parse_flat_file(path: str | Path) -> dict[str, str]:
    """Read ``key = value`` lines; '#' starts a comment, blanks ignored."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    out: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value, "
                              f"got {line.strip()!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def config_from_flat(flat: dict[str, str]) -> PipelineConfig:
    values: dict[str, dict[str, object]] = {name: {} for name in _SECTIONS}
    hints = {name: get_type_hints(cls) for name, cls in _SECTIONS.items()}
    for key, raw in flat.items():
        if key in _DERIVED:
            raise ConfigError(f"{key} is derived from lm.hidden; remove it")
        section, _, name = key.rpartition(".")
        if section not in _SECTIONS or name not in hints[section] \
                or is_dataclass(hints[section].get(name)):
            raise ConfigError(f"unknown config key {key!r}")
        values[section][name] = _coerce(key, raw, hints[section][name])
    kwargs: dict[str, object] = dict(values[""])
    for section, cls in _SECTIONS.items():
        if section:
            kwargs[section] = cls(**values[section])
    return PipelineConfig(**kwargs)


def load_config(path: str | Path) -> PipelineConfig:
    return config_from_flat(parse_flat_file(path))


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return str(value)


def config_to_flat(config: PipelineConfig) -> dict[str, str]:
    flat: dict[str, str] = {}
    for f in fields(config):
        value = getattr(config, f.name)
        if is_dataclass(value):
            for sub in fields(value):
                key = f"{f.name}.{sub.name}"
                if key not in _DERIVED:
                    flat[key] = _format_value(getattr(value, sub.name))
        else:
            flat[f.name] = _format_value(value)
    return flat


def save_config(config: PipelineConfig, path: str | Path) -> None:
    flat = config_to_flat(config)
    lines = [f"{key} = {flat[key]}" for key in sorted(flat)]
    Path(path).write_text("\n".join(lines) + "\n")
