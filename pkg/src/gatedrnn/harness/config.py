"""Experiment configuration: a flat ``key=value`` file plus command-line overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Tuple

from ..cells import GruVariant, check_kind
from ..exceptions import ParameterError

TASKS = ("pianoroll", "signal", "lag")
DEFAULT_HIDDEN = 32


@dataclass
class ExperimentConfig:
    task: str = "lag"
    data: Optional[str] = None
    name: Optional[str] = None
    cell: str = "gru"
    hidden: Optional[int] = None
    budget: Optional[int] = None
    gru_variant: str = "candidate"
    seed: int = 0
    # learning-rate search
    lr: Optional[float] = None
    lr_candidates: int = 10
    lr_lo: float = -12.0
    lr_hi: float = -6.0
    search_epochs: Optional[int] = None
    full_search: bool = False
    workers: int = 1
    # training
    max_epochs: int = 100
    patience: int = 20
    batch_size: int = 1
    noise_std: float = 0.075
    clip: float = 1.0
    rho: float = 0.9
    rms_eps: float = 1e-8
    init_scale: float = 1.0
    # heads and windows
    components: int = 20
    in_len: int = 20
    out_len: int = 10
    stride: Optional[int] = None
    # synthetic data generators
    num_seq: int = 200
    seq_len: int = 500
    lag: int = 20
    dim: int = 2
    num_tones: int = 3
    split: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    out_dir: str = "results"

    def __post_init__(self):
        self.validate()

    def validate(self) -> "ExperimentConfig":
        if self.task not in TASKS:
            raise ParameterError(f"task must be one of {TASKS}, got {self.task!r}")
        self.cell = check_kind(self.cell)
        GruVariant(self.gru_variant)
        if self.hidden is not None and self.budget is not None:
            raise ParameterError("set only one of hidden / budget")
        if self.hidden is None and self.budget is None:
            self.hidden = DEFAULT_HIDDEN
        if self.hidden is not None and self.hidden < 1:
            raise ParameterError(f"hidden size must be positive, got {self.hidden}")
        if self.budget is not None and self.budget < 1:
            raise ParameterError(f"parameter budget must be positive, got {self.budget}")
        if self.task == "pianoroll" and not self.data:
            raise ParameterError("the pianoroll task needs a data file")
        positive = ("clip", "rms_eps", "init_scale", "lr_candidates", "components",
                    "in_len", "out_len", "batch_size", "dim", "num_seq", "workers")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("max_epochs", "patience", "lag", "num_tones"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be non-negative")
        if self.noise_std < 0:
            raise ParameterError("noise_std must be non-negative")
        if not 0 < self.rho < 1:
            raise ParameterError(f"rho must lie in (0, 1), got {self.rho}")
        if not self.lr_lo < self.lr_hi:
            raise ParameterError("lr_lo must be below lr_hi")
        if self.lr is not None and not self.lr > 0:
            raise ParameterError("lr must be positive")
        if len(self.split) != 3 or abs(sum(self.split) - 1) > 1e-9 or min(self.split) <= 0:
            raise ParameterError(f"split must be three positive fractions summing to 1")
        return self

    @property
    def dataset_name(self) -> str:
        if self.name:
            return self.name
        if self.data:
            return Path(self.data).stem
        return {"lag": f"lag{self.lag}", "signal": "synthetic-signal"}.get(self.task, self.task)

    @property
    def head_kind(self) -> str:
        return "gmm" if self.task == "signal" else "bernoulli"

    @property
    def effective_search_epochs(self) -> int:
        if self.full_search:
            return self.max_epochs
        if self.search_epochs is not None:
            return self.search_epochs
        return max(5, self.max_epochs // 10)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def coerce(name: str, value: str):
    """Convert a textual value to the type of config field ``name``."""
    if name not in FIELD_TYPES:
        raise ParameterError(f"unknown config key {name!r}")
    kind = str(FIELD_TYPES[name])
    text = str(value).strip()
    if "Optional" in kind and text.lower() in ("", "none", "null"):
        return None
    try:
        if "bool" in kind:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if "Tuple" in kind:
            return tuple(float(v) for v in text.replace(",", " ").split())
        if "int" in kind:
            return int(text)
        if "float" in kind:
            return float(text)
    except ValueError:
        raise ParameterError(f"bad value {value!r} for {name}") from None
    return text


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        values[key] = coerce(key, value)
    return values


def load_config(path=None, **overrides) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    given = {k: v for k, v in overrides.items() if v is not None}
    # a size given on the command line replaces the other size from the file
    for key, other in (("hidden", "budget"), ("budget", "hidden")):
        if key in given and other not in given:
            values.pop(other, None)
    values.update(given)
    return ExperimentConfig(**values)


def format_config(config: ExperimentConfig) -> str:
    lines = []
    for f in fields(config):
        value = getattr(config, f.name)
        if value is None:
            continue
        if isinstance(value, tuple):
            value = ",".join(repr(v) for v in value)
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"
