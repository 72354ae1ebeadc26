"""Training configuration and the key=value config file format.

Config files are INI-style text with sections ``[model]``, ``[kernel]``,
``[task]``, ``[optimizer]``, ``[schedule]`` and ``[train]``. Every key
maps 1:1 onto a field below; unknown keys and malformed values are
rejected with the file line number. See ``configs/`` for working files.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

import numpy as np

from .data import (Dataset, gen_listops, gen_matching, gen_text_classification,
                   load_tsv_dataset)
from .errors import ConfigError
from .kernels import KernelSpec
from .model import ModelConfig

TASK_SOURCES = ("listops", "text_classification", "matching", "tsv")


@dataclass
class OptimizerConfig:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class ScheduleConfig:
    warmup_steps: int = 50
    total_steps: int = 1000
    decay: str = "linear"

    def validate(self):
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ConfigError(
                f"need total_steps > warmup_steps >= 0, got warmup={self.warmup_steps}, "
                f"total={self.total_steps}")
        if self.decay not in ("linear", "inv_sqrt"):
            raise ConfigError(f"decay must be 'linear' or 'inv_sqrt', got {self.decay!r}")


@dataclass
class TaskSpec:
    """Where training/eval data comes from: a generator or TSV files.

    ``data_seed`` fixes the generated datasets independently of the
    training seed, so multi-seed runs train on identical data. The eval
    split uses ``data_seed + 1``; for TSV sources without ``eval_path``
    the last tenth of the rows is held out.
    """

    source: str = "text_classification"
    count: int = 2000
    eval_count: int = 500
    length: int = 128
    vocab_size: int = 32
    classes: int = 2
    max_depth: int = 4
    motif_len: int = 3
    n_motifs: int = 6
    path: str = ""
    eval_path: str = ""
    data_seed: int = 1234

    def validate(self):
        if self.source not in TASK_SOURCES:
            raise ConfigError(f"task source must be one of {TASK_SOURCES}, got {self.source!r}")
        if self.source == "tsv" and not self.path:
            raise ConfigError("tsv task needs a path")

    def build(self) -> tuple[Dataset, Dataset]:
        """Materialize (train, eval) datasets."""
        self.validate()
        if self.source == "listops":
            return (gen_listops(self.data_seed, self.count, self.length, self.max_depth),
                    gen_listops(self.data_seed + 1, self.eval_count, self.length,
                                self.max_depth))
        if self.source == "text_classification":
            args = (self.length, self.vocab_size, self.classes, self.motif_len)
            return (gen_text_classification(self.data_seed, self.count, *args),
                    gen_text_classification(self.data_seed + 1, self.eval_count, *args))
        if self.source == "matching":
            args = (self.length, self.vocab_size, self.motif_len, self.n_motifs)
            return (gen_matching(self.data_seed, self.count, *args),
                    gen_matching(self.data_seed + 1, self.eval_count, *args))
        schema = "classify"
        full = load_tsv_dataset(self.path, schema)
        if self.eval_path:
            return full, load_tsv_dataset(self.eval_path, schema)
        cut = max(1, len(full) - len(full) // 10)
        train = Dataset(full.examples[:cut], full.vocab, full.classes, full.kind, full.meta)
        evald = Dataset(full.examples[cut:], full.vocab, full.classes, full.kind, full.meta)
        return train, evald


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    task: TaskSpec = field(default_factory=TaskSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    micro_batch: int = 16
    accumulation_steps: int = 1
    ortho_weight: float | None = None
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    eval_every: int = 50
    budget_limit: float = 0.10
    target_accuracy: float | None = None

    def validate(self):
        self.model.validate()
        self.task.validate()
        self.schedule.validate()
        if self.micro_batch < 1:
            raise ConfigError(f"micro_batch must be >= 1, got {self.micro_batch}")
        if self.accumulation_steps < 1:
            raise ConfigError(f"accumulation_steps must be >= 1, got {self.accumulation_steps}")
        if not self.seeds:
            raise ConfigError("need at least one seed")

    @property
    def resolved_ortho_weight(self) -> float:
        if self.ortho_weight is not None:
            return self.ortho_weight
        return self.model.kernel.ortho_reg_weight


# ---------------------------------------------------------------------------
# file parsing
# ---------------------------------------------------------------------------

def _to_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _to_seed_list(s: str) -> list[int]:
    return [int(tok) for tok in s.replace(",", " ").split()]


def _converter(py_type):
    if py_type is bool:
        return _to_bool
    if py_type is int:
        return int
    if py_type is float:
        return float
    return str


_SECTION_FIELDS = {
    "model": {f.name: f.type for f in fields(ModelConfig) if f.name != "kernel"},
    "kernel": {f.name: f.type for f in fields(KernelSpec) if f.name != "head_dim"},
    "task": {f.name: f.type for f in fields(TaskSpec)},
    "optimizer": {f.name: f.type for f in fields(OptimizerConfig)},
    "schedule": {f.name: f.type for f in fields(ScheduleConfig)},
    "train": {"micro_batch": int, "accumulation_steps": int, "ortho_weight": float,
              "seeds": list, "eval_every": int, "budget_limit": float,
              "target_accuracy": float},
}

_TYPE_NAMES = {"int": int, "float": float, "bool": bool, "str": str,
               "float | None": float, "int | None": int}


def _line_of(text: str, section: str, key: str) -> int:
    current = None
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
        elif current == section and "=" in stripped:
            if stripped.split("=", 1)[0].strip() == key:
                return i
    return 0


def parse_config_file(path) -> TrainConfig:
    """Parse a config file into a TrainConfig, reporting bad lines."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None

    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        if lineno is None and getattr(exc, "errors", None):
            lineno = exc.errors[0][0]
        where = f"{path}:{lineno}" if lineno else str(path)
        raise ConfigError(f"{where}: {exc.message.splitlines()[0]}") from None

    sections: dict[str, dict] = {}
    for section in parser.sections():
        if section not in _SECTION_FIELDS:
            raise ConfigError(f"{path}: unknown section [{section}]; "
                              f"expected {sorted(_SECTION_FIELDS)}")
        known = _SECTION_FIELDS[section]
        values = {}
        for key, raw in parser.items(section):
            if key not in known:
                lineno = _line_of(text, section, key)
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r} in [{section}]")
            py_type = known[key]
            if isinstance(py_type, str):
                py_type = _TYPE_NAMES.get(py_type, str)
            conv = _to_seed_list if key == "seeds" else _converter(py_type)
            try:
                values[key] = conv(raw)
            except ValueError as exc:
                lineno = _line_of(text, section, key)
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
        sections[section] = values

    try:
        model_kwargs = sections.get("model", {})
        kernel_kwargs = sections.get("kernel", {})
        kernel_kwargs["head_dim"] = model_kwargs.get("head_dim", ModelConfig.head_dim)
        model = ModelConfig(kernel=KernelSpec(**kernel_kwargs), **model_kwargs)
        config = TrainConfig(
            model=model,
            task=TaskSpec(**sections.get("task", {})),
            optimizer=OptimizerConfig(**sections.get("optimizer", {})),
            schedule=ScheduleConfig(**sections.get("schedule", {})),
            **sections.get("train", {}),
        )
        config.validate()
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config


def precision_dtype(name: str):
    if name == "f32":
        return np.float32
    if name == "f64":
        return np.float64
    raise ConfigError(f"precision must be 'f32' or 'f64', got {name!r}")
