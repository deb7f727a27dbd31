"""Run configuration: an INI file with one section per component.

Grammar: ``[section]`` headers, ``key = value`` lines, ``#``/``;`` comments.
Lists are comma-separated; booleans accept true/false/yes/no/1/0. Unknown
sections or keys are rejected so typos do not silently fall back to defaults.
"""

import configparser
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .data import generate_blobs, load_csv
from .errors import ConfigError
from .kd_losses import LossWeights
from .mlp import MlpSpec, OptimizerSpec
from .temperature import TemperaturePolicy

DEFAULT_CONFIG = "default.ini"


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "blobs"
    classes: int = 10
    per_class: int = 625
    dims: int = 16
    spread: float = 1.0
    center_scale: float = 1.0
    seed: int = 0
    path: str = ""
    label_column: str = "-1"
    split_seed: int = 0

    def build(self, base_dir=None):
        if self.kind == "blobs":
            return generate_blobs(self.classes, self.per_class, self.dims, self.spread,
                                  seed=self.seed, center_scale=self.center_scale)
        if self.kind == "csv":
            if not self.path:
                raise ConfigError("dataset.kind = csv needs dataset.path")
            path = Path(self.path)
            if not path.is_absolute() and base_dir is not None:
                path = Path(base_dir) / path
            return load_csv(path, self.label_column, split_seed=self.split_seed)
        raise ConfigError(f"unknown dataset.kind {self.kind!r}")


@dataclass(frozen=True)
class NetConfig:
    hidden: tuple = ()
    activation: str = "relu"

    def spec(self, n_inputs, n_outputs, seed):
        return MlpSpec((n_inputs, *self.hidden, n_outputs), self.activation, seed)


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    epochs: int = 60
    teacher_epochs: int = 60
    bench_epochs: int = 5
    precompute_teacher: bool = False
    out_dir: str = "runs/default"


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    teacher: NetConfig = field(default_factory=lambda: NetConfig((128, 128)))
    student: NetConfig = field(default_factory=lambda: NetConfig((16,)))
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    loss: LossWeights = field(default_factory=LossWeights)
    temperature: TemperaturePolicy = field(default_factory=TemperaturePolicy)
    run: RunSection = field(default_factory=RunSection)
    source: str = ""

    @property
    def teacher_seed(self):
        return self.run.seed

    @property
    def student_seed(self):
        return self.run.seed + 1

    def with_seed(self, seed):
        return replace(self, run=replace(self.run, seed=seed))

    def with_out_dir(self, out_dir):
        return replace(self, run=replace(self.run, out_dir=str(out_dir)))


def _parse_bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_list(conv):
    def parse(text):
        return tuple(conv(x) for x in text.split(",") if x.strip())
    return parse


_SECTIONS = {
    "dataset": (DatasetConfig, {
        "kind": str, "classes": int, "per_class": int, "dims": int, "spread": float,
        "center_scale": float, "seed": int, "path": str, "label_column": str, "split_seed": int,
    }),
    "teacher": (NetConfig, {"hidden": _parse_list(int), "activation": str}),
    "student": (NetConfig, {"hidden": _parse_list(int), "activation": str}),
    "optimizer": (OptimizerSpec, {
        "lr": float, "momentum": float, "weight_decay": float,
        "milestones": _parse_list(float), "decay_factor": float, "batch_size": int,
    }),
    "loss": (LossWeights, {"lambda_ce": float, "lambda_kd": float, "kl_per_class": _parse_bool}),
    "temperature": (TemperaturePolicy, {
        "kind": str, "static_tau": float, "order_a": int, "floor": float,
        "strict_abs_max": _parse_bool, "teacher_only": _parse_bool,
    }),
    "run": (RunSection, {
        "seed": int, "epochs": int, "teacher_epochs": int, "bench_epochs": int,
        "precompute_teacher": _parse_bool, "out_dir": str,
    }),
}


def parse_config(text, source="<string>"):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    base = RunConfig()
    sections = {}
    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section [{name}]")
        cls, keys = _SECTIONS[name]
        values = {}
        for key, raw in parser.items(name):
            if key not in keys:
                raise ConfigError(f"{source}: unknown key {name}.{key}")
            try:
                values[key] = keys[key](raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {name}.{key}: {exc}") from None
        try:
            sections[name] = replace(getattr(base, name), **values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: invalid [{name}] section: {exc}") from None
    return replace(base, source=source, **sections)


def load_config(path=None):
    """Read ``path``, or the bundled reference config when ``path`` is None."""
    if path is None:
        text = resources.files("maxlogit_kd").joinpath("configs", DEFAULT_CONFIG).read_text()
        return parse_config(text, source=DEFAULT_CONFIG)
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))
