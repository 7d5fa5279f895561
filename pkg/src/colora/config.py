"""INI run configuration.

Sections and keys (all optional unless noted)::

    [run]       arch = desk-lite, seed = 0, eval_seed = 0, out = <dir>
    [source]    dataset = source:200:0:32
    [pretrain]  iterations, learning_rate, critic_learning_rate, ema_decay,
                batch_size, n_critic, clip_c, beta1, beta2, eps
    [adapt]     same training keys, plus rank = 1,
                alpha = auto | <alpha_fc>,<alpha_conv> | m=<multiplier>,
                activation = relu, placement = both
    [tasks]     <task_id> = <kind>:<shots>:<seed>:<resolution>, in training order
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from colora.adapters import ACTIVATIONS
from colora.arch import PLACEMENTS, ArchSpec, preset
from colora.datasets import DatasetSpec
from colora.errors import ConfigError
from colora.registry import AlphaPolicy, Task
from colora.training import TrainConfig

DEFAULT_ARCH = "desk-lite"
PRETRAIN_DEFAULTS = TrainConfig(iterations=2000, learning_rate=2e-4, critic_learning_rate=5e-5, ema_decay=0.999)
ADAPT_DEFAULTS = TrainConfig(iterations=1500, learning_rate=0.002, critic_learning_rate=1e-4)
DEFAULT_TASKS = (Task("palette", DatasetSpec("palette", 10, 1)),
                 Task("shapes", DatasetSpec("shapes", 10, 1)),
                 Task("texture", DatasetSpec("texture", 10, 1)))
_TRAIN_KEYS = {f.name: f.type for f in fields(TrainConfig)} | {"critic_learning_rate": "float"}
_TRAIN_KEYS.pop("seed")
_TRAIN_KEYS.pop("log_every")


@dataclass
class RunConfig:
    arch: ArchSpec = field(default_factory=lambda: preset(DEFAULT_ARCH))
    seed: int = 0
    eval_seed: int = 0
    out: Path | None = None
    source: DatasetSpec = DatasetSpec("source", 200, 0)
    pretrain: TrainConfig = PRETRAIN_DEFAULTS
    adapt: TrainConfig = ADAPT_DEFAULTS
    rank: int = 1
    alpha: AlphaPolicy = field(default_factory=AlphaPolicy)
    activation: str = "relu"
    placement: str = "both"
    tasks: tuple[Task, ...] = DEFAULT_TASKS

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"placement must be one of {PLACEMENTS}")
        ids = [t.task_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ConfigError("task ids must be unique")
        for t in self.tasks:
            if t.dataset.resolution != self.arch.resolution:
                raise ConfigError(f"task {t.task_id}: resolution {t.dataset.resolution} "
                                  f"does not match the {self.arch.resolution}px generator")

    def train_config(self, stage: str) -> TrainConfig:
        """The ``pretrain`` or ``adapt`` settings with the run seed applied."""
        return replace(getattr(self, stage), seed=self.seed)


def parse_alpha(text: str) -> AlphaPolicy:
    text = text.strip()
    if text == "auto":
        return AlphaPolicy()
    try:
        if text.startswith("m="):
            return AlphaPolicy("multiplier", multiplier=float(text[2:]))
        fc, conv = (float(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"alpha must be auto, m=<x> or <fc>,<conv>; got {text!r}") from None
    if not (fc > 0 and conv > 0):
        raise ConfigError("explicit alphas must be positive")
    return AlphaPolicy("explicit", alpha_fc=fc, alpha_conv=conv)


def _train_section(cp: configparser.ConfigParser, name: str, base: TrainConfig) -> TrainConfig:
    if not cp.has_section(name):
        return base
    updates = {}
    for key, raw in cp.items(name):
        if key in ("rank", "alpha", "activation", "placement"):
            continue
        kind = _TRAIN_KEYS.get(key)
        if kind is None:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        try:
            updates[key] = int(raw) if kind == "int" else float(raw)
        except ValueError:
            raise ConfigError(f"[{name}] {key} = {raw!r} is not a number") from None
    return replace(base, **updates)


def load_config(path: Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as f:
            cp.read_file(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    known = {"run", "source", "pretrain", "adapt", "tasks"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"{path}: unknown sections {sorted(extra)}")
    kw: dict = {}
    try:
        run = cp["run"] if cp.has_section("run") else {}
        if "arch" in run:
            kw["arch"] = preset(run["arch"])
        for key in ("seed", "eval_seed"):
            if key in run:
                kw[key] = int(run[key])
        if "out" in run:
            kw["out"] = Path(run["out"])
        if cp.has_option("source", "dataset"):
            kw["source"] = DatasetSpec.from_string(cp["source"]["dataset"])
        kw["pretrain"] = _train_section(cp, "pretrain", PRETRAIN_DEFAULTS)
        kw["adapt"] = _train_section(cp, "adapt", ADAPT_DEFAULTS)
        if cp.has_section("adapt"):
            a = cp["adapt"]
            if "rank" in a:
                kw["rank"] = int(a["rank"])
            if "alpha" in a:
                kw["alpha"] = parse_alpha(a["alpha"])
            for key in ("activation", "placement"):
                if key in a:
                    kw[key] = a[key].strip()
        if cp.has_section("tasks"):
            kw["tasks"] = tuple(Task(k, DatasetSpec.from_string(v)) for k, v in cp.items("tasks"))
            if not kw["tasks"]:
                raise ConfigError(f"{path}: [tasks] is empty")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None
    return RunConfig(**kw)
