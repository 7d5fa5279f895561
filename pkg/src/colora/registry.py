"""Per-task adapter registry and the sequential continual protocol.

A registry directory holds ``manifest.tsv``, a ``.lock`` file and one
adapter checkpoint per task under ``adapters/``. The manifest is::

    #colora-registry<TAB>1
    #base<TAB><sha256 hex of the base weights><TAB><arch name>
    task_id<TAB>checkpoint<TAB>dataset<TAB>rank<TAB>alpha_fc<TAB>alpha_conv<TAB>l_st<TAB>proxy_fid<TAB>diversity<TAB>created
    ... one row per task, in training order

Every mutation takes the lock, rereads the manifest, writes the checkpoint
and then replaces the manifest through a temp-file rename, so a crash leaves
either the old or the new manifest.
"""
from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np
from filelock import FileLock

from colora import checkpoint, metrics
from colora.adapters import AdapterSet
from colora.arch import ArchSpec
from colora.datasets import DatasetSpec, load
from colora.errors import RegistryError
from colora.evaluation import EvalResult, evaluate, measure_l_st
from colora.networks import Weights
from colora.training import TrainConfig, TrainLog, train_adaptation

MANIFEST = "manifest.tsv"
FORMAT_LINE = "#colora-registry\t1"
COLUMNS = ("task_id", "checkpoint", "dataset", "rank", "alpha_fc", "alpha_conv",
           "l_st", "proxy_fid", "diversity", "created")
_TASK_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


def fmt(x: float) -> str:
    """Numeric cell with 6 significant digits."""
    return f"{x:.6g}"


@dataclass
class TaskRecord:
    task_id: str
    checkpoint: str  # relative to the registry root
    dataset: str
    rank: int
    alpha_fc: float
    alpha_conv: float
    l_st: float
    proxy_fid: float
    diversity: float
    created: str

    def to_row(self) -> list[str]:
        return [self.task_id, self.checkpoint, self.dataset, str(self.rank), repr(self.alpha_fc),
                repr(self.alpha_conv), repr(self.l_st), repr(self.proxy_fid), repr(self.diversity),
                self.created]

    @classmethod
    def from_row(cls, row: list[str]) -> "TaskRecord":
        if len(row) != len(COLUMNS):
            raise ValueError(f"expected {len(COLUMNS)} columns, got {len(row)}")
        return cls(row[0], row[1], row[2], int(row[3]), float(row[4]), float(row[5]),
                   float(row[6]), float(row[7]), float(row[8]), row[9])


@dataclass
class Registry:
    root: Path
    base_fingerprint: bytes
    arch: str
    records: list[TaskRecord] = field(default_factory=list)

    # ------------------------------------------------------------ files

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST

    def _lock(self) -> FileLock:
        return FileLock(str(self.root / ".lock"))

    def _serialize(self) -> bytes:
        buf = io.StringIO()
        buf.write(f"{FORMAT_LINE}\n#base\t{self.base_fingerprint.hex()}\t{self.arch}\n")
        buf.write("\t".join(COLUMNS) + "\n")
        for r in self.records:
            buf.write("\t".join(r.to_row()) + "\n")
        return buf.getvalue().encode("utf-8")

    @classmethod
    def _parse(cls, root: Path, text: str) -> "Registry":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if len(lines) < 3 or lines[0] != FORMAT_LINE:
            raise RegistryError(f"{root / MANIFEST}: not a registry manifest")
        base = lines[1].split("\t")
        if len(base) != 3 or base[0] != "#base":
            raise RegistryError(f"{root / MANIFEST}: malformed base line")
        if lines[2].split("\t") != list(COLUMNS):
            raise RegistryError(f"{root / MANIFEST}: unexpected column header")
        try:
            fp = bytes.fromhex(base[1])
            records = [TaskRecord.from_row(line.split("\t")) for line in lines[3:]]
        except ValueError as exc:
            raise RegistryError(f"{root / MANIFEST}: {exc}") from None
        return cls(root, fp, base[2], records)

    @classmethod
    def create(cls, root: Path, base: Weights) -> "Registry":
        """Open ``root`` if it already tracks ``base``, else start an empty registry there."""
        root = Path(root)
        if not root.is_dir():
            raise RegistryError(f"registry directory {root} does not exist")
        (root / "adapters").mkdir(exist_ok=True)
        reg = cls(root, base.fingerprint(), base.arch.name)
        with reg._lock():
            if reg.manifest_path.exists():
                existing = cls.open(root)
                if existing.base_fingerprint != reg.base_fingerprint:
                    raise RegistryError(f"registry {root} was built on a different base")
                return existing
            checkpoint.atomic_write(reg.manifest_path, reg._serialize())
        return reg

    @classmethod
    def open(cls, root: Path) -> "Registry":
        root = Path(root)
        path = root / MANIFEST
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise RegistryError(f"cannot read registry manifest {path}: {exc.strerror}") from None
        return cls._parse(root, text)

    # ------------------------------------------------------------ tasks

    def task_ids(self) -> list[str]:
        return [r.task_id for r in self.records]

    def get(self, task_id: str) -> TaskRecord:
        for r in self.records:
            if r.task_id == task_id:
                return r
        raise RegistryError(f"unknown task {task_id!r}")

    def add(self, adapters: AdapterSet, record: TaskRecord) -> None:
        """Persist ``adapters`` for a new task and append its record."""
        if not _TASK_ID.match(record.task_id):
            raise RegistryError(f"invalid task id {record.task_id!r}")
        with self._lock():
            current = Registry.open(self.root)
            if current.base_fingerprint != self.base_fingerprint:
                raise RegistryError("registry base changed underneath this handle")
            if record.task_id in current.task_ids():
                raise RegistryError(f"task {record.task_id!r} already exists")
            path = self.root / record.checkpoint
            if path.exists():
                raise RegistryError(f"checkpoint {path} already exists")
            checkpoint.save_adapters(adapters, path)
            current.records.append(record)
            checkpoint.atomic_write(self.manifest_path, current._serialize())
            self.records = current.records

    def load_adapters(self, task_id: str, arch: ArchSpec) -> AdapterSet:
        return checkpoint.load_adapters(self.root / self.get(task_id).checkpoint, arch)

    def check_base(self, base: Weights) -> None:
        if base.fingerprint() != self.base_fingerprint:
            raise RegistryError("base weights do not match the registry's base fingerprint")


# ---------------------------------------------------------------- continual protocol


@dataclass(frozen=True)
class Task:
    task_id: str
    dataset: DatasetSpec


@dataclass
class ContinualReport:
    """Rows are method configurations, columns per-task (proxy-FID, diversity) plus averages."""

    tasks: list[str]
    rows: dict[str, list[EvalResult]]

    def header(self) -> list[str]:
        cols = ["method"]
        for t in self.tasks:
            cols += [f"{t}_fid", f"{t}_div"]
        return cols + ["avg_fid", "avg_div"]

    def table(self) -> list[list[str]]:
        out = []
        for name, results in self.rows.items():
            row = [name]
            for r in results:
                row += [fmt(r.proxy_fid), fmt(r.diversity)]
            row += [fmt(float(np.mean([r.proxy_fid for r in results]))),
                    fmt(float(np.mean([r.diversity for r in results])))]
            out.append(row)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        w.writerows(self.table())
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"tasks": self.tasks,
               "rows": {name: {"per_task": [asdict(r) for r in results],
                               "avg_fid": float(np.mean([r.proxy_fid for r in results])),
                               "avg_div": float(np.mean([r.diversity for r in results]))}
                        for name, results in self.rows.items()}}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def write(self, out_dir: Path, stem: str = "report") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        paths = out_dir / f"{stem}.csv", out_dir / f"{stem}.json"
        checkpoint.atomic_write(paths[0], self.to_csv().encode())
        checkpoint.atomic_write(paths[1], self.to_json().encode())
        return paths


@dataclass
class AlphaPolicy:
    """``auto`` (L_st with the default multiplier), ``multiplier`` (fixed m) or ``explicit``."""

    mode: str = "auto"
    multiplier: float = 1.0
    conv_divisor: float | None = None
    alpha_fc: float = 0.0
    alpha_conv: float = 0.0

    def choose(self, l_st: float) -> tuple[float, float]:
        if self.mode == "explicit":
            return self.alpha_fc, self.alpha_conv
        if self.mode == "multiplier":
            c = metrics.select_alphas(l_st, self.multiplier, self.conv_divisor)
        elif self.mode == "auto":
            c = metrics.select_alphas(l_st, metrics.default_multiplier(l_st))
        else:
            raise ValueError(f"unknown alpha policy {self.mode!r}")
        return c.alpha_fc, c.alpha_conv


def adapt_task(registry: Registry, base: Weights, task: Task, source: DatasetSpec, cfg: TrainConfig,
               rank: int = 1, policy: AlphaPolicy | None = None, activation: str = "relu",
               placement: str = "both", eval_seed: int = 0,
               log: TrainLog | None = None) -> tuple[TaskRecord, AdapterSet]:
    """Measure L_st, pick alphas, train, evaluate and store one task."""
    registry.check_base(base)
    if task.task_id in registry.task_ids():
        raise RegistryError(f"task {task.task_id!r} already exists")
    policy = policy or AlphaPolicy()
    shots = load(task.dataset)
    l_st = measure_l_st(source, shots.astype(np.float64))
    alphas = policy.choose(l_st)
    adapters = train_adaptation(base, shots, cfg, alphas, rank, activation, placement, log)
    res = evaluate(base, adapters, task.dataset, eval_seed)
    record = TaskRecord(task.task_id, f"adapters/{task.task_id}.clrg", task.dataset.to_string(), rank,
                        float(alphas[0]), float(alphas[1]), l_st, res.proxy_fid, res.diversity,
                        datetime.now(timezone.utc).isoformat(timespec="seconds"))
    registry.add(adapters, record)
    return record, adapters


def evaluate_registry(registry: Registry, base: Weights, eval_seed: int = 0,
                      include_base: bool = True) -> ContinualReport:
    """Reload every stored task over the shared base and score it on its own target."""
    registry.check_base(base)
    if not registry.records:
        raise RegistryError(f"registry {registry.root} has no tasks")
    rows: dict[str, list[EvalResult]] = {}
    specs = [DatasetSpec.from_string(r.dataset) for r in registry.records]
    if include_base:
        rows["base"] = [evaluate(base, None, s, eval_seed) for s in specs]
    rows["adapted"] = [evaluate(base, registry.load_adapters(r.task_id, base.arch), s, eval_seed)
                       for r, s in zip(registry.records, specs)]
    return ContinualReport(registry.task_ids(), rows)


def run_continual(tasks: Sequence[Task], base: Weights, cfg: TrainConfig, registry: Registry,
                  source: DatasetSpec, rank: int = 1, policy: AlphaPolicy | None = None,
                  eval_seed: int = 0) -> tuple[Registry, ContinualReport]:
    """Train ``tasks`` in order, then evaluate all of them after the last one."""
    if not tasks:
        raise RegistryError("run_continual needs at least one task")
    for i, task in enumerate(tasks):
        task_cfg = TrainConfig(**{**asdict(cfg), "seed": cfg.seed + i})
        adapt_task(registry, base, task, source, task_cfg, rank, policy, eval_seed=eval_seed)
    return registry, evaluate_registry(registry, base, eval_seed)
