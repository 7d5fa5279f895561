"""``colora`` command line.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure,
4 registry or protocol violation.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from colora import __version__, ablation, checkpoint, registry as reg
from colora.adapters import count_params
from colora.arch import PRESETS, preset
from colora.config import RunConfig, load_config
from colora.datasets import DatasetSpec, load, write_dataset
from colora.errors import (CheckpointError, ConfigError, FingerprintError, NumericalError,
                           RegistryError, ShapeError)
from colora.registry import AlphaPolicy, Registry, Task, fmt
from colora.training import TrainLog, train_base

log = logging.getLogger("colora")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_REGISTRY = 0, 2, 3, 4
ADAPT_HEADER = ("task_id", "l_st", "alpha_fc", "alpha_conv", "params_trained", "proxy_fid", "diversity")


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if args.out else cfg.out
    if out is None:
        raise ConfigError("no output directory: pass --out or set [run] out")
    if not out.is_dir():
        raise ConfigError(f"output directory {out} does not exist")
    return out


def _config(args) -> RunConfig:
    cfg = load_config(Path(args.config) if args.config else None)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "rank", None) is not None:
        cfg = replace(cfg, rank=args.rank)
    return cfg


def _stage(cfg: RunConfig, stage: str, args) -> "TrainConfig":  # noqa: F821
    tc = cfg.train_config(stage)
    if getattr(args, "iterations", None) is not None:
        tc = replace(tc, iterations=args.iterations)
    return tc


def _base_path(args, out: Path) -> Path:
    return Path(args.base) if args.base else out / "base.clrg"


def _load_base(args, cfg: RunConfig, out: Path):
    path = _base_path(args, out)
    if not path.exists():
        raise ConfigError(f"base checkpoint {path} does not exist (run pretrain first)")
    return checkpoint.load_base(path, cfg.arch)


def _task(args, cfg: RunConfig) -> Task:
    if getattr(args, "dataset", None):
        return Task(args.task or "task", DatasetSpec.from_string(args.dataset))
    tasks = {t.task_id: t for t in cfg.tasks}
    if args.task is None:
        return cfg.tasks[0]
    if args.task not in tasks:
        raise ConfigError(f"unknown task {args.task!r}; configured: {sorted(tasks)}")
    return tasks[args.task]


def _policy(args, cfg: RunConfig) -> AlphaPolicy:
    if (args.alpha_fc is None) != (args.alpha_conv is None):
        raise ConfigError("--alpha-fc and --alpha-conv must be given together")
    if args.alpha_fc is not None:
        if not (args.alpha_fc > 0 and args.alpha_conv > 0):
            raise ConfigError("explicit alphas must be positive")
        return AlphaPolicy("explicit", alpha_fc=args.alpha_fc, alpha_conv=args.alpha_conv)
    return cfg.alpha


# ---------------------------------------------------------------- commands


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    tc = _stage(cfg, "pretrain", args)
    trace = TrainLog()
    base = train_base(cfg.arch, load(cfg.source), tc, trace)
    path = out / "base.clrg"
    checkpoint.save_base(base, path)
    trace.write_csv(out / "pretrain_log.csv")
    print(path)
    return EXIT_OK


def cmd_adapt(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    base = _load_base(args, cfg, out)
    task = _task(args, cfg)
    reg_dir = Path(args.registry) if args.registry else out / "registry"
    reg_dir.mkdir(exist_ok=True)
    registry = Registry.create(reg_dir, base)
    trace = TrainLog()
    record, adapters = reg.adapt_task(registry, base, task, cfg.source, _stage(cfg, "adapt", args), cfg.rank,
                                      _policy(args, cfg), cfg.activation, cfg.placement, cfg.eval_seed, trace)
    trace.write_csv(reg_dir / f"{task.task_id}_log.csv")
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(ADAPT_HEADER)
    w.writerow([record.task_id, fmt(record.l_st), fmt(record.alpha_fc), fmt(record.alpha_conv),
                adapters.num_params(), fmt(record.proxy_fid), fmt(record.diversity)])
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    reg_dir = Path(args.registry) if args.registry else (_out_dir(args, cfg) / "registry")
    if not (reg_dir / reg.MANIFEST).exists():
        raise ConfigError(f"registry {reg_dir} does not exist")
    registry = Registry.open(reg_dir)
    if not registry.records:
        raise RegistryError(f"registry {reg_dir} has no tasks")
    base_path = Path(args.base) if args.base else reg_dir.parent / "base.clrg"
    if not base_path.exists():
        raise ConfigError(f"base checkpoint {base_path} does not exist")
    base = checkpoint.load_base(base_path, cfg.arch)
    eval_seed = cfg.eval_seed if args.seed is None else args.seed
    report = reg.evaluate_registry(registry, base, eval_seed)
    out = Path(args.out) if args.out else reg_dir
    if not out.is_dir():
        raise ConfigError(f"output directory {out} does not exist")
    for p in report.write(out):
        print(p)
    sys.stdout.write(report.to_csv())
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    base = _load_base(args, cfg, out)
    task = _task(args, cfg)
    tc = _stage(cfg, "adapt", args)
    if args.iterations is None:
        tc = replace(tc, iterations=300)
    axes = ablation.AXES if args.axis == "all" else (args.axis,)
    seeds = tuple(range(cfg.seed, cfg.seed + args.seeds))
    for axis in axes:
        table = ablation.run_ablation(axis, base, task, cfg.source, tc, cfg.eval_seed, seeds, out / "ablate")
        for suffix, text in ((".csv", table.to_csv()), (".json", table.to_json())):
            checkpoint.atomic_write(out / "ablate" / f"{axis}{suffix}", text.encode())
        print(f"# axis={axis} task={task.task_id} iterations={tc.iterations}")
        sys.stdout.write(table.to_csv())
    return EXIT_OK


def cmd_count(args) -> int:
    arch = preset(args.arch) if args.arch else _config(args).arch
    rank = args.rank or 1
    print(json.dumps(count_params(arch, rank, args.placement).to_dict(), indent=2))
    return EXIT_OK


def cmd_gen_dataset(args) -> int:
    spec = DatasetSpec.from_string(args.spec)
    out = Path(args.out)
    if not out.is_dir():
        raise ConfigError(f"output directory {out} does not exist")
    paths = write_dataset(spec, out)
    print(f"wrote {len(paths)} images to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="colora", description="Continual few-shot GAN adaptation with low-rank adapters.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, train=False):
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", metavar="DIR")
        if train:
            sp.add_argument("--iterations", type=int)

    sp = sub.add_parser("pretrain", help="train the base generator on the source set")
    common(sp, train=True)
    sp.set_defaults(fn=cmd_pretrain)

    sp = sub.add_parser("adapt", help="train, evaluate and register adapters for one task")
    common(sp, train=True)
    sp.add_argument("--base", metavar="PATH")
    sp.add_argument("--registry", metavar="DIR")
    sp.add_argument("--task", metavar="ID")
    sp.add_argument("--dataset", metavar="SPEC", help="kind:count:seed:resolution, overrides [tasks]")
    sp.add_argument("--rank", type=int)
    sp.add_argument("--alpha-fc", type=float)
    sp.add_argument("--alpha-conv", type=float)
    sp.set_defaults(fn=cmd_adapt)

    sp = sub.add_parser("eval", help="evaluate every task in a registry")
    common(sp)
    sp.add_argument("--registry", metavar="DIR")
    sp.add_argument("--base", metavar="PATH")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("ablate", help="run an ablation grid")
    common(sp, train=True)
    sp.add_argument("--axis", required=True, choices=ablation.AXES + ("all",))
    sp.add_argument("--base", metavar="PATH")
    sp.add_argument("--task", metavar="ID")
    sp.add_argument("--dataset", metavar="SPEC")
    sp.add_argument("--rank", type=int)
    sp.add_argument("--seeds", type=int, default=3, help="seeds for the placement axis")
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("count", help="print adapter parameter counts as JSON")
    sp.add_argument("--config", metavar="PATH")
    sp.add_argument("--arch", choices=sorted(PRESETS))
    sp.add_argument("--rank", type=int)
    sp.add_argument("--placement", default="both", choices=("both", "fc", "conv"))
    sp.set_defaults(fn=cmd_count)

    sp = sub.add_parser("gen-dataset", help="write a synthetic dataset as binary PPM files")
    sp.add_argument("spec", help="kind:count:seed:resolution")
    sp.add_argument("--out", required=True, metavar="DIR")
    sp.set_defaults(fn=cmd_gen_dataset)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, ShapeError, CheckpointError) as exc:
        print(f"colora: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"colora: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (RegistryError, FingerprintError) as exc:
        print(f"colora: registry error: {exc}", file=sys.stderr)
        return EXIT_REGISTRY


if __name__ == "__main__":
    sys.exit(main())
