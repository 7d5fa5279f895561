"""Ablation grids over rank, alpha multiplier, adapter activation and placement.

Every cell is a full adapt + eval on one task, written to its own
subdirectory (``<out>/<axis>/<cell>/adapters.clrg``), and the table is
assembled after all cells finish.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from colora import checkpoint
from colora.adapters import count_params
from colora.datasets import DatasetSpec, load
from colora.evaluation import evaluate, measure_l_st
from colora.metrics import default_multiplier, select_alphas
from colora.networks import Weights
from colora.registry import AlphaPolicy, Task, fmt
from colora.training import TrainConfig, train_adaptation

AXES = ("rank", "alpha", "activation", "placement")
RANKS = (1, 2, 4, 8)
MULTIPLIERS = (1, 2, 3, 4, 5)
ACTIVATION_ROWS = ("none", "relu")
PLACEMENT_ROWS = ("fc", "conv", "both")
PLACEMENT_LABELS = {"fc": "FC-only", "conv": "Conv-only", "both": "both"}


@dataclass
class AblationTable:
    axis: str
    header: list[str]
    rows: list[list]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for row in self.rows:
            w.writerow([fmt(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"axis": self.axis, "header": self.header, "rows": self.rows}, indent=2) + "\n"

    def column(self, name: str) -> list:
        i = self.header.index(name)
        return [r[i] for r in self.rows]


@dataclass
class Cell:
    label: str
    rank: int = 1
    policy: AlphaPolicy | None = None
    activation: str = "relu"
    placement: str = "both"
    seed: int = 0


def _run_cell(cell: Cell, base: Weights, shots: np.ndarray, task: Task, l_st: float, cfg: TrainConfig,
              eval_seed: int, out_dir: Path | None) -> dict:
    policy = cell.policy or AlphaPolicy()
    alphas = policy.choose(l_st)
    adapters = train_adaptation(base, shots, replace(cfg, seed=cell.seed), alphas, cell.rank,
                                cell.activation, cell.placement)
    res = evaluate(base, adapters, task.dataset, eval_seed)
    out = {"alpha_fc": float(alphas[0]), "alpha_conv": float(alphas[1]), "params": adapters.num_params(),
           "proxy_fid": res.proxy_fid, "diversity": res.diversity}
    if out_dir is not None:
        d = out_dir / cell.label
        d.mkdir(parents=True, exist_ok=True)
        checkpoint.save_adapters(adapters, d / "adapters.clrg")
        checkpoint.atomic_write(d / "metrics.json", (json.dumps(out, indent=2, sort_keys=True) + "\n").encode())
    return out


def run_ablation(axis: str, base: Weights, task: Task, source: DatasetSpec, cfg: TrainConfig,
                 eval_seed: int = 0, seeds: tuple[int, ...] = (0, 1, 2),
                 out_dir: Path | None = None) -> AblationTable:
    """One grid along ``axis``; ``seeds`` is used by the placement axis, ``cfg.seed`` elsewhere."""
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    shots = load(task.dataset)
    l_st = measure_l_st(source, shots.astype(np.float64))
    m_auto = default_multiplier(l_st)
    cell_dir = None if out_dir is None else Path(out_dir) / axis

    def run(cell: Cell) -> dict:
        return _run_cell(cell, base, shots, task, l_st, cfg, eval_seed, cell_dir)

    s = cfg.seed
    if axis == "rank":
        header = ["rank", "params", "params_formula", "alpha_fc", "alpha_conv", "proxy_fid", "diversity"]
        rows = []
        for r in RANKS:
            res = run(Cell(f"r{r}", rank=r, seed=s))
            rows.append([r, res["params"], count_params(base.arch, r).adapter_params, res["alpha_fc"],
                         res["alpha_conv"], res["proxy_fid"], res["diversity"]])
    elif axis == "alpha":
        header = ["m", "l_st", "alpha_fc", "alpha_conv", "proxy_fid", "diversity", "default"]
        rows = []
        for m in MULTIPLIERS:
            res = run(Cell(f"m{m}", policy=AlphaPolicy("multiplier", multiplier=float(m)), seed=s))
            rows.append([m, l_st, res["alpha_fc"], res["alpha_conv"], res["proxy_fid"], res["diversity"],
                         int(m == m_auto)])
    elif axis == "activation":
        header = ["activation", "proxy_fid", "diversity"]
        rows = []
        for act in ACTIVATION_ROWS:
            res = run(Cell(act, activation=act, seed=s))
            rows.append([act, res["proxy_fid"], res["diversity"]])
    else:
        header = (["placement", "params"] + [f"fid_seed{x}" for x in seeds]
                  + [f"div_seed{x}" for x in seeds] + ["mean_fid", "mean_div"])
        rows = []
        for p in PLACEMENT_ROWS:
            cells = [run(Cell(f"{p}-s{x}", placement=p, seed=x)) for x in seeds]
            fids = [c["proxy_fid"] for c in cells]
            divs = [c["diversity"] for c in cells]
            rows.append([PLACEMENT_LABELS[p], cells[0]["params"], *fids, *divs,
                         float(np.mean(fids)), float(np.mean(divs))])
    return AblationTable(axis, header, rows)


def placement_wins(table: AblationTable) -> list[bool]:
    """Per seed: does the both-row reach a proxy-FID no worse than each single placement?"""
    if table.axis != "placement":
        raise ValueError("placement_wins needs a placement table")
    fid_cols = [i for i, h in enumerate(table.header) if h.startswith("fid_seed")]
    by_label = {r[0]: r for r in table.rows}
    both = by_label["both"]
    return [all(both[i] <= by_label[lab][i] for lab in ("FC-only", "Conv-only")) for i in fid_cols]
