import json

import pytest

from colora import ablation
from colora.ablation import AblationTable, placement_wins, run_ablation
from colora.arch import preset
from colora.datasets import DatasetSpec
from colora.evaluation import EvalResult
from colora.networks import init_generator
from colora.registry import Task
from colora.training import TrainConfig

SOURCE = DatasetSpec("source", 20, 0)
TASK = Task("tex", DatasetSpec("texture", 5, 1))


@pytest.fixture(scope="module")
def base():
    return init_generator(preset("desk-lite"), 0)


@pytest.fixture
def fast_eval(monkeypatch):
    """Score cells by their trained parameter count so grid assembly is checked without sampling."""
    def fake(gen, adapters, target, eval_seed):
        return EvalResult(float(adapters.num_params()), 0.5)

    monkeypatch.setattr(ablation, "evaluate", fake)


@pytest.mark.parametrize("axis,rows", [("rank", 4), ("alpha", 5), ("activation", 2), ("placement", 3)])
def test_grid_shapes(axis, rows, base, fast_eval, tmp_path):
    t = run_ablation(axis, base, TASK, SOURCE, TrainConfig(iterations=0), seeds=(0, 1), out_dir=tmp_path)
    assert t.axis == axis and len(t.rows) == rows
    assert all(len(r) == len(t.header) for r in t.rows)
    cells = sorted(p.name for p in (tmp_path / axis).iterdir())
    assert len(cells) == (rows * 2 if axis == "placement" else rows)
    assert all((tmp_path / axis / c / "adapters.clrg").exists() for c in cells)
    assert json.loads(t.to_json())["axis"] == axis
    assert t.to_csv().splitlines()[0] == ",".join(t.header)


def test_rank_rows_report_linear_counts(base, fast_eval):
    t = run_ablation("rank", base, TASK, SOURCE, TrainConfig(iterations=0))
    assert t.column("rank") == [1, 2, 4, 8]
    assert t.column("params") == t.column("params_formula")
    p = t.column("params")
    assert all(p[i] > p[0] for i in range(1, 4))


def test_alpha_rows_and_default_flag(base, fast_eval):
    t = run_ablation("alpha", base, TASK, SOURCE, TrainConfig(iterations=0))
    assert t.column("m") == [1, 2, 3, 4, 5]
    assert sum(t.column("default")) == 1
    for m, l, fc, conv in zip(t.column("m"), t.column("l_st"), t.column("alpha_fc"), t.column("alpha_conv")):
        assert fc == pytest.approx(m * l) and conv == pytest.approx(l / m)


def test_placement_labels_and_wins():
    t = AblationTable("placement", ["placement", "params", "fid_seed0", "fid_seed1", "div_seed0", "div_seed1",
                                    "mean_fid", "mean_div"],
                      [["FC-only", 1, 3.0, 1.0, 0, 0, 0, 0], ["Conv-only", 1, 2.0, 2.0, 0, 0, 0, 0],
                       ["both", 1, 2.0, 1.5, 0, 0, 0, 0]])
    assert placement_wins(t) == [True, False]
    with pytest.raises(ValueError):
        placement_wins(AblationTable("rank", [], []))


def test_one_real_cell(base, tmp_path):
    t = run_ablation("activation", base, TASK, SOURCE, TrainConfig(iterations=1), out_dir=tmp_path)
    assert [r[0] for r in t.rows] == ["none", "relu"]
    assert all(r[1] > 0 and r[2] > 0 for r in t.rows)


def test_unknown_axis(base):
    with pytest.raises(ValueError):
        run_ablation("depth", base, TASK, SOURCE, TrainConfig(iterations=0))
