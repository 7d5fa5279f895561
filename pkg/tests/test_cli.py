import csv
import io
import json

import numpy as np
import pytest

from colora import checkpoint
from colora.arch import preset
from colora.cli import ADAPT_HEADER, main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    (d / "run.ini").write_text("""
[run]
arch = desk-lite
seed = 0
[source]
dataset = source:20:0:32
[tasks]
pal = palette:5:1:32
tex = texture:5:1:32
""")
    assert main(["pretrain", "--config", str(d / "run.ini"), "--out", str(d), "--iterations", "2"]) == 0
    return d


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_pretrain_is_deterministic(workdir, tmp_path, capsys):
    code, out, _ = run(capsys, "pretrain", "--config", str(workdir / "run.ini"), "--out", str(tmp_path),
                       "--iterations", "2")
    assert code == 0 and out.strip() == str(tmp_path / "base.clrg")
    assert (tmp_path / "base.clrg").read_bytes() == (workdir / "base.clrg").read_bytes()
    assert (tmp_path / "pretrain_log.csv").exists()


def test_missing_output_dir_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    code, _, err = run(capsys, "pretrain", "--out", str(missing), "--iterations", "0")
    assert code == 2 and str(missing) in err


def test_adapt_explicit_alphas_then_duplicate(workdir, capsys):
    reg = workdir / "reg_a"
    args = ["adapt", "--config", str(workdir / "run.ini"), "--out", str(workdir), "--registry", str(reg),
            "--task", "pal", "--iterations", "1", "--alpha-fc", "1.5", "--alpha-conv", "0.25"]
    code, out, _ = run(capsys, *args)
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert tuple(rows[0]) == ADAPT_HEADER and len(rows) == 2
    row = dict(zip(rows[0], rows[1]))
    assert row["task_id"] == "pal" and (row["alpha_fc"], row["alpha_conv"]) == ("1.5", "0.25")
    assert int(row["params_trained"]) > 0
    code, _, err = run(capsys, *args)
    assert code == 4 and "already exists" in err


def test_zero_iterations_stores_zero_deltas(workdir, capsys):
    reg = workdir / "reg_z"
    code, _, _ = run(capsys, "adapt", "--config", str(workdir / "run.ini"), "--out", str(workdir),
                     "--registry", str(reg), "--task", "tex", "--iterations", "0")
    assert code == 0
    s = checkpoint.load_adapters(reg / "adapters" / "tex.clrg", preset("desk-lite"))
    assert s.deltas_zero()


def test_eval_single_task_and_repeatable(workdir, tmp_path, capsys):
    reg = workdir / "reg_e"
    assert main(["adapt", "--config", str(workdir / "run.ini"), "--out", str(workdir), "--registry", str(reg),
                 "--task", "pal", "--iterations", "1"]) == 0
    capsys.readouterr()
    code, out, _ = run(capsys, "eval", "--config", str(workdir / "run.ini"), "--registry", str(reg),
                       "--base", str(workdir / "base.clrg"), "--out", str(tmp_path))
    assert code == 0
    first = (tmp_path / "report.csv").read_bytes(), (tmp_path / "report.json").read_bytes()
    lines = first[0].decode().splitlines()
    assert lines[0] == "method,pal_fid,pal_div,avg_fid,avg_div"
    assert [l.split(",")[0] for l in lines[1:]] == ["base", "adapted"]
    assert json.loads(first[1])["tasks"] == ["pal"]
    assert run(capsys, "eval", "--config", str(workdir / "run.ini"), "--registry", str(reg),
               "--base", str(workdir / "base.clrg"), "--out", str(tmp_path))[0] == 0
    assert ((tmp_path / "report.csv").read_bytes(), (tmp_path / "report.json").read_bytes()) == first


def test_eval_errors(workdir, tmp_path, capsys):
    code, _, err = run(capsys, "eval", "--registry", str(tmp_path / "missing"))
    assert code == 2 and "missing" in err
    from colora.networks import init_generator
    from colora.registry import Registry
    Registry.create(tmp_path, init_generator(preset("desk-lite"), 0))
    code, _, err = run(capsys, "eval", "--registry", str(tmp_path), "--base", str(workdir / "base.clrg"))
    assert code == 4 and "no tasks" in err


def test_adapt_without_base(tmp_path, capsys):
    code, _, err = run(capsys, "adapt", "--out", str(tmp_path))
    assert code == 2 and "pretrain" in err


def test_bad_config_exit_code(tmp_path, capsys):
    (tmp_path / "bad.ini").write_text("[adapt]\nrank = 0\n")
    assert run(capsys, "pretrain", "--config", str(tmp_path / "bad.ini"), "--out", str(tmp_path))[0] == 2
    assert run(capsys, "adapt", "--out", str(tmp_path), "--alpha-fc", "1.0")[0] == 2


def test_numerical_failure_exit_code(workdir, tmp_path, capsys, monkeypatch):
    from colora import cli
    from colora.errors import NumericalError

    def boom(*a, **k):
        raise NumericalError("non-finite loss at iteration 1")

    monkeypatch.setattr(cli, "train_base", boom)
    code, _, err = run(capsys, "pretrain", "--out", str(tmp_path), "--iterations", "1")
    assert code == 3 and "iteration 1" in err


def test_count_json(capsys):
    code, out, _ = run(capsys, "count", "--arch", "stylegan2-256", "--rank", "1")
    doc = json.loads(out)
    assert code == 0 and doc["ratio"] <= 0.0025
    r8 = json.loads(run(capsys, "count", "--arch", "stylegan2-256", "--rank", "8")[1])
    assert 7.6 <= r8["adapter_params"] / doc["adapter_params"] <= 8.4
    desk = json.loads(run(capsys, "count", "--arch", "desk")[1])
    assert desk["adapter_params"] == 4 * 128 + (128 + 9 + 128) * 2 + (64 + 9 + 128) + (32 + 9 + 64)


def test_gen_dataset(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    assert run(capsys, "gen-dataset", "shapes:4:2:16", "--out", str(a))[0] == 0
    assert run(capsys, "gen-dataset", "shapes:4:2:16", "--out", str(b))[0] == 0
    files = sorted(p.name for p in a.iterdir())
    assert len(files) == 4
    assert all((a / f).read_bytes() == (b / f).read_bytes() for f in files)
    assert (a / files[0]).read_bytes().startswith(b"P6\n16 16\n255\n")
    assert run(capsys, "gen-dataset", "shapes:4:2:16", "--out", str(tmp_path / "c"))[0] == 2
    assert run(capsys, "gen-dataset", "bogus:4:2:16", "--out", str(a))[0] == 2


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["ablate", "--axis", "nope"])
    assert exc.value.code == 2
