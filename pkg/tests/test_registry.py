import json

import numpy as np
import pytest

from colora import checkpoint, registry as reg_mod
from colora.adapters import init_adapter_set
from colora.arch import preset
from colora.datasets import DatasetSpec
from colora.errors import RegistryError
from colora.networks import init_generator
from colora.registry import (AlphaPolicy, ContinualReport, Registry, Task, TaskRecord, adapt_task,
                             evaluate_registry, run_continual)
from colora.evaluation import EvalResult
from colora.training import TrainConfig

ARCH = preset("desk-lite")


@pytest.fixture(scope="module")
def base():
    return init_generator(ARCH, 0)


def record(task_id, **kw):
    fields = dict(checkpoint=f"adapters/{task_id}.clrg", dataset="palette:10:1", rank=1, alpha_fc=1.0,
                  alpha_conv=0.5, l_st=0.5, proxy_fid=1.0, diversity=0.1, created="2024-01-01T00:00:00+00:00")
    fields.update(kw)
    return TaskRecord(task_id, **fields)


def adapters(seed):
    s = init_adapter_set(ARCH, 1, (1.0, 0.5), seed)
    for p in s.parameters():
        p.data = np.random.default_rng(seed).standard_normal(p.shape).astype(p.dtype)
    return s


def test_create_writes_manifest(tmp_path, base):
    r = Registry.create(tmp_path, base)
    lines = (tmp_path / "manifest.tsv").read_text().splitlines()
    assert lines[0] == "#colora-registry\t1"
    assert lines[1] == f"#base\t{base.fingerprint().hex()}\tdesk-lite"
    assert lines[2].split("\t") == list(reg_mod.COLUMNS)
    assert r.records == [] and (tmp_path / "adapters").is_dir()


def test_create_requires_existing_dir(tmp_path, base):
    with pytest.raises(RegistryError, match="does not exist"):
        Registry.create(tmp_path / "missing", base)


def test_create_reopens_and_rejects_other_base(tmp_path, base):
    r = Registry.create(tmp_path, base)
    r.add(adapters(0), record("t1"))
    assert Registry.create(tmp_path, base).task_ids() == ["t1"]
    with pytest.raises(RegistryError, match="different base"):
        Registry.create(tmp_path, init_generator(ARCH, 1))


def test_add_and_reload_roundtrip(tmp_path, base):
    r = Registry.create(tmp_path, base)
    a, b = adapters(1), adapters(2)
    r.add(a, record("t1"))
    r.add(b, record("t2", l_st=0.123456789))
    again = Registry.open(tmp_path)
    assert again.task_ids() == ["t1", "t2"]
    assert again.get("t2").l_st == 0.123456789
    assert again.load_adapters("t1", ARCH).bitwise_equal(a)
    assert again.load_adapters("t2", ARCH).bitwise_equal(b)


def test_adding_a_task_leaves_earlier_files_untouched(tmp_path, base):
    r = Registry.create(tmp_path, base)
    r.add(adapters(1), record("t1"))
    before = (tmp_path / "adapters" / "t1.clrg").read_bytes()
    r.add(adapters(2), record("t2"))
    assert (tmp_path / "adapters" / "t1.clrg").read_bytes() == before


def test_duplicate_task_leaves_manifest_unchanged(tmp_path, base):
    r = Registry.create(tmp_path, base)
    r.add(adapters(1), record("t1"))
    before = (tmp_path / "manifest.tsv").read_bytes()
    with pytest.raises(RegistryError, match="already exists"):
        r.add(adapters(2), record("t1", checkpoint="adapters/other.clrg"))
    assert (tmp_path / "manifest.tsv").read_bytes() == before
    assert not (tmp_path / "adapters" / "other.clrg").exists()


def test_stale_handle_sees_other_writers(tmp_path, base):
    a = Registry.create(tmp_path, base)
    b = Registry.open(tmp_path)
    a.add(adapters(1), record("t1"))
    with pytest.raises(RegistryError):
        b.add(adapters(2), record("t1"))
    b.add(adapters(2), record("t2"))
    assert Registry.open(tmp_path).task_ids() == ["t1", "t2"]


@pytest.mark.parametrize("bad", ["", "-x", "a b", "a/b", "../x"])
def test_invalid_task_ids(tmp_path, base, bad):
    r = Registry.create(tmp_path, base)
    with pytest.raises(RegistryError, match="invalid task id"):
        r.add(adapters(0), record(bad, checkpoint="adapters/x.clrg"))


def test_crash_during_manifest_replace_keeps_old_manifest(tmp_path, base, monkeypatch):
    r = Registry.create(tmp_path, base)
    r.add(adapters(1), record("t1"))
    before = (tmp_path / "manifest.tsv").read_bytes()
    real = checkpoint.os.replace

    def crash(src, dst):
        if str(dst).endswith("manifest.tsv"):
            raise KeyboardInterrupt
        real(src, dst)

    monkeypatch.setattr(checkpoint.os, "replace", crash)
    with pytest.raises(KeyboardInterrupt):
        r.add(adapters(2), record("t2"))
    monkeypatch.undo()
    assert (tmp_path / "manifest.tsv").read_bytes() == before
    assert Registry.open(tmp_path).task_ids() == ["t1"]
    assert not [p for p in tmp_path.iterdir() if p.name.endswith(".tmp")]


def test_corrupt_manifest(tmp_path, base):
    Registry.create(tmp_path, base)
    (tmp_path / "manifest.tsv").write_text("garbage\n")
    with pytest.raises(RegistryError, match="not a registry manifest"):
        Registry.open(tmp_path)
    with pytest.raises(RegistryError, match="cannot read"):
        Registry.open(tmp_path / "nowhere")


def test_check_base(tmp_path, base):
    r = Registry.create(tmp_path, base)
    r.check_base(base)
    with pytest.raises(RegistryError):
        r.check_base(init_generator(ARCH, 5))


def test_alpha_policy():
    assert AlphaPolicy("explicit", alpha_fc=2.0, alpha_conv=0.5).choose(0.3) == (2.0, 0.5)
    assert AlphaPolicy("multiplier", multiplier=2.0).choose(0.25) == (0.5, 0.125)
    fc, conv = AlphaPolicy("multiplier", multiplier=2.0, conv_divisor=8.0).choose(0.25)
    assert (fc, conv) == (0.5, 0.25 / 8)
    with pytest.raises(ValueError):
        AlphaPolicy("bogus").choose(0.3)


def test_report_formats():
    rep = ContinualReport(["a", "b"], {"adapted": [EvalResult(1.0, 0.25), EvalResult(3.0, 0.75)]})
    assert rep.to_csv().splitlines() == ["method,a_fid,a_div,b_fid,b_div,avg_fid,avg_div",
                                         "adapted,1,0.25,3,0.75,2,0.5"]
    doc = json.loads(rep.to_json())
    assert doc["rows"]["adapted"]["avg_fid"] == 2.0


def test_adapt_task_and_single_task_report(tmp_path, base):
    r = Registry.create(tmp_path, base)
    task = Task("pal", DatasetSpec("palette", 10, 1))
    cfg = TrainConfig(iterations=2, seed=0)
    rec, s = adapt_task(r, base, task, DatasetSpec("source", 50, 0), cfg)
    assert rec.checkpoint == "adapters/pal.clrg" and rec.l_st > 0
    assert rec.alpha_fc * rec.alpha_conv == pytest.approx(rec.l_st ** 2, rel=1e-12)
    rep = evaluate_registry(Registry.open(tmp_path), base, eval_seed=0)
    assert rep.tasks == ["pal"] and list(rep.rows) == ["base", "adapted"]
    assert rep.rows["adapted"][0].proxy_fid == pytest.approx(rec.proxy_fid, abs=0)
    again = evaluate_registry(Registry.open(tmp_path), base, eval_seed=0)
    assert again.to_csv() == rep.to_csv()
    with pytest.raises(RegistryError):
        adapt_task(r, base, task, DatasetSpec("source", 50, 0), cfg)


def test_empty_registry_cannot_be_evaluated(tmp_path, base):
    with pytest.raises(RegistryError, match="no tasks"):
        evaluate_registry(Registry.create(tmp_path, base), base)


def test_run_continual_requires_tasks(tmp_path, base):
    with pytest.raises(RegistryError):
        run_continual([], base, TrainConfig(iterations=0), Registry.create(tmp_path, base),
                      DatasetSpec("source", 50, 0))
