import json

import numpy as np
import pytest

from pqdt.datagen.shapes import shape_library, surface_cloud
from pqdt.harness import train as train_mod
from pqdt.harness.checkpoint import Checkpoint
from pqdt.harness.config import parse_config
from pqdt.harness.dataset import Prefetcher, fit_count, read_manifest, write_manifest, ManifestError
from pqdt.harness.evaluate import SampleMetrics, aggregate, evaluate
from pqdt.harness.io import write_pc
from pqdt.harness.train import TrainingAborted, train


def toy_data(n=4, seed=0):
    rng = np.random.default_rng(seed)
    lib = shape_library()
    out = []
    for name in ["cube", "drum", "egg", "plank", "pole", "disc"][:n]:
        g = surface_cloud(lib[name], 256, rng, oversample=4)
        out.append((name, g[:80] + 0.01 * rng.normal(size=(80, 3)), g))
    return out


def toy_cfg(tmp_path, **kw):
    base = {"network": {"preset": "desk"}, "optimizer": {"lr": 1e-3},
            "schedule": {"warmup_epochs": 1, "lr_min": 1e-4, "epochs": 5},
            "batch_size": 1, "seed": 3, "checkpoint_dir": str(tmp_path / "ck")}
    base.update(kw)
    return parse_config(base)


def test_resume_matches_uninterrupted(tmp_path):
    data = toy_data()
    cfg = toy_cfg(tmp_path)
    full = train(cfg, data=data, out_dir=tmp_path / "a")
    assert len(full.history) == 20
    part = train(cfg, data=data, out_dir=tmp_path / "b", stop_after=2)
    assert part.epoch == 2 and part.last_checkpoint.name == "epoch_0002.ckpt"
    rest = train(cfg, data=data, out_dir=tmp_path / "b", resume=part.last_checkpoint)
    joined = [h["loss"] for h in part.history + rest.history]
    assert len(joined) == 20
    assert max(abs(a - h["loss"]) for a, h in zip(joined, full.history)) <= 1e-9
    a = Checkpoint.load(tmp_path / "a" / "epoch_0005.ckpt")
    b = Checkpoint.load(tmp_path / "b" / "epoch_0005.ckpt")
    for name in a.tensors:
        np.testing.assert_allclose(a.tensors[name], b.tensors[name], rtol=0, atol=1e-9)


def test_log_records(tmp_path):
    log = tmp_path / "log.ndjson"
    cfg = toy_cfg(tmp_path, schedule={"warmup_epochs": 0, "lr_min": 1e-4, "epochs": 2})
    train(cfg, data=toy_data(2), log_path=log, out_dir=tmp_path / "c")
    recs = [json.loads(line) for line in log.read_text().splitlines()]
    assert [r["epoch"] for r in recs] == [0, 1]
    for r in recs:
        assert {"lr", "beta", "loss", "rec1", "rec2", "rec3", "pq", "cd_l1", "wall_time"} <= set(r)
        assert r["loss"] == pytest.approx(r["rec1"] + r["rec2"] + r["rec3"] + r["pq"], rel=1e-12)
    assert recs[0]["lr"] == pytest.approx(1e-3) and recs[0]["beta"] == 1.0 and recs[1]["beta"] == 0.5


def test_nan_loss_aborts_with_checkpoint_reference(tmp_path, monkeypatch):
    real = train_mod.loss
    calls = {"n": 0}

    def poisoned(*a, **k):
        total, terms = real(*a, **k)
        calls["n"] += 1
        if calls["n"] > 4:
            total = total * float("nan")
        return total, terms

    monkeypatch.setattr(train_mod, "loss", poisoned)
    cfg = toy_cfg(tmp_path)
    with pytest.raises(TrainingAborted, match=r"epoch_0002\.ckpt"):
        train(cfg, data=toy_data(2), out_dir=tmp_path / "n")


def test_resume_rejects_other_network(tmp_path):
    cfg = toy_cfg(tmp_path, schedule={"warmup_epochs": 0, "lr_min": 1e-4, "epochs": 1})
    st = train(cfg, data=toy_data(1), out_dir=tmp_path / "d")
    other = toy_cfg(tmp_path, network={"preset": "desk", "k": 4},
                    schedule={"warmup_epochs": 0, "lr_min": 1e-4, "epochs": 1})
    with pytest.raises(ValueError, match="network config"):
        train(other, data=toy_data(1), resume=st.last_checkpoint)


def test_train_without_data_needs_manifest(tmp_path):
    with pytest.raises(ValueError, match="train_manifest"):
        train(toy_cfg(tmp_path))


# -- data plumbing ---------------------------------------------------------------

def test_prefetcher_preserves_order_and_raises():
    assert list(Prefetcher(lambda x: x * x, range(20), depth=2)) == [x * x for x in range(20)]

    def boom(x):
        if x == 3:
            raise RuntimeError("bad item 3")
        return x

    got = []
    with pytest.raises(RuntimeError, match="bad item 3"):
        for v in Prefetcher(boom, range(10)):
            got.append(v)
    assert got == [0, 1, 2]


def test_fit_count():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(10, 3))
    assert fit_count(pts, 10, rng) is pts
    assert len(fit_count(pts, 4, rng)) == 4
    up = fit_count(pts, 25, rng)
    assert len(up) == 25 and (up[:10] == pts).all()


def _manifest(tmp_path, samples):
    recs = []
    for i, (cat, lvl, x, g) in enumerate(samples):
        write_pc(tmp_path / f"in{i}.bin", x)
        write_pc(tmp_path / f"gt{i}.bin", g)
        recs.append({"id": f"s{i}", "category": cat, "level": lvl, "seed": 100 + i, "split": "test",
                     "input": f"in{i}.bin", "gt": f"gt{i}.bin"})
    write_manifest(tmp_path / "manifest.json", {"schema_version": 1, "samples": recs})
    return tmp_path / "manifest.json"


def test_manifest_validation(tmp_path):
    x = np.zeros((4, 3))
    path = _manifest(tmp_path, [("a", "simple", x, x)])
    doc, samples = read_manifest(path)
    assert samples[0].input == tmp_path / "in0.bin"
    (tmp_path / "gt0.bin").unlink()
    with pytest.raises(ManifestError, match="missing"):
        read_manifest(path)
    path.write_text(json.dumps({"schema_version": 1, "samples": [
        {"id": "a", "seed": 1, "input": "in0.bin", "gt": "in0.bin"},
        {"id": "b", "seed": 1, "input": "in0.bin", "gt": "in0.bin"}]}))
    with pytest.raises(ManifestError, match="duplicate sample seed"):
        read_manifest(path)


# -- evaluation ------------------------------------------------------------------

def test_perfect_prediction_scores():
    rows = [SampleMetrics("a", "cat", "simple", 0.0, 0.0, {0.01: 1.0, 0.005: 1.0})]
    _, summary = aggregate(rows, (0.01, 0.005))
    assert summary["CD-S"] == 0.0 and summary["F1"] == 1.0 and summary["F0.5"] == 1.0


def test_macro_average_recomputes_from_rows():
    rng = np.random.default_rng(1)
    rows = []
    for cat, n in (("car", 5), ("chair", 1)):
        for lvl in ("simple", "moderate", "hard"):
            for i in range(n):
                rows.append(SampleMetrics(f"{cat}{lvl}{i}", cat, lvl, rng.uniform(), rng.uniform(),
                                          {0.01: rng.uniform()}))
    cats, summary = aggregate(rows, (0.01,))
    for lvl, col in (("simple", "CD-S"), ("moderate", "CD-M"), ("hard", "CD-H")):
        per_cat = [np.mean([r.cd_l2 for r in rows if r.category == c and r.level == lvl]) for c in ("car", "chair")]
        assert abs(summary[col] - 1000 * np.mean(per_cat)) < 1e-9
    assert abs(summary["mean"] - np.mean([summary[c] for c in ("CD-S", "CD-M", "CD-H")])) < 1e-9
    f = [np.mean([np.mean([r.fscores[0.01] for r in rows if r.category == c and r.level == lvl])
                  for c in ("car", "chair")]) for lvl in ("simple", "moderate", "hard")]
    assert abs(summary["F1"] - np.mean(f)) < 1e-9
    assert "F0.5" not in summary
    assert sum(c["n"] for c in cats) == len(rows)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("ev")
    cfg = toy_cfg(tmp, schedule={"warmup_epochs": 0, "lr_min": 1e-4, "epochs": 1})
    st = train(cfg, data=toy_data(2), out_dir=tmp / "ck")
    rng = np.random.default_rng(2)
    samples = [(c, lvl, rng.normal(size=(70, 3)) * 0.5, rng.normal(size=(300, 3)) * 0.5)
               for c in ("car", "plane") for lvl in ("simple", "hard")]
    return st.last_checkpoint, _manifest(tmp, samples), tmp


def test_evaluate_report(trained):
    ckpt, manifest, tmp = trained
    out = tmp / "report.ndjson"
    rep = evaluate(ckpt, manifest, thresholds=(0.01, 0.005), out_path=out)
    lines = [json.loads(line) for line in out.read_text().splitlines()]
    kinds = [r["record"] for r in lines]
    assert kinds[0] == "meta" and kinds[-1] == "summary" and kinds.count("sample") == 4
    assert lines[0]["batch_size"] == 1 and lines[0]["averaging"].startswith("macro")
    s = rep["summary"]
    assert {"CD-S", "CD-H", "mean", "F1", "F0.5"} <= set(s) and "CD-M" not in s
    samples = [r for r in lines if r["record"] == "sample"]
    simple = [r["cd_l2_x1000"] for r in samples if r["level"] == "simple"]
    assert abs(s["CD-S"] - np.mean(simple)) < 1e-9


def test_evaluate_bit_reproducible_and_worker_independent(trained):
    ckpt, manifest, tmp = trained
    a = evaluate(ckpt, manifest, out_path=tmp / "a.ndjson")
    b = evaluate(ckpt, manifest, out_path=tmp / "b.ndjson", workers=2)
    assert (tmp / "a.ndjson").read_text().replace("a.ndjson", "") == (tmp / "b.ndjson").read_text().replace("b.ndjson", "")
    assert a["summary"] == b["summary"]


def test_evaluate_split_filter(trained):
    ckpt, manifest, _ = trained
    assert evaluate(ckpt, manifest, split="train")["summary"]["n_samples"] == 0
