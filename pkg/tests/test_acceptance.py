"""Acceptance criteria 1-9.

Each test records one ``CRITERION n: PASS|FAIL`` line; the lines are echoed in
the terminal summary (see conftest) and printed immediately under ``-s``.
Run alone with ``pytest tests/test_acceptance.py``.
"""

import contextlib
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from oracles import brute_chamfer, brute_knn, random_rotation
from pqdt import autodiff as ad
from pqdt.datagen.crop import CROP_LEVELS, crop_partial
from pqdt.datagen.gabor import GaborParams, deform
from pqdt.datagen.mesh import normalize_mesh, occluder_library
from pqdt.datagen.occlusion import OCC_PRESETS, gen_occluded, in_scaled_box
from pqdt.datagen.shapes import shape_library, surface_cloud
from pqdt.dqs import QuerySelector, SelectionConfig, anneal_beta, gumbel_perturb, select_topk
from pqdt.geo import sparse_geo_embedding
from pqdt.harness.checkpoint import Checkpoint
from pqdt.harness.config import parse_config
from pqdt.harness.generate import generate
from pqdt.harness.gradcheck import SCOPES, gradcheck_all
from pqdt.harness.io import read_pc, write_pc
from pqdt.harness.schedule import lr_at
from pqdt.harness.train import new_state, train
from pqdt.network import FULL, PQDT
from pqdt.pointops import chamfer, fps, fscore, knn

DATA = Path(__file__).parent / "data"


@pytest.fixture
def criterion(request):
    results = request.config.__dict__.setdefault("pqdt_acceptance", {})

    @contextlib.contextmanager
    def run(n, title):
        t0 = time.perf_counter()
        try:
            yield
        except BaseException as exc:
            line = f"CRITERION {n}: FAIL {title} ({type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''})"
            results[n] = line
            print(line)
            raise
        line = f"CRITERION {n}: PASS {title} ({time.perf_counter() - t0:.1f}s)"
        results[n] = line
        print(line)

    return run


def test_criterion_1_gradient_suite(criterion):
    with criterion(1, "gradient suite"):
        t0 = time.perf_counter()
        results = gradcheck_all(seed=0)
        elapsed = time.perf_counter() - t0
        for r in results:
            print(r.line())
        assert [r.scope for r in results] == SCOPES
        for scope in ("edgeconv", "ge_attention", "dqs", "upsample", "full"):
            assert scope in SCOPES
        bad = [r.line() for r in results if not r.passed]
        assert not bad, bad
        assert all(r.threshold <= (1e-3 if r.scope == "full" else 1e-4) for r in results)
        assert elapsed < 300, f"gradient suite took {elapsed:.0f}s"


def test_criterion_2_metric_oracles(criterion):
    with criterion(2, "metric oracles"):
        rng = np.random.default_rng(20240)
        for _ in range(200):
            n, m = (int(v) for v in rng.integers(1, 257, size=2))
            P, G = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
            for v in ("L1", "L2"):
                assert abs(chamfer(P, G, v) - brute_chamfer(P, G, v)) < 1e-12
            k = int(rng.integers(1, min(m, 16) + 1))
            np.testing.assert_array_equal(knn(P, G, k), brute_knn(P, G, k))
        # hand counts: two of three predictions and one of two targets within 0.1
        P = [[0, 0, 0], [0.05, 0, 0], [1, 0, 0]]
        G = [[0, 0, 0], [0, 2, 0]]
        assert fscore(P, G, 0.1) == 2 * (2 / 3) * (1 / 2) / (2 / 3 + 1 / 2)
        assert fscore([[0, 0, 0]], [[0.1, 0, 0]], 0.1) == 0.0
        assert fscore(G, G, 0.01) == 1.0
        P, G = rng.normal(size=(80, 3)), rng.normal(size=(60, 3))
        for s in (0.5, 2.0):
            assert chamfer(s * P, s * G, "L2") == pytest.approx(s * s * chamfer(P, G, "L2"), rel=1e-12)


def test_criterion_3_sge_rigid_invariance(criterion):
    with criterion(3, "SGE rigid invariance"):
        rng = np.random.default_rng(77)
        w_d, w_a = rng.normal(size=(16, 16)) * 0.3, rng.normal(size=(16, 16)) * 0.3
        worst = 0.0
        for _ in range(50):
            pts = rng.normal(size=(int(rng.integers(10, 60)), 3))
            R, t = random_rotation(rng), rng.uniform(-10, 10, size=3)
            a = sparse_geo_embedding(pts, 8, w_d, w_a)
            b = sparse_geo_embedding(pts @ R.T + t, 8, w_d, w_a)
            np.testing.assert_array_equal(a.neighbor_index, b.neighbor_index)
            worst = max(worst, float(np.abs(a.values - b.values).max()))
        assert worst < 1e-9, worst


def test_criterion_4_dqs_contracts(criterion):
    with criterion(4, "DQS contracts"):
        rng = np.random.default_rng(4)
        for _ in range(100):
            n = int(rng.integers(2, 80))
            k = int(rng.integers(1, n + 1))
            z = rng.normal(size=n)
            res = select_topk(gumbel_perturb(z, 0.0, rng), k, rng.normal(size=(n, 3)), rng.normal(size=(n, 2)))
            assert list(res.indices) == sorted(range(n), key=lambda i: (-z[i], i))[:k]

        feats = ad.Tensor(rng.normal(size=(12, 5)), requires_grad=True)
        res = select_topk(ad.Tensor(rng.normal(size=12), requires_grad=True), 5, rng.normal(size=(12, 3)), feats)
        ad.sum_(res.feats * rng.normal(size=(5, 5))).backward()
        unselected = np.setdiff1d(np.arange(12), res.indices)
        assert (feats.grad[unselected] == 0).all() and (feats.grad[res.indices] != 0).any()

        assert anneal_beta(0.0) == 1.0 and anneal_beta(1.0) == 0.0

        sel = QuerySelector(SelectionConfig(16, 8, 10), 6, np.random.default_rng(1))
        coords, f, pad = rng.normal(size=(16, 3)), rng.normal(size=(16, 6)), rng.normal(size=(8, 3))
        a = sel(coords, f, pad, 0.8, np.random.default_rng(99))
        b = sel(coords, f, pad, 0.8, np.random.default_rng(99))
        assert a.indices.tobytes() == b.indices.tobytes() and a.feats.data.tobytes() == b.feats.data.tobytes()


def test_criterion_5_shape_conformance(criterion):
    with criterion(5, "full-config shape trace"):
        model = PQDT(FULL)
        n_params = sum(v.size for v in model.state_dict().values())
        rel = n_params / 64.2e6 - 1
        print(f"full config parameters: {n_params:,} ({rel:+.1%} vs 64.2M)")
        if abs(rel) > 0.2:
            warnings.warn(f"full-config parameter count {n_params:,} is outside 64.2M +/- 20%")
        x = np.random.default_rng(0).normal(size=(2048, 3))
        with ad.no_grad():
            out = model.forward(x, np.random.default_rng(1), mode="train", beta=1.0)
        tr = out.trace
        assert tr["input"] == (2048, 3)
        assert tr["coarse_features"][0] == 128 and FULL.down[-1].channels == 256
        assert tr["pseudo_queries"][0] == 384
        assert tr["queries"][0] == 512
        assert [tr[f"level{i}"] for i in (1, 2, 3)] == [(512, 3), (2048, 3), (8192, 3)]
        assert out.fine.shape == (8192, 3) and np.isfinite(out.fine.data).all()


def _overfit_data():
    lib = shape_library()
    rng = np.random.default_rng(0)
    data = []
    for name in ["car", "cube", "plank", "drum", "pole", "egg", "disc", "table"]:
        gt = surface_cloud(lib[name], 256, rng)
        x = crop_partial(surface_cloud(lib[name], 1024, rng), "simple", rng)
        data.append((name, x[fps(x, 64)], gt))
    return data


def test_criterion_6_overfit(criterion, tmp_path):
    with criterion(6, "desk overfit"):
        data = _overfit_data()
        cfg = parse_config({"network": {"preset": "desk"}, "optimizer": {"lr": 1e-3},
                            "schedule": {"warmup_epochs": 0, "lr_min": 1e-3, "epochs": 200},
                            "batch_size": 8, "seed": 0, "anneal_epochs": 200,
                            "checkpoint_every": 1000, "checkpoint_dir": str(tmp_path)})

        def cd(model):
            return float(np.mean([chamfer(model.predict(x), g, "L1") for _, x, g in data]))

        def deterministic(model):
            return all(model.predict(x).tobytes() == model.predict(x).tobytes() for _, x, _ in data)

        before = new_state(cfg).model
        assert deterministic(before)
        c0 = cd(before)
        t0 = time.perf_counter()
        state = train(cfg, data=data)
        elapsed = time.perf_counter() - t0
        assert state.step == 200
        assert deterministic(state.model)
        c1 = cd(state.model)
        print(f"overfit: CD_l1 {c0:.4f} -> {c1:.4f} (ratio {c1 / c0:.3f}) in {elapsed:.0f}s")
        assert elapsed < 600, f"overfit took {elapsed:.0f}s"
        assert c1 < 0.25 * c0, f"ratio {c1 / c0:.3f}"


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_7_generator_fidelity(criterion, tmp_path):
    with criterion(7, "generator fidelity"):
        rng = np.random.default_rng(7)
        pc = rng.normal(size=(300, 3))
        p0 = GaborParams.draw(rng, 0.0, 12, 2.0, 0.5)
        assert deform(pc, p0).tobytes() == pc.tobytes()

        src = ["builtin:cube", "builtin:drum"]
        man = generate("deform", src, tmp_path / "deform", seed=3, n_gt=512)
        for s in man["samples"]:
            d = s["degradation"]
            assert (d["alpha"], d["K"], d["f"], d["sigma"]) == (0.4, 16, 2.0, 0.5)

        table = {"simple": (1.1, 0.003, 10), "moderate": (1.2, 0.004, 20), "hard": (1.3, 0.005, 30)}
        man = generate("occ", ["builtin:car"], tmp_path / "occ", seed=3, views=1, n_gt=1024)
        assert {s["level"] for s in man["samples"]} == set(table)
        for s in man["samples"]:
            d = s["degradation"]
            assert (d["beta_box"], d["sigma_noise"], d["n_occ"]) == table[s["level"]]
            assert d["occluded_points"] >= d["n_occ"]
        car, occ = normalize_mesh(shape_library()["car"]), occluder_library()["bin"].transformed(scale=1 / 2.3)
        for level, (beta, sigma, n_occ) in table.items():
            noisy, mask, info = gen_occluded(car, occ, OCC_PRESETS[level], np.random.default_rng(11))
            assert mask.sum() >= n_occ
            assert in_scaled_box(info["clean_points"], car, beta).all()
            assert abs(np.std(noisy - info["clean_points"]) / sigma - 1) < 0.1

        assert CROP_LEVELS == {"simple": 0.75, "moderate": 0.50, "hard": 0.25}
        man = generate("crop", src, tmp_path / "crop", seed=3, n_gt=400)
        for s in man["samples"]:
            assert len(read_pc(tmp_path / "crop" / s["input"])) == 400 * CROP_LEVELS[s["level"]]

        for kind, kw in (("deform", {}), ("crop", {}), ("occ", {"levels": ["hard"], "views": 1})):
            srcs = ["builtin:car"] if kind == "occ" else src
            generate(kind, srcs, tmp_path / "r1" / kind, seed=9, n_gt=512, mode="train", **kw)
            generate(kind, srcs, tmp_path / "r2" / kind, seed=9, n_gt=512, mode="train", **kw)
            assert _tree(tmp_path / "r1" / kind) == _tree(tmp_path / "r2" / kind), kind


def test_criterion_8_persistence(criterion, tmp_path):
    with criterion(8, "persistence"):
        rng = np.random.default_rng(8)
        lib = shape_library()
        data = []
        for name in ("cube", "egg", "drum", "disc"):
            g = surface_cloud(lib[name], 256, rng)
            data.append((name, g[fps(g, 64)], g))
        cfg = parse_config({"network": {"preset": "desk"}, "optimizer": {"lr": 1e-3},
                            "schedule": {"warmup_epochs": 1, "lr_min": 1e-4, "epochs": 5},
                            "batch_size": 1, "seed": 1})
        full = train(cfg, data=data, out_dir=tmp_path / "a")
        part = train(cfg, data=data, out_dir=tmp_path / "b", stop_after=3)
        rest = train(cfg, data=data, out_dir=tmp_path / "b", resume=part.last_checkpoint)
        a = [h["loss"] for h in full.history]
        b = [h["loss"] for h in part.history + rest.history]
        assert len(a) == len(b) == 20
        assert max(abs(x - y) for x, y in zip(a, b)) <= 1e-9

        ck = tmp_path / "b" / "epoch_0003.ckpt"
        Checkpoint.load(ck).save(tmp_path / "again.ckpt")
        assert (tmp_path / "again.ckpt").read_bytes() == ck.read_bytes()

        golden = np.array([[1.0, 0.0, 0.0], [0.0, -2.0, 0.5], [0.25, 1.5, -1.0]])
        for ext in ("bin", "xyz"):
            write_pc(tmp_path / f"g.{ext}", golden)
            assert (tmp_path / f"g.{ext}").read_bytes() == (DATA / f"golden3.{ext}").read_bytes()


def test_criterion_9_schedule(criterion):
    with criterion(9, "learning-rate schedule"):
        cfg = parse_config({})
        assert lr_at(0, 1e-4, 1e-5, 10, 300) == pytest.approx(1e-5, rel=1e-12)
        assert lr_at(10, 1e-4, 1e-5, 10, 300) == pytest.approx(1e-4, rel=1e-12)
        assert lr_at(300, 1e-4, 1e-5, 10, 300) == pytest.approx(1e-5, rel=1e-12)
        assert cfg.lr_at(0) == pytest.approx(1e-5) and cfg.lr_at(cfg.schedule.epochs) == pytest.approx(1e-5)
        eps = 1e-9
        assert abs(lr_at(10 - eps, 1e-4, 1e-5, 10, 300) - lr_at(10 + eps, 1e-4, 1e-5, 10, 300)) < 1e-12
