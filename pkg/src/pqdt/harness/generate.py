"""Dataset generation: deformed, occluded and cropped samples plus a manifest.

Each sample draws from its own stream keyed by (seed, model, level, view),
so the files and the manifest do not depend on the worker count.
"""

from __future__ import annotations

import logging
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..datagen.crop import CROP_LEVELS, crop_partial, random_viewpoint
from ..datagen.gabor import GaborParams, deform
from ..datagen.mesh import ObjError, TriMesh, load_obj, normalize_mesh, occluder_library
from ..datagen.occlusion import OCC_PRESETS, OcclusionRejected, gen_occluded
from ..datagen.shapes import shape_library, surface_cloud
from ..datagen.streams import sample_rng, sample_seed
from ..pointops import fps, normalize_unit_sphere
from .dataset import MANIFEST_VERSION, write_manifest
from .io import PointFileError, read_pc, write_pc

log = logging.getLogger(__name__)

KINDS = ("deform", "occ", "crop")
DEFAULT_VIEWS = {"deform": 1, "occ": 32, "crop": 1}
# cars are normalized to a unit bounding sphere; a typical car's is about this many metres
CAR_RADIUS_M = 2.3


@dataclass(frozen=True)
class Job:
    kind: str
    model_id: str
    source: str
    category: str
    level: str
    view: int
    seed: int
    mode: str
    n_gt: int
    n_points: int
    out_dir: str


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def _source_geometry(source: str):
    """A mesh (``builtin:<name>`` or OBJ) or a point cloud (xyz/bin)."""
    if source.startswith("builtin:"):
        name = source.split(":", 1)[1]
        lib = shape_library()
        if name not in lib:
            raise ValueError(f"unknown builtin shape {name!r}; choose from {sorted(lib)}")
        return lib[name]
    path = Path(source)
    if path.suffix.lower() == ".obj":
        return load_obj(path)
    return read_pc(path)


def _ground_truth(geom, n_gt: int, rng) -> np.ndarray:
    if isinstance(geom, TriMesh):
        return surface_cloud(geom, n_gt, rng)
    pts, _, _ = normalize_unit_sphere(geom)
    return pts[fps(pts, n_gt)] if len(pts) > n_gt else pts


def _gt_path(job: Job) -> Path:
    return Path(job.out_dir) / "gt" / f"{_safe(job.model_id)}.bin"


def _input_path(job: Job) -> Path:
    return Path(job.out_dir) / job.kind / job.level / f"{_safe(job.model_id)}_v{job.view:02d}.bin"


def run_job(job: Job) -> dict:
    """Produce one sample; returns its manifest record or a skip record."""
    key = f"{job.kind}:{job.model_id}:{job.level}"
    try:
        geom = _source_geometry(job.source)
    except (ObjError, PointFileError, OSError, ValueError) as exc:
        return {"skip": True, "id": f"{key}:{job.view}", "reason": str(exc)}
    rng = sample_rng(job.seed, key, job.view)
    gt_rng = sample_rng(job.seed, f"gt:{job.model_id}", 0)
    record = {"id": f"{key}:{job.view}", "source": job.source, "category": job.category,
              "level": job.level, "view": job.view, "seed": sample_seed(job.seed, key, job.view),
              "split": "train" if job.mode == "train" else "test"}
    if job.kind == "occ":
        if not isinstance(geom, TriMesh):
            return {"skip": True, "id": record["id"], "reason": "occ needs a mesh source"}
        car = normalize_mesh(geom)
        gt = surface_cloud(car, job.n_gt, gt_rng)
        lib = occluder_library()
        name = sorted(lib)[int(rng.integers(len(lib)))]
        occluder = lib[name].transformed(scale=rng.uniform(0.8, 1.2) / CAR_RADIUS_M)
        params = replace(OCC_PRESETS[job.level], n_points=job.n_points)
        try:
            x, occ_mask, info = gen_occluded(car, occluder, params, rng)
        except OcclusionRejected as exc:
            return {"skip": True, "id": record["id"], "reason": str(exc)}
        record["degradation"] = {"type": "occ", "occluder": name, "attempts": info["attempts"],
                                 "occluded_points": int(occ_mask.sum()), **params.summary()}
    else:
        gt = _ground_truth(geom, job.n_gt, gt_rng)
        if job.kind == "deform":
            params = GaborParams.evaluation(rng) if job.mode == "eval" else GaborParams.training(rng)
            x = deform(gt, params)
            record["degradation"] = {"type": "deform", **params.summary()}
        else:
            vp = random_viewpoint(rng)
            x = crop_partial(gt, job.level, rng, viewpoint=vp)
            record["degradation"] = {"type": "crop", "level": job.level,
                                     "fraction": CROP_LEVELS[job.level], "viewpoint": vp.tolist()}
    gt_path, in_path = _gt_path(job), _input_path(job)
    gt_path.parent.mkdir(parents=True, exist_ok=True)
    in_path.parent.mkdir(parents=True, exist_ok=True)
    # every view of a model shares the ground-truth file; write it atomically
    tmp = gt_path.with_name(f"{gt_path.name}.{os.getpid()}.tmp")
    write_pc(tmp, gt, "bin")
    os.replace(tmp, gt_path)
    write_pc(in_path, x)
    rel = Path(job.out_dir)
    record["gt"] = gt_path.relative_to(rel).as_posix()
    record["input"] = in_path.relative_to(rel).as_posix()
    return record


def plan_jobs(kind: str, sources, out_dir, seed: int = 0, levels=None, views: int | None = None,
              mode: str = "eval", n_gt: int = 8192, n_points: int = 2048) -> list[Job]:
    if kind not in KINDS:
        raise ValueError(f"generate: kind must be one of {KINDS}, got {kind!r}")
    if mode not in ("train", "eval"):
        raise ValueError(f"generate: mode must be train or eval, got {mode!r}")
    if levels is None:
        levels = ["all"] if kind == "deform" else list(CROP_LEVELS if kind == "crop" else OCC_PRESETS)
    valid = {"deform": {"all"}, "crop": set(CROP_LEVELS), "occ": set(OCC_PRESETS)}[kind]
    bad = [lvl for lvl in levels if lvl not in valid]
    if bad:
        raise ValueError(f"generate {kind}: unknown levels {bad}, expected {sorted(valid)}")
    views = DEFAULT_VIEWS[kind] if views is None else views
    jobs = []
    for src in sources:
        src = str(src)
        if src.startswith("builtin:"):
            model_id, category = src.split(":", 1)[1], "builtin"
        else:
            p = Path(src)
            model_id, category = f"{p.parent.name}/{p.stem}", p.parent.name or "all"
        for level in levels:
            for v in range(views):
                jobs.append(Job(kind, model_id, src, category, level, v, seed, mode, n_gt, n_points, str(out_dir)))
    return jobs


def generate(kind: str, sources, out_dir, seed: int = 0, levels=None, views: int | None = None,
             mode: str = "eval", n_gt: int = 8192, n_points: int = 2048, workers: int = 1) -> dict:
    """Write all samples and ``manifest.json`` under ``out_dir``; return the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = plan_jobs(kind, sources, out_dir, seed, levels, views, mode, n_gt, n_points)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(run_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [run_job(j) for j in jobs]
    samples, skipped = [], []
    for r in results:
        if r.get("skip"):
            log.warning("skipped %s: %s", r["id"], r["reason"])
            skipped.append({"id": r["id"], "reason": r["reason"]})
        else:
            samples.append(r)
    manifest = {"schema_version": MANIFEST_VERSION, "kind": kind, "mode": mode, "seed": seed,
                "n_gt": n_gt, "samples": samples, "skipped": skipped}
    write_manifest(out_dir / "manifest.json", manifest)
    return manifest
