"""Evaluation reports: per-sample metrics, per-category means and a summary row.

Averaging is macro: a level's score is the mean over categories of the
per-category means. CD_l2 is multiplied by 1000 only when records are
serialized; the in-memory values are raw.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..datagen.streams import sample_rng
from ..network import PQDT, NetworkConfig
from ..pointops import chamfer, fscore
from .checkpoint import Checkpoint, load_model_weights
from .config import config_digest
from .dataset import Sample, fit_count, read_manifest
from .io import read_pc

CD_SCALE = 1000.0
LEVEL_COLUMNS = {"simple": "CD-S", "moderate": "CD-M", "hard": "CD-H"}


def fscore_key(d: float) -> str:
    return f"f@{d:g}"


def _fscore_column(d: float) -> str:
    return f"F{100 * d:g}"


@dataclass
class SampleMetrics:
    id: str
    category: str
    level: str
    cd_l2: float
    cd_l1: float
    fscores: dict[float, float] = field(default_factory=dict)

    def record(self) -> dict:
        return {"record": "sample", "id": self.id, "category": self.category, "level": self.level,
                "cd_l2_x1000": self.cd_l2 * CD_SCALE, "cd_l1_x1000": self.cd_l1 * CD_SCALE,
                **{fscore_key(d): v for d, v in self.fscores.items()}}


def load_model(checkpoint_path) -> PQDT:
    ck = Checkpoint.load(checkpoint_path)
    net = NetworkConfig.from_dict(ck.meta["network"])
    model = PQDT(net)
    load_model_weights(model, ck, config_digest(net))
    return model


def sample_metrics(model: PQDT, sample: Sample, thresholds, seed: int) -> SampleMetrics:
    x = read_pc(sample.input)
    g = read_pc(sample.gt)
    x = fit_count(x, model.cfg.n_in, sample_rng(seed, sample.id, 0))
    pred = model.predict(x, seed=seed)
    return SampleMetrics(sample.id, sample.category, sample.level,
                         chamfer(pred, g, "L2"), chamfer(pred, g, "L1"),
                         {d: fscore(pred, g, d) for d in thresholds})


def aggregate(rows: list[SampleMetrics], thresholds) -> tuple[list[dict], dict]:
    """Per (category, level) means and the macro summary, both already scaled."""
    groups: dict[tuple[str, str], list[SampleMetrics]] = {}
    for r in rows:
        groups.setdefault((r.category, r.level), []).append(r)
    cat_records = []
    for (cat, lvl), rs in sorted(groups.items()):
        cat_records.append({
            "record": "category", "category": cat, "level": lvl, "n": len(rs),
            "cd_l2_x1000": float(np.mean([r.cd_l2 for r in rs])) * CD_SCALE,
            "cd_l1_x1000": float(np.mean([r.cd_l1 for r in rs])) * CD_SCALE,
            **{fscore_key(d): float(np.mean([r.fscores[d] for r in rs])) for d in thresholds},
        })
    present = {c["level"] for c in cat_records}
    levels = [lvl for lvl in LEVEL_COLUMNS if lvl in present] + sorted(present - set(LEVEL_COLUMNS))
    summary = {"record": "summary", "averaging": "macro over categories", "n_samples": len(rows)}
    per_level_cd = []
    per_level_f = {d: [] for d in thresholds}
    for lvl in levels:
        cs = [c for c in cat_records if c["level"] == lvl]
        cd = float(np.mean([c["cd_l2_x1000"] for c in cs]))
        summary[LEVEL_COLUMNS.get(lvl, f"CD-{lvl}")] = cd
        per_level_cd.append(cd)
        for d in thresholds:
            per_level_f[d].append(float(np.mean([c[fscore_key(d)] for c in cs])))
    summary["mean"] = float(np.mean(per_level_cd)) if per_level_cd else float("nan")
    for d in thresholds:
        summary[_fscore_column(d)] = float(np.mean(per_level_f[d])) if per_level_f[d] else float("nan")
    return cat_records, summary


def evaluate(checkpoint_path, manifest_path, thresholds=(0.01,), seed: int | None = None,
             out_path=None, workers: int = 1, split: str | None = None) -> dict:
    """Score a checkpoint on a manifest at batch size 1 with selection noise off.

    Writes newline-delimited records (meta, samples, categories, summary) to
    ``out_path`` when given and returns them grouped in a dict.
    """
    thresholds = tuple(sorted(set(float(d) for d in thresholds), reverse=True))
    model = load_model(checkpoint_path)
    seed = model.cfg.eval_seed if seed is None else seed
    _, samples = read_manifest(manifest_path)
    if split is not None:
        samples = [s for s in samples if s.split == split]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(lambda s: sample_metrics(model, s, thresholds, seed), samples))
    else:
        rows = [sample_metrics(model, s, thresholds, seed) for s in samples]
    cats, summary = aggregate(rows, thresholds)
    meta = {"record": "meta", "checkpoint": str(checkpoint_path), "manifest": str(manifest_path),
            "config_digest": config_digest(model.cfg), "seed": seed, "batch_size": 1,
            "thresholds": list(thresholds), "cd_l2_scale": CD_SCALE,
            "averaging": "macro over categories"}
    records = [meta] + [r.record() for r in rows] + cats + [summary]
    if out_path is not None:
        Path(out_path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records),
                                  encoding="utf-8")
    return {"meta": meta, "samples": [r.record() for r in rows], "categories": cats, "summary": summary}
