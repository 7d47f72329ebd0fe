"""Manifests, sample loading and the prefetch worker."""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..datagen.streams import sample_rng
from ..pointops import fps
from .io import read_pc

MANIFEST_VERSION = 1


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    id: str
    input: Path
    gt: Path
    category: str
    level: str
    split: str
    seed: int


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def read_manifest(path) -> tuple[dict, list[Sample]]:
    """Parse a manifest and check that every referenced file exists."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: cannot read manifest ({exc})") from None
    if doc.get("schema_version") != MANIFEST_VERSION:
        raise ManifestError(f"{path}: schema_version {doc.get('schema_version')!r}, expected {MANIFEST_VERSION}")
    root = path.parent
    samples, seeds, missing = [], set(), []
    for rec in doc.get("samples", []):
        s = Sample(id=rec["id"], input=root / rec["input"], gt=root / rec["gt"],
                   category=rec.get("category", "all"), level=rec.get("level", "all"),
                   split=rec.get("split", "test"), seed=int(rec["seed"]))
        for p in (s.input, s.gt):
            if not p.is_file():
                missing.append(str(p))
        if s.seed in seeds:
            raise ManifestError(f"{path}: duplicate sample seed {s.seed} ({s.id})")
        seeds.add(s.seed)
        samples.append(s)
    if missing:
        raise ManifestError(f"{path}: {len(missing)} referenced files missing, e.g. {missing[0]}")
    return doc, samples


def fit_count(points: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Bring a cloud to exactly ``n`` points: FPS when larger, random repeats when smaller."""
    if len(points) == n:
        return points
    if len(points) > n:
        return points[fps(points, n)]
    extra = rng.choice(len(points), size=n - len(points), replace=True)
    return np.concatenate([points, points[np.sort(extra)]])


def load_pair(sample: Sample, n_in: int, n_out: int, seed: int, epoch: int) -> tuple[np.ndarray, np.ndarray]:
    """Input and target at the network's sizes; any resampling uses a per-sample stream."""
    rng = sample_rng(seed, sample.id, epoch)
    return fit_count(read_pc(sample.input), n_in, rng), fit_count(read_pc(sample.gt), n_out, rng)


_DONE = object()


class Prefetcher:
    """Loads items on a worker thread into a bounded queue, preserving order.

    Iterating yields ``fn(item)`` for each item in order. An exception in the
    worker is re-raised in the consumer.
    """

    def __init__(self, fn, items, depth: int = 2):
        self._q: queue.Queue = queue.Queue(maxsize=depth)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, args=(fn, list(items)), daemon=True)
        self._thread.start()

    def _run(self, fn, items):
        try:
            for item in items:
                if self._stop.is_set():
                    return
                self._put((True, fn(item)))
        except BaseException as exc:  # handed to the consumer
            self._put((False, exc))
        self._put((True, _DONE))

    def _put(self, value):
        while not self._stop.is_set():
            try:
                self._q.put(value, timeout=0.1)
                return
            except queue.Full:
                continue

    def __iter__(self):
        try:
            while True:
                ok, value = self._q.get()
                if not ok:
                    raise value
                if value is _DONE:
                    return
                yield value
        finally:
            self.close()

    def close(self):
        self._stop.set()
        self._thread.join(timeout=5)
