"""Viewpoint cropping: remove the points nearest a random direction."""

from __future__ import annotations

import numpy as np

CROP_LEVELS = {"simple": 0.75, "moderate": 0.50, "hard": 0.25}


def random_viewpoint(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def retained_count(n: int, fraction: float) -> int:
    return int(round(n * fraction))


def crop_partial(pc, level, rng: np.random.Generator, viewpoint=None) -> np.ndarray:
    """Keep ``round(N * fraction)`` points, dropping those nearest the viewpoint.

    ``level`` is a name from ``CROP_LEVELS`` or a fraction in (0, 1]. The
    surviving points keep their input order. Distance ties are broken by
    the lower input index.
    """
    pts = np.asarray(pc, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"crop_partial: expected (N, 3) points, got {pts.shape}")
    fraction = CROP_LEVELS[level] if isinstance(level, str) else float(level)
    if not 0 < fraction <= 1:
        raise ValueError(f"crop_partial: fraction must be in (0, 1], got {fraction}")
    keep = retained_count(len(pts), fraction)
    if keep < 1:
        raise ValueError(f"crop_partial: {len(pts)} points is too few to keep {fraction:.0%}")
    if fraction == 1.0:
        return pts.copy()
    vp = random_viewpoint(rng) if viewpoint is None else np.asarray(viewpoint, dtype=np.float64)
    d = np.sum((pts - vp) ** 2, axis=1)
    order = np.argsort(d, kind="stable")
    return pts[np.sort(order[len(pts) - keep:])]
