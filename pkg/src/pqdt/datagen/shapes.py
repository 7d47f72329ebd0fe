"""Procedural shape library for smoke runs and overfit experiments."""

from __future__ import annotations

import numpy as np

from ..pointops import fps, normalize_unit_sphere
from .mesh import TriMesh, box, combine, cylinder, ellipsoid, occluder_library, sample_surface, toy_car


def shape_library() -> dict[str, TriMesh]:
    lib = {
        "car": toy_car(),
        "cube": box((1.0, 1.0, 1.0)),
        "plank": box((2.0, 0.2, 0.6)),
        "drum": cylinder(0.5, 0.6, 32),
        "pole": cylinder(0.15, 2.0, 16),
        "egg": ellipsoid((0.4, 0.7, 0.4)),
        "disc": ellipsoid((0.8, 0.15, 0.8)),
        "table": combine([box((1.2, 0.08, 0.8), base=0.7)]
                         + [box((0.08, 0.7, 0.08), center_xz=(x, z))
                            for x in (-0.5, 0.5) for z in (-0.3, 0.3)])[0],
    }
    lib.update({f"occ_{k}": v for k, v in occluder_library().items()})
    return lib


def surface_cloud(mesh: TriMesh, n: int, rng: np.random.Generator, oversample: int = 8) -> np.ndarray:
    """``n`` evenly spread surface points (FPS over a denser random sample), unit-sphere normalized."""
    dense = sample_surface(mesh, oversample * n, rng)
    dense, _, _ = normalize_unit_sphere(dense)
    return dense[fps(dense, n)]
