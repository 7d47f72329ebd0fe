"""Occluded LiDAR-style scans of a car with one street occluder in front of it.

The scene is Y-up with the ground at the car's lowest vertex. Meshes are
expected in the car's own units; ``generate occ`` normalizes cars to a unit
bounding sphere first so that the noise levels are comparable across models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..pointops import fps
from .mesh import TriMesh, fibonacci_dirs, raycast, raycast_many, rotation_y

MAX_ATTEMPTS = 16


@dataclass(frozen=True)
class OccSceneParams:
    beta_box: float
    sigma_noise: float
    n_occ: int
    n_rays: int = 1 << 17
    n_views: int = 32
    n_points: int = 2048
    # sensor placement, as multiples of the car bounding radius / degrees
    sensor_distance: tuple[float, float] = (2.0, 3.0)
    sensor_elevation: tuple[float, float] = (5.0, 30.0)
    shift_fraction: tuple[float, float] = (0.05, 0.15)
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        problems = []
        if not self.beta_box >= 1:
            problems.append(f"beta_box={self.beta_box} must be >= 1")
        if not self.sigma_noise >= 0:
            problems.append(f"sigma_noise={self.sigma_noise} must be >= 0")
        if self.n_occ < 0:
            problems.append(f"n_occ={self.n_occ} must be >= 0")
        if self.n_rays < 1 or self.n_points < 1 or self.n_views < 1:
            problems.append("n_rays, n_points and n_views must be >= 1")
        if problems:
            raise ValueError("invalid occlusion parameters: " + "; ".join(problems))

    def summary(self) -> dict:
        return {"level": self.name, "beta_box": self.beta_box, "sigma_noise": self.sigma_noise,
                "n_occ": self.n_occ, "n_rays": self.n_rays, "n_points": self.n_points}


OCC_PRESETS = {
    "simple": OccSceneParams(1.1, 0.003, 10, name="simple"),
    "moderate": OccSceneParams(1.2, 0.004, 20, name="moderate"),
    "hard": OccSceneParams(1.3, 0.005, 30, name="hard"),
}


class OcclusionRejected(RuntimeError):
    """No attempt produced a valid sample."""


def _sensor_origin(center, radius, params: OccSceneParams, rng) -> np.ndarray:
    dist = rng.uniform(*params.sensor_distance) * radius
    elev = math.radians(rng.uniform(*params.sensor_elevation))
    az = rng.uniform(0.0, 2.0 * math.pi)
    return center + dist * np.array([math.cos(elev) * math.cos(az), math.sin(elev),
                                      math.cos(elev) * math.sin(az)])


def place_occluder(car: TriMesh, occluder: TriMesh, origin, rng, params: OccSceneParams) -> TriMesh:
    """Put the occluder at the first car hit on the sensor-to-center ray.

    It is rotated about the vertical axis, pushed toward the sensor by a
    fraction of the car radius along the horizontal view direction and set
    on the car's ground plane.
    """
    center, radius = car.center(), car.radius()
    to_center = center - origin
    hit = raycast([car], origin, to_center / np.linalg.norm(to_center))
    anchor = hit.point if hit is not None else center
    back = origin - center
    back[1] = 0.0
    norm = np.linalg.norm(back)
    back = back / norm if norm > 0 else np.array([1.0, 0.0, 0.0])
    anchor = anchor + rng.uniform(*params.shift_fraction) * radius * back
    rot = rotation_y(rng.uniform(0.0, 2.0 * math.pi))
    occ_c = occluder.center()
    v = (occluder.vertices - occ_c) @ rot.T
    v[:, 0] += anchor[0]
    v[:, 2] += anchor[2]
    v[:, 1] += car.vertices[:, 1].min() - v[:, 1].min()
    return TriMesh(v, occluder.faces)


def _facing_dirs(origin, center, radius, n_rays) -> np.ndarray:
    """Lattice directions inside the cone that subtends the car's bounding sphere."""
    dirs = fibonacci_dirs(n_rays)
    axis = center - origin
    dist = np.linalg.norm(axis)
    cos_half = math.sqrt(max(0.0, 1.0 - min(1.0, radius / dist) ** 2))
    return dirs[dirs @ (axis / dist) >= cos_half]


def scan(car: TriMesh, occluder: TriMesh | None, origin, params: OccSceneParams):
    """Single ray pass. Returns hit points and a mask of occluder-origin points.

    The mask comes from a second pass against the clean car: a point is an
    occluder point when the clean ray misses or stops farther away.
    """
    center, radius = car.center(), car.radius()
    dirs = _facing_dirs(origin, center, radius, params.n_rays)
    scene = [car] if occluder is None else [car, occluder]
    t_scene, _ = raycast_many(scene, origin, dirs)
    hit = np.isfinite(t_scene)
    dirs, t_scene = dirs[hit], t_scene[hit]
    points = origin + t_scene[:, None] * dirs
    if occluder is None:
        return points, np.zeros(len(points), dtype=bool)
    t_clean, _ = raycast_many([car], origin, dirs)
    occ = ~np.isfinite(t_clean) | (t_scene < t_clean - 1e-9 * max(1.0, radius))
    return points, occ


def in_scaled_box(points, car: TriMesh, beta_box: float) -> np.ndarray:
    lo, hi = car.bounds()
    c, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * beta_box
    return np.all(np.abs(points - c) <= half, axis=1)


def gen_occluded(car: TriMesh, occluder: TriMesh | None, params: OccSceneParams,
                 rng: np.random.Generator):
    """One occluded, box-filtered, FPS-reduced and noised scan.

    Returns ``(points, occ_mask, info)``. ``info`` holds the sensor origin,
    the attempt count and the pre-noise points. Attempts that end with fewer
    than ``n_occ`` occluder points (or fewer points than requested) are
    redrawn, at most ``MAX_ATTEMPTS`` times.
    """
    center, radius = car.center(), car.radius()
    reasons = []
    for attempt in range(1, MAX_ATTEMPTS + 1):
        origin = _sensor_origin(center, radius, params, rng)
        placed = None if occluder is None else place_occluder(car, occluder, origin, rng, params)
        pts, occ = scan(car, placed, origin, params)
        keep = in_scaled_box(pts, car, params.beta_box)
        pts, occ = pts[keep], occ[keep]
        if len(pts) < params.n_points:
            reasons.append(f"attempt {attempt}: {len(pts)} points < {params.n_points}")
            continue
        idx = fps(pts, params.n_points)
        pts, occ = pts[idx], occ[idx]
        if occ.sum() < params.n_occ:
            reasons.append(f"attempt {attempt}: {int(occ.sum())} occluder points < n_occ={params.n_occ}")
            continue
        noisy = pts + rng.normal(scale=params.sigma_noise, size=pts.shape) if params.sigma_noise > 0 else pts.copy()
        info = {"origin": origin, "attempts": attempt, "clean_points": pts}
        return noisy, occ, info
    raise OcclusionRejected(f"occlusion sample rejected after {MAX_ATTEMPTS} attempts: " + "; ".join(reasons[-3:]))
