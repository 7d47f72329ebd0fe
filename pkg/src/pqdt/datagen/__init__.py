"""Synthetic degradations: Gabor deformation, occluded scans and viewpoint crops."""

from .crop import CROP_LEVELS, crop_partial
from .gabor import GaborParams, deform, gabor_field, gabor_kernel
from .mesh import TriMesh, fibonacci_dirs, load_obj, raycast, raycast_many
from .occlusion import OCC_PRESETS, OccSceneParams, OcclusionRejected, gen_occluded
from .streams import sample_rng, sample_seed

__all__ = [
    "CROP_LEVELS", "crop_partial", "GaborParams", "deform", "gabor_field", "gabor_kernel",
    "TriMesh", "fibonacci_dirs", "load_obj", "raycast", "raycast_many",
    "OCC_PRESETS", "OccSceneParams", "OcclusionRejected", "gen_occluded",
    "sample_rng", "sample_seed",
]
