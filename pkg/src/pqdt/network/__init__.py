from .config import DESK, FULL, PRESETS, SMALL, DownLevel, NetworkConfig
from .model import PQDT, ForwardResult, ProxySet, QuerySet, StageShapeError, gt_levels, loss, spherical_init

__all__ = [
    "DESK", "FULL", "PRESETS", "SMALL", "DownLevel", "NetworkConfig",
    "PQDT", "ForwardResult", "ProxySet", "QuerySet", "StageShapeError", "gt_levels", "loss",
    "spherical_init",
]
