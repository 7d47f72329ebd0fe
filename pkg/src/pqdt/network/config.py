"""Network configuration and the shipped presets."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

from ..dqs import SelectionConfig


@dataclass(frozen=True)
class DownLevel:
    """One transition-down level: EdgeConv to ``channels`` at ``points`` FPS samples, then an encoder."""

    points: int
    channels: int
    heads: int
    layers: int


@dataclass(frozen=True)
class NetworkConfig:
    n_in: int = 2048
    n_out: int = 8192
    lift_dim: int = 8
    down: tuple[DownLevel, ...] = (DownLevel(512, 64, 1, 2), DownLevel(128, 256, 4, 2))
    k: int = 16
    c_e: int = 64
    dim: int = 384
    heads: int = 6
    enc1_layers: int = 4
    dec1_layers: int = 4
    enc2_layers: int = 4
    dec2_layers: int = 8
    ffn_ratio: int = 4
    global_dim: int = 1024
    n_sphere: int = 384
    sphere_radius: float = 0.8
    s1: SelectionConfig = SelectionConfig(384, 128, 384)
    s2: SelectionConfig = SelectionConfig(384, 256, 512)
    up_rates: tuple[int, ...] = (1, 4, 4)
    up_dim: int = 64
    up_k: int = 16
    up_offset_scale: float = 0.5
    init_seed: int = 0
    eval_seed: int = 0

    def __post_init__(self):
        errors = []
        if self.s1.n_in != self.n_sphere:
            errors.append(f"s1.n_in={self.s1.n_in} must equal n_sphere={self.n_sphere}")
        if self.s2.n_in != self.s1.n_out:
            errors.append(f"s2.n_in={self.s2.n_in} must equal s1.n_out={self.s1.n_out}")
        if self.s2.n_out * math.prod(self.up_rates) != self.n_out:
            errors.append(f"s2.n_out * prod(up_rates) = {self.s2.n_out * math.prod(self.up_rates)} "
                          f"!= n_out={self.n_out}")
        if self.dim % self.heads:
            errors.append(f"dim={self.dim} not divisible by heads={self.heads}")
        for i, lvl in enumerate(self.down):
            if lvl.channels % lvl.heads:
                errors.append(f"down[{i}].channels={lvl.channels} not divisible by heads={lvl.heads}")
        points = [self.n_in] + [lvl.points for lvl in self.down]
        if any(b > a for a, b in zip(points, points[1:])):
            errors.append(f"down-sampling sizes must not increase: {points}")
        if self.c_e % 2:
            errors.append(f"c_e={self.c_e} must be even")
        if errors:
            raise ValueError("invalid network config: " + "; ".join(errors))

    @property
    def coarse_points(self) -> int:
        return self.down[-1].points

    @property
    def coarse_channels(self) -> int:
        return self.down[-1].channels

    def level_sizes(self) -> list[int]:
        sizes, n = [], self.s2.n_out
        for r in self.up_rates:
            n *= r
            sizes.append(n)
        return sizes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["down"] = [asdict(lvl) for lvl in self.down]
        d["up_rates"] = list(self.up_rates)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known - {"preset"})
        if unknown:
            raise ValueError(f"network config: unknown keys {unknown}")
        base = PRESETS[d["preset"]].to_dict() if "preset" in d else {}
        merged = {**base, **{k: v for k, v in d.items() if k != "preset"}}
        kw = dict(merged)
        if "down" in kw:
            kw["down"] = tuple(DownLevel(**lvl) if isinstance(lvl, dict) else lvl for lvl in kw["down"])
        for key in ("s1", "s2"):
            if key in kw and isinstance(kw[key], dict):
                kw[key] = SelectionConfig(**kw[key])
        if "up_rates" in kw:
            kw["up_rates"] = tuple(kw["up_rates"])
        return cls(**kw)


FULL = NetworkConfig()

SMALL = NetworkConfig(
    n_in=512, n_out=2048,
    down=(DownLevel(128, 32, 1, 1), DownLevel(64, 64, 2, 1)),
    k=16, c_e=32, dim=64, heads=4,
    enc1_layers=2, dec1_layers=2, enc2_layers=2, dec2_layers=2,
    ffn_ratio=2, global_dim=128, n_sphere=96,
    s1=SelectionConfig(96, 64, 96), s2=SelectionConfig(96, 32, 128),
    up_dim=32, up_k=16,
)

DESK = NetworkConfig(
    n_in=64, n_out=256,
    down=(DownLevel(32, 16, 1, 1), DownLevel(16, 32, 2, 1)),
    k=8, c_e=16, dim=32, heads=2,
    enc1_layers=1, dec1_layers=1, enc2_layers=1, dec2_layers=1,
    ffn_ratio=2, global_dim=64, n_sphere=24, sphere_radius=1.0,
    s1=SelectionConfig(24, 16, 24), s2=SelectionConfig(24, 8, 16),
    up_dim=16, up_k=8,
)

PRESETS: dict[str, NetworkConfig] = {"full": FULL, "small": SMALL, "desk": DESK}
