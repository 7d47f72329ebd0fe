"""Smooth deformation fields from averaged 3D Gabor kernels.

Each axis of the displacement field is the mean of K kernels

    g(x) = exp(-(d.x / sigma)^2 / 2) * cos(2 pi f d.x + phi)

evaluated at ``x - o_k``. Kernels are bounded by 1, so every axis of the
field lies in [-1, 1] and a displacement ``alpha * field`` is at most
``alpha * sqrt(3)`` long.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

OFFSET_RANGE = 5.0

# evaluation midpoints and training ranges
EVAL_ALPHA, EVAL_K, EVAL_F, EVAL_SIGMA = 0.4, 16, 2.0, 0.5
TRAIN_ALPHA = (0.2, 0.6)
TRAIN_K = (8, 24)
TRAIN_F = (1.0, 3.0)
TRAIN_SIGMA = (0.4, 0.6)


def gabor_kernel(x, d, f: float, sigma: float, phi) -> np.ndarray:
    """Kernel value at ``x`` (..., 3) for unit direction ``d``."""
    x = np.asarray(x, dtype=np.float64)
    u = x @ np.asarray(d, dtype=np.float64)
    return np.exp(-0.5 * (u / sigma) ** 2) * np.cos(2.0 * math.pi * f * u + phi)


def _unit_vectors(rng: np.random.Generator, shape) -> np.ndarray:
    v = rng.normal(size=(*shape, 3))
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    # a zero draw has probability zero; guard anyway
    return np.where(n > 0, v / np.where(n > 0, n, 1.0), np.array([1.0, 0.0, 0.0]))


@dataclass(frozen=True)
class GaborParams:
    """Scalar parameters plus the per-axis kernel draws.

    ``directions`` and ``offsets`` have shape (3, K, 3), ``phases`` (3, K):
    one independent set of K kernels per output axis.
    """

    alpha: float
    K: int
    f: float
    sigma: float
    directions: np.ndarray
    offsets: np.ndarray
    phases: np.ndarray
    mode: str = "custom"

    def __post_init__(self):
        problems = []
        if not self.alpha >= 0:
            problems.append(f"alpha={self.alpha} must be >= 0")
        if self.K < 1:
            problems.append(f"K={self.K} must be >= 1")
        if not self.sigma > 0:
            problems.append(f"sigma={self.sigma} must be > 0")
        if self.directions.shape != (3, self.K, 3):
            problems.append(f"directions shape {self.directions.shape} != (3, {self.K}, 3)")
        elif not np.allclose(np.linalg.norm(self.directions, axis=-1), 1.0, atol=1e-12):
            problems.append("directions must be unit vectors")
        if self.offsets.shape != (3, self.K, 3):
            problems.append(f"offsets shape {self.offsets.shape} != (3, {self.K}, 3)")
        elif np.abs(self.offsets).max() > OFFSET_RANGE:
            problems.append(f"offsets must lie in [-{OFFSET_RANGE}, {OFFSET_RANGE}]^3")
        if self.phases.shape != (3, self.K):
            problems.append(f"phases shape {self.phases.shape} != (3, {self.K})")
        if problems:
            raise ValueError("invalid Gabor parameters: " + "; ".join(problems))

    @classmethod
    def draw(cls, rng: np.random.Generator, alpha: float, K: int, f: float, sigma: float,
             mode: str = "custom") -> "GaborParams":
        """Fix the scalars and draw directions, offsets and phases from ``rng``."""
        return cls(alpha=float(alpha), K=int(K), f=float(f), sigma=float(sigma),
                   directions=_unit_vectors(rng, (3, K)),
                   offsets=rng.uniform(-OFFSET_RANGE, OFFSET_RANGE, size=(3, K, 3)),
                   phases=rng.uniform(0.0, 2.0 * math.pi, size=(3, K)),
                   mode=mode)

    @classmethod
    def evaluation(cls, rng: np.random.Generator) -> "GaborParams":
        return cls.draw(rng, EVAL_ALPHA, EVAL_K, EVAL_F, EVAL_SIGMA, mode="eval")

    @classmethod
    def training(cls, rng: np.random.Generator) -> "GaborParams":
        alpha = rng.uniform(*TRAIN_ALPHA)
        K = int(rng.integers(TRAIN_K[0], TRAIN_K[1] + 1))
        f = rng.uniform(*TRAIN_F)
        sigma = rng.uniform(*TRAIN_SIGMA)
        return cls.draw(rng, alpha, K, f, sigma, mode="train")

    def summary(self) -> dict:
        """The scalar parameters, as written into manifests."""
        return {"mode": self.mode, "alpha": self.alpha, "K": self.K, "f": self.f, "sigma": self.sigma}

    def lipschitz_bound(self) -> float:
        """Upper bound on |grad| of any axis field.

        Per kernel, |d/du [exp(-u^2/2s^2) cos(wu + phi)]| <= 1/(s sqrt(e)) + w
        with w = 2 pi f; averaging K kernels keeps the bound.
        """
        return 2.0 * math.pi * self.f + 1.0 / (self.sigma * math.sqrt(math.e))


def gabor_field(pc, params: GaborParams) -> np.ndarray:
    """(N, 3) field: axis ``a`` is the mean of that axis' K kernels."""
    x = np.asarray(pc, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ValueError(f"gabor_field: expected (N, 3) points, got {x.shape}")
    out = np.empty_like(x)
    for a in range(3):
        d = params.directions[a]                      # (K, 3)
        u = x @ d.T - np.sum(params.offsets[a] * d, axis=1)  # d.(x - o)
        g = np.exp(-0.5 * (u / params.sigma) ** 2) * np.cos(2.0 * math.pi * params.f * u + params.phases[a])
        out[:, a] = g.mean(axis=1)
    return out


def deform(pc, params: GaborParams) -> np.ndarray:
    """X + alpha * field(X). ``alpha = 0`` returns an exact copy."""
    x = np.asarray(pc, dtype=np.float64)
    if params.alpha == 0:
        return x.copy()
    return x + params.alpha * gabor_field(x, params)
