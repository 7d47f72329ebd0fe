"""Dynamic query selection: perturb-and-top-k over a padded candidate pool.

Candidates are scored by a small MLP, standardized, perturbed with scaled
Gumbel noise and the top-k kept. Selected feature rows are multiplied by
``s_i - stop_grad(s_i) + 1`` (numerically 1), so the forward value is a plain
gather while the score MLP still receives gradient through the selected rows.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .layers import MLP, Module

SCORE_EPS = 1e-8
UNIFORM_EPS = 1e-12

# per thread: [mode, entries, cursor] while a straight-through tape is active
_local = threading.local()


@contextlib.contextmanager
def straight_through_tape(mode: str, entries: list):
    """Record or replay selections so finite differences see a fixed surrogate.

    In ``record`` mode every detached constant of the selection path (the
    standardization statistics, the chosen indices and the stop-gradient
    scores) is appended to ``entries``. In ``replay`` mode the same calls
    reuse them in order, so the straight-through gradient becomes the exact
    derivative of the replayed function.
    """
    if mode not in ("record", "replay"):
        raise ValueError(f"tape mode must be 'record' or 'replay', got {mode!r}")
    prev = getattr(_local, "tape", None)
    _local.tape = [mode, entries, 0]
    try:
        yield entries
    finally:
        _local.tape = prev


def _constant(compute):
    """Evaluate a detached constant, or take it from an active tape."""
    tape = getattr(_local, "tape", None)
    if tape is not None and tape[0] == "replay":
        value = tape[1][tape[2]]
        tape[2] += 1
        return value
    value = compute()
    if tape is not None:
        tape[1].append(value)
    return value


@dataclass(frozen=True)
class SelectionConfig:
    n_in: int
    n_pad: int
    n_out: int

    def __post_init__(self):
        if self.n_out > self.n_in + self.n_pad:
            raise ValueError(f"selection: n_out={self.n_out} exceeds pool {self.n_in + self.n_pad}")


def anneal_beta(progress: float, start: float = 1.0) -> float:
    """Noise scale decaying linearly from ``start`` at progress 0 to 0 at progress 1."""
    p = min(1.0, max(0.0, float(progress)))
    return start * (1.0 - p)


@dataclass
class SelectionResult:
    indices: np.ndarray
    coords: ad.Tensor
    feats: ad.Tensor
    scores: np.ndarray


def sample_padding(source, n_pad: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n_pad`` rows of ``source`` uniformly, without replacement when possible."""
    src = np.asarray(source.data if isinstance(source, ad.Tensor) else source)
    if n_pad == 0:
        return np.empty((0, 3))
    idx = rng.choice(len(src), size=n_pad, replace=n_pad > len(src))
    return src[np.sort(idx)] if n_pad <= len(src) else src[idx]


def pad_candidates(coords, feats, pad_coords) -> tuple[ad.Tensor, ad.Tensor]:
    """Append padding points with zero feature vectors to the pool."""
    coords, feats = ad.as_tensor(coords), ad.as_tensor(feats)
    pad = np.asarray(pad_coords, dtype=np.float64).reshape(-1, 3)
    if len(pad) == 0:
        return coords, feats
    return (ad.concat([coords, ad.Tensor(pad)], axis=0),
            ad.concat([feats, ad.Tensor(np.zeros((len(pad), feats.shape[1])))], axis=0))


def standardize(raw: ad.Tensor) -> ad.Tensor:
    """(raw - mean) / std over the pool, the std floored at ``SCORE_EPS``.

    The pool statistics are constants of the graph, so each standardized
    score depends on its own row only.
    """
    mu, std = _constant(lambda: (float(raw.data.mean()), float(raw.data.std())))
    return (raw - mu) * (1.0 / max(std, SCORE_EPS))


def score(feats: ad.Tensor, mlp) -> ad.Tensor:
    """Standardized scalar score per pool row."""
    if feats.shape[0] < 2:
        raise ValueError(f"score: pool of {feats.shape[0]} candidates, need at least 2")
    raw = ad.reshape(mlp(feats), (feats.shape[0],))
    return standardize(raw)


def gumbel_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    u = np.clip(rng.uniform(size=n), UNIFORM_EPS, 1.0 - UNIFORM_EPS)
    return -np.log(-np.log(u))


def gumbel_perturb(z, beta: float, rng: np.random.Generator) -> ad.Tensor:
    """s = z + beta * g with standard Gumbel g. ``beta = 0`` returns z untouched."""
    if beta < 0:
        raise ValueError(f"gumbel_perturb: beta must be >= 0, got {beta}")
    z = ad.as_tensor(z)
    if beta == 0:
        return z
    return z + beta * gumbel_noise(z.shape[0], rng)


def topk_indices(s: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, descending; ties go to the lower index."""
    s = np.asarray(s)
    if not 0 <= k <= len(s):
        raise ValueError(f"select_topk: k={k} exceeds pool size {len(s)}")
    order = np.lexsort((np.arange(len(s)), -s))
    return order[:k]


def select_topk(s: ad.Tensor, k: int, coords, feats) -> SelectionResult:
    """Hard top-k with the straight-through coupling on selected feature rows."""
    s = ad.as_tensor(s)

    def choose():
        i = topk_indices(s.data, k)
        return i, s.data[i].copy()

    idx, ref = _constant(choose)
    s_sel = ad.gather(s, idx)
    gate = s_sel - ref + 1.0
    sel_feats = ad.gather(feats, idx) * ad.reshape(gate, (k, 1))
    return SelectionResult(idx, ad.gather(coords, idx), sel_feats, s.data[idx])


class QuerySelector(Module):
    """Scores pool rows from ``[features ; coordinates]`` and keeps the top ``n_out``."""

    def __init__(self, cfg: SelectionConfig, dim: int, rng: np.random.Generator):
        self.cfg = cfg
        hidden = max(8, dim // 2)
        self.mlp = MLP([dim + 3, hidden, 1], rng)

    def __call__(self, coords, feats, pad_coords, beta: float,
                 rng: np.random.Generator | None) -> SelectionResult:
        pool_c, pool_f = pad_candidates(coords, feats, pad_coords)
        expected = self.cfg.n_in + self.cfg.n_pad
        if pool_c.shape[0] != expected:
            raise ad.ShapeError(f"query selection: pool of {pool_c.shape[0]} rows, configured {expected}")
        z = score(ad.concat([pool_f, pool_c], axis=-1), self.mlp)
        if beta > 0 and rng is None:
            raise ValueError("query selection: beta > 0 requires an rng stream")
        s = gumbel_perturb(z, beta, rng)
        return select_topk(s, self.cfg.n_out, pool_c, pool_f)
