"""PQDT assembly: feature extraction, two query stages, proxy decoding, upsampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..dqs import QuerySelector, SelectionResult, sample_padding
from ..layers import MLP, Linear, Module
from ..pointops import chamfer_l1_tensor, fps
from .blocks import Decoder, Encoder, TransitionDown, UpTrans
from .config import NetworkConfig


class StageShapeError(ad.ShapeError):
    """A stage produced an output that violates the configured shape contract."""


def _expect(stage: str, t, shape: tuple[int, ...]) -> None:
    actual = t.shape
    if actual != shape:
        raise StageShapeError(f"{stage}: expected shape {shape}, got {actual}")


def spherical_init(count: int, radius: float, seed: int) -> np.ndarray:
    """``count`` well-spread points on the sphere of ``radius``.

    Draws ten times as many uniform sphere samples and keeps an FPS subset.
    """
    if count < 1:
        raise ValueError(f"spherical_init: count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=(10 * count, 3))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    return raw[fps(raw, count)] * radius


def _tile(vec: ad.Tensor, rows: int) -> ad.Tensor:
    return ad.broadcast_to(ad.reshape(vec, (1, vec.shape[-1])), (rows, vec.shape[-1]))


def _max_pool(x: ad.Tensor) -> ad.Tensor:
    return ad.max_reduce(x, axis=0)[0]


@dataclass
class QuerySet:
    coords: ad.Tensor
    feats: ad.Tensor


@dataclass
class ProxySet:
    feats: ad.Tensor
    seeds: ad.Tensor


@dataclass
class ForwardResult:
    fine: ad.Tensor
    coarse: ad.Tensor
    pseudo: ad.Tensor
    levels: list[ad.Tensor]
    trace: dict[str, tuple[int, ...]] = field(default_factory=dict)
    selections: dict[str, SelectionResult] = field(default_factory=dict)
    n_pad_s2: int = 0


class PQDT(Module):
    def __init__(self, cfg: NetworkConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.init_seed)
        c, g = cfg.dim, cfg.global_dim
        ffn = c * cfg.ffn_ratio
        self.down = TransitionDown(cfg, rng)
        self.in_proj = Linear(cfg.coarse_channels, c, rng)
        self.enc1 = Encoder(c, cfg.heads, cfg.enc1_layers, cfg.c_e, cfg.k, ffn, rng)
        self.g1_proj = Linear(c, g, rng)
        self.sphere = ad.Tensor(spherical_init(cfg.n_sphere, cfg.sphere_radius, cfg.init_seed))
        self.seed_query = MLP([3 + g, c, c], rng)
        self.dec1 = Decoder(c, cfg.heads, cfg.dec1_layers, cfg.c_e, cfg.k, ffn, rng)
        self.seed_coord = MLP([c, c // 2, 3], rng)
        self.s1 = QuerySelector(cfg.s1, c, rng)
        self.enc2 = Encoder(c, cfg.heads, cfg.enc2_layers, cfg.c_e, cfg.k, ffn, rng)
        self.g2_proj = Linear(c, g, rng)
        self.s2 = QuerySelector(cfg.s2, c, rng)
        self.query_mlp = MLP([3 + 2 * g, c, c], rng)
        self.dec2 = Decoder(c, cfg.heads, cfg.dec2_layers, cfg.c_e, cfg.k, ffn, rng)
        self.gq_proj = Linear(c, g, rng)
        self.out_mlp = MLP([3 + c + g, c, c], rng)
        self.up = [UpTrans(c, cfg.up_dim, cfg.up_k, r, cfg.up_offset_scale * 0.5 ** i, rng)
                   for i, r in enumerate(cfg.up_rates)]

    # -- stages ------------------------------------------------------------
    def transition_down(self, points: np.ndarray) -> QuerySet:
        coords, feats = self.down(points)
        cfg = self.cfg
        _expect("transition_down", feats, (cfg.coarse_points, cfg.coarse_channels))
        return QuerySet(ad.Tensor(coords), feats)

    def stage1(self, q_src: QuerySet, beta: float, rng) -> tuple[QuerySet, ad.Tensor, SelectionResult]:
        cfg = self.cfg
        f1 = self.enc1(self.in_proj(q_src.feats), q_src.coords)
        f_g1 = _max_pool(self.g1_proj(f1))
        sph = self.sphere
        q = self.seed_query(ad.concat([sph, _tile(f_g1, cfg.n_sphere)], axis=-1))
        f_seed = self.dec1(q, sph, f1, q_src.coords)
        p_seed = sph + self.seed_coord(f_seed)
        _expect("stage1.seeds", p_seed, (cfg.n_sphere, 3))
        pad = sample_padding(q_src.coords, cfg.s1.n_pad, rng)
        sel = self.s1(p_seed, f_seed, pad, beta, rng)
        _expect("stage1.pseudo_queries", sel.feats, (cfg.s1.n_out, cfg.dim))
        return QuerySet(sel.coords, sel.feats), f_g1, sel

    def stage2(self, q_ps: QuerySet, input_points: np.ndarray, f_g1: ad.Tensor, beta: float,
               rng) -> tuple[ad.Tensor, QuerySet, SelectionResult]:
        cfg = self.cfg
        f2 = self.enc2(q_ps.feats, q_ps.coords)
        f_g2 = _max_pool(self.g2_proj(f2))
        pad = sample_padding(input_points, cfg.s2.n_pad, rng)
        sel = self.s2(q_ps.coords, f2, pad, beta, rng)
        n = cfg.s2.n_out
        _expect("stage2.values", sel.feats, (n, cfg.dim))
        q = self.query_mlp(ad.concat([sel.coords, _tile(f_g1, n), _tile(f_g2, n)], axis=-1))
        _expect("stage2.queries", q, (n, cfg.dim))
        return sel.feats, QuerySet(sel.coords, q), sel

    def decode_proxies(self, q: QuerySet, values: ad.Tensor) -> ProxySet:
        n = q.coords.shape[0]
        h = self.dec2(q.feats, q.coords, values, q.coords)
        f_gq = _max_pool(self.gq_proj(h))
        proxies = self.out_mlp(ad.concat([q.coords, h, _tile(f_gq, n)], axis=-1))
        _expect("decode_proxies", proxies, (n, self.cfg.dim))
        return ProxySet(proxies, q.coords)

    def upsample(self, proxies: ProxySet) -> list[ad.Tensor]:
        pts, feats = proxies.seeds, proxies.feats
        levels = []
        for i, up in enumerate(self.up):
            pts, feats = up(proxies.seeds, proxies.feats, pts, feats)
            _expect(f"upsample[{i}]", pts, (self.cfg.level_sizes()[i], 3))
            levels.append(pts)
        return levels

    # -- full pass -----------------------------------------------------------
    def forward(self, pc, rng: np.random.Generator | None = None, mode: str = "eval",
                beta: float = 1.0) -> ForwardResult:
        """Run all stages on one (N, 3) cloud.

        Points are put in lexicographic order first, so for distinct points
        the result does not depend on the input order. ``eval`` mode forces
        the selection noise to zero and, without an explicit ``rng``, draws
        the input padding from ``cfg.eval_seed``.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"forward: mode must be 'train' or 'eval', got {mode!r}")
        pts = np.asarray(pc, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or not np.isfinite(pts).all():
            raise ValueError(f"forward: expected finite (N, 3) points, got shape {pts.shape}")
        pts = pts[np.lexsort(pts.T[::-1])]
        if mode == "eval":
            beta = 0.0
            if rng is None:
                rng = np.random.default_rng(self.cfg.eval_seed)
        elif rng is None:
            raise ValueError("forward: train mode needs an rng stream")

        q_src = self.transition_down(pts)
        q_ps, f_g1, sel1 = self.stage1(q_src, beta, rng)
        values, q, sel2 = self.stage2(q_ps, pts, f_g1, beta, rng)
        proxies = self.decode_proxies(q, values)
        levels = self.upsample(proxies)
        trace = {
            "input": pts.shape,
            "coarse_features": q_src.feats.shape,
            "pseudo_queries": q_ps.feats.shape,
            "queries": q.feats.shape,
            "proxies": proxies.feats.shape,
            **{f"level{i + 1}": lv.shape for i, lv in enumerate(levels)},
        }
        return ForwardResult(levels[-1], q.coords, q_ps.coords, levels, trace,
                             {"s1": sel1, "s2": sel2}, self.cfg.s2.n_pad)

    __call__ = forward

    def predict(self, pc, seed: int | None = None) -> np.ndarray:
        """Eval-mode dense prediction as a plain array, without building a graph."""
        rng = None if seed is None else np.random.default_rng(seed)
        with ad.no_grad():
            return self.forward(pc, rng=rng, mode="eval").fine.data.copy()


def gt_levels(gt: np.ndarray, sizes) -> list[np.ndarray]:
    """FPS-reduce the ground truth to every requested size."""
    gt = np.asarray(gt, dtype=np.float64)
    return [gt[fps(gt, m)] if m < len(gt) else gt for m in sizes]


def loss(levels: list[ad.Tensor], pseudo: ad.Tensor, gt: np.ndarray,
         targets: list[np.ndarray] | None = None) -> tuple[ad.Tensor, dict[str, float]]:
    """Sum of L1 Chamfer terms of every level and of the pseudo-query points.

    Each prediction is compared to the ground truth reduced by FPS to its own
    size. ``targets`` may supply those reductions precomputed, in the order
    ``levels + [pseudo]``.
    """
    preds = list(levels) + [pseudo]
    if targets is None:
        targets = gt_levels(gt, [p.shape[0] for p in preds])
    terms = [chamfer_l1_tensor(p, t) for p, t in zip(preds, targets)]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    names = [f"rec{i + 1}" for i in range(len(levels))] + ["pq"]
    return total, {n: t.item() for n, t in zip(names, terms)}
