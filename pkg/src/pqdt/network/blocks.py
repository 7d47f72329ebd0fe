"""Encoder/decoder stacks, transition-down and upsampling blocks."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..geo import GEAttention, build_geometry
from ..layers import MLP, EdgeConv, FeedForward, LayerNorm, Linear, Module
from ..pointops import fps, knn


class EncoderLayer(Module):
    def __init__(self, dim, heads, c_e, k, ffn_hidden, rng, use_vr=True):
        self.attn = GEAttention(dim, heads, c_e, k, rng, use_vr=use_vr)
        self.ffn = FeedForward(dim, ffn_hidden, rng)

    def __call__(self, x, points, geom):
        return self.ffn(self.attn(x, points, geom))


class DecoderLayer(Module):
    def __init__(self, dim, heads, c_e, k, ffn_hidden, rng):
        self.self_attn = GEAttention(dim, heads, c_e, k, rng)
        self.cross_attn = GEAttention(dim, heads, c_e, k, rng)
        self.ffn = FeedForward(dim, ffn_hidden, rng)

    def __call__(self, q, q_points, memory, self_geom, cross_geom):
        q = self.self_attn(q, q_points, self_geom)
        q = self.cross_attn(q, q_points, cross_geom, memory=memory)
        return self.ffn(q)


class Encoder(Module):
    """Stack of GE self-attention layers sharing one geometry per call."""

    def __init__(self, dim, heads, layers, c_e, k, ffn_hidden, rng, use_vr=True):
        self.layers = [EncoderLayer(dim, heads, c_e, k, ffn_hidden, rng, use_vr) for _ in range(layers)]
        self.norm = LayerNorm(dim)
        self.c_e, self.k = c_e, k

    def __call__(self, x: ad.Tensor, points) -> ad.Tensor:
        geom = build_geometry(points, points, self.k, self.c_e)
        for layer in self.layers:
            x = layer(x, points, geom)
        return self.norm(x)


class Decoder(Module):
    """DETR-style decoder: GE self-attention over queries, GE cross-attention into memory."""

    def __init__(self, dim, heads, layers, c_e, k, ffn_hidden, rng):
        self.layers = [DecoderLayer(dim, heads, c_e, k, ffn_hidden, rng) for _ in range(layers)]
        self.norm = LayerNorm(dim)
        self.c_e, self.k = c_e, k

    def __call__(self, q, q_points, memory, memory_points) -> ad.Tensor:
        self_geom = build_geometry(q_points, q_points, self.k, self.c_e)
        cross_geom = build_geometry(q_points, memory_points, self.k, self.c_e)
        for layer in self.layers:
            q = layer(q, q_points, memory, self_geom, cross_geom)
        return self.norm(q)


class TransitionDown(Module):
    """Coordinate lift, then per level: FPS, EdgeConv at the samples, light encoder."""

    def __init__(self, cfg, rng):
        self.lift = Linear(3, cfg.lift_dim, rng)
        self.convs, self.encoders = [], []
        c_prev = cfg.lift_dim
        for lvl in cfg.down:
            self.convs.append(EdgeConv(c_prev, lvl.channels, cfg.k, rng))
            self.encoders.append(Encoder(lvl.channels, lvl.heads, lvl.layers, cfg.c_e, cfg.k,
                                         lvl.channels * cfg.ffn_ratio, rng, use_vr=False))
            c_prev = lvl.channels
        self.sizes = [lvl.points for lvl in cfg.down]

    def __call__(self, points: np.ndarray) -> tuple[np.ndarray, ad.Tensor]:
        if len(points) < self.sizes[0]:
            raise ValueError(f"transition_down: {len(points)} input points, need at least {self.sizes[0]}")
        feats = self.lift(points)
        cur = points
        for m, conv, enc in zip(self.sizes, self.convs, self.encoders):
            idx = fps(cur, m)
            feats = conv(feats, cur, idx)
            cur = cur[idx]
            feats = enc(feats, cur)
        return cur, feats


class UpTrans(Module):
    """Seed-conditioned upsampling level.

    Each point attends (subtraction-based vector attention) to its K nearest
    seed proxies, updates its feature, regresses ``rate`` offsets and is split
    into ``rate`` children carrying copies of the updated feature.
    """

    def __init__(self, dim, latent, k, rate, offset_scale, rng):
        self.q = Linear(dim, latent, rng)
        self.k_proj = Linear(dim, latent, rng)
        self.v = Linear(dim, latent, rng)
        self.pos = MLP([3, latent, latent], rng)
        self.attn = MLP([latent, latent, latent], rng)
        self.out = Linear(latent, dim, rng)
        self.offset = MLP([dim, latent, 3 * rate], rng)
        self.k, self.rate, self.offset_scale = k, rate, offset_scale

    def __call__(self, seed_points, seed_feats, points, feats):
        points, seed_points = ad.as_tensor(points), ad.as_tensor(seed_points)
        n = points.shape[0]
        k = min(self.k, seed_points.shape[0])
        nbr = knn(points.data, seed_points.data, k)
        rel = ad.reshape(points, (n, 1, 3)) - ad.gather(seed_points, nbr)
        pe = self.pos(rel)
        q = ad.reshape(self.q(feats), (n, 1, -1))
        keys = ad.gather(self.k_proj(seed_feats), nbr)
        vals = ad.gather(self.v(seed_feats), nbr)
        w = ad.softmax(self.attn(q - keys + pe), axis=1)
        agg = ad.sum_(w * (vals + pe), axis=1)
        h = feats + self.out(agg)
        off = ad.tanh(self.offset(h)) * self.offset_scale
        parents = np.repeat(np.arange(n), self.rate)
        children = ad.gather(points, parents) + ad.reshape(off, (n * self.rate, 3))
        return children, ad.gather(h, parents)
