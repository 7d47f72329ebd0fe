"""Sparse geometric embedding (SGE) and the attention head that consumes it.

Distances and triplet angles over each point's kNN neighbourhood are encoded
sinusoidally, projected by learned matrices, and added to the attention keys
and values of a local (kNN-restricted) multi-head attention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .layers import EdgeConv, LayerNorm, Linear, Module, param
from .pointops import knn

SIGMA_D = 0.2
SIGMA_A = 15.0


def _frequencies(c_e: int) -> np.ndarray:
    if c_e <= 0 or c_e % 2:
        raise ValueError(f"sinusoidal embedding width must be a positive even number, got {c_e}")
    return 1.0 / 10000.0 ** (2.0 * np.arange(c_e // 2) / c_e)


def sinusoidal_embed(value, temperature: float, c_e: int) -> np.ndarray:
    """Interleaved sin/cos encoding of ``value / temperature``.

    Channel ``2k`` is ``sin(v / temperature / 10000**(2k/c_e))`` and channel
    ``2k+1`` the matching cosine. Output shape is ``value.shape + (c_e,)``.
    """
    freq = _frequencies(c_e)
    arg = np.asarray(value, dtype=np.float64)[..., None] / temperature * freq
    out = np.empty(arg.shape[:-1] + (c_e,))
    out[..., 0::2] = np.sin(arg)
    out[..., 1::2] = np.cos(arg)
    return out


def sinusoidal_embed_tensor(value: ad.Tensor, temperature: float, c_e: int) -> ad.Tensor:
    freq = _frequencies(c_e)
    arg = ad.reshape(value, value.shape + (1,)) * (freq / temperature)
    pair = ad.stack([ad.sin(arg), ad.cos(arg)], axis=-1)
    return ad.reshape(pair, value.shape + (c_e,))


def triplet_angle(p_i, p_j, p_x) -> float:
    """Angle between ``p_x - p_i`` and ``p_j - p_i`` in [0, pi].

    A zero-length edge gives 0.
    """
    a = np.asarray(p_x, dtype=np.float64) - np.asarray(p_i, dtype=np.float64)
    b = np.asarray(p_j, dtype=np.float64) - np.asarray(p_i, dtype=np.float64)
    na2, nb2 = float(a @ a), float(b @ b)
    if na2 == 0.0 or nb2 == 0.0:
        return 0.0
    cos = float(a @ b) / np.sqrt(na2 * nb2)
    return float(np.arccos(min(1.0, max(-1.0, cos))))


def _cross(a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return ad.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


@dataclass
class Geometry:
    """Raw (unprojected) sinusoidal geometry of each query's kNN neighbourhood.

    Attributes:
        neighbors: (M, k) indices into the key points.
        dist_emb: (M, k, C_e) distance encodings, entry ``[i, j]``.
        angle_emb: (M, k, k, C_e) angle encodings, entry ``[i, j, x]``.
    """

    neighbors: np.ndarray
    dist_emb: ad.Tensor
    angle_emb: ad.Tensor

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]


def build_geometry(query_pts, key_pts, k: int, c_e: int,
                   sigma_d: float = SIGMA_D, sigma_a: float = SIGMA_A) -> Geometry:
    """Distance and triplet-angle encodings for kNN(query -> key).

    Differentiable with respect to both point sets; the neighbour indices are
    constants. Angles use ``atan2(|a x b|, a . b)``, which is well behaved at 0
    and pi where ``arccos`` has unbounded slope.
    """
    query_pts = ad.as_tensor(query_pts)
    key_pts = ad.as_tensor(key_pts)
    k = min(k, key_pts.shape[0])
    nbr = knn(query_pts.data, key_pts.data, k)
    m = query_pts.shape[0]
    rel = ad.gather(key_pts, nbr) - ad.reshape(query_pts, (m, 1, 3))
    dist = ad.norm(rel, axis=-1)
    a = ad.reshape(rel, (m, 1, k, 3))  # neighbour x
    b = ad.reshape(rel, (m, k, 1, 3))  # neighbour j
    cross = ad.norm(_cross(ad.broadcast_to(a, (m, k, k, 3)), ad.broadcast_to(b, (m, k, k, 3))), axis=-1)
    dot = ad.sum_(a * b, axis=-1)
    angle = ad.atan2(cross, dot)
    return Geometry(nbr, sinusoidal_embed_tensor(dist, sigma_d, c_e),
                    sinusoidal_embed_tensor(angle, sigma_a, c_e))


def project_geometry(geom: Geometry, w_d: ad.Tensor, w_a: ad.Tensor) -> ad.Tensor:
    """r_ij = rD_ij W^D + max_x (rA_ijx W^A), max taken channel-wise over x."""
    angular = ad.max_reduce(geom.angle_emb @ w_a, axis=2)[0]
    return geom.dist_emb @ w_d + angular


@dataclass
class SparseGeoEmbedding:
    values: np.ndarray
    neighbor_index: np.ndarray

    @property
    def c_e(self) -> int:
        return self.values.shape[-1]


def sparse_geo_embedding(pc, k: int, w_d, w_a, sigma_d: float = SIGMA_D,
                         sigma_a: float = SIGMA_A) -> SparseGeoEmbedding:
    """SGE of a point cloud restricted to each point's k nearest neighbours."""
    w_d, w_a = ad.as_tensor(w_d), ad.as_tensor(w_a)
    pts = np.asarray(pc.data if isinstance(pc, ad.Tensor) else pc, dtype=np.float64)
    if k > len(pts):
        raise ValueError(f"sparse_geo_embedding: k={k} exceeds point count {len(pts)}")
    with ad.no_grad():
        geom = build_geometry(pts, pts, k, w_d.shape[0], sigma_d, sigma_a)
        values = project_geometry(geom, w_d, w_a)
    return SparseGeoEmbedding(values.data, geom.neighbors)


def dense_geo_embedding(pc, k: int, w_d, w_a, sigma_d: float = SIGMA_D,
                        sigma_a: float = SIGMA_A) -> np.ndarray:
    """Reference (M, M, C_e) embedding over all pairs, written as plain loops.

    The angular candidates ``x`` of point ``i`` are its k nearest neighbours.
    """
    pts = np.asarray(pc, dtype=np.float64)
    w_d = np.asarray(w_d.data if isinstance(w_d, ad.Tensor) else w_d)
    w_a = np.asarray(w_a.data if isinstance(w_a, ad.Tensor) else w_a)
    c_e = w_d.shape[0]
    m = len(pts)
    nbr = knn(pts, pts, k)
    out = np.empty((m, m, w_d.shape[1]))
    for i in range(m):
        for j in range(m):
            rho = np.linalg.norm(pts[i] - pts[j])
            r = sinusoidal_embed(rho, sigma_d, c_e) @ w_d
            best = None
            for x in nbr[i]:
                alpha = triplet_angle(pts[i], pts[j], pts[x])
                cand = sinusoidal_embed(alpha, sigma_a, c_e) @ w_a
                best = cand if best is None else np.maximum(best, cand)
            out[i, j] = r + best
    return out


class GEAttention(Module):
    """Local multi-head attention with geometric keys/values and an EdgeConv residual.

    ``head = softmax(Q (K_f + K_r)^T / sqrt(d_h)) (V_f + V_r)`` over each query's
    k neighbours among the key points; the output projection of the heads is
    added to the input together with an EdgeConv refinement of the
    (normalized) input.
    """

    def __init__(self, dim: int, heads: int, c_e: int, k: int, rng: np.random.Generator,
                 use_vr: bool = True):
        if dim % heads:
            raise ValueError(f"attention width {dim} not divisible by {heads} heads")
        self.dim, self.heads, self.c_e, self.k = dim, heads, c_e, k
        self.norm = LayerNorm(dim)
        self.q = Linear(dim, dim, rng, bias=False)
        self.k_proj = Linear(dim, dim, rng, bias=False)
        self.v = Linear(dim, dim, rng, bias=False)
        self.out = Linear(dim, dim, rng)
        self.w_d = param(rng, (c_e, c_e), c_e)
        self.w_a = param(rng, (c_e, c_e), c_e)
        self.w_kr = param(rng, (c_e, dim), c_e)
        self.w_vr = param(rng, (c_e, dim), c_e) if use_vr else None
        self.edge = EdgeConv(dim, dim, k, rng)
        self.last_attention: np.ndarray | None = None

    def __call__(self, x: ad.Tensor, points, geom: Geometry,
                 memory: ad.Tensor | None = None) -> ad.Tensor:
        m, c = x.shape
        if c != self.dim:
            raise ad.ShapeError(f"GEAttention: input width {c} != {self.dim}")
        pts = points.data if isinstance(points, ad.Tensor) else np.asarray(points)
        if len(pts) != m or geom.neighbors.shape[0] != m:
            raise ad.ShapeError(f"GEAttention: {m} features vs {len(pts)} points vs "
                                f"{geom.neighbors.shape[0]} neighbourhoods")
        h = self.norm(x)
        src = h if memory is None else memory
        k = geom.k
        hd = c // self.heads
        q = ad.reshape(self.q(h), (m, self.heads, hd))
        rel = project_geometry(geom, self.w_d, self.w_a)
        keys = ad.gather(self.k_proj(src), geom.neighbors) + rel @ self.w_kr
        vals = ad.gather(self.v(src), geom.neighbors)
        if self.w_vr is not None:
            vals = vals + rel @ self.w_vr
        keys = ad.reshape(keys, (m, k, self.heads, hd))
        vals = ad.reshape(vals, (m, k, self.heads, hd))
        logits = ad.einsum("mhd,mkhd->mhk", q, keys) * (1.0 / np.sqrt(hd))
        attn = ad.softmax(logits, axis=-1)
        self.last_attention = attn.data
        heads = ad.reshape(ad.einsum("mhk,mkhd->mhd", attn, vals), (m, c))
        return x + self.out(heads) + self.edge(h, pts)


def ge_attention(x_in: ad.Tensor, pc, weights: GEAttention,
                 cross_source: tuple[ad.Tensor, object] | None = None) -> ad.Tensor:
    """One GE attention step; ``cross_source = (features, points)`` switches to cross-attention."""
    if cross_source is None:
        geom = build_geometry(pc, pc, weights.k, weights.c_e)
        return weights(x_in, pc, geom)
    feats, key_pts = cross_source
    geom = build_geometry(pc, key_pts, weights.k, weights.c_e)
    return weights(x_in, pc, geom, memory=feats)
