"""Geometric kernels and evaluation metrics on (N, 3) point arrays.

All functions here take plain numpy arrays except ``chamfer_l1_tensor`` and
``edgeconv``, which participate in the autodiff graph.
"""

from __future__ import annotations

from typing import Literal

import numpy as np

from . import autodiff as ad

# rows per block when materializing pairwise distances
_BLOCK = 1024


def _as_points(pc, name: str = "points") -> np.ndarray:
    pts = np.asarray(pc.data if isinstance(pc, ad.Tensor) else pc, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name}: expected an (N, 3) array, got shape {pts.shape}")
    if len(pts) == 0:
        raise ValueError(f"{name}: empty point set")
    return pts


def normalize_unit_sphere(pc) -> tuple[np.ndarray, np.ndarray, float]:
    """Center at the centroid and scale so the farthest point has norm 1.

    Returns the normalized points with the ``center`` and ``scale`` that undo
    it: ``original = normalized * scale + center``. Coincident points give
    scale 1.
    """
    pts = _as_points(pc)
    center = pts.mean(axis=0)
    shifted = pts - center
    scale = float(np.sqrt((shifted ** 2).sum(axis=1)).max())
    if scale == 0.0:
        scale = 1.0
    return shifted / scale, center, scale


def pairwise_sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distances from every row of ``a`` to every row of ``b``.

    Computed from explicit differences, so equal points give exactly zero.
    """
    out = np.empty((len(a), len(b)))
    for s in range(0, len(a), _BLOCK):
        d = a[s:s + _BLOCK, None, :] - b[None, :, :]
        out[s:s + _BLOCK] = np.einsum("ijk,ijk->ij", d, d)
    return out


def fps(pc, m: int, seed_index: int = 0) -> np.ndarray:
    """Greedy farthest point sampling.

    The first pick is ``seed_index``; each next pick maximizes the distance
    to the already selected set, ties going to the lowest index.
    """
    pts = _as_points(pc)
    n = len(pts)
    if not 1 <= m <= n:
        raise ValueError(f"fps: need 1 <= m <= N, got m={m}, N={n}")
    if not 0 <= seed_index < n:
        raise ValueError(f"fps: seed_index {seed_index} out of range for N={n}")
    idx = np.empty(m, dtype=np.int64)
    idx[0] = seed_index
    d = pts - pts[seed_index]
    mind = np.einsum("ij,ij->i", d, d)
    for t in range(1, m):
        nxt = int(np.argmax(mind))
        idx[t] = nxt
        d = pts - pts[nxt]
        np.minimum(mind, np.einsum("ij,ij->i", d, d), out=mind)
    return idx


def knn(query, reference, k: int) -> np.ndarray:
    """Exact k nearest reference indices for each query point.

    Rows are sorted by ascending distance; equal distances keep the lower
    reference index first.
    """
    q = _as_points(query, "query")
    r = _as_points(reference, "reference")
    if not 1 <= k <= len(r):
        raise ValueError(f"knn: need 1 <= k <= N_ref, got k={k}, N_ref={len(r)}")
    out = np.empty((len(q), k), dtype=np.int64)
    for s in range(0, len(q), _BLOCK):
        d = pairwise_sqdist(q[s:s + _BLOCK], r)
        if k < len(r) // 4:
            cand = np.argpartition(d, k - 1, axis=1)[:, :k]
            cd = np.take_along_axis(d, cand, axis=1)
            order = np.lexsort((cand, cd), axis=1)
            out[s:s + len(d)] = np.take_along_axis(cand, order, axis=1)
            # rows with ties at the k-th distance may have dropped a lower index
            kth = cd.max(axis=1)
            tied = np.flatnonzero((d <= kth[:, None]).sum(axis=1) > k)
            for row in tied:
                out[s + row] = np.argsort(d[row], kind="stable")[:k]
        else:
            out[s:s + len(d)] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def nearest_distances(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean distance from each row of ``a`` to its nearest row of ``b`` and the index."""
    dist = np.empty(len(a))
    idx = np.empty(len(a), dtype=np.int64)
    for s in range(0, len(a), _BLOCK):
        d = pairwise_sqdist(a[s:s + _BLOCK], b)
        j = np.argmin(d, axis=1)
        idx[s:s + len(d)] = j
        dist[s:s + len(d)] = np.sqrt(d[np.arange(len(d)), j])
    return dist, idx


def chamfer(P, G, variant: Literal["L1", "L2"] = "L2") -> float:
    """Symmetric Chamfer distance without a halving factor.

    ``L1`` averages plain Euclidean nearest-neighbour distances in both
    directions; ``L2`` averages squared distances.
    """
    p = _as_points(P, "P")
    g = _as_points(G, "G")
    d_pg, _ = nearest_distances(p, g)
    d_gp, _ = nearest_distances(g, p)
    if variant == "L1":
        return float(d_pg.mean() + d_gp.mean())
    if variant == "L2":
        return float((d_pg ** 2).mean() + (d_gp ** 2).mean())
    raise ValueError(f"chamfer: unknown variant {variant!r}")


def precision_recall(P, G, d: float) -> tuple[float, float]:
    if not d > 0:
        raise ValueError(f"fscore: threshold must be positive, got {d}")
    p = _as_points(P, "P")
    g = _as_points(G, "G")
    d_pg, _ = nearest_distances(p, g)
    d_gp, _ = nearest_distances(g, p)
    return float((d_pg < d).mean()), float((d_gp < d).mean())


def fscore(P, G, d: float = 0.01) -> float:
    """F-score at distance threshold ``d`` (strict ``<``); 0 when P + R = 0."""
    prec, rec = precision_recall(P, G, d)
    if prec + rec == 0:
        return 0.0
    return 2.0 * prec * rec / (prec + rec)


def chamfer_l1_tensor(P: ad.Tensor, G: np.ndarray) -> ad.Tensor:
    """Differentiable L1 Chamfer distance of predicted points against a fixed target.

    Nearest-neighbour assignments are recomputed from values and treated as
    constants; gradients flow through the distances.
    """
    g = _as_points(G, "G")
    p = _as_points(P.data, "P")
    _, nn_pg = nearest_distances(p, g)
    _, nn_gp = nearest_distances(g, p)
    fwd = ad.norm(P - g[nn_pg], axis=-1).mean()
    bwd = ad.norm(ad.gather(P, nn_gp) - g, axis=-1).mean()
    return fwd + bwd


def edgeconv(features: ad.Tensor, pc, downsample_idx, k: int, weights) -> ad.Tensor:
    """EdgeConv evaluated at a subset of points.

    For each retained point ``i`` and each of its ``k`` nearest neighbours
    ``j`` among all points, ``weights`` (a callable layer) maps
    ``[f_i ; f_j - f_i]`` to the output width; the result is max-pooled over
    ``j``.

    Args:
        features: (N, C) point features.
        pc: (N, 3) coordinates row-aligned with ``features``.
        downsample_idx: indices of the M retained points.
        k: neighbourhood size.
        weights: callable mapping (M, k, 2C) tensors to (M, k, C').

    Returns:
        (M, C') tensor.
    """
    pts = _as_points(pc)
    features = ad.as_tensor(features)
    if features.shape[0] != len(pts):
        raise ad.ShapeError(f"edgeconv: features {features.shape} not aligned with points {pts.shape}")
    if k > len(pts):
        raise ValueError(f"edgeconv: k={k} exceeds point count {len(pts)}")
    downsample_idx = np.asarray(downsample_idx, dtype=np.int64)
    nbr = knn(pts[downsample_idx], pts, k)
    center = ad.gather(features, downsample_idx)
    c = features.shape[1]
    center_k = ad.broadcast_to(ad.reshape(center, (len(downsample_idx), 1, c)),
                               (len(downsample_idx), k, c))
    edge = ad.gather(features, nbr) - center_k
    h = weights(ad.concat([center_k, edge], axis=-1))
    return ad.max_reduce(h, axis=1)[0]
