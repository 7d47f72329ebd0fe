"""Triangle meshes: OBJ subset I/O, primitives, ray casting and surface queries.

All primitives are Y-up and rest on the plane y = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

RAY_EPS = 1e-9
PARALLEL_EPS = 1e-12
AREA_EPS = 1e-14


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray     # (T, 3) int64

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"TriMesh: vertices must be (V, 3), got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("TriMesh: non-finite vertex coordinates")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError(f"TriMesh: face index out of range [0, {len(v)})")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def triangles(self) -> np.ndarray:
        """(T, 3, 3) corner coordinates."""
        return self.vertices[self.faces]

    def areas(self) -> np.ndarray:
        t = self.triangles
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def without_degenerate(self) -> "TriMesh":
        """Drop zero-area triangles (repeated or collinear corners)."""
        keep = self.areas() > AREA_EPS
        return TriMesh(self.vertices, self.faces[keep])

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def center(self) -> np.ndarray:
        lo, hi = self.bounds()
        return 0.5 * (lo + hi)

    def radius(self) -> float:
        """Radius of the bounding sphere around the box center."""
        return float(np.linalg.norm(self.vertices - self.center(), axis=1).max())

    def transformed(self, rotation=None, translation=None, scale: float = 1.0) -> "TriMesh":
        v = self.vertices * scale
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=np.float64).T
        if translation is not None:
            v = v + np.asarray(translation, dtype=np.float64)
        return TriMesh(v, self.faces)


def normalize_mesh(mesh: TriMesh) -> TriMesh:
    """Center on the bounding-box center and scale to a unit bounding sphere."""
    r = mesh.radius()
    return mesh.transformed(translation=-mesh.center() / (r if r > 0 else 1.0),
                            scale=1.0 / r if r > 0 else 1.0)


def combine(meshes) -> tuple[TriMesh, np.ndarray]:
    """Concatenate meshes; also return the source mesh id of each triangle."""
    verts, faces, ids, base = [], [], [], 0
    for i, m in enumerate(meshes):
        verts.append(m.vertices)
        faces.append(m.faces + base)
        ids.append(np.full(len(m.faces), i, dtype=np.int64))
        base += len(m.vertices)
    if not verts:
        return TriMesh(np.empty((0, 3)), np.empty((0, 3), np.int64)), np.empty(0, np.int64)
    return TriMesh(np.concatenate(verts), np.concatenate(faces)), np.concatenate(ids)


def rotation_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


# -- OBJ subset ----------------------------------------------------------------

class ObjError(ValueError):
    pass


def parse_obj(text: str, source: str = "<string>") -> TriMesh:
    """Read ``v`` and ``f`` records; polygons are fan-triangulated.

    Face corners may use ``v``, ``v/vt``, ``v//vn`` or ``v/vt/vn`` forms and
    negative (relative) indices. Other record types are ignored.
    """
    verts, faces = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if tag == "v":
            if len(rest) < 3:
                raise ObjError(f"{source}:{lineno}: vertex needs 3 coordinates, got {len(rest)}")
            try:
                verts.append([float(t) for t in rest[:3]])
            except ValueError as exc:
                raise ObjError(f"{source}:{lineno}: bad vertex coordinate ({exc})") from None
        elif tag == "f":
            if len(rest) < 3:
                raise ObjError(f"{source}:{lineno}: face needs at least 3 corners, got {len(rest)}")
            idx = []
            for tok in rest:
                try:
                    i = int(tok.split("/", 1)[0])
                except ValueError:
                    raise ObjError(f"{source}:{lineno}: bad face index {tok!r}") from None
                if i == 0:
                    raise ObjError(f"{source}:{lineno}: face index 0 is invalid (OBJ is 1-based)")
                j = i - 1 if i > 0 else len(verts) + i
                if not 0 <= j < len(verts):
                    raise ObjError(f"{source}:{lineno}: face index {i} out of range for {len(verts)} vertices")
                idx.append(j)
            faces.extend([idx[0], idx[t], idx[t + 1]] for t in range(1, len(idx) - 1))
    if not faces:
        raise ObjError(f"{source}: no faces found")
    return TriMesh(np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64)).without_degenerate()


def load_obj(path) -> TriMesh:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8", errors="replace")
    except OSError as exc:
        raise ObjError(f"{path}: cannot read ({exc.strerror})") from None
    return parse_obj(text, str(path))


def save_obj(mesh: TriMesh, path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- primitives ----------------------------------------------------------------

def box(size=(1.0, 1.0, 1.0), center_xz=(0.0, 0.0), base: float = 0.0) -> TriMesh:
    sx, sy, sz = (0.5 * s for s in size)
    cx, cz = center_xz
    v = np.array([[x, y, z] for x in (-sx, sx) for y in (0.0, 2 * sy) for z in (-sz, sz)])
    v += [cx, base, cz]
    # corner index = 4*ix + 2*iy + iz; outward-wound quads
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = [[a, b, c] for a, b, c, d in quads] + [[a, c, d] for a, b, c, d in quads]
    return TriMesh(v, np.array(faces))


def cylinder(radius: float = 0.5, height: float = 1.0, segments: int = 24, axis: str = "y",
             center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Closed cylinder along ``axis``; for ``y`` it stands on ``center``, otherwise it is centered."""
    ang = 2 * math.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    lo, hi = (0.0, height) if axis == "y" else (-0.5 * height, 0.5 * height)
    rows = []
    for h in (lo, hi):
        rows.append(np.column_stack([ring[:, 0], np.full(segments, h), ring[:, 1]]))
    v = np.concatenate(rows + [[[0.0, lo, 0.0], [0.0, hi, 0.0]]])
    n = segments
    faces = []
    for i in range(n):
        j = (i + 1) % n
        faces += [[i, n + i, n + j], [i, n + j, j], [2 * n, i, j], [2 * n + 1, n + j, n + i]]
    if axis == "x":
        v = v[:, [1, 0, 2]]
    elif axis == "z":
        v = v[:, [0, 2, 1]]
    elif axis != "y":
        raise ValueError(f"cylinder: axis must be x, y or z, got {axis!r}")
    return TriMesh(v + np.asarray(center, dtype=np.float64), np.array(faces))


def ellipsoid(radii=(0.5, 0.5, 0.5), n_lat: int = 12, n_lon: int = 24, grounded: bool = True) -> TriMesh:
    rx, ry, rz = radii
    theta = math.pi * np.arange(1, n_lat) / n_lat
    phi = 2 * math.pi * np.arange(n_lon) / n_lon
    t, p = np.meshgrid(theta, phi, indexing="ij")
    body = np.stack([np.sin(t) * np.cos(p), np.cos(t), np.sin(t) * np.sin(p)], axis=-1).reshape(-1, 3)
    v = np.concatenate([[[0.0, 1.0, 0.0]], body, [[0.0, -1.0, 0.0]]]) * [rx, ry, rz]
    last = len(v) - 1
    faces = []
    for j in range(n_lon):
        k = (j + 1) % n_lon
        faces.append([0, 1 + k, 1 + j])
        base = 1 + (n_lat - 2) * n_lon
        faces.append([last, base + j, base + k])
    for i in range(n_lat - 2):
        for j in range(n_lon):
            k = (j + 1) % n_lon
            a, b = 1 + i * n_lon + j, 1 + i * n_lon + k
            c, d = a + n_lon, b + n_lon
            faces += [[a, b, d], [a, d, c]]
    if grounded:
        v = v + [0.0, ry, 0.0]
    return TriMesh(v, np.array(faces))


def toy_car(length: float = 4.0, width: float = 1.8, height: float = 1.4) -> TriMesh:
    """Boxy car stand-in: body, cabin and four wheels; x is the driving axis."""
    wheel_r = 0.18 * height
    body_h = 0.45 * height
    parts = [
        box((length, body_h, width), base=wheel_r),
        box((0.5 * length, height - body_h - wheel_r, 0.9 * width), center_xz=(-0.05 * length, 0.0),
            base=wheel_r + body_h),
    ]
    for sx in (-0.32, 0.32):
        for sz in (-0.5, 0.5):
            parts.append(cylinder(wheel_r, 0.2 * width, 16, axis="z",
                                  center=(sx * length, wheel_r, sz * width)))
    return combine(parts)[0]


def occluder_library() -> dict[str, TriMesh]:
    """Primitive stand-ins for street clutter, in metres, all grounded."""
    sign = combine([cylinder(0.04, 2.0, 12), box((0.6, 0.6, 0.05), base=2.0)])[0]
    return {
        "post": cylinder(0.12, 1.2, 16),
        "bin": box((0.6, 1.0, 0.6)),
        "pedestrian": ellipsoid((0.25, 0.85, 0.2)),
        "sign": sign,
        "hedge": box((1.5, 0.9, 0.4)),
    }


# -- sampling ------------------------------------------------------------------

def fibonacci_dirs(n: int) -> np.ndarray:
    """Fibonacci lattice: z_i = 1 - (2i+1)/n, longitude advancing by the golden angle."""
    if n < 1:
        raise ValueError(f"fibonacci_dirs: n must be >= 1, got {n}")
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    d = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def sample_surface(mesh: TriMesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted uniform samples on the surface."""
    areas = mesh.areas()
    if areas.sum() <= 0:
        raise ValueError("sample_surface: mesh has zero area")
    tri = rng.choice(len(areas), size=n, p=areas / areas.sum())
    u, v = rng.uniform(size=(2, n))
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    t = mesh.triangles[tri]
    return t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])


# -- ray casting ----------------------------------------------------------------

@dataclass(frozen=True)
class Hit:
    t: float
    point: np.ndarray
    mesh_id: int


def raycast_many(scene, origins, dirs, chunk: int = 1 << 22) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hits of many rays against every triangle of ``scene``.

    ``scene`` is a list of meshes. Returns ``t`` (inf on a miss) and the mesh
    id (-1 on a miss). Among equal ``t`` the lower triangle index wins.
    """
    mesh, tri_ids = combine(scene)
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), dirs.shape)
    n = len(dirs)
    best_t = np.full(n, np.inf)
    best_id = np.full(n, -1, dtype=np.int64)
    if len(mesh.faces) == 0 or n == 0:
        return best_t, best_id
    tri = mesh.triangles
    v0, e1, e2 = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    rows = max(1, chunk // len(tri))
    for s in range(0, n, rows):
        d = dirs[s:s + rows, None, :]
        o = origins[s:s + rows, None, :]
        p = np.cross(d, e2)
        det = np.sum(e1 * p, axis=-1)
        ok = np.abs(det) > PARALLEL_EPS
        inv = np.divide(1.0, det, out=np.zeros_like(det), where=ok)
        tv = o - v0
        u = np.sum(tv * p, axis=-1) * inv
        q = np.cross(tv, e1)
        v = np.sum(d * q, axis=-1) * inv
        t = np.sum(e2 * q, axis=-1) * inv
        ok &= (u >= 0) & (v >= 0) & (u + v <= 1) & (t > RAY_EPS)
        t = np.where(ok, t, np.inf)
        j = np.argmin(t, axis=1)
        tj = t[np.arange(len(t)), j]
        hit = np.isfinite(tj)
        best_t[s:s + rows] = tj
        best_id[s:s + rows] = np.where(hit, tri_ids[j], -1)
    return best_t, best_id


def raycast(scene, origin, direction) -> Hit | None:
    """Nearest Möller-Trumbore hit of one ray, or None."""
    d = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError(f"raycast: direction must be unit length, |d| = {np.linalg.norm(d)}")
    o = np.asarray(origin, dtype=np.float64)
    t, ids = raycast_many(scene, o, d[None])
    if not np.isfinite(t[0]):
        return None
    return Hit(float(t[0]), o + t[0] * d, int(ids[0]))


def _closest_on_triangles(p: np.ndarray, a, b, c) -> np.ndarray:
    """Closest points on triangles (T,) to one point, by Voronoi-region tests."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.sum(ab * ap, axis=1)
    d2 = np.sum(ac * ap, axis=1)
    bp = p - b
    d3 = np.sum(ab * bp, axis=1)
    d4 = np.sum(ac * bp, axis=1)
    cp = p - c
    d5 = np.sum(ab * cp, axis=1)
    d6 = np.sum(ac * cp, axis=1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(a)
    done = np.zeros(len(a), dtype=bool)

    def put(mask, value):
        nonlocal done
        m = mask & ~done
        out[m] = value[m] if value.ndim == 2 else value
        done |= m

    put((d1 <= 0) & (d2 <= 0), a)
    put((d3 >= 0) & (d4 <= d3), b)
    with np.errstate(divide="ignore", invalid="ignore"):
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + (d1 / (d1 - d3))[:, None] * ab)
        put((d6 >= 0) & (d5 <= d6), c)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + (d2 / (d2 - d6))[:, None] * ac)
        put((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
            b + ((d4 - d3) / ((d4 - d3) + (d5 - d6)))[:, None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        put(np.ones(len(a), dtype=bool), a + (vb * denom)[:, None] * ab + (vc * denom)[:, None] * ac)
    return out


def point_mesh_distance(points, mesh: TriMesh) -> np.ndarray:
    """Exact unsigned distance from each point to the nearest triangle."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    tri = mesh.triangles
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    out = np.empty(len(pts))
    for i, p in enumerate(pts):
        q = _closest_on_triangles(p, a, b, c)
        out[i] = np.sqrt(np.min(np.sum((q - p) ** 2, axis=1)))
    return out
