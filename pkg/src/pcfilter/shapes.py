"""Analytic shapes with area-uniform samples and approximating triangle meshes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Mesh, PointCloud

SHAPE_KINDS = ("sphere", "torus", "cube", "plane")


@dataclass(frozen=True)
class ShapeSpec:
    kind: str = "sphere"
    resolution: int = 5000
    radius: float = 1.0          # sphere
    major_radius: float = 1.0    # torus, center to tube center
    minor_radius: float = 0.3    # torus tube
    edge: float = 1.0            # cube / plane side length
    seed: int = 0
    mesh_detail: int = 0         # 0 picks a per-shape default

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}; expected one of {SHAPE_KINDS}")
        if self.resolution < 1:
            raise ValueError("resolution must be >= 1")
        for name in ("radius", "major_radius", "minor_radius", "edge"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.kind == "torus" and self.minor_radius >= self.major_radius:
            raise ValueError("torus minor radius must be smaller than the major radius")


def generate(spec: ShapeSpec) -> tuple[PointCloud, Mesh]:
    rng = np.random.default_rng(spec.seed)
    n = spec.resolution
    if spec.kind == "sphere":
        return PointCloud(_sample_sphere(rng, n) * spec.radius), icosphere(spec.mesh_detail or 4, spec.radius)
    if spec.kind == "torus":
        pts = _sample_torus(rng, n, spec.major_radius, spec.minor_radius)
        detail = spec.mesh_detail or 32
        return PointCloud(pts), torus_mesh(spec.major_radius, spec.minor_radius, 2 * detail, detail)
    if spec.kind == "cube":
        return PointCloud(_sample_cube(rng, n, spec.edge)), cube_mesh(spec.edge, spec.mesh_detail or 4)
    return PointCloud(_sample_plane(rng, n, spec.edge)), plane_mesh(spec.edge, spec.mesh_detail or 4)


def _sample_sphere(rng, n):
    x = rng.standard_normal((n, 3))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def torus_point(u, v, major, minor):
    ring = major + minor * np.cos(v)
    return np.stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)], axis=-1)


def _sample_torus(rng, n, major, minor):
    # Area element is proportional to (major + minor cos v); accept/reject on it.
    out, have = [], 0
    while have < n:
        m = 2 * (n - have) + 16
        u = rng.uniform(0.0, 2 * np.pi, m)
        v = rng.uniform(0.0, 2 * np.pi, m)
        keep = rng.uniform(0.0, 1.0, m) < (major + minor * np.cos(v)) / (major + minor)
        out.append(torus_point(u[keep], v[keep], major, minor))
        have += int(keep.sum())
    return np.concatenate(out)[:n]


_CUBE_FACES = [  # (normal axis, sign)
    (0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1),
]


def _sample_cube(rng, n, edge):
    face = rng.integers(0, 6, n)
    uv = rng.uniform(-0.5, 0.5, (n, 2)) * edge
    pts = np.empty((n, 3))
    for f, (axis, sign) in enumerate(_CUBE_FACES):
        sel = face == f
        others = [a for a in range(3) if a != axis]
        pts[sel, axis] = sign * edge / 2
        pts[np.ix_(sel, others)] = uv[sel]
    return pts


def _sample_plane(rng, n, edge):
    uv = rng.uniform(-0.5, 0.5, (n, 2)) * edge
    return np.column_stack([uv, np.zeros(n)])


def icosphere(subdivisions: int, radius: float = 1.0) -> Mesh:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return Mesh(np.array(verts) * radius, np.array(faces))


def torus_mesh(major, minor, n_u, n_v) -> Mesh:
    u = np.arange(n_u) * 2 * np.pi / n_u
    v = np.arange(n_v) * 2 * np.pi / n_v
    uu, vv = np.meshgrid(u, v, indexing="ij")
    verts = torus_point(uu.ravel(), vv.ravel(), major, minor)
    faces = []
    for i in range(n_u):
        for j in range(n_v):
            a = i * n_v + j
            b = ((i + 1) % n_u) * n_v + j
            c = ((i + 1) % n_u) * n_v + (j + 1) % n_v
            d = i * n_v + (j + 1) % n_v
            faces += [(a, b, c), (a, c, d)]
    return Mesh(verts, np.array(faces))


def _grid_square(g):
    """Vertices (in [-0.5, 0.5]^2) and triangles of a g x g grid."""
    s = np.linspace(-0.5, 0.5, g + 1)
    uu, vv = np.meshgrid(s, s, indexing="ij")
    uv = np.column_stack([uu.ravel(), vv.ravel()])
    tris = []
    for i in range(g):
        for j in range(g):
            a, b = i * (g + 1) + j, (i + 1) * (g + 1) + j
            tris += [(a, b, b + 1), (a, b + 1, a + 1)]
    return uv, np.array(tris)


def plane_mesh(edge, g) -> Mesh:
    uv, tris = _grid_square(g)
    return Mesh(np.column_stack([uv * edge, np.zeros(len(uv))]), tris)


def cube_mesh(edge, g) -> Mesh:
    uv, tris = _grid_square(g)
    verts, faces = [], []
    for axis, sign in _CUBE_FACES:
        others = [a for a in range(3) if a != axis]
        v = np.empty((len(uv), 3))
        v[:, axis] = sign * edge / 2
        v[:, others] = uv * edge
        faces.append(tris + sum(len(x) for x in verts))
        verts.append(v)
    return Mesh(np.concatenate(verts), np.concatenate(faces))
