"""Chamfer, point-to-mesh and exact earth mover's distances."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .geometry import Mesh, PointCloud

REPORT_SCALE = 1e4
EMD_MAX_POINTS = 4096


class MetricError(ValueError):
    pass


def _points(x) -> np.ndarray:
    arr = x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise MetricError(f"expected (n, 3) positions, got {arr.shape}")
    if arr.shape[0] == 0:
        raise MetricError("empty point set")
    return arr


def chamfer(a, b) -> float:
    """Mean squared nearest-neighbour distance, averaged over both directions."""
    a, b = _points(a), _points(b)
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float((np.mean(d_ab ** 2) + np.mean(d_ba ** 2)) / 2.0)


def closest_points_on_triangles(p, a, b, c) -> np.ndarray:
    """Closest point on triangle (a, b, c) to p; all arrays broadcast over leading axes.

    Region classification follows Ericson, Real-Time Collision Detection 5.1.5.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.sum(ab * ap, axis=-1)
    d2 = np.sum(ac * ap, axis=-1)
    bp = p - b
    d3 = np.sum(ab * bp, axis=-1)
    d4 = np.sum(ac * bp, axis=-1)
    cp = p - c
    d5 = np.sum(ab * cp, axis=-1)
    d6 = np.sum(ac * cp, axis=-1)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom
        result = a + v_in[..., None] * ab + w_in[..., None] * ac

        # edge bc
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        result = np.where(m[..., None], b + w_bc[..., None] * (c - b), result)
        # edge ac
        w_ac = d2 / (d2 - d6)
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        result = np.where(m[..., None], a + w_ac[..., None] * ac, result)
        # edge ab
        v_ab = d1 / (d1 - d3)
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        result = np.where(m[..., None], a + v_ab[..., None] * ab, result)
    # vertices, checked last so they take precedence
    result = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, result)
    result = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, result)
    result = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, result)
    return result


def point_triangle_distance(p, tri) -> float:
    tri = np.asarray(tri, dtype=np.float64).reshape(3, 3)
    if np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0])) <= 0:
        raise MetricError("degenerate triangle")
    p = np.asarray(p, dtype=np.float64)
    q = closest_points_on_triangles(p, tri[0], tri[1], tri[2])
    return float(np.linalg.norm(p - q))


def point_mesh_sq_distances(points, mesh: Mesh, chunk: int = 64) -> np.ndarray:
    """Squared distance from each point to its nearest mesh triangle."""
    pts = _points(points)
    if len(mesh.triangles) == 0:
        raise MetricError("mesh has no triangles")
    a, b, c = mesh.corners()
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk, None, :]
        q = closest_points_on_triangles(p, a[None], b[None], c[None])
        out[s:s + chunk] = np.min(np.sum((p - q) ** 2, axis=-1), axis=1)
    return out


def point2mesh(points, mesh: Mesh) -> float:
    """Mean over points of the squared distance to the mesh surface."""
    return float(np.mean(point_mesh_sq_distances(points, mesh)))


def emd_exact(a, b) -> tuple[float, np.ndarray]:
    """Minimum total (unsquared) distance over bijections a -> b.

    Returns the cost and ``perm`` with a[i] matched to b[perm[i]].
    """
    a, b = _points(a), _points(b)
    if len(a) != len(b):
        raise MetricError(f"emd_exact: size mismatch {len(a)} vs {len(b)}")
    if len(a) > EMD_MAX_POINTS:
        raise MetricError(f"emd_exact: {len(a)} points exceeds the {EMD_MAX_POINTS}-point limit")
    cost = cdist(a, b)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(a), dtype=np.int64)
    perm[rows] = cols
    return float(cost[rows, cols].sum()), perm


@dataclass(frozen=True)
class MetricReport:
    """Raw metric values; ``scaled()`` applies the x1e4 reporting convention to CD and P2M."""

    cd: float
    p2m: Optional[float] = None
    emd: Optional[float] = None

    def __post_init__(self):
        for v in (self.cd, self.p2m, self.emd):
            if v is not None and not (np.isfinite(v) and v >= 0):
                raise MetricError(f"invalid metric value {v}")

    def scaled(self) -> dict:
        return {
            "cd_x1e4": self.cd * REPORT_SCALE,
            "p2m_x1e4": None if self.p2m is None else self.p2m * REPORT_SCALE,
            "emd": self.emd,
        }


def evaluate(pred, clean, mesh: Optional[Mesh] = None, with_emd: bool = True) -> MetricReport:
    pred, clean = _points(pred), _points(clean)
    p2m = point2mesh(pred, mesh) if mesh is not None else None
    emd = None
    if with_emd and len(pred) == len(clean) and len(pred) <= EMD_MAX_POINTS:
        emd = emd_exact(pred, clean)[0]
    return MetricReport(chamfer(pred, clean), p2m, emd)
