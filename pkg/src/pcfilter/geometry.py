"""Point clouds, meshes, patches and noise models."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

NOISE_KINDS = ("gaussian", "non_isotropic_gaussian", "uniform_sphere", "laplace")

# Correlation pattern of the non-isotropic noise model (scaled by s^2).
NON_ISOTROPIC_COV = np.array([
    [1.0, -0.5, -0.25],
    [-0.5, 1.0, -0.25],
    [-0.25, -0.25, 1.0],
])


class GeometryError(ValueError):
    pass


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise GeometryError(f"expected an (n, 3) array of positions, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class PointCloud:
    """Ordered 3-D positions; a point's index is its row."""

    points: np.ndarray

    def __post_init__(self):
        pts = _as_points(self.points)
        if pts.shape[0] == 0:
            raise GeometryError("empty point cloud")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point cloud has non-finite coordinates")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    @property
    def indices(self) -> np.ndarray:
        return np.arange(len(self))


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        verts = _as_points(self.vertices)
        tris = np.asarray(self.triangles, dtype=np.int64)
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise GeometryError(f"triangles must be (m, 3), got {tris.shape}")
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            raise GeometryError("triangle index out of range")
        if tris.size:
            a, b, c = (verts[tris[:, i]] for i in range(3))
            area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
            if np.any(area2 <= 1e-300):
                raise GeometryError("mesh contains a degenerate (zero-area) triangle")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)

    def corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(self.vertices[self.triangles[:, i]] for i in range(3))


@dataclass(frozen=True)
class Patch:
    """k points around a reference point, in a frame centered at the reference
    and scaled so the farthest point sits at distance 1."""

    points: np.ndarray
    reference_index: int
    source_indices: np.ndarray
    center: np.ndarray
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise GeometryError(f"patch scale must be positive, got {self.scale}")
        if not np.all(np.isfinite(self.points)):
            raise GeometryError("patch has non-finite points")

    def __len__(self):
        return len(self.source_indices)

    def denormalize(self, points=None) -> np.ndarray:
        pts = self.points if points is None else np.asarray(points, dtype=np.float64)
        return pts * self.scale + self.center

    def normalize(self, world_points) -> np.ndarray:
        return (np.asarray(world_points, dtype=np.float64) - self.center) / self.scale

    def with_points(self, points) -> "Patch":
        pts = np.asarray(points, dtype=np.float64)
        if pts.shape != self.points.shape:
            raise GeometryError(f"replacement points {pts.shape} do not match patch {self.points.shape}")
        return Patch(pts, self.reference_index, self.source_indices, self.center, self.scale)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "gaussian"
    sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise GeometryError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise GeometryError(f"noise sigma must be finite and >= 0, got {self.sigma}")


def bounding_sphere_radius(cloud: PointCloud | np.ndarray) -> float:
    """Largest distance from the centroid to any point."""
    pts = cloud.points if isinstance(cloud, PointCloud) else _as_points(cloud)
    if pts.shape[0] == 0:
        raise GeometryError("empty point cloud")
    return float(np.max(np.linalg.norm(pts - pts.mean(axis=0), axis=1)))


def sample_noise(kind: str, n: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` perturbation vectors of absolute scale ``scale``."""
    if kind == "gaussian":
        return scale * rng.standard_normal((n, 3))
    if kind == "non_isotropic_gaussian":
        chol = np.linalg.cholesky(NON_ISOTROPIC_COV)
        return scale * (rng.standard_normal((n, 3)) @ chol.T)
    if kind == "uniform_sphere":
        direction = rng.standard_normal((n, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = scale * np.cbrt(rng.random(n))
        return direction * radius[:, None]
    if kind == "laplace":
        return rng.laplace(0.0, scale, size=(n, 3)) if scale > 0 else np.zeros((n, 3))
    raise GeometryError(f"unknown noise kind {kind!r}")


def add_noise(cloud: PointCloud, spec: NoiseSpec) -> PointCloud:
    """Perturb every point; ``spec.sigma`` is relative to the bounding-sphere radius."""
    if spec.sigma == 0:
        return PointCloud(cloud.points)
    scale = spec.sigma * bounding_sphere_radius(cloud)
    rng = np.random.default_rng(spec.seed)
    return PointCloud(cloud.points + sample_noise(spec.kind, len(cloud), scale, rng))


def interpolate(x0, x1, t: float) -> np.ndarray:
    """(1 - t) * x0 + t * x1."""
    if not 0.0 <= t <= 1.0:
        raise GeometryError(f"interpolation time must lie in [0, 1], got {t}")
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise GeometryError(f"interpolate: size mismatch {x0.shape} vs {x1.shape}")
    return (1.0 - t) * x0 + t * x1


def knn(points, query, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest points, nearest first, ties to the lower index."""
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if k > n:
        raise GeometryError(f"knn: k={k} exceeds point count {n}")
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    diff = pts - np.asarray(query, dtype=np.float64)
    d2 = np.einsum("ij,ij->i", diff, diff)
    if k < n:
        kth = np.partition(d2, k - 1)[k - 1]
        candidates = np.flatnonzero(d2 <= kth)
    else:
        candidates = np.arange(n)
    order = np.lexsort((candidates, d2[candidates]))
    return candidates[order[:k]].astype(np.int64)


def sample_reference_points(cloud: PointCloud, patch_k: int) -> list[int]:
    """Farthest-point sampling from index 0 until the references' patches cover
    every point. Each new reference is the uncovered point farthest from all
    references chosen so far, so every patch adds coverage."""
    n = len(cloud)
    if patch_k > n:
        raise GeometryError(f"patch size {patch_k} exceeds point count {n}")
    if patch_k <= 0:
        raise GeometryError("patch size must be positive")
    pts = cloud.points
    covered = np.zeros(n, dtype=bool)
    min_d2 = np.full(n, np.inf)
    refs: list[int] = []
    nxt = 0
    while True:
        refs.append(nxt)
        covered[knn(pts, pts[nxt], patch_k)] = True
        if covered.all():
            return refs
        diff = pts - pts[nxt]
        np.minimum(min_d2, np.einsum("ij,ij->i", diff, diff), out=min_d2)
        nxt = int(np.argmax(np.where(covered, -np.inf, min_d2)))


def extract_patch(cloud: PointCloud, ref: int, k: int) -> Patch:
    n = len(cloud)
    if not 0 <= ref < n:
        raise GeometryError(f"reference index {ref} out of range for {n} points")
    idx = knn(cloud.points, cloud.points[ref], k)
    center = cloud.points[ref].copy()
    local = cloud.points[idx] - center
    radius = float(np.max(np.linalg.norm(local, axis=1))) if k else 0.0
    scale = radius if radius > 0 else 1.0
    return Patch(local / scale, int(ref), idx, center, scale)


def stitch(cloud: PointCloud, filtered_patches: Sequence[Patch]) -> PointCloud:
    """Average every point's filtered copies across the patches containing it."""
    n = len(cloud)
    sums = np.zeros((n, 3))
    counts = np.zeros(n, dtype=np.int64)
    for patch in filtered_patches:
        np.add.at(sums, patch.source_indices, patch.denormalize())
        np.add.at(counts, patch.source_indices, 1)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise GeometryError(f"point not covered by any patch (index {int(missing[0])})")
    return PointCloud(sums / counts[:, None])


@dataclass
class TrainingPatch:
    """A clean patch paired with the bounding radius of the cloud it came from."""

    patch: Patch
    cloud_radius: float
    label: str = field(default="")
