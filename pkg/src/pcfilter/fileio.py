"""XYZ point files and OFF triangle meshes.

XYZ: one point per line, three whitespace-separated reals; blank lines and
lines starting with ``#`` are ignored. Values are written with 17 significant
digits so float64 coordinates survive a round trip unchanged.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import Mesh, PointCloud


class FormatError(ValueError):
    pass


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_xyz(path, cloud: PointCloud | np.ndarray) -> None:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    lines = [" ".join(_fmt(c) for c in row) for row in pts]
    Path(path).write_text("\n".join(lines) + "\n")


def read_xyz(path) -> PointCloud:
    rows = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 values, found {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise FormatError(f"{path}: no points")
    return PointCloud(np.array(rows))


def write_off(path, mesh: Mesh) -> None:
    out = ["OFF", f"{len(mesh.vertices)} {len(mesh.triangles)} 0"]
    out += [" ".join(_fmt(c) for c in v) for v in mesh.vertices]
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(out) + "\n")


def read_off(path) -> Mesh:
    tokens_by_line = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            tokens_by_line.append(line.split())
    if not tokens_by_line or tokens_by_line[0][0] != "OFF":
        raise FormatError(f"{path}: missing OFF header")
    header = tokens_by_line[0][1:] or tokens_by_line.pop(1)
    body = tokens_by_line[1:]
    try:
        nv, nf = int(header[0]), int(header[1])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: bad vertex/face counts") from exc
    if len(body) < nv + nf:
        raise FormatError(f"{path}: expected {nv} vertices and {nf} faces, file is truncated")
    verts = np.array([[float(x) for x in row[:3]] for row in body[:nv]])
    faces = []
    for row in body[nv:nv + nf]:
        if int(row[0]) != 3 or len(row) < 4:
            raise FormatError(f"{path}: only triangular faces are supported, got {' '.join(row)}")
        faces.append([int(row[1]), int(row[2]), int(row[3])])
    return Mesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))
