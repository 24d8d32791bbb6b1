"""
Export-Funktionen für Netze, Punktwolken, CSV-Tabellen und Gitter-Dumps

Alle Schreibvorgänge laufen über utils.atomic_write.
"""

import csv
import logging
import struct
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from plyfile import PlyData, PlyElement

from .field import PointCloud
from .isosurface import Mesh
from .splat_grid import SplatGrid
from .utils import atomic_write

logger = logging.getLogger(__name__)

GRID_MAGIC = b"IMLSGRID"
MESH_FORMATS = ("obj", "ply")


def mesh_format(path: str, fmt: Optional[str] = None) -> str:
    fmt = (fmt or path.rsplit(".", 1)[-1]).lower()
    if fmt not in MESH_FORMATS:
        raise ValueError(f"unsupported mesh format {fmt!r}, expected one of {MESH_FORMATS}")
    return fmt


def _colors(features: Optional[np.ndarray], n: int) -> Optional[np.ndarray]:
    if features is None or features.shape != (n, 3):
        return None
    return np.round(np.clip(features, 0.0, 1.0) * 255.0).astype(np.uint8)


def _write_obj(mesh: Mesh, path: str) -> None:
    normals = mesh.vertex_normals if mesh.vertex_normals is not None else np.zeros((mesh.n_vertices, 3))
    with open(path, "w", encoding="utf-8") as f:
        f.write("# compact-imls\n")
        for x, y, z in mesh.vertices.tolist():
            f.write(f"v {x!r} {y!r} {z!r}\n")
        for x, y, z in np.asarray(normals, dtype=float).tolist():
            f.write(f"vn {x!r} {y!r} {z!r}\n")
        # OBJ ist 1-basiert, Normalen-Index = Vertex-Index
        for a, b, c in mesh.triangles + 1:
            f.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")


def _write_ply(mesh: Mesh, path: str) -> None:
    n = mesh.n_vertices
    normals = mesh.vertex_normals if mesh.vertex_normals is not None else np.zeros((n, 3))
    colors = _colors(mesh.vertex_features, n)
    fields = [(name, "f8") for name in ("x", "y", "z", "nx", "ny", "nz")]
    if colors is not None:
        fields += [(name, "u1") for name in ("red", "green", "blue")]
    vertices = np.empty(n, dtype=fields)
    for i, name in enumerate(("x", "y", "z")):
        vertices[name] = mesh.vertices[:, i]
    for i, name in enumerate(("nx", "ny", "nz")):
        vertices[name] = normals[:, i]
    if colors is not None:
        for i, name in enumerate(("red", "green", "blue")):
            vertices[name] = colors[:, i]

    faces = np.empty(mesh.n_triangles, dtype=[("vertex_indices", "i4", (3,))])
    faces["vertex_indices"] = mesh.triangles
    PlyData(
        [PlyElement.describe(vertices, "vertex"), PlyElement.describe(faces, "face")],
        byte_order="<",
    ).write(path)


def write_mesh(mesh: Mesh, path: str, fmt: Optional[str] = None) -> str:
    """Schreibt das Netz als OBJ (v/vn/f) oder binäres PLY (little endian)."""
    fmt = mesh_format(path, fmt)
    with atomic_write(path) as tmp:
        if fmt == "obj":
            _write_obj(mesh, tmp)
        else:
            _write_ply(mesh, tmp)
    logger.debug("write_mesh: %s (%d vertices, %d triangles)", path, mesh.n_vertices, mesh.n_triangles)
    return path


def write_point_cloud(cloud: PointCloud, path: str) -> str:
    """Binäres PLY mit x,y,z,nx,ny,nz,k,m (double) und optional red/green/blue (D = 3)."""
    n = len(cloud)
    colors = _colors(cloud.features, n)
    names = ("x", "y", "z", "nx", "ny", "nz", "k", "m")
    fields = [(name, "f8") for name in names]
    if colors is not None:
        fields += [(name, "u1") for name in ("red", "green", "blue")]
    vertices = np.empty(n, dtype=fields)
    columns = np.column_stack((cloud.positions, cloud.normals, cloud.k, cloud.m))
    for i, name in enumerate(names):
        vertices[name] = columns[:, i]
    if colors is not None:
        for i, name in enumerate(("red", "green", "blue")):
            vertices[name] = colors[:, i]
    with atomic_write(path) as tmp:
        PlyData([PlyElement.describe(vertices, "vertex")], byte_order="<").write(tmp)
    return path


def _write_rows(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    with atomic_write(path) as tmp:
        with open(tmp, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for row in rows:
                writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_loss_history(path: str, losses: Sequence[float], alphas: Sequence[float]) -> str:
    """CSV mit den Spalten step, loss, alpha."""
    if len(losses) != len(alphas):
        raise ValueError("losses and alphas must have the same length")
    rows = ((i, loss, alpha) for i, (loss, alpha) in enumerate(zip(losses, alphas)))
    return _write_rows(path, ("step", "loss", "alpha"), rows)


def write_kernel_profile(path: str, table: Dict[str, np.ndarray]) -> str:
    """Spaltenweise Kernprofil-Tabelle (z.B. s, distance, compact, exponential)."""
    header = list(table)
    columns = [np.asarray(table[name]) for name in header]
    return _write_rows(path, header, zip(*columns))


def write_records(path: str, records: List[Dict]) -> str:
    """CSV aus einer Liste gleichartiger Dicts (Bench-Ergebnisse)."""
    if not records:
        raise ValueError("no records to write")
    header = list(records[0])
    return _write_rows(path, header, ([record[key] for key in header] for record in records))


def write_grid_dump(grid: SplatGrid, path: str) -> str:
    """Debug-Dump: b"IMLSGRID", u32 R, u32 reserviert, dann R³ float64 (little endian, x-major)."""
    if not grid.finalized:
        raise ValueError("grid must be finalized before dumping")
    with atomic_write(path) as tmp:
        with open(tmp, "wb") as f:
            f.write(GRID_MAGIC)
            f.write(struct.pack("<II", grid.resolution, 0))
            f.write(np.ascontiguousarray(grid.sdf, dtype="<f8").tobytes())
    return path
