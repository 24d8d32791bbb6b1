"""
Einlesen von Punktwolken (PLY, XYZ), Netzen (OBJ, PLY), PNG-Bildern und Gitter-Dumps
"""

import logging
import os
import struct
from typing import Optional, Tuple

import numpy as np
from PIL import Image
from plyfile import PlyData, PlyParseError

from .export import GRID_MAGIC
from .field import PointCloud, default_kernel_params
from .isosurface import Mesh, compute_vertex_normals
from .metrics import ImageBuffer

logger = logging.getLogger(__name__)

# Zielbereich der Normalisierung
NORMALIZED_LOW = 0.05
NORMALIZED_HIGH = 0.95

_REQUIRED = ("x", "y", "z", "nx", "ny", "nz")
_COLORS = ("red", "green", "blue")


class PointCloudParseError(ValueError):
    """Fehler beim Lesen einer Punktwolke; line (Textzeile) oder element (Datensatz) benennen die Stelle."""

    def __init__(self, message: str, line: Optional[int] = None, element: Optional[int] = None):
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif element is not None:
            where = f" (element {element})"
        super().__init__(message + where)
        self.line = line
        self.element = element


class MeshParseError(ValueError):
    pass


def normalize_positions(positions: np.ndarray) -> Tuple[np.ndarray, float]:
    """Affine Abbildung nach [0.05, 0.95]³ unter Erhalt des Seitenverhältnisses.

    Returns:
        (normalisierte Positionen, Skalierungsfaktor)
    """
    lo = positions.min(axis=0)
    hi = positions.max(axis=0)
    extent = float((hi - lo).max())
    scale = (NORMALIZED_HIGH - NORMALIZED_LOW) / extent if extent > 0 else 1.0
    center = 0.5 * (lo + hi)
    return 0.5 + (positions - center) * scale, scale


def _first_bad_row(values: np.ndarray) -> Optional[int]:
    bad = np.nonzero(~np.all(np.isfinite(values.reshape(len(values), -1)), axis=1))[0]
    return int(bad[0]) if len(bad) else None


def _read_ply_cloud(path: str):
    try:
        ply = PlyData.read(path)
    except (PlyParseError, ValueError) as e:
        raise PointCloudParseError(f"malformed PLY file: {e}", line=getattr(e, "line", None)) from e
    if "vertex" not in ply:
        raise PointCloudParseError("PLY file has no vertex element")
    vertex = ply["vertex"]
    names = {prop.name for prop in vertex.properties}
    missing = [name for name in _REQUIRED if name not in names]
    if missing:
        raise PointCloudParseError(f"PLY vertex element lacks properties {missing}")

    data = vertex.data
    positions = np.column_stack([data[name] for name in ("x", "y", "z")]).astype(float)
    normals = np.column_stack([data[name] for name in ("nx", "ny", "nz")]).astype(float)
    k = np.asarray(data["k"], dtype=float) if "k" in names else None
    m = np.asarray(data["m"], dtype=float) if "m" in names else None
    features = None
    if all(name in names for name in _COLORS):
        colors = np.column_stack([data[name] for name in _COLORS])
        scale = 255.0 if colors.dtype.kind in "ui" else 1.0
        features = colors.astype(float) / scale
    return positions, normals, k, m, features


def _read_xyz_cloud(path: str):
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 6:
                raise PointCloudParseError(f"expected 6 columns, got {len(parts)}", line=line_no)
            try:
                values = [float(p) for p in parts]
            except ValueError as e:
                raise PointCloudParseError(f"invalid number: {e}", line=line_no) from e
            if not all(np.isfinite(values)):
                raise PointCloudParseError("non-finite value", line=line_no)
            rows.append(values)
    table = np.array(rows, dtype=float).reshape(-1, 6)
    return table[:, :3], table[:, 3:], None, None, None


def read_point_cloud(path: str, normalize: bool = True, m: float = 2.0) -> PointCloud:
    """Liest PLY (ASCII/binär) oder XYZ (x y z nx ny nz pro Zeile).

    Positionen werden (optional) nach [0.05, 0.95]³ normalisiert, Normalen
    normiert; fehlende k, m erhalten die Standard-Initialisierung.
    """
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ply":
        positions, normals, k, m_values, features = _read_ply_cloud(path)
    elif ext in (".xyz", ".txt"):
        positions, normals, k, m_values, features = _read_xyz_cloud(path)
    else:
        raise ValueError(f"unsupported point cloud format {ext!r} (expected .ply or .xyz)")

    if len(positions) == 0:
        raise PointCloudParseError("point cloud contains no points")
    for values in (positions, normals, k, m_values, features):
        if values is not None:
            bad = _first_bad_row(values)
            if bad is not None:
                raise PointCloudParseError("non-finite value", element=bad)

    lengths = np.linalg.norm(normals, axis=1)
    zero = np.nonzero(lengths == 0)[0]
    if len(zero):
        raise PointCloudParseError("zero-length normal", element=int(zero[0]))
    normals = normals / lengths[:, None]

    scale = 1.0
    if normalize:
        positions, scale = normalize_positions(positions)
    default_k, default_m = default_kernel_params(positions, m=m)
    k = default_k if k is None else k * scale**2
    if m_values is None:
        m_values = default_m
    try:
        cloud = PointCloud(positions, normals, k, m_values, features)
    except ValueError as e:
        raise PointCloudParseError(str(e)) from e
    logger.debug("read_point_cloud: %s, %d points, D=%d", path, len(cloud), cloud.feature_dim)
    return cloud


def _read_obj_mesh(path: str) -> Mesh:
    vertices, faces = [], []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vertices.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(vertices) + i for i in idx]
                if len(idx) < 3:
                    raise ValueError(f"face with fewer than 3 vertices in line {line_no}")
                # Polygone als Fächer triangulieren
                faces.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, len(idx) - 1))
    return Mesh(np.array(vertices, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def _read_ply_mesh(path: str) -> Mesh:
    try:
        ply = PlyData.read(path)
    except (PlyParseError, ValueError) as e:
        raise MeshParseError(f"malformed PLY mesh: {e}") from e
    if "vertex" not in ply:
        raise MeshParseError("PLY mesh has no vertex element")
    vertex = ply["vertex"].data
    missing = [name for name in ("x", "y", "z") if name not in vertex.dtype.names]
    if missing:
        raise MeshParseError(f"PLY vertex element lacks properties {missing}")
    vertices = np.column_stack([vertex[name] for name in ("x", "y", "z")]).astype(float)
    triangles = np.zeros((0, 3), dtype=np.int64)
    if "face" in ply and len(ply["face"].data):
        face = ply["face"]
        prop = "vertex_indices" if "vertex_indices" in {p.name for p in face.properties} else "vertex_index"
        triangles = np.array([list(f) for f in face.data[prop]], dtype=np.int64).reshape(-1, 3)
    return Mesh(vertices, triangles)


def read_mesh(path: str) -> Mesh:
    """Liest ein Dreiecksnetz aus OBJ oder PLY; Vertex-Normalen werden neu berechnet."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        mesh = _read_obj_mesh(path)
    elif ext == ".ply":
        mesh = _read_ply_mesh(path)
    else:
        raise ValueError(f"unsupported mesh format {ext!r} (expected .obj or .ply)")
    return compute_vertex_normals(mesh)


def read_image(path: str) -> ImageBuffer:
    """PNG nach [0,1]: 8 Bit durch 255, 16 Bit durch 65535."""
    with Image.open(path) as image:
        if image.mode in ("I;16", "I;16B", "I;16L", "I"):
            pixels = np.asarray(image, dtype=float) / 65535.0
        else:
            mode = "L" if image.mode in ("L", "LA", "1") else "RGB"
            pixels = np.asarray(image.convert(mode), dtype=float) / 255.0
    return ImageBuffer(np.clip(pixels, 0.0, 1.0))


def read_grid_dump(path: str) -> np.ndarray:
    """Liest einen Gitter-Dump zurück als (R,R,R)-Array."""
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16 or header[:8] != GRID_MAGIC:
            raise ValueError(f"{path} is not a grid dump")
        resolution, _ = struct.unpack("<II", header[8:])
        values = np.frombuffer(f.read(), dtype="<f8")
    if values.size != resolution**3:
        raise ValueError(f"grid dump truncated: expected {resolution**3} values, got {values.size}")
    return values.reshape(resolution, resolution, resolution).astype(float)
