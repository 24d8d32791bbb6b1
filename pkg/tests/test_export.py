"""
Tests für die Export-Funktionen (export.py)
"""

import csv
import os
import sys

import numpy as np
import pytest
from plyfile import PlyData

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
SRC = os.path.join(ROOT, "src")
if SRC not in sys.path:
    sys.path.insert(0, SRC)

from compact_imls.export import (
    mesh_format,
    write_grid_dump,
    write_kernel_profile,
    write_loss_history,
    write_mesh,
    write_point_cloud,
    write_records,
)
from compact_imls.field import PointCloud
from compact_imls.ingest import read_grid_dump, read_mesh, read_point_cloud
from compact_imls.isosurface import Mesh, compute_vertex_normals, empty_mesh
from compact_imls.splat_grid import build_grid


def one_triangle():
    return compute_vertex_normals(Mesh(np.array([[0.1, 0.2, 0.3], [0.9, 0.2, 0.3], [0.1, 0.8, 0.3]]), [[0, 1, 2]]))


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


def test_mesh_format():
    assert mesh_format("a/b.OBJ") == "obj"
    assert mesh_format("a/b.dat", "ply") == "ply"
    with pytest.raises(ValueError):
        mesh_format("a/b.stl")


def test_obj_one_triangle(tmp_path):
    path = str(tmp_path / "tri.obj")
    write_mesh(one_triangle(), path)
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    assert sum(line.startswith("v ") for line in lines) == 3
    assert sum(line.startswith("vn ") for line in lines) == 3
    assert [line for line in lines if line.startswith("f ")] == ["f 1//1 2//2 3//3"]


def test_obj_empty_mesh_has_no_records(tmp_path):
    path = str(tmp_path / "empty.obj")
    write_mesh(empty_mesh(), path)
    with open(path, encoding="utf-8") as f:
        lines = [line for line in f.read().splitlines() if not line.startswith("#")]
    assert lines == []


def test_ply_empty_mesh_is_valid(tmp_path):
    path = str(tmp_path / "empty.ply")
    write_mesh(empty_mesh(), path)
    ply = PlyData.read(path)
    assert len(ply["vertex"].data) == 0
    assert len(ply["face"].data) == 0


def test_ply_mesh_roundtrip(tmp_path):
    path = str(tmp_path / "tri.ply")
    mesh = one_triangle()
    mesh.vertex_features = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.5, 0.5, 2.0]])
    write_mesh(mesh, path)
    ply = PlyData.read(path)
    assert ply.byte_order == "<"
    assert list(ply["vertex"].data["blue"]) == [0, 0, 255]
    back = read_mesh(path)
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.triangles, mesh.triangles)


def test_point_cloud_roundtrip_is_bit_equal(tmp_path):
    path = str(tmp_path / "cloud.ply")
    rng = np.random.default_rng(0)
    axes = np.eye(3)[rng.integers(0, 3, 20)] * rng.choice([-1.0, 1.0], size=(20, 1))
    cloud = PointCloud(
        rng.uniform(0.1, 0.9, size=(20, 3)),
        axes,
        rng.uniform(0.001, 0.01, 20),
        rng.uniform(1.0, 4.0, 20),
        rng.integers(0, 2, size=(20, 3)).astype(float),
    )
    write_point_cloud(cloud, path)
    back = read_point_cloud(path, normalize=False)
    np.testing.assert_array_equal(back.positions, cloud.positions)
    np.testing.assert_array_equal(back.normals, cloud.normals)
    np.testing.assert_array_equal(back.k, cloud.k)
    np.testing.assert_array_equal(back.m, cloud.m)
    np.testing.assert_array_equal(back.features, cloud.features)


def test_loss_history_csv(tmp_path):
    path = str(tmp_path / "loss.csv")
    write_loss_history(path, [0.5, 0.25], [0.0025, 0.0])
    rows = read_rows(path)
    assert rows[0] == ["step", "loss", "alpha"]
    assert rows[1] == ["0", "0.5", "0.0025"]
    assert float(rows[2][1]) == 0.25
    with pytest.raises(ValueError):
        write_loss_history(path, [0.1], [])


def test_kernel_profile_and_records(tmp_path):
    profile = str(tmp_path / "profile.csv")
    write_kernel_profile(profile, {"s": np.array([0.0, 1.0]), "compact": np.array([1.0, 0.0])})
    assert read_rows(profile) == [["s", "compact"], ["0.0", "1.0"], ["1.0", "0.0"]]

    records = str(tmp_path / "bench.csv")
    write_records(records, [{"kernel": "compact", "chamfer": 0.01}, {"kernel": "exponential", "chamfer": 0.02}])
    assert read_rows(records)[2] == ["exponential", "0.02"]
    with pytest.raises(ValueError):
        write_records(records, [])


def test_grid_dump_roundtrip(tmp_path):
    path = str(tmp_path / "grid.bin")
    cloud = PointCloud([[0.5, 0.5, 0.5]], [[0.0, 0.0, 1.0]], 0.05, 2.0)
    _, grid = build_grid(cloud, 6)
    write_grid_dump(grid, path)
    assert os.path.getsize(path) == 16 + 8 * 6**3
    with open(path, "rb") as f:
        assert f.read(8) == b"IMLSGRID"
    np.testing.assert_array_equal(read_grid_dump(path), grid.sdf)


def test_missing_directory_raises(tmp_path):
    with pytest.raises(OSError):
        write_mesh(one_triangle(), str(tmp_path / "missing" / "tri.obj"))
