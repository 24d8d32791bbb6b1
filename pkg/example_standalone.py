#!/usr/bin/env python
"""
Beispiel-Script: Testform abtasten, Netz extrahieren und mit der exakten Form vergleichen

Verwendung:
    python example_standalone.py                 # Kugel, 32³
    python example_standalone.py torus 48        # Form und Auflösung
"""

import sys
import os

# Stelle sicher, dass das src-Verzeichnis im Python-Pfad ist
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from compact_imls.export import write_mesh
from compact_imls.isosurface import is_watertight
from compact_imls.metrics import chamfer_distance, sample_surface
from compact_imls.optimize import extract_mesh
from compact_imls.shapes import sample_shape
from compact_imls.utils import create_tmp_dir_if_needed

if __name__ == "__main__":
    # Optional: Setze Working Directory
    # os.environ['IMLS_WORKING_DIR'] = '/pfad/zum/working/dir'

    kind = sys.argv[1] if len(sys.argv) > 1 else "sphere"
    resolution = int(sys.argv[2]) if len(sys.argv) > 2 else 32

    cloud, _ = sample_shape(kind, 2000, seed=0)
    _, mesh = extract_mesh(cloud, resolution)
    out = os.path.join(create_tmp_dir_if_needed(), f"{kind}_{resolution}.obj")
    write_mesh(mesh, out)

    truth, _ = sample_shape(kind, 20_000, seed=1)
    distance = chamfer_distance(sample_surface(mesh, 20_000), truth.positions)
    print(f"{mesh.n_vertices} Vertices, {mesh.n_triangles} Dreiecke, wasserdicht: {is_watertight(mesh)}")
    print(f"Chamfer-Distanz zur exakten Form: {distance:.5f}")
    print(f"Ausgabe: {out}")
