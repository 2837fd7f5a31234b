"""
Meshes and TSDF slices
======================

Marching cubes over the static field gives the background map; the same
over F(., t) gives the scene at one instant, sphere included.  Slices are
CSV grids clamped to +-0.3 m.

Run 03_train_and_segment.py first; it leaves demo_out/demo.ckpt behind.
"""

from pathlib import Path

import numpy as np

from tsdf4d.field import load_checkpoint
from tsdf4d.mesher import export_ply, export_slice, extract_mesh

out = Path(__file__).with_name("demo_out")


# Marching cubes is generic over anything with query/query_static.
class Sphere:
    def query_static(self, p):
        return np.linalg.norm(p, axis=1) - 1.0


mesh = extract_mesh(Sphere(), 0.05, bounds=((-1.2,) * 3, (1.2,) * 3))
r = np.linalg.norm(mesh.vertices, axis=1)
print(f"unit sphere: {len(mesh)} triangles, radius error up to {np.abs(r - 1).max():.4f} m, "
      f"area {mesh.areas().sum():.3f} (4 pi = {4 * np.pi:.3f})")

model = load_checkpoint(out / "demo.ckpt")
cell = model.grid.finest_voxel_size / 2

static = extract_mesh(model, cell)
export_ply(static, out / "static.ply")
print("static map:", len(static), "triangles")

# Frame 15 has the sphere in the middle of its path.
at15 = extract_mesh(model, cell, t=15)
export_ply(at15, out / "frame15.ply")
print("frame 15:  ", len(at15), "triangles")

# A horizontal slice at sensor height, static and at frame 15.
a = export_slice(model, out / "slice_static.csv", "z", 1.5, cell)
b = export_slice(model, out / "slice_t15.csv", "z", 1.5, cell, t=15)
changed = np.abs(a.values - b.values) > 0.1
print(f"slice cells that differ by more than 10 cm at frame 15: {changed.sum()} of {changed.size}")
