"""
Write the sample meshes (icosahedron, torus, flat Clifford torus, genus-2 plate) as OBJ files
"""
import os
import sys

# Add the current directory to the path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from quadlayout.core.sample_meshes import write_samples
from quadlayout.services.mesh_core import load_mesh


def seed_meshes(out_dir: str = "meshes"):
    print(f"Writing sample meshes to {out_dir}...")
    for name, path in write_samples(out_dir).items():
        mesh = load_mesh(path)
        print(f"  {name:12s} V={mesh.n_vertices:5d} F={mesh.n_faces:5d} genus={mesh.genus}  -> {path}")
    print("Done")


if __name__ == "__main__":
    seed_meshes(sys.argv[1] if len(sys.argv) > 1 else "meshes")
