"""
Small closed meshes for seeding, smoke runs and tests
"""
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from ..services.mesh_core import SurfaceMesh, save_mesh

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0


def icosahedron() -> SurfaceMesh:
    """Genus 0; rejected by the homology stage"""
    t = GOLDEN
    positions = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    return SurfaceMesh.from_faces(positions, faces)


def _grid_faces(n: int, m: int) -> List[Tuple[int, int, int]]:
    """Two triangles per cell of an n x m periodic grid; vertex (i, j) has index i * m + j"""
    def index(i, j):
        return (i % n) * m + (j % m)

    faces = []
    for i in range(n):
        for j in range(m):
            faces.append((index(i, j), index(i + 1, j), index(i + 1, j + 1)))
            faces.append((index(i, j), index(i + 1, j + 1), index(i, j + 1)))
    return faces


def torus_grid(n: int = 16, m: int = 8, major: float = 2.0, minor: float = 0.75) -> SurfaceMesh:
    """Torus of revolution in R^3, outward oriented"""
    u = 2.0 * np.pi * np.arange(n) / n
    v = 2.0 * np.pi * np.arange(m) / m
    U, V = np.meshgrid(u, v, indexing="ij")
    ring = major + minor * np.cos(V)
    positions = np.stack([ring * np.cos(U), ring * np.sin(U), minor * np.sin(V)], axis=-1).reshape(-1, 3)
    return SurfaceMesh.from_faces(positions, _grid_faces(n, m))


def clifford_torus(n: int = 8, m: int = 8, width: float = 1.0, height: float = 1.0) -> SurfaceMesh:
    """
    Flat torus embedded in R^4. Chord lengths make every grid cell an exact rectangle, so the
    intrinsic metric is flat with horizontal steps width / n and vertical steps height / m.
    Face 0's first edge runs along the horizontal direction.
    """
    h = width / n
    v = height / m
    a = h / (2.0 * np.sin(np.pi / n))
    b = v / (2.0 * np.sin(np.pi / m))
    s = 2.0 * np.pi * np.arange(n) / n
    t = 2.0 * np.pi * np.arange(m) / m
    S, T = np.meshgrid(s, t, indexing="ij")
    positions = np.stack([a * np.cos(S), a * np.sin(S), b * np.cos(T), b * np.sin(T)], axis=-1).reshape(-1, 4)
    return SurfaceMesh.from_faces(positions, _grid_faces(n, m))


def clifford_step(n: int = 8, m: int = 8, width: float = 1.0, height: float = 1.0) -> Tuple[float, float]:
    """Intrinsic (horizontal, vertical) edge lengths of clifford_torus"""
    return width / n, height / m


def _voxel_faces(cells: set) -> Tuple[np.ndarray, List[Tuple[int, int, int]]]:
    """Boundary of a union of unit voxels, two outward triangles per exposed square"""
    axes = np.eye(3, dtype=int)
    index: Dict[Tuple[int, int, int], int] = {}
    positions: List[Tuple[int, int, int]] = []
    faces: List[Tuple[int, int, int]] = []

    def vertex(p) -> int:
        key = tuple(int(x) for x in p)
        if key not in index:
            index[key] = len(positions)
            positions.append(key)
        return index[key]

    for cell in sorted(cells):
        c = np.array(cell)
        for a in range(3):
            u, w = axes[(a + 1) % 3], axes[(a + 2) % 3]
            for sign in (1, -1):
                if tuple(c + sign * axes[a]) in cells:
                    continue
                if sign > 0:
                    base = c + axes[a]
                    quad = [base, base + u, base + u + w, base + w]
                else:
                    quad = [c, c + w, c + u + w, c + u]
                p0, p1, p2, p3 = (vertex(q) for q in quad)
                faces += [(p0, p1, p2), (p0, p2, p3)]
    return np.asarray(positions, dtype=float), faces


def double_torus(scale: int = 2, jitter: float = 0.05, seed: int = 0) -> SurfaceMesh:
    """
    Genus 2: the surface of a one-voxel-thick plate with two square holes, i.e. the connected sum
    of two tori, with seeded vertex jitter so no two edges have equal length
    """
    holes = {(x, y) for x in range(scale, 2 * scale) for y in range(scale, 2 * scale)}
    holes |= {(x, y) for x in range(3 * scale, 4 * scale) for y in range(scale, 2 * scale)}
    cells = {(x, y, 0) for x in range(5 * scale) for y in range(3 * scale) if (x, y) not in holes}
    positions, faces = _voxel_faces(cells)
    positions = positions / scale
    positions[:, 2] *= scale / 2.0
    if jitter:
        rng = np.random.default_rng(seed)
        positions += rng.uniform(-jitter, jitter, positions.shape) / scale
    return SurfaceMesh.from_faces(positions, faces)


SAMPLES = {
    "icosahedron": icosahedron,
    "torus": torus_grid,
    "clifford": clifford_torus,
    "genus2": double_torus,
}


def write_samples(out_dir: Union[str, Path]) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return {name: save_mesh(build(), out_dir / f"{name}.obj") for name, build in SAMPLES.items()}
