"""Built-in test meshes: cube, m-gon prism ("cylinder") and an asymmetric blob."""
from __future__ import annotations

import math

import numpy as np

from .sphere import TriMesh

BUILTIN_MESHES = ("blob", "cylinder", "cube")


def cube_mesh(side: float = 0.1) -> TriMesh:
    """Axis-aligned origin-centered cube."""
    h = side / 2.0
    v = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    faces = np.array([
        [0, 1, 3], [0, 3, 2],  # x = -h
        [4, 6, 7], [4, 7, 5],  # x = +h
        [0, 4, 5], [0, 5, 1],  # y = -h
        [2, 3, 7], [2, 7, 6],  # y = +h
        [0, 2, 6], [0, 6, 4],  # z = -h
        [1, 5, 7], [1, 7, 3],  # z = +h
    ])
    return TriMesh(v, faces)


def prism_mesh(m: int = 10, radius: float = 0.05, height: float = 0.12) -> TriMesh:
    """Regular m-gon prism about z: exactly m-fold rotation symmetric.

    Used as the "cylinder" stand-in so the symmetry group is finite and the
    equivalent poses can be enumerated exactly.
    """
    if m < 3:
        raise ValueError("prism needs m >= 3")
    ang = 2 * math.pi * np.arange(m) / m
    top = np.stack([radius * np.cos(ang), radius * np.sin(ang),
                    np.full(m, height / 2)], axis=1)
    bot = top.copy()
    bot[:, 2] = -height / 2
    verts = np.vstack([top, bot, [[0, 0, height / 2]], [[0, 0, -height / 2]]])
    ct, cb = 2 * m, 2 * m + 1
    faces = []
    for k in range(m):
        k1 = (k + 1) % m
        faces.append([ct, k, k1])                 # top cap fan
        faces.append([cb, m + k1, m + k])         # bottom cap fan
        faces.append([k, m + k, m + k1])          # side quad, two triangles
        faces.append([k, m + k1, k1])
    return TriMesh(verts, np.array(faces))


def cylinder_mesh(radius: float = 0.05, height: float = 0.12, m: int = 10) -> TriMesh:
    return prism_mesh(m=m, radius=radius, height=height)


def icosphere_mesh(radius: float = 1.0, subdivisions: int = 2) -> TriMesh:
    """Icosahedron subdivided and reprojected onto the sphere."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                p = np.add(verts[i], verts[j]) / 2.0
                p /= np.linalg.norm(p)
                verts.append(tuple(p))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.asarray(verts) * radius
    return TriMesh(v, np.asarray(faces))


def blob_mesh(radius: float = 0.06, subdivisions: int = 3, seed: int = 11) -> TriMesh:
    """Asymmetric star-shaped blob: icosphere with low-order radial bumps.

    The bump directions are drawn from a seeded generator and checked to be
    well-spread, so the shape has no rotational symmetry.
    """
    base = icosphere_mesh(radius=1.0, subdivisions=subdivisions)
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((5, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    amps = 0.12 + 0.1 * rng.random(5)
    widths = 2.0 + 2.0 * rng.random(5)
    v = base.vertices
    scale = np.ones(len(v))
    for d, a, wdt in zip(dirs, amps, widths):
        scale += a * np.exp(wdt * (v @ d - 1.0))
    return TriMesh(v * (radius * scale[:, None]), base.faces)


def builtin_mesh(name: str) -> TriMesh:
    if name == "cube":
        return cube_mesh(side=0.08)
    if name == "cylinder":
        return cylinder_mesh()
    if name == "blob":
        return blob_mesh()
    raise KeyError(f"unknown built-in mesh {name!r}")
