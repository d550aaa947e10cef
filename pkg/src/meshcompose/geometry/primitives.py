"""Closed, outward-oriented primitive meshes."""

import numpy as np

from .mesh import TriangleMesh


def box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0), divisions=1) -> TriangleMesh:
    """Axis-aligned box; each face split into a ``divisions`` x ``divisions`` grid of quads."""
    if divisions > 1:
        return subdivide(box(size, center), divisions)
    h = 0.5 * np.asarray(size, dtype=np.float64)
    c = np.asarray(center, dtype=np.float64)
    v = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
    faces = np.array([
        [0, 1, 3], [0, 3, 2],  # -x
        [4, 6, 7], [4, 7, 5],  # +x
        [0, 4, 5], [0, 5, 1],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [0, 2, 6], [0, 6, 4],  # -z
        [1, 5, 7], [1, 7, 3],  # +z
    ])
    return TriangleMesh(v * h + c, faces)


def icosphere(level=3, radius=1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    for _ in range(level):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriangleMesh(v, np.array(faces))


def cylinder(radius=0.5, height=1.0, segments=24, center=(0.0, 0.0, 0.0), rings=1) -> TriangleMesh:
    """Capped cylinder along z, with ``rings`` bands of side quads."""
    ang = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    zs = np.linspace(-0.5 * height, 0.5 * height, rings + 1)
    v = np.vstack([np.column_stack([ring, np.full(segments, z)]) for z in zs] + [[[0, 0, zs[0]], [0, 0, zs[-1]]]])
    cb, ct = len(v) - 2, len(v) - 1
    top = rings * segments
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        for r in range(rings):
            a, b = r * segments, (r + 1) * segments
            faces += [(a + i, a + j, b + j), (a + i, b + j, b + i)]
        faces += [(cb, j, i), (ct, top + i, top + j)]
    return TriangleMesh(v + np.asarray(center, dtype=np.float64), np.array(faces))


def subdivide(mesh: TriangleMesh, n: int) -> TriangleMesh:
    """Split every triangle into n^2 congruent ones (shared edges stay conforming)."""
    verts = []
    index = {}
    faces = []
    V = mesh.vertices

    def vid(f, i, j):
        # barycentric lattice point (i, j) of face f, keyed so shared edges coincide
        a, b, c = mesh.faces[f]
        k = n - i - j
        w = {a: 0, b: 0, c: 0}
        w[a] += k
        w[b] += i
        w[c] += j
        key = tuple(sorted((int(x), int(y)) for x, y in w.items() if y))
        if key not in index:
            index[key] = len(verts)
            verts.append(sum(V[x] * y for x, y in key) / n)
        return index[key]

    for f in range(len(mesh.faces)):
        for i in range(n):
            for j in range(n - i):
                faces.append((vid(f, i, j), vid(f, i + 1, j), vid(f, i, j + 1)))
                if i + j < n - 1:
                    faces.append((vid(f, i + 1, j), vid(f, i + 1, j + 1), vid(f, i, j + 1)))
    return TriangleMesh(np.array(verts), np.array(faces))
