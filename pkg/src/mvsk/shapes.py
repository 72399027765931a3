"""Procedural shape categories (z is up, meshes are closed components wound outward).

Each category draws its instance parameters from a ``numpy.random.Generator``.
``make_shape`` returns the normalized mesh (area centroid at the origin,
bounding radius 1).
"""

from __future__ import annotations

import numpy as np

from .geometry import TriMesh, normalize_mesh

CATEGORIES = ("box-table", "slat-chair", "open-cup", "superellipsoid", "bar-frame")

_BOX_FACES = np.array(
    [
        [0, 2, 1], [0, 3, 2],  # z-
        [4, 5, 6], [4, 6, 7],  # z+
        [0, 1, 5], [0, 5, 4],  # y-
        [2, 3, 7], [2, 7, 6],  # y+
        [1, 2, 6], [1, 6, 5],  # x+
        [0, 4, 7], [0, 7, 3],  # x-
    ]
)


def signed_volume(vertices, triangles) -> float:
    c = vertices[triangles]
    return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)


def _outward(V, F) -> TriMesh:
    if signed_volume(V, F) < 0:
        F = F[:, ::-1]
    return TriMesh(V, np.ascontiguousarray(F))


def box_mesh(lo, hi) -> TriMesh:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    V = np.array(
        [
            [lo[0], lo[1], lo[2]], [hi[0], lo[1], lo[2]], [hi[0], hi[1], lo[2]], [lo[0], hi[1], lo[2]],
            [lo[0], lo[1], hi[2]], [hi[0], lo[1], hi[2]], [hi[0], hi[1], hi[2]], [lo[0], hi[1], hi[2]],
        ]
    )
    return TriMesh(V, _BOX_FACES.copy())


def centered_box(center, size) -> TriMesh:
    c = np.asarray(center, dtype=np.float64)
    s = 0.5 * np.asarray(size, dtype=np.float64)
    return box_mesh(c - s, c + s)


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    p = (1.0 + np.sqrt(5.0)) / 2.0
    V = [[-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0], [0, -1, p], [0, 1, p],
         [0, -1, -p], [0, 1, -p], [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1]]
    F = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    V = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in V]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = V[a] + V[b]
                V.append(m / np.linalg.norm(m))
                cache[key] = len(V) - 1
            return cache[key]

        nf = []
        for a, b, c in F:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        F = nf
    return _outward(np.array(V) * radius, np.array(F, dtype=np.int64))


def revolve(profile, segments: int = 48) -> TriMesh:
    """Surface of revolution about z of a closed (r, z) profile loop.

    Points with r == 0 become single pole vertices.
    """
    prof = np.asarray(profile, dtype=np.float64)
    theta = np.arange(segments) * (2 * np.pi / segments)
    cos, sin = np.cos(theta), np.sin(theta)
    V, ring = [], []
    for r, z in prof:
        if r == 0.0:
            ring.append([len(V)] * segments)
            V.append([0.0, 0.0, z])
        else:
            ring.append(list(range(len(V), len(V) + segments)))
            V.extend(np.stack([r * cos, r * sin, np.full(segments, z)], axis=1).tolist())
    F = []
    n = len(prof)
    for a in range(n):
        b = (a + 1) % n
        for s in range(segments):
            t = (s + 1) % segments
            q = [ring[a][s], ring[b][s], ring[b][t], ring[a][t]]
            for tri in ([q[0], q[1], q[2]], [q[0], q[2], q[3]]):
                if len(set(tri)) == 3:
                    F.append(tri)
    return _outward(np.array(V), np.array(F, dtype=np.int64))


def superellipsoid(radii=(1.0, 1.0, 1.0), e1: float = 1.0, e2: float = 1.0, n: int = 32) -> TriMesh:
    """Superquadric surface; e1 shapes the vertical profile, e2 the horizontal one."""

    def spow(x, e):
        return np.sign(x) * np.abs(x) ** e

    eta = np.linspace(-np.pi / 2, np.pi / 2, n + 1)[1:-1]
    omega = np.arange(2 * n) * (np.pi / n)
    E, W = np.meshgrid(eta, omega, indexing="ij")
    x = radii[0] * spow(np.cos(E), e1) * spow(np.cos(W), e2)
    y = radii[1] * spow(np.cos(E), e1) * spow(np.sin(W), e2)
    z = radii[2] * spow(np.sin(E), e1)
    V = np.concatenate([np.stack([x, y, z], -1).reshape(-1, 3), [[0, 0, -radii[2]], [0, 0, radii[2]]]])
    rows, cols = E.shape
    south, north = len(V) - 2, len(V) - 1
    F = []
    idx = lambda i, j: i * cols + (j % cols)
    for i in range(rows - 1):
        for j in range(cols):
            a, b, c, d = idx(i, j), idx(i, j + 1), idx(i + 1, j + 1), idx(i + 1, j)
            F += [[a, b, c], [a, c, d]]
    for j in range(cols):
        F.append([south, idx(0, j + 1), idx(0, j)])
        F.append([north, idx(rows - 1, j), idx(rows - 1, j + 1)])
    return _outward(V, np.array(F, dtype=np.int64))


# ---------------------------------------------------------------------------
# Categories
# ---------------------------------------------------------------------------


def box_table(rng: np.random.Generator) -> TriMesh:
    w, d = rng.uniform(1.2, 2.0), rng.uniform(0.8, 1.4)
    h = rng.uniform(0.7, 1.1)
    top_t = rng.uniform(0.14, 0.2)
    leg = rng.uniform(0.14, 0.2)
    inset = rng.uniform(0.02, 0.15)
    parts = [box_mesh([-w / 2, -d / 2, h - top_t], [w / 2, d / 2, h])]
    for sx in (-1, 1):
        for sy in (-1, 1):
            cx = sx * (w / 2 - inset - leg / 2)
            cy = sy * (d / 2 - inset - leg / 2)
            parts.append(box_mesh([cx - leg / 2, cy - leg / 2, 0.0], [cx + leg / 2, cy + leg / 2, h - top_t]))
    return TriMesh.concatenate(parts)


def slat_chair(rng: np.random.Generator) -> TriMesh:
    w, d = rng.uniform(0.8, 1.1), rng.uniform(0.8, 1.1)
    seat_h, seat_t = rng.uniform(0.8, 1.0), rng.uniform(0.16, 0.22)
    back_h = rng.uniform(0.8, 1.1)
    leg = rng.uniform(0.16, 0.22)
    n_slats = int(rng.integers(2, 4))
    parts = [box_mesh([-w / 2, -d / 2, seat_h - seat_t], [w / 2, d / 2, seat_h])]
    for sx in (-1, 1):
        for sy in (-1, 1):
            cx, cy = sx * (w / 2 - leg / 2), sy * (d / 2 - leg / 2)
            top = seat_h - seat_t
            if sy > 0:  # back legs continue up as posts
                parts.append(box_mesh([cx - leg / 2, cy - leg / 2, 0.0], [cx + leg / 2, cy + leg / 2, top]))
                parts.append(box_mesh([cx - leg / 2, cy - leg / 2, seat_h], [cx + leg / 2, cy + leg / 2, seat_h + back_h]))
            else:
                parts.append(box_mesh([cx - leg / 2, cy - leg / 2, 0.0], [cx + leg / 2, cy + leg / 2, top]))
    slat_h = 0.55 * back_h / n_slats
    gap = (back_h - n_slats * slat_h) / n_slats
    y1 = d / 2 - leg
    for s in range(n_slats):
        z1 = seat_h + back_h - s * (slat_h + gap)
        parts.append(box_mesh([-w / 2 + leg, y1 + 0.1 * leg, z1 - slat_h], [w / 2 - leg, y1 + 0.9 * leg, z1]))
    return TriMesh.concatenate(parts)


def open_cup(rng: np.random.Generator) -> TriMesh:
    R = rng.uniform(0.55, 0.7)
    H = rng.uniform(0.8, 1.1)
    t = rng.uniform(0.11, 0.15)
    tb = rng.uniform(0.12, 0.18)
    taper = rng.uniform(0.8, 1.0)
    profile = [(0.0, 0.0), (R * taper, 0.0), (R, H), (R - t, H), (R * taper - t, tb), (0.0, tb)]
    body = revolve(profile, segments=40)
    # bracket-shaped handle on the +x side, leaving a hole seen from the side
    ht = rng.uniform(0.12, 0.16)
    reach = rng.uniform(0.25, 0.4)
    z_lo, z_hi = rng.uniform(0.15, 0.3) * H, rng.uniform(0.65, 0.8) * H
    x0 = R - t
    x_mid = 0.5 * (R + R * taper)
    parts = [
        body,
        box_mesh([x0, -ht / 2, z_hi - ht], [x_mid + reach + ht, ht / 2, z_hi]),
        box_mesh([x0, -ht / 2, z_lo], [x_mid + reach + ht, ht / 2, z_lo + ht]),
        box_mesh([x_mid + reach, -ht / 2, z_lo], [x_mid + reach + ht, ht / 2, z_hi]),
    ]
    return TriMesh.concatenate(parts)


def superellipsoid_shape(rng: np.random.Generator) -> TriMesh:
    radii = rng.uniform(0.6, 1.0, size=3)
    e1, e2 = rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0)
    return superellipsoid(radii, e1, e2, n=32)


def bar_frame(rng: np.random.Generator) -> TriMesh:
    """Twelve bars along the edges of a cuboid."""
    a, b, c = rng.uniform(0.7, 1.2, size=3)
    t = rng.uniform(0.12, 0.16)
    parts = []
    for sy in (0, 1):
        for sz in (0, 1):
            y, z = sy * (b - t), sz * (c - t)
            parts.append(box_mesh([0, y, z], [a, y + t, z + t]))
    for sx in (0, 1):
        for sz in (0, 1):
            x, z = sx * (a - t), sz * (c - t)
            parts.append(box_mesh([x, t, z], [x + t, b - t, z + t]))
    for sx in (0, 1):
        for sy in (0, 1):
            x, y = sx * (a - t), sy * (b - t)
            parts.append(box_mesh([x, y, t], [x + t, y + t, c - t]))
    return TriMesh.concatenate(parts)


_BUILDERS = {
    "box-table": box_table,
    "slat-chair": slat_chair,
    "open-cup": open_cup,
    "superellipsoid": superellipsoid_shape,
    "bar-frame": bar_frame,
}

CONVEX = frozenset({"superellipsoid"})


def make_shape(category: str, rng: np.random.Generator) -> TriMesh:
    try:
        build = _BUILDERS[category]
    except KeyError:
        raise ValueError(f"unknown category {category!r}; choose from {', '.join(CATEGORIES)}") from None
    mesh, _ = normalize_mesh(build(rng))
    return mesh
