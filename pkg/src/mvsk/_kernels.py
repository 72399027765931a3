"""Compiled inner loops. All kernels are serial and release the GIL."""

import math

import numpy as np
from numba import njit

_EDGE_EPS = 1e-12


# ---------------------------------------------------------------------------
# Orthographic rasterization: first and last hit depth per pixel
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def raster_minmax(xs, ys, ds, tris, res, front, back):
    """Point-sample triangles at pixel centres, keeping min and max depth.

    ``xs, ys`` are image-plane coordinates in [-1, 1] (x right, y up), ``ds``
    depths. Row 0 is the top of the image. Coverage tests are closed (a centre
    on a shared edge hits both triangles), which is harmless because only the
    extreme depths are kept.
    """
    pix = 2.0 / res
    for t in range(tris.shape[0]):
        a = tris[t, 0]
        b = tris[t, 1]
        c = tris[t, 2]
        x0 = xs[a]; y0 = ys[a]; z0 = ds[a]
        x1 = xs[b]; y1 = ys[b]; z1 = ds[b]
        x2 = xs[c]; y2 = ys[c]; z2 = ds[c]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        scale = abs(x1 - x0) + abs(y1 - y0) + abs(x2 - x0) + abs(y2 - y0)
        if abs(area) <= 1e-14 * scale * scale:
            continue
        inv = 1.0 / area
        xmin = min(x0, x1, x2); xmax = max(x0, x1, x2)
        ymin = min(y0, y1, y2); ymax = max(y0, y1, y2)
        j0 = max(0, int(math.ceil((xmin + 1.0) / pix - 0.5)))
        j1 = min(res - 1, int(math.floor((xmax + 1.0) / pix - 0.5)))
        i0 = max(0, int(math.ceil((1.0 - ymax) / pix - 0.5)))
        i1 = min(res - 1, int(math.floor((1.0 - ymin) / pix - 0.5)))
        tol = -_EDGE_EPS
        for i in range(i0, i1 + 1):
            py = 1.0 - (i + 0.5) * pix
            for j in range(j0, j1 + 1):
                px = (j + 0.5) * pix - 1.0
                w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) * inv
                w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) * inv
                w2 = ((x0 - px) * (y1 - py) - (x1 - px) * (y0 - py)) * inv
                if w0 < tol or w1 < tol or w2 < tol:
                    continue
                z = w0 * z0 + w1 * z1 + w2 * z2
                if z < front[i, j]:
                    front[i, j] = z
                if z > back[i, j]:
                    back[i, j] = z


# ---------------------------------------------------------------------------
# Surface voxelization along lattice lines
# ---------------------------------------------------------------------------


# lattice lines are nudged by these generic offsets so no line passes exactly
# through a mesh edge or vertex; every crossing is then counted once
_LINE_DU = 1.4142135623730951e-9
_LINE_DV = 1.7320508075688772e-9


@njit(cache=True, nogil=True)
def _axis_crossings(corners, n, axis, fill, line, wpos, sign):
    """Crossings of axis-parallel lattice lines with triangles.

    Lines run along ``axis`` through voxel centres; the line (iu, iv) has id
    iu * n + iv, where u, v are the axes (axis + 1) % 3 and (axis + 2) % 3.
    With ``fill`` False only the count is returned.
    """
    p = (axis + 1) % 3
    q = (axis + 2) % 3
    m = 0
    for t in range(corners.shape[0]):
        u0 = corners[t, 0, p]; v0 = corners[t, 0, q]; w0 = corners[t, 0, axis]
        u1 = corners[t, 1, p]; v1 = corners[t, 1, q]; w1 = corners[t, 1, axis]
        u2 = corners[t, 2, p]; v2 = corners[t, 2, q]; w2 = corners[t, 2, axis]
        area = (u1 - u0) * (v2 - v0) - (u2 - u0) * (v1 - v0)
        if area == 0.0:
            continue
        inv = 1.0 / area
        lo_u = max(0, int(math.ceil(min(u0, u1, u2) - 0.5 - _LINE_DU)))
        hi_u = min(n - 1, int(math.floor(max(u0, u1, u2) - 0.5 - _LINE_DU)))
        lo_v = max(0, int(math.ceil(min(v0, v1, v2) - 0.5 - _LINE_DV)))
        hi_v = min(n - 1, int(math.floor(max(v0, v1, v2) - 0.5 - _LINE_DV)))
        s = 1 if area > 0.0 else -1
        for iu in range(lo_u, hi_u + 1):
            pu = iu + 0.5 + _LINE_DU
            for iv in range(lo_v, hi_v + 1):
                pv = iv + 0.5 + _LINE_DV
                b0 = ((u1 - pu) * (v2 - pv) - (u2 - pu) * (v1 - pv)) * inv
                b1 = ((u2 - pu) * (v0 - pv) - (u0 - pu) * (v2 - pv)) * inv
                b2 = 1.0 - b0 - b1
                if b0 < 0.0 or b1 < 0.0 or b2 < 0.0:
                    continue
                if fill:
                    line[m] = iu * n + iv
                    wpos[m] = b0 * w0 + b1 * w1 + b2 * w2
                    sign[m] = s
                m += 1
    return m


@njit(cache=True, nogil=True)
def _set(occ, axis, k, iu, iv):
    if axis == 0:
        occ[k, iu, iv] = True
    elif axis == 1:
        occ[iv, k, iu] = True
    else:
        occ[iu, iv, k] = True


@njit(cache=True, nogil=True)
def _mark_lines(line, wpos, sign, n, axis, occ):
    """Mark enclosed centres next to a crossing, plus enclosed centres on the window border.

    ``line``/``wpos``/``sign`` are sorted by (line, wpos). Winding numbers are
    counted from both ends of the line: an outward-wound surface is left toward
    +axis through faces with positive sign and toward -axis through faces with
    negative sign. Each crossing marks its neighbouring centre on the
    triangle's inner side if that centre is enclosed from either end; border
    centres are marked only when enclosed from both ends, so an open surface
    never closes itself along the window.
    """
    up = np.zeros(n, dtype=np.int64)
    down = np.zeros(n, dtype=np.int64)
    a = 0
    total = line.shape[0]
    while a < total:
        b = a
        while b < total and line[b] == line[a]:
            b += 1
        iu = line[a] // n
        iv = line[a] % n
        wind = 0
        c = b - 1
        for k in range(n - 1, -1, -1):
            while c >= a and wpos[c] > k + 0.5:
                wind += sign[c]
                c -= 1
            up[k] = wind
        wind = 0
        c = a
        for k in range(n):
            while c < b and wpos[c] <= k + 0.5:
                wind -= sign[c]
                c += 1
            down[k] = wind
        for c in range(a, b):
            if sign[c] > 0:
                k = int(math.floor(wpos[c] - 0.5))
            else:
                k = int(math.ceil(wpos[c] - 0.5))
            if 0 <= k < n and (up[k] > 0 or down[k] > 0):
                _set(occ, axis, k, iu, iv)
        for k in (0, n - 1):
            if up[k] > 0 and down[k] > 0:
                _set(occ, axis, k, iu, iv)
        a = b


def mark_surface(corners, n, occ):
    """Boundary voxels of the set of voxel centres enclosed by the mesh.

    ``corners`` is (F, 3, 3) in voxel units (voxel k spans [k, k+1) on each
    axis, centre k + 0.5). Along each lattice line an enclosed centre whose
    neighbour across a crossing is not enclosed gets marked (for a closed
    surface the net crossing sign between them forces at least one crossing to
    have it on its inner side), and so does an enclosed centre on the window
    border. The marked set separates every enclosed centre from the grid border
    through face-connected steps. Returns the number of crossings found.
    """
    found = 0
    for axis in range(3):
        m = _axis_crossings(corners, n, axis, False, np.empty(0, np.int64), np.empty(0), np.empty(0, np.int64))
        if m == 0:
            continue
        line = np.empty(m, np.int64)
        wpos = np.empty(m)
        sign = np.empty(m, np.int64)
        _axis_crossings(corners, n, axis, True, line, wpos, sign)
        order = np.lexsort((wpos, line))
        _mark_lines(line[order], wpos[order], sign[order], n, axis, occ)
        found += m
    return found


# ---------------------------------------------------------------------------
# Ray visibility through a voxel grid
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def ray_escapes(occ, i, j, k, dx, dy, dz):
    """3D DDA from the centre of voxel (i, j, k); True if it leaves the grid unblocked.

    Steps one axis at a time (face-adjacent cells only); ties go to the lowest axis.
    """
    n0 = occ.shape[0]; n1 = occ.shape[1]; n2 = occ.shape[2]
    inf = np.inf
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    sz = 1 if dz > 0 else -1
    tdx = 1.0 / abs(dx) if dx != 0.0 else inf
    tdy = 1.0 / abs(dy) if dy != 0.0 else inf
    tdz = 1.0 / abs(dz) if dz != 0.0 else inf
    tx = 0.5 * tdx
    ty = 0.5 * tdy
    tz = 0.5 * tdz
    while True:
        if tx <= ty and tx <= tz:
            i += sx
            if i < 0 or i >= n0:
                return True
            tx += tdx
        elif ty <= tz:
            j += sy
            if j < 0 or j >= n1:
                return True
            ty += tdy
        else:
            k += sz
            if k < 0 or k >= n2:
                return True
            tz += tdz
        if occ[i, j, k]:
            return False


@njit(cache=True, nogil=True)
def invisible_voxels(occ, candidates, dirs):
    """For each candidate empty voxel, True if no direction in ``dirs`` escapes."""
    out = np.zeros(candidates.shape[0], dtype=np.bool_)
    for c in range(candidates.shape[0]):
        i = candidates[c, 0]; j = candidates[c, 1]; k = candidates[c, 2]
        blocked = True
        for r in range(dirs.shape[0]):
            if ray_escapes(occ, i, j, k, dirs[r, 0], dirs[r, 1], dirs[r, 2]):
                blocked = False
                break
        out[c] = blocked
    return out


# ---------------------------------------------------------------------------
# Point-triangle distance and BVH queries
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def point_triangle_sqdist(px, py, pz, tri):
    """Squared distance from a point to a closed triangle (Voronoi-region method)."""
    ax = tri[0, 0]; ay = tri[0, 1]; az = tri[0, 2]
    bx = tri[1, 0]; by = tri[1, 1]; bz = tri[1, 2]
    cx = tri[2, 0]; cy = tri[2, 1]; cz = tri[2, 2]
    abx = bx - ax; aby = by - ay; abz = bz - az
    acx = cx - ax; acy = cy - ay; acz = cz - az
    apx = px - ax; apy = py - ay; apz = pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        qx = ax; qy = ay; qz = az
    else:
        bpx = px - bx; bpy = py - by; bpz = pz - bz
        d3 = abx * bpx + aby * bpy + abz * bpz
        d4 = acx * bpx + acy * bpy + acz * bpz
        if d3 >= 0.0 and d4 <= d3:
            qx = bx; qy = by; qz = bz
        else:
            vc = d1 * d4 - d3 * d2
            if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
                v = d1 / (d1 - d3)
                qx = ax + v * abx; qy = ay + v * aby; qz = az + v * abz
            else:
                cpx = px - cx; cpy = py - cy; cpz = pz - cz
                d5 = abx * cpx + aby * cpy + abz * cpz
                d6 = acx * cpx + acy * cpy + acz * cpz
                if d6 >= 0.0 and d5 <= d6:
                    qx = cx; qy = cy; qz = cz
                else:
                    vb = d5 * d2 - d1 * d6
                    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
                        w = d2 / (d2 - d6)
                        qx = ax + w * acx; qy = ay + w * acy; qz = az + w * acz
                    else:
                        va = d3 * d6 - d5 * d4
                        if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
                            w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                            qx = bx + w * (cx - bx); qy = by + w * (cy - by); qz = bz + w * (cz - bz)
                        else:
                            denom = 1.0 / (va + vb + vc)
                            v = vb * denom
                            w = vc * denom
                            qx = ax + abx * v + acx * w
                            qy = ay + aby * v + acy * w
                            qz = az + abz * v + acz * w
    ex = px - qx; ey = py - qy; ez = pz - qz
    return ex * ex + ey * ey + ez * ez


@njit(cache=True, nogil=True)
def brute_force_sqdist(points, corners):
    out = np.empty(points.shape[0])
    for p in range(points.shape[0]):
        best = np.inf
        for t in range(corners.shape[0]):
            d = point_triangle_sqdist(points[p, 0], points[p, 1], points[p, 2], corners[t])
            if d < best:
                best = d
        out[p] = best
    return out


@njit(cache=True, nogil=True)
def _box_sqdist(px, py, pz, lo, hi):
    d = 0.0
    if px < lo[0]:
        d += (lo[0] - px) ** 2
    elif px > hi[0]:
        d += (px - hi[0]) ** 2
    if py < lo[1]:
        d += (lo[1] - py) ** 2
    elif py > hi[1]:
        d += (py - hi[1]) ** 2
    if pz < lo[2]:
        d += (lo[2] - pz) ** 2
    elif pz > hi[2]:
        d += (pz - hi[2]) ** 2
    return d


@njit(cache=True, nogil=True)
def bvh_sqdist(points, corners, order, node_lo, node_hi, node_left, node_right, node_start, node_count):
    """Exact nearest squared distance from each point to the triangle set.

    A node is skipped only when its box is strictly farther than the best
    distance found so far, so the result equals the brute-force minimum.
    """
    out = np.empty(points.shape[0])
    stack = np.empty(128, dtype=np.int64)
    for p in range(points.shape[0]):
        px = points[p, 0]; py = points[p, 1]; pz = points[p, 2]
        best = np.inf
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            nd = stack[top]
            if _box_sqdist(px, py, pz, node_lo[nd], node_hi[nd]) > best:
                continue
            if node_left[nd] < 0:
                s = node_start[nd]
                for m in range(s, s + node_count[nd]):
                    d = point_triangle_sqdist(px, py, pz, corners[order[m]])
                    if d < best:
                        best = d
            else:
                l = node_left[nd]
                r = node_right[nd]
                dl = _box_sqdist(px, py, pz, node_lo[l], node_hi[l])
                dr = _box_sqdist(px, py, pz, node_lo[r], node_hi[r])
                # push the farther child first so the nearer one is visited next
                if dl <= dr:
                    stack[top] = r
                    stack[top + 1] = l
                else:
                    stack[top] = l
                    stack[top + 1] = r
                top += 2
        out[p] = best
    return out
