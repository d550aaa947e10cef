"""Compiled inner loops: BVH queries, ray parity, triangle predicates.

Node layout (see ``bvh.Bvh``): ``nmin/nmax`` (n_nodes, 3) boxes, ``left/right``
child indices (-1 on leaves), ``start/count`` ranges into ``order`` which maps
to triangle ids.  Node 0 is the root.
"""

import math

import numpy as np
from numba import njit

EDGE_EPS = 1e-9  # ray hits closer than this to an edge/vertex are re-cast
JITTER = 1e-6
_STACK = 128
_BARY_MARGIN = 1e-4  # well above EDGE_EPS / triangle height for any sane mesh


# --------------------------------------------------------------------------
# small vector helpers

@njit(cache=True, inline="always")
def _dot(a0, a1, a2, b0, b1, b2):
    return a0 * b0 + a1 * b1 + a2 * b2


@njit(cache=True)
def _box_dist2(p, nmin, nmax, node):
    d2 = 0.0
    for k in range(3):
        lo = nmin[node, k]
        hi = nmax[node, k]
        if p[k] < lo:
            d = lo - p[k]
            d2 += d * d
        elif p[k] > hi:
            d = p[k] - hi
            d2 += d * d
    return d2


@njit(cache=True)
def _tri_dist2(p, tris, t):
    """Squared distance from p to the closed triangle ``tris[t]`` (Ericson's region test)."""
    a0, a1, a2 = tris[t, 0, 0], tris[t, 0, 1], tris[t, 0, 2]
    b0, b1, b2 = tris[t, 1, 0], tris[t, 1, 1], tris[t, 1, 2]
    c0, c1, c2 = tris[t, 2, 0], tris[t, 2, 1], tris[t, 2, 2]
    p0, p1, p2 = p[0], p[1], p[2]
    ab0, ab1, ab2 = b0 - a0, b1 - a1, b2 - a2
    ac0, ac1, ac2 = c0 - a0, c1 - a1, c2 - a2
    ap0, ap1, ap2 = p0 - a0, p1 - a1, p2 - a2
    d1 = _dot(ab0, ab1, ab2, ap0, ap1, ap2)
    d2 = _dot(ac0, ac1, ac2, ap0, ap1, ap2)
    if d1 <= 0.0 and d2 <= 0.0:
        return _dot(ap0, ap1, ap2, ap0, ap1, ap2)
    bp0, bp1, bp2 = p0 - b0, p1 - b1, p2 - b2
    d3 = _dot(ab0, ab1, ab2, bp0, bp1, bp2)
    d4 = _dot(ac0, ac1, ac2, bp0, bp1, bp2)
    if d3 >= 0.0 and d4 <= d3:
        return _dot(bp0, bp1, bp2, bp0, bp1, bp2)
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        q0, q1, q2 = ap0 - v * ab0, ap1 - v * ab1, ap2 - v * ab2
        return _dot(q0, q1, q2, q0, q1, q2)
    cp0, cp1, cp2 = p0 - c0, p1 - c1, p2 - c2
    d5 = _dot(ab0, ab1, ab2, cp0, cp1, cp2)
    d6 = _dot(ac0, ac1, ac2, cp0, cp1, cp2)
    if d6 >= 0.0 and d5 <= d6:
        return _dot(cp0, cp1, cp2, cp0, cp1, cp2)
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        q0, q1, q2 = ap0 - w * ac0, ap1 - w * ac1, ap2 - w * ac2
        return _dot(q0, q1, q2, q0, q1, q2)
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        q0 = bp0 - w * (c0 - b0)
        q1 = bp1 - w * (c1 - b1)
        q2 = bp2 - w * (c2 - b2)
        return _dot(q0, q1, q2, q0, q1, q2)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    q0 = ap0 - ab0 * v - ac0 * w
    q1 = ap1 - ab1 * v - ac1 * w
    q2 = ap2 - ab2 * v - ac2 * w
    return _dot(q0, q1, q2, q0, q1, q2)


@njit(cache=True)
def point_triangle_dist2(p, a, b, c):
    tris = np.empty((1, 3, 3))
    tris[0, 0] = a
    tris[0, 1] = b
    tris[0, 2] = c
    return _tri_dist2(p, tris, 0)


# --------------------------------------------------------------------------
# nearest triangle

@njit(cache=True)
def _nearest(p, bound2, seed_tri, stack, nmin, nmax, left, right, start, count, order, tris):
    best = bound2
    best_i = -1
    if seed_tri >= 0:
        d2 = _tri_dist2(p, tris, seed_tri)
        if d2 <= best:
            best = d2
            best_i = seed_tri
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _box_dist2(p, nmin, nmax, node) > best:
            continue
        if left[node] < 0:
            for k in range(start[node], start[node] + count[node]):
                t = order[k]
                d2 = _tri_dist2(p, tris, t)
                if d2 < best or (d2 == best and (best_i < 0 or t < best_i)):
                    best = d2
                    best_i = t
        else:
            l, r = left[node], right[node]
            dl = _box_dist2(p, nmin, nmax, l)
            dr = _box_dist2(p, nmin, nmax, r)
            if dl <= dr:
                if dr <= best:
                    stack[sp] = r
                    sp += 1
                if dl <= best:
                    stack[sp] = l
                    sp += 1
            else:
                if dl <= best:
                    stack[sp] = l
                    sp += 1
                if dr <= best:
                    stack[sp] = r
                    sp += 1
    return best, best_i


@njit(cache=True)
def nearest_dist2(p, bound2, nmin, nmax, left, right, start, count, order, tris):
    """Squared distance to the closest triangle, pruning with ``bound2``.

    Returns ``(d2, tri)``; ``tri`` is -1 when nothing lies within the bound.
    """
    stack = np.empty(_STACK, np.int64)
    return _nearest(p, bound2, -1, stack, nmin, nmax, left, right, start, count, order, tris)


@njit(cache=True)
def nearest_dist_many(points, nmin, nmax, left, right, start, count, order, tris):
    out = np.empty(len(points))
    stack = np.empty(_STACK, np.int64)
    for i in range(len(points)):
        d2, _ = _nearest(points[i], np.inf, -1, stack, nmin, nmax, left, right, start, count, order, tris)
        out[i] = math.sqrt(d2)
    return out


@njit(cache=True)
def lattice_unsigned(origin, h, nx, ny, nz, nmin, nmax, left, right, start, count, order, tris):
    """Exact unsigned distance at every lattice point, x-fastest layout.

    The previous point's closest triangle seeds the search, which makes the
    initial pruning bound at most one lattice step above the answer.
    """
    out = np.empty(nx * ny * nz)
    p = np.empty(3)
    stack = np.empty(_STACK, np.int64)
    row_seed = -1
    for k in range(nz):
        for j in range(ny):
            seed = row_seed
            for i in range(nx):
                p[0] = origin[0] + i * h
                p[1] = origin[1] + j * h
                p[2] = origin[2] + k * h
                d2, t = _nearest(p, np.inf, seed, stack, nmin, nmax, left, right, start, count, order, tris)
                seed = t
                if i == 0:
                    row_seed = t
                out[i + nx * (j + ny * k)] = math.sqrt(d2)
    return out


# --------------------------------------------------------------------------
# rays

@njit(cache=True)
def _ray_box(o, inv, dzero, nmin, nmax, node):
    t0 = 0.0
    t1 = np.inf
    for k in range(3):
        lo = nmin[node, k]
        hi = nmax[node, k]
        if dzero[k]:
            if o[k] < lo or o[k] > hi:
                return False
        else:
            ta = (lo - o[k]) * inv[k]
            tb = (hi - o[k]) * inv[k]
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
            if t0 > t1:
                return False
    return True


@njit(cache=True)
def _ray_tri(o, d, tris, t):
    """Return (hit, degenerate) for the ray o + s d, s > 0, against ``tris[t]``."""
    a0, a1, a2 = tris[t, 0, 0], tris[t, 0, 1], tris[t, 0, 2]
    e10, e11, e12 = tris[t, 1, 0] - a0, tris[t, 1, 1] - a1, tris[t, 1, 2] - a2
    e20, e21, e22 = tris[t, 2, 0] - a0, tris[t, 2, 1] - a1, tris[t, 2, 2] - a2
    p0 = d[1] * e22 - d[2] * e21
    p1 = d[2] * e20 - d[0] * e22
    p2 = d[0] * e21 - d[1] * e20
    det = e10 * p0 + e11 * p1 + e12 * p2
    n0 = e11 * e22 - e12 * e21
    n1 = e12 * e20 - e10 * e22
    n2 = e10 * e21 - e11 * e20
    nn = n0 * n0 + n1 * n1 + n2 * n2
    if nn == 0.0:
        return False, False
    if det * det <= 1e-30 * nn:
        return False, False  # parallel; neighbouring triangles flag grazing rays
    inv = 1.0 / det
    s0, s1, s2 = o[0] - a0, o[1] - a1, o[2] - a2
    u = (s0 * p0 + s1 * p1 + s2 * p2) * inv
    q0 = s1 * e12 - s2 * e11
    q1 = s2 * e10 - s0 * e12
    q2 = s0 * e11 - s1 * e10
    v = (d[0] * q0 + d[1] * q1 + d[2] * q2) * inv
    w = 1.0 - u - v
    # clear misses and clear interior hits skip the exact edge-distance test
    bmin = min(u, min(v, w))
    if bmin < -_BARY_MARGIN:
        return False, False
    if (e20 * q0 + e21 * q1 + e22 * q2) * inv <= 0.0:
        return False, False
    if bmin > _BARY_MARGIN:
        return True, False
    # barycentric -> distance to the opposite edge: coord * 2A / |edge|
    area2 = math.sqrt(nn)
    la = math.sqrt(e20 * e20 + e21 * e21 + e22 * e22)
    lb = math.sqrt(e10 * e10 + e11 * e11 + e12 * e12)
    f0, f1, f2 = e20 - e10, e21 - e11, e22 - e12
    lc = math.sqrt(f0 * f0 + f1 * f1 + f2 * f2)
    du = u * area2 / la
    dv = v * area2 / lb
    dw = w * area2 / lc
    m = min(du, min(dv, dw))
    if m < -EDGE_EPS:
        return False, False
    if m < EDGE_EPS:
        return False, True
    return True, False


@njit(cache=True)
def ray_crossings(o, d, stack, inv, dzero, nmin, nmax, left, right, start, count, order, tris):
    """Number of crossings of the ray with the mesh and a degeneracy flag.

    ``stack``, ``inv`` and ``dzero`` are caller-owned scratch buffers.
    """
    for k in range(3):
        if d[k] == 0.0:
            dzero[k] = True
            inv[k] = 0.0
        else:
            dzero[k] = False
            inv[k] = 1.0 / d[k]
    n = 0
    degenerate = False
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _ray_box(o, inv, dzero, nmin, nmax, node):
            continue
        if left[node] < 0:
            for k in range(start[node], start[node] + count[node]):
                t = order[k]
                hit, deg = _ray_tri(o, d, tris, t)
                if deg:
                    degenerate = True
                elif hit:
                    n += 1
        else:
            stack[sp] = left[node]
            stack[sp + 1] = right[node]
            sp += 2
    return n, degenerate


@njit(cache=True)
def _jitter_dir(d, axis, key, attempt):
    # splitmix64-style hash -> two small perpendicular offsets
    x = np.uint64(key) * np.uint64(0x9E3779B97F4A7C15) + np.uint64(attempt + 1) * np.uint64(0xBF58476D1CE4E5B9)
    x ^= x >> np.uint64(31)
    x *= np.uint64(0x94D049BB133111EB)
    x ^= x >> np.uint64(29)
    r1 = float(x & np.uint64(0xFFFFFF)) / 16777216.0 - 0.5
    r2 = float((x >> np.uint64(24)) & np.uint64(0xFFFFFF)) / 16777216.0 - 0.5
    d[axis] = 1.0
    d[(axis + 1) % 3] = 2.0 * JITTER * (r1 + (0.25 if r1 >= 0 else -0.25))
    d[(axis + 2) % 3] = 2.0 * JITTER * (r2 + (0.25 if r2 >= 0 else -0.25))
    nrm = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
    for k in range(3):
        d[k] /= nrm


@njit(cache=True)
def parity_axis(p, axis, key, ws, nmin, nmax, left, right, start, count, order, tris):
    """Inside/outside by crossing parity along +axis, re-cast on degenerate hits.

    ``ws`` is a scratch tuple from ``_workspace``.
    """
    stack, d, inv, dzero = ws
    d[:] = 0.0
    d[axis] = 1.0
    n, deg = ray_crossings(p, d, stack, inv, dzero, nmin, nmax, left, right, start, count, order, tris)
    attempt = 0
    while deg and attempt < 8:
        _jitter_dir(d, axis, key, attempt)
        n, deg = ray_crossings(p, d, stack, inv, dzero, nmin, nmax, left, right, start, count, order, tris)
        attempt += 1
    return n % 2 == 1


@njit(cache=True)
def _workspace():
    return np.empty(_STACK, np.int64), np.zeros(3), np.empty(3), np.zeros(3, np.bool_)


@njit(cache=True)
def inside_vote(points, n_rays, aabb_lo, aabb_hi, nmin, nmax, left, right, start, count, order, tris):
    """Majority vote of ``n_rays`` axis rays (1 or 3). Returns (inside, disagreement).

    Rays stop once the majority is settled, so disagreement only counts
    rays actually cast.
    """
    m = len(points)
    inside = np.zeros(m, np.bool_)
    disagree = np.zeros(m, np.bool_)
    ws = _workspace()
    for i in range(m):
        p = points[i]
        if (p[0] < aabb_lo[0] or p[1] < aabb_lo[1] or p[2] < aabb_lo[2]
                or p[0] > aabb_hi[0] or p[1] > aabb_hi[1] or p[2] > aabb_hi[2]):
            continue
        votes = 0
        cast = 0
        for a in range(n_rays):
            if parity_axis(p, a, i, ws, nmin, nmax, left, right, start, count, order, tris):
                votes += 1
            cast += 1
            if 2 * votes > n_rays or 2 * (cast - votes) > n_rays:
                break  # the majority is settled
        inside[i] = 2 * votes > n_rays
        disagree[i] = votes != 0 and votes != cast
    return inside, disagree


@njit(cache=True)
def _raster(axis, origin, h, dims, tris, face_ok, counts, degenerate, xs, fill, write):
    b = (axis + 1) % 3
    c = (axis + 2) % 3
    nb, nc = dims[b], dims[c]
    for t in range(len(tris)):
        if not face_ok[t]:
            continue
        P = tris[t]
        ub0, uc0 = P[0, b], P[0, c]
        ub1, uc1 = P[1, b], P[1, c]
        ub2, uc2 = P[2, b], P[2, c]
        area = (ub1 - ub0) * (uc2 - uc0) - (uc1 - uc0) * (ub2 - ub0)
        if area == 0.0:
            continue
        lo_b = min(ub0, min(ub1, ub2))
        hi_b = max(ub0, max(ub1, ub2))
        lo_c = min(uc0, min(uc1, uc2))
        hi_c = max(uc0, max(uc1, uc2))
        jb0 = max(0, int(math.ceil((lo_b - EDGE_EPS - origin[b]) / h)))
        jb1 = min(nb - 1, int(math.floor((hi_b + EDGE_EPS - origin[b]) / h)))
        jc0 = max(0, int(math.ceil((lo_c - EDGE_EPS - origin[c]) / h)))
        jc1 = min(nc - 1, int(math.floor((hi_c + EDGE_EPS - origin[c]) / h)))
        l0 = math.sqrt((ub2 - ub1) ** 2 + (uc2 - uc1) ** 2)
        l1 = math.sqrt((ub0 - ub2) ** 2 + (uc0 - uc2) ** 2)
        l2 = math.sqrt((ub1 - ub0) ** 2 + (uc1 - uc0) ** 2)
        sgn = 1.0 if area > 0 else -1.0
        s = sgn * area
        for jc in range(jc0, jc1 + 1):
            yc = origin[c] + jc * h
            for jb in range(jb0, jb1 + 1):
                yb = origin[b] + jb * h
                # edge functions, proportional to the barycentric weights
                e0 = sgn * ((ub2 - ub1) * (yc - uc1) - (uc2 - uc1) * (yb - ub1))
                e1 = sgn * ((ub0 - ub2) * (yc - uc2) - (uc0 - uc2) * (yb - ub2))
                e2 = sgn * ((ub1 - ub0) * (yc - uc0) - (uc1 - uc0) * (yb - ub0))
                m = min(e0 / l0, min(e1 / l1, e2 / l2))
                if m < -EDGE_EPS:
                    continue
                line = jb + nb * jc
                if m < EDGE_EPS:
                    degenerate[line] = True
                elif write:
                    xs[fill[line]] = (e0 * P[0, axis] + e1 * P[1, axis] + e2 * P[2, axis]) / s
                    fill[line] += 1
                else:
                    counts[line] += 1


@njit(cache=True)
def lattice_parity(axis, origin, h, dims, tris, face_ok):
    """Crossing parity along +axis for every lattice point.

    Sweeps whole lattice lines at once: each triangle is rasterised onto the
    lines its 2D footprint covers.  Returns (odd, degenerate_line) with
    ``odd`` in x-fastest lattice layout and ``degenerate_line`` indexed by
    ``jb + nb * jc`` over the two remaining axes.
    """
    b = (axis + 1) % 3
    c = (axis + 2) % 3
    nb, nc, na = dims[b], dims[c], dims[axis]
    nlines = nb * nc
    counts = np.zeros(nlines, np.int64)
    degenerate = np.zeros(nlines, np.bool_)
    dummy = np.empty(0)
    dummy_i = np.empty(0, np.int64)
    _raster(axis, origin, h, dims, tris, face_ok, counts, degenerate, dummy, dummy_i, False)
    offs = np.zeros(nlines + 1, np.int64)
    for q in range(nlines):
        offs[q + 1] = offs[q] + counts[q]
    xs = np.empty(offs[nlines])
    fill = offs[:-1].copy()
    _raster(axis, origin, h, dims, tris, face_ok, counts, degenerate, xs, fill, True)
    odd = np.zeros(dims[0] * dims[1] * dims[2], np.bool_)
    idx = np.zeros(3, np.int64)
    for jc in range(nc):
        for jb in range(nb):
            line = jb + nb * jc
            seg = np.sort(xs[offs[line]:offs[line + 1]])
            ptr = 0
            nseg = len(seg)
            for ia in range(na):
                x = origin[axis] + ia * h
                while ptr < nseg and seg[ptr] <= x:
                    ptr += 1
                idx[axis] = ia
                idx[b] = jb
                idx[c] = jc
                odd[idx[0] + dims[0] * (idx[1] + dims[1] * idx[2])] = (nseg - ptr) % 2 == 1
    return odd, degenerate


# --------------------------------------------------------------------------
# triangle-triangle

@njit(cache=True)
def _orient2(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


@njit(cache=True)
def _on_seg2(ax, ay, bx, by, px, py, tol):
    return (min(ax, bx) - tol <= px <= max(ax, bx) + tol) and (min(ay, by) - tol <= py <= max(ay, by) + tol)


@njit(cache=True)
def _seg_seg2(ax, ay, bx, by, cx, cy, dx, dy, tol_a, tol):
    o1 = _orient2(ax, ay, bx, by, cx, cy)
    o2 = _orient2(ax, ay, bx, by, dx, dy)
    o3 = _orient2(cx, cy, dx, dy, ax, ay)
    o4 = _orient2(cx, cy, dx, dy, bx, by)
    s1 = 0 if abs(o1) <= tol_a else (1 if o1 > 0 else -1)
    s2 = 0 if abs(o2) <= tol_a else (1 if o2 > 0 else -1)
    s3 = 0 if abs(o3) <= tol_a else (1 if o3 > 0 else -1)
    s4 = 0 if abs(o4) <= tol_a else (1 if o4 > 0 else -1)
    if s1 * s2 < 0 and s3 * s4 < 0:
        return True
    if s1 == 0 and _on_seg2(ax, ay, bx, by, cx, cy, tol):
        return True
    if s2 == 0 and _on_seg2(ax, ay, bx, by, dx, dy, tol):
        return True
    if s3 == 0 and _on_seg2(cx, cy, dx, dy, ax, ay, tol):
        return True
    if s4 == 0 and _on_seg2(cx, cy, dx, dy, bx, by, tol):
        return True
    return False


@njit(cache=True)
def _point_in_tri2(px, py, ax, ay, bx, by, cx, cy, tol_a):
    o1 = _orient2(ax, ay, bx, by, px, py)
    o2 = _orient2(bx, by, cx, cy, px, py)
    o3 = _orient2(cx, cy, ax, ay, px, py)
    has_neg = o1 < -tol_a or o2 < -tol_a or o3 < -tol_a
    has_pos = o1 > tol_a or o2 > tol_a or o3 > tol_a
    return not (has_neg and has_pos)


@njit(cache=True)
def _coplanar(T1, T2, n, tol, size):
    ax = 0
    if abs(n[1]) > abs(n[ax]):
        ax = 1
    if abs(n[2]) > abs(n[ax]):
        ax = 2
    i, j = (ax + 1) % 3, (ax + 2) % 3
    tol_a = tol * size  # orient2 values carry length^2 units
    for e in range(3):
        a, b = T1[e], T1[(e + 1) % 3]
        for f in range(3):
            c, d = T2[f], T2[(f + 1) % 3]
            if _seg_seg2(a[i], a[j], b[i], b[j], c[i], c[j], d[i], d[j], tol_a, tol):
                return True
    if _point_in_tri2(T1[0, i], T1[0, j], T2[0, i], T2[0, j], T2[1, i], T2[1, j], T2[2, i], T2[2, j], tol_a):
        return True
    if _point_in_tri2(T2[0, i], T2[0, j], T1[0, i], T1[0, j], T1[1, i], T1[1, j], T1[2, i], T1[2, j], tol_a):
        return True
    return False


@njit(cache=True)
def _plane_dists(T, P, n, tol):
    nn = math.sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2])
    out = np.empty(3)
    for k in range(3):
        v = (n[0] * (T[k, 0] - P[0, 0]) + n[1] * (T[k, 1] - P[0, 1]) + n[2] * (T[k, 2] - P[0, 2])) / nn
        out[k] = 0.0 if abs(v) <= tol else v
    return out


@njit(cache=True)
def _interval(T, dist, L):
    """Projection onto L of the part of T lying in the other triangle's plane."""
    lo = np.inf
    hi = -np.inf
    for k in range(3):
        if dist[k] == 0.0:
            s = T[k, 0] * L[0] + T[k, 1] * L[1] + T[k, 2] * L[2]
            lo = min(lo, s)
            hi = max(hi, s)
        m = (k + 1) % 3
        if dist[k] * dist[m] < 0.0:
            f = dist[k] / (dist[k] - dist[m])
            s = 0.0
            for q in range(3):
                s += (T[k, q] + f * (T[m, q] - T[k, q])) * L[q]
            lo = min(lo, s)
            hi = max(hi, s)
    return lo, hi


@njit(cache=True)
def _normal(T):
    n = np.empty(3)
    u0, u1, u2 = T[1, 0] - T[0, 0], T[1, 1] - T[0, 1], T[1, 2] - T[0, 2]
    v0, v1, v2 = T[2, 0] - T[0, 0], T[2, 1] - T[0, 1], T[2, 2] - T[0, 2]
    n[0] = u1 * v2 - u2 * v1
    n[1] = u2 * v0 - u0 * v2
    n[2] = u0 * v1 - u1 * v0
    return n


@njit(cache=True)
def tri_tri(T1, T2):
    """Closed-set intersection test for two non-degenerate triangles."""
    scale = 0.0
    for k in range(3):
        for q in range(3):
            scale = max(scale, abs(T1[k, q]), abs(T2[k, q]))
    ext = 0.0
    for q in range(3):
        ext = max(ext, max(T1[0, q], max(T1[1, q], T1[2, q])) - min(T1[0, q], min(T1[1, q], T1[2, q])))
        ext = max(ext, max(T2[0, q], max(T2[1, q], T2[2, q])) - min(T2[0, q], min(T2[1, q], T2[2, q])))
    tol = 1e-12 * (scale + ext)
    n1 = _normal(T1)
    n2 = _normal(T2)
    d2 = _plane_dists(T2, T1, n1, tol)
    if (d2[0] > 0 and d2[1] > 0 and d2[2] > 0) or (d2[0] < 0 and d2[1] < 0 and d2[2] < 0):
        return False
    d1 = _plane_dists(T1, T2, n2, tol)
    if (d1[0] > 0 and d1[1] > 0 and d1[2] > 0) or (d1[0] < 0 and d1[1] < 0 and d1[2] < 0):
        return False
    if (d2[0] == 0 and d2[1] == 0 and d2[2] == 0) or (d1[0] == 0 and d1[1] == 0 and d1[2] == 0):
        return _coplanar(T1, T2, n1, tol, scale + ext)
    L = np.empty(3)
    L[0] = n1[1] * n2[2] - n1[2] * n2[1]
    L[1] = n1[2] * n2[0] - n1[0] * n2[2]
    L[2] = n1[0] * n2[1] - n1[1] * n2[0]
    ln = math.sqrt(L[0] * L[0] + L[1] * L[1] + L[2] * L[2])
    if ln == 0.0:
        return _coplanar(T1, T2, n1, tol, scale + ext)
    for q in range(3):
        L[q] /= ln
    lo1, hi1 = _interval(T1, d1, L)
    lo2, hi2 = _interval(T2, d2, L)
    return max(lo1, lo2) <= min(hi1, hi2) + tol


@njit(cache=True)
def _boxes_overlap(alo, ahi, blo, bhi, tol):
    for q in range(3):
        if alo[q] > bhi[q] + tol or blo[q] > ahi[q] + tol:
            return False
    return True


@njit(cache=True)
def involved_bvh(trisA, okA, trisB, okB, nmin, nmax, left, right, start, count, order, tol):
    """Faces of A and of B touching some face of the other mesh (B indexed by the BVH)."""
    invA = np.zeros(len(trisA), np.bool_)
    invB = np.zeros(len(trisB), np.bool_)
    lo = np.empty(3)
    hi = np.empty(3)
    stack = np.empty(_STACK, np.int64)
    for i in range(len(trisA)):
        if not okA[i]:
            continue
        T = trisA[i]
        for q in range(3):
            lo[q] = min(T[0, q], min(T[1, q], T[2, q]))
            hi[q] = max(T[0, q], max(T[1, q], T[2, q]))
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if not _boxes_overlap(lo, hi, nmin[node], nmax[node], tol):
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    j = order[k]
                    if not okB[j]:
                        continue
                    if invA[i] and invB[j]:
                        continue
                    if tri_tri(T, trisB[j]):
                        invA[i] = True
                        invB[j] = True
            else:
                stack[sp] = left[node]
                stack[sp + 1] = right[node]
                sp += 2
    return invA, invB


@njit(cache=True)
def involved_brute(trisA, okA, trisB, okB):
    invA = np.zeros(len(trisA), np.bool_)
    invB = np.zeros(len(trisB), np.bool_)
    for i in range(len(trisA)):
        if not okA[i]:
            continue
        for j in range(len(trisB)):
            if okB[j] and tri_tri(trisA[i], trisB[j]):
                invA[i] = True
                invB[j] = True
    return invA, invB


@njit(cache=True)
def parity_points(points, axis, keys, nmin, nmax, left, right, start, count, order, tris):
    out = np.zeros(len(points), np.bool_)
    ws = _workspace()
    for i in range(len(points)):
        out[i] = parity_axis(points[i], axis, keys[i], ws, nmin, nmax, left, right, start, count, order, tris)
    return out


@njit(cache=True, inline="always")
def _axis(x, o, h, n):
    q = min(max(x, o), o + h * (n - 1))
    u = (q - o) / h
    r = math.floor(u + 0.5)
    if abs(u - r) < 1e-10:
        u = r  # a lattice point up to rounding returns the stored value exactly
    i = min(max(np.int64(math.floor(u)), 0), n - 2)
    return x - q, i, u - i


@njit(cache=True)
def trilinear(p, origin, h, dims, V, val, grad):
    """Trilinear value and gradient on an x-fastest lattice, extended outside
    the box by the distance to it with the outward unit gradient."""
    nx, ny, nz = dims[0], dims[1], dims[2]
    nxy = nx * ny
    for n in range(p.shape[0]):
        ox, ix, fx = _axis(p[n, 0], origin[0], h, nx)
        oy, iy, fy = _axis(p[n, 1], origin[1], h, ny)
        oz, iz, fz = _axis(p[n, 2], origin[2], h, nz)
        gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
        b = ix + nx * iy + nxy * iz
        c000, c100 = V[b], V[b + 1]
        c010, c110 = V[b + nx], V[b + nx + 1]
        c001, c101 = V[b + nxy], V[b + nxy + 1]
        c011, c111 = V[b + nxy + nx], V[b + nxy + nx + 1]
        c00 = c000 * gx + c100 * fx
        c10 = c010 * gx + c110 * fx
        c01 = c001 * gx + c101 * fx
        c11 = c011 * gx + c111 * fx
        c0 = c00 * gy + c10 * fy
        c1 = c01 * gy + c11 * fy
        v = c0 * gz + c1 * fz
        dd = ox * ox + oy * oy + oz * oz
        if dd > 0.0:
            d = math.sqrt(dd)
            val[n] = v + d
            grad[n, 0] = ox / d
            grad[n, 1] = oy / d
            grad[n, 2] = oz / d
        else:
            val[n] = v
            grad[n, 0] = ((c100 - c000) * gy * gz + (c110 - c010) * fy * gz + (c101 - c001) * gy * fz + (c111 - c011) * fy * fz) / h
            grad[n, 1] = ((c10 - c00) * gz + (c11 - c01) * fz) / h
            grad[n, 2] = (c1 - c0) / h
