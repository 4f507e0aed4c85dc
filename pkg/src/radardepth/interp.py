"""Densification of sparse ground truth by log-linear interpolation.

The sparse pixels are triangulated (Delaunay, incremental Bowyer-Watson) and
every pixel centre inside the convex hull receives the barycentric blend of
the vertices' log-depths, exponentiated back to metres.  Pixels outside the
hull stay invalid.

All geometric predicates run on integer pixel coordinates in int64 and are
exact for coordinate extents up to ``MAX_EXTENT``.  The hull is tracked with
ghost triangles (one vertex at infinity), so no finite super-triangle can
leak into the result.  Cocircular ties resolve through a strict in-circle
test under a fixed insertion order, which makes the triangulation a pure
function of the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ParameterError
from .geometry import DepthImage

GHOST = -1
MAX_EXTENT = 16384


@dataclass(frozen=True)
class TriangulationResult:
    """``vertices`` rows are ``(u, v, log_depth)``; ``triangles`` index them, CCW in (u, v)."""

    vertices: np.ndarray
    triangles: np.ndarray


def _orient(ax, ay, bx, by, cx, cy):
    # > 0 when a, b, c turn counter-clockwise in a y-up frame
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


class _Triangulator:
    """Bowyer-Watson with exact integer predicates and ghost hull triangles."""

    def __init__(self, pts: np.ndarray):
        self.pts = pts
        cap = 4 * len(pts) + 16
        self.tri = np.zeros((cap, 3), dtype=np.int64)
        self.alive = np.zeros(cap, dtype=bool)
        # conservative float circumcircle for candidate filtering
        self.ccx = np.zeros(cap)
        self.ccy = np.zeros(cap)
        self.cr2 = np.full(cap, np.inf)
        self.n = 0

    def _grow(self):
        live = np.flatnonzero(self.alive[: self.n])
        k = live.size
        cap = self.tri.shape[0]
        if k > cap // 2:
            cap *= 2
        tri = np.zeros((cap, 3), dtype=np.int64)
        ccx = np.zeros(cap)
        ccy = np.zeros(cap)
        cr2 = np.full(cap, np.inf)
        alive = np.zeros(cap, dtype=bool)
        tri[:k] = self.tri[live]
        ccx[:k] = self.ccx[live]
        ccy[:k] = self.ccy[live]
        cr2[:k] = self.cr2[live]
        alive[:k] = True
        self.tri, self.ccx, self.ccy, self.cr2, self.alive, self.n = tri, ccx, ccy, cr2, alive, k

    def _add(self, a, b, c):
        if c == GHOST:
            pass
        elif a == GHOST:
            a, b, c = b, c, a
        elif b == GHOST:
            a, b, c = c, a, b
        if self.n == self.tri.shape[0]:
            self._grow()
        i = self.n
        self.tri[i] = (a, b, c)
        self.alive[i] = True
        if c == GHOST:
            self.cr2[i] = np.inf
        else:
            (ax, ay), (bx, by), (cx, cy) = self.pts[a], self.pts[b], self.pts[c]
            area2 = _orient(ax, ay, bx, by, cx, cy)
            if area2 <= 0:
                raise AssertionError("triangulation produced a degenerate or inverted triangle")
            bx, by, cx, cy = bx - ax, by - ay, cx - ax, cy - ay
            b2 = bx * bx + by * by
            c2 = cx * cx + cy * cy
            d = 2.0 * float(area2)
            ux = (cy * b2 - by * c2) / d
            uy = (bx * c2 - cx * b2) / d
            self.ccx[i] = ax + ux
            self.ccy[i] = ay + uy
            r2 = ux * ux + uy * uy
            self.cr2[i] = r2 * (1.0 + 1e-9) + 1e-6
        self.n += 1

    def _conflicts(self, p):
        px, py = self.pts[p]
        n = self.n
        cand = self.alive[:n] & ((self.ccx[:n] - px) ** 2 + (self.ccy[:n] - py) ** 2 <= self.cr2[:n])
        idx = np.flatnonzero(cand)
        if idx.size == 0:
            return idx
        t = self.tri[idx]
        ghost = t[:, 2] == GHOST
        a = self.pts[t[:, 0]]
        b = self.pts[t[:, 1]]
        c = self.pts[np.where(ghost, t[:, 0], t[:, 2])]
        adx, ady = a[:, 0] - px, a[:, 1] - py
        bdx, bdy = b[:, 0] - px, b[:, 1] - py
        cdx, cdy = c[:, 0] - px, c[:, 1] - py
        alift = adx * adx + ady * ady
        blift = bdx * bdx + bdy * bdy
        clift = cdx * cdx + cdy * cdy
        incircle = (
            alift * (bdx * cdy - cdx * bdy)
            + blift * (cdx * ady - adx * cdy)
            + clift * (adx * bdy - bdx * ady)
        )
        # ghost (a, b, inf): conflict if p is strictly outside edge a->b, or on the open segment
        orient = (b[:, 0] - a[:, 0]) * (py - a[:, 1]) - (b[:, 1] - a[:, 1]) * (px - a[:, 0])
        dot = (px - a[:, 0]) * (b[:, 0] - a[:, 0]) + (py - a[:, 1]) * (b[:, 1] - a[:, 1])
        seg2 = (b[:, 0] - a[:, 0]) ** 2 + (b[:, 1] - a[:, 1]) ** 2
        on_segment = (orient == 0) & (dot > 0) & (dot < seg2)
        hit = np.where(ghost, (orient > 0) | on_segment, incircle > 0)
        return idx[hit]

    def insert(self, p):
        conflict = self._conflicts(p)
        if conflict.size == 0:
            raise AssertionError("inserted point conflicts with no triangle")
        edges = set()
        for a, b, c in self.tri[conflict].tolist():
            edges.update(((a, b), (b, c), (c, a)))
        self.alive[conflict] = False
        for a, b in edges:
            if (b, a) not in edges:
                self._add(a, b, p)

    def run(self):
        pts = self.pts
        n = len(pts)
        i0, i1 = 0, 1
        i2 = None
        for k in range(2, n):
            o = _orient(*pts[i0], *pts[i1], *pts[k])
            if o != 0:
                i2 = k
                break
        if i2 is None:
            raise DegenerateInputError("all samples are collinear; no 2-D hull to interpolate over")
        if _orient(*pts[i0], *pts[i1], *pts[i2]) < 0:
            i1, i2 = i2, i1
        self._add(i0, i1, i2)
        self._add(i1, i0, GHOST)
        self._add(i2, i1, GHOST)
        self._add(i0, i2, GHOST)
        for k in range(2, n):
            if k != i1 and k != i2:
                self.insert(k)
        t = self.tri[: self.n][self.alive[: self.n]]
        t = t[t[:, 2] != GHOST]
        # canonical rotation (smallest index first) and lexicographic order
        rot = np.argmin(t, axis=1)
        t = np.stack([t[np.arange(len(t)), (rot + k) % 3] for k in range(3)], axis=1)
        return t[np.lexsort((t[:, 2], t[:, 1], t[:, 0]))]


def delaunay(points) -> np.ndarray:
    """Delaunay triangles (CCW in u-v, y-up orientation) of distinct integer points.

    Points are inserted in the given order; duplicates must be removed by the
    caller.  Raises :class:`DegenerateInputError` for fewer than three points
    or collinear input.
    """
    pts = np.asarray(points)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ParameterError("points must be an (N, 2) array")
    if not np.all(pts == np.round(pts)):
        raise ParameterError("points must have integer coordinates")
    pts = pts.astype(np.int64)
    if len(pts) < 3:
        raise DegenerateInputError(f"need at least 3 samples, got {len(pts)}")
    if len(np.unique(pts, axis=0)) != len(pts):
        raise ParameterError("duplicate points")
    if np.ptp(pts[:, 0]) > MAX_EXTENT or np.ptp(pts[:, 1]) > MAX_EXTENT:
        raise ParameterError(f"coordinate extent exceeds {MAX_EXTENT}; exact predicates would overflow")
    pts = pts - pts.min(axis=0)
    return _Triangulator(pts).run()


def triangulate_depth(sparse_gt: DepthImage) -> TriangulationResult:
    """Triangulate the valid pixels of a sparse depth map in log-depth."""
    v, u = np.nonzero(sparse_gt.mask)
    depth = sparse_gt.values[v, u]
    if u.size < 3:
        raise DegenerateInputError(f"need at least 3 valid samples, got {u.size}")
    tris = delaunay(np.stack([u, v], axis=1))
    return TriangulationResult(np.stack([u, v, np.log(depth)], axis=1).astype(float), tris)


def rasterize_log_linear(tri: TriangulationResult, height: int, width: int):
    """Evaluate the piecewise-linear log-depth surface at every pixel centre.

    Returns ``(log_depth, mask)``.  A pixel on an edge shared by two triangles
    takes its value from the first one in triangle order (the values agree
    up to rounding anyway).
    """
    out = np.zeros((height, width))
    mask = np.zeros((height, width), dtype=bool)
    uv = tri.vertices[:, :2].astype(np.int64)
    logd = tri.vertices[:, 2]
    for a, b, c in tri.triangles:
        (ax, ay), (bx, by), (cx, cy) = uv[a], uv[b], uv[c]
        u0, u1 = max(min(ax, bx, cx), 0), min(max(ax, bx, cx), width - 1)
        v0, v1 = max(min(ay, by, cy), 0), min(max(ay, by, cy), height - 1)
        if u0 > u1 or v0 > v1:
            continue
        qv, qu = np.mgrid[v0 : v1 + 1, u0 : u1 + 1]
        wa = _orient(bx, by, cx, cy, qu, qv)
        wb = _orient(cx, cy, ax, ay, qu, qv)
        wc = _orient(ax, ay, bx, by, qu, qv)
        inside = (wa >= 0) & (wb >= 0) & (wc >= 0) & ~mask[v0 : v1 + 1, u0 : u1 + 1]
        if not inside.any():
            continue
        area2 = float(_orient(ax, ay, bx, by, cx, cy))
        val = (wa * logd[a] + wb * logd[b] + wc * logd[c]) / area2
        block = out[v0 : v1 + 1, u0 : u1 + 1]
        block[inside] = val[inside]
        mask[v0 : v1 + 1, u0 : u1 + 1] |= inside
    return out, mask


def interpolate_log_linear(sparse_gt: DepthImage) -> DepthImage:
    """Densify sparse depth by linear interpolation of log-depth over a Delaunay mesh.

    The output is valid exactly on pixel centres inside the convex hull of the
    samples; no extrapolation.  Sample pixels reproduce their input depth.

    Raises
    ------
    DegenerateInputError
        Fewer than three valid samples, or all of them collinear.
    """
    tri = triangulate_depth(sparse_gt)
    logd, mask = rasterize_log_linear(tri, sparse_gt.height, sparse_gt.width)
    values = np.where(mask, np.exp(logd), 0.0)
    # vertices carry their input value verbatim
    values[sparse_gt.mask] = sparse_gt.values[sparse_gt.mask]
    mask |= sparse_gt.mask
    return DepthImage(values, mask)
