"""Slow reference implementations used as test oracles."""

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


@njit(cache=True)
def _cd_sweeps(u, uq, obs, wx, wy, lam, sweeps):
    H, W = u.shape
    for _ in range(sweeps):
        for i in range(H):
            for j in range(W):
                c = 0.0
                s = 0.0
                if j + 1 < W:
                    c += wx[i, j]
                    s += wx[i, j] * u[i, j + 1]
                if j > 0:
                    c += wx[i, j - 1]
                    s += wx[i, j - 1] * u[i, j - 1]
                if i + 1 < H:
                    c += wy[i, j]
                    s += wy[i, j] * u[i + 1, j]
                if i > 0:
                    c += wy[i - 1, j]
                    s += wy[i - 1, j] * u[i - 1, j]
                c *= lam
                s *= lam
                if obs[i, j]:
                    a = uq[i, j]
                    if c == 0.0:
                        u[i, j] = a
                        continue
                    m = s / c
                    # argmin |x - a| + c (x - m)^2
                    if 2.0 * c * abs(m - a) <= 1.0:
                        u[i, j] = a
                    elif m > a:
                        u[i, j] = m - 0.5 / c
                    else:
                        u[i, j] = m + 0.5 / c
                elif c > 0.0:
                    u[i, j] = s / c
    return u


def coordinate_descent_scale(uq, obs, wx, wy, lam, sweeps=50_000):
    """Exact cyclic coordinate descent on the L1 + weighted-quadratic completion energy."""
    u = np.ones(uq.shape)
    return _cd_sweeps(u, np.where(obs, uq, 0.0), obs.astype(np.bool_), wx.astype(float), wy.astype(float), float(lam), int(sweeps))


def direct_sobel(a):
    """Sobel derivatives by explicit 3x3 correlation with replicated borders."""
    H, W = a.shape
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=float)
    ky = kx.T
    gx = np.zeros((H, W))
    gy = np.zeros((H, W))
    for i in range(H):
        for j in range(W):
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    v = a[min(max(i + di, 0), H - 1), min(max(j + dj, 0), W - 1)]
                    gx[i, j] += kx[di + 1, dj + 1] * v
                    gy[i, j] += ky[di + 1, dj + 1] * v
    return gx, gy


def brute_quasi_dense(maps, depths, height, width, tau):
    """Per-pixel loop over every map."""
    out = np.zeros((height, width))
    mask = np.zeros((height, width), dtype=bool)
    for v in range(height):
        for u in range(width):
            num = den = 0.0
            for cm in maps:
                r = cm.rect
                if r.u0 <= u < r.u0 + r.w and r.v0 <= v < r.v0 + r.h:
                    y = cm.values[v - r.v0, u - r.u0]
                    if y > tau:
                        num += depths[cm.point_index] * y
                        den += y
            if den > 0:
                out[v, u] = num / den
                mask[v, u] = True
    return out, mask


def hull_inside(points, qu, qv):
    """Exact integer point-in-convex-hull test (boundary counts as inside)."""
    from scipy.spatial import ConvexHull

    hull = ConvexHull(points)
    verts = points[hull.vertices].astype(np.int64)  # CCW in a y-up frame
    inside = np.ones(qu.shape, dtype=bool)
    for k in range(len(verts)):
        (ax, ay), (bx, by) = verts[k], verts[(k + 1) % len(verts)]
        inside &= (bx - ax) * (qv - ay) - (by - ay) * (qu - ax) >= 0
    return inside


def weighted_median_sorted(values, weights):
    """Lower weighted median by sorting and walking the cumulative weight."""
    order = np.argsort(values, kind="stable")
    v, w = np.asarray(values, float)[order], np.asarray(weights, float)[order]
    cum = np.cumsum(w)
    return float(v[np.searchsorted(cum, 0.5 * cum[-1])])
