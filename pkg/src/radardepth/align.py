"""Global scale alignment of scale-free monocular depth against radar depths.

A single factor ``s`` is chosen to minimise ``sum |s * mono - radar|`` over
the radar pixels, using bounded Brent minimisation.  No shift term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import AlignmentUnavailableError, EmptyOverlapError, NumericError, ParameterError
from .geometry import DEFAULT_RADAR_RANGE, DepthImage, SparseDepthProjection, sample_at

GOLDEN = 0.5 * (3.0 - math.sqrt(5.0))
BRENT_TOL = 1.48e-8
BRENT_MAX_ITER = 200
FALLBACK_BOUNDS = (1e-3, 1e3)
MIN_SAMPLES_FOR_PERCENTILE_BOUNDS = 5


@dataclass(frozen=True)
class AlignmentResult:
    s_g: float
    objective: float
    n_samples: int
    bounds: Tuple[float, float]
    space: str = "depth"
    iterations: int = 0

    def to_dict(self):
        d = asdict(self)
        d["bounds"] = list(self.bounds)
        return d


def brent_minimize(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = BRENT_TOL,
    max_iter: int = BRENT_MAX_ITER,
    full_output: bool = False,
):
    """Bounded scalar minimisation by Brent's method.

    Golden-section steps are replaced by parabolic interpolation through the
    three best points whenever the parabola's vertex lies inside the current
    bracket and the step is shrinking fast enough.  ``tol`` is relative to
    ``|x|``.  The interval end points themselves are never evaluated.

    Parameters
    ----------
    f : callable
        Objective; must return finite values on ``[lo, hi]``.
    lo, hi : float
        Search interval, ``lo < hi``.
    tol : float
        Relative x tolerance.
    max_iter : int
        Iteration cap; on exhaustion the best point so far is returned.
    full_output : bool
        If true return ``(x, f(x), iterations, converged)``.

    Returns
    -------
    float or tuple
    """
    if not lo < hi:
        raise ParameterError(f"brent_minimize needs lo < hi, got [{lo}, {hi}]")
    if tol <= 0:
        raise ParameterError("tol must be positive")

    def call(x):
        y = float(f(x))
        if not math.isfinite(y):
            raise NumericError(f"objective returned {y} at x={x}")
        return y

    atol = 1e-12
    a, b = float(lo), float(hi)
    x = w = v = a + GOLDEN * (b - a)
    fx = fw = fv = call(x)
    d = e = 0.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        xm = 0.5 * (a + b)
        tol1 = tol * abs(x) + atol
        tol2 = 2.0 * tol1
        if abs(x - xm) <= tol2 - 0.5 * (b - a):
            converged = True
            it -= 1
            break
        use_golden = True
        if abs(e) > tol1:
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            e_prev = e
            e = d
            if abs(p) < abs(0.5 * q * e_prev) and q * (a - x) < p < q * (b - x):
                d = p / q
                u = x + d
                if (u - a) < tol2 or (b - u) < tol2:
                    d = tol1 if xm >= x else -tol1
                use_golden = False
        if use_golden:
            e = (b - x) if x < xm else (a - x)
            d = GOLDEN * e
        u = x + d if abs(d) >= tol1 else x + math.copysign(tol1, d)
        fu = call(u)
        if fu <= fx:
            if u < x:
                b = x
            else:
                a = x
            v, fv, w, fw, x, fx = w, fw, x, fx, u, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, fv, w, fw = w, fw, u, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
    if full_output:
        return x, fx, it, converged
    return x


def _samples(mono: DepthImage, radar: SparseDepthProjection):
    m, ok = sample_at(mono, radar)
    return m[ok], radar.depth[ok]


def alignment_objective(s: float, mono: DepthImage, radar: SparseDepthProjection, space: str = "depth") -> float:
    """Sum of absolute residuals between scaled mono depth and radar depth.

    ``space="inverse"`` compares ``(1/mono)/s`` with ``1/radar`` instead.
    """
    if len(radar) == 0:
        raise EmptyOverlapError("no radar samples")
    m, d = _samples(mono, radar)
    if m.size == 0:
        raise EmptyOverlapError("no radar pixel overlaps a valid mono pixel")
    return _objective(s, m, d, space)


def _objective(s, m, d, space):
    if space == "depth":
        return float(np.abs(s * m - d).sum())
    if space == "inverse":
        return float(np.abs(1.0 / (s * m) - 1.0 / d).sum())
    raise ParameterError(f"unknown alignment space {space!r}")


def weighted_median(values, weights) -> float:
    """Smallest minimiser of ``sum w_i |x - values_i|`` (lower weighted median)."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    k = int(np.searchsorted(cum, 0.5 * cum[-1], side="left"))
    return float(values[order][k])


def default_bounds(ratios) -> Tuple[float, float]:
    """Search interval from the spread of per-sample ratios radar/mono.

    ``[p1 / 10, p99 * 10]`` with linear-interpolated percentiles; a fixed
    ``[1e-3, 1e3]`` when fewer than five samples are available.
    """
    ratios = np.asarray(ratios, dtype=float)
    if ratios.size < MIN_SAMPLES_FOR_PERCENTILE_BOUNDS:
        return FALLBACK_BOUNDS
    lo, hi = np.percentile(ratios, [1.0, 99.0])
    return float(lo) / 10.0, float(hi) * 10.0


def align_global(
    mono: DepthImage,
    radar: SparseDepthProjection,
    bounds: Optional[Tuple[float, float]] = None,
    tol: float = BRENT_TOL,
    space: str = "depth",
    valid_range: Tuple[float, float] = DEFAULT_RADAR_RANGE,
    polish: bool = True,
):
    """Fit the global scale and apply it.

    Radar entries outside ``valid_range`` (lo exclusive, hi inclusive) or on
    invalid mono pixels are ignored.  With ``polish`` the Brent estimate is
    snapped to the neighbouring breakpoint ``radar/mono`` when that does not
    raise the objective; the L1 objective is piecewise linear, so its minimum
    sits on one of those breakpoints.

    Returns
    -------
    (AlignmentResult, DepthImage, InverseDepthImage)
        The fit, the aligned depth and its inverse.

    Raises
    ------
    AlignmentUnavailableError
        No usable radar sample remains.
    """
    radar = radar.within_range(*valid_range)
    m, d = _samples(mono, radar)
    if m.size == 0:
        raise AlignmentUnavailableError("no valid radar sample overlaps the monocular depth")
    ratios = d / m
    lo, hi = default_bounds(ratios) if bounds is None else (float(bounds[0]), float(bounds[1]))

    def obj(s):
        return _objective(s, m, d, space)

    s, fs, nit, _ = brent_minimize(obj, lo, hi, tol=tol, full_output=True)
    if polish:
        kinks = np.sort(ratios)
        k = int(np.searchsorted(kinks, s))
        for c in kinks[max(k - 1, 0) : k + 1]:
            if lo <= c <= hi:
                fc = obj(c)
                if fc <= fs:
                    s, fs = float(c), fc
    d_ga = DepthImage(np.where(mono.mask, s * mono.values, 0.0), mono.mask)
    z_ga = d_ga.reciprocal()
    result = AlignmentResult(float(s), float(fs), int(m.size), (lo, hi), space, nit)
    return result, d_ga, z_ga
