"""Dense scale refinement.

The quasi-dense radar depth gives a per-pixel inverse scale ``u = d_ga / d_q``
on a subset of pixels.  The rest of the field is completed by minimising

    E(u) = sum_observed |u - u_q| + lambda * sum_pixels [wx (u_right - u)^2 + wy (u_down - u)^2]

where ``wx, wy = exp(-beta |Sobel(d_ga)|)`` stop the smoothing at depth
edges of the aligned monocular depth.  Metric depth is then
``d = 1 / (u * z_ga)``.

The L1 data term is handled by iteratively reweighted least squares on its
Huber approximation (width ``HUBER_DELTA``); each reweighted problem is a
symmetric positive semi-definite linear system solved by preconditioned
conjugate gradients on a matrix-free 5-point stencil.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import ndimage

from .errors import ParameterError, SolverUnavailableError, UndefinedLossError
from .geometry import DepthImage, InverseDepthImage

FILLED, OBSERVED, SOLVED = 0, 1, 2
DEPTH_FLOOR = 1e-3
U_FLOOR = 1e-6
HUBER_DELTA = 1e-3

DEFAULT_LAMBDA_SMOOTH = 1.0
DEFAULT_LAMBDA_GT = 1.0
DEFAULT_BETA = 0.5


@dataclass
class SolverReport:
    energy_trace: List[float]
    energy: float
    iterations: int
    converged: bool
    clamp_count: int
    cg_iterations: List[int] = field(default_factory=list)
    polished: bool = False

    def to_dict(self):
        return {
            "energy_trace": list(self.energy_trace),
            "energy": self.energy,
            "iterations": self.iterations,
            "converged": self.converged,
            "clamp_count": self.clamp_count,
            "cg_iterations": list(self.cg_iterations),
            "polished": self.polished,
        }


@dataclass(frozen=True)
class ScaleField:
    """Inverse scale ``u = 1/s`` per pixel.

    ``provenance`` marks each pixel FILLED (no observation, set to one),
    OBSERVED (taken from the quasi-dense map) or SOLVED.  ``u_q`` keeps the
    observed targets; ``residual`` is the ``u - 1`` offset the scale is built
    from.
    """

    u: np.ndarray
    provenance: np.ndarray
    u_q: np.ndarray
    demoted: int = 0
    report: Optional[SolverReport] = None

    @property
    def height(self):
        return self.u.shape[0]

    @property
    def width(self):
        return self.u.shape[1]

    @property
    def observed(self):
        return self.provenance == OBSERVED

    @property
    def residual(self):
        return self.u - 1.0

    @property
    def scale(self):
        out = np.full_like(self.u, np.inf)
        np.divide(1.0, self.u, out=out, where=self.u > 0)
        return out


@dataclass(frozen=True)
class SmoothnessWeights:
    wx: np.ndarray
    wy: np.ndarray


@dataclass(frozen=True)
class LossReport:
    L_depth_int: float
    L_depth_gt: float
    L_smooth: float
    L_SML: float
    lambda_gt: float
    lambda_smooth: float

    @property
    def L_depth(self):
        return self.L_depth_int + self.lambda_gt * self.L_depth_gt

    def to_dict(self):
        return {
            "L_depth_int": self.L_depth_int,
            "L_depth_gt": self.L_depth_gt,
            "L_depth": self.L_depth,
            "L_smooth": self.L_smooth,
            "L_SML": self.L_SML,
            "lambda_gt": self.lambda_gt,
            "lambda_smooth": self.lambda_smooth,
        }


def quasi_dense_scale(dq: DepthImage, dga: DepthImage, depth_floor: float = DEPTH_FLOOR) -> ScaleField:
    """Inverse scale ``d_ga / d_q`` where the quasi-dense depth is valid, one elsewhere.

    A valid ``d_q`` pixel over an invalid or near-zero ``d_ga`` is demoted to
    FILLED and counted in ``demoted``.
    """
    if dq.shape != dga.shape:
        raise ParameterError(f"shape mismatch {dq.shape} vs {dga.shape}")
    with np.errstate(invalid="ignore"):
        obs = dq.mask & dga.mask & (dga.values > depth_floor)
    demoted = int(np.count_nonzero(dq.mask & ~obs))
    u = np.ones(dq.shape)
    u[obs] = dga.values[obs] / dq.values[obs]
    prov = np.where(obs, OBSERVED, FILLED).astype(np.int8)
    return ScaleField(u, prov, np.where(obs, u, np.nan), demoted)


def _fill_invalid(img: DepthImage) -> np.ndarray:
    """Values with invalid pixels replaced by the nearest valid value."""
    if img.mask.all():
        return img.values
    if not img.mask.any():
        return np.zeros(img.shape)
    _, (iy, ix) = ndimage.distance_transform_edt(~img.mask, return_indices=True)
    return img.values[iy, ix]


def sobel(a: np.ndarray):
    """3x3 Sobel derivatives ``(d/du, d/dv)`` with replicated borders."""
    p = np.pad(a, 1, mode="edge")
    gx = (p[:-2, 2:] + 2.0 * p[1:-1, 2:] + p[2:, 2:]) - (p[:-2, :-2] + 2.0 * p[1:-1, :-2] + p[2:, :-2])
    gy = (p[2:, :-2] + 2.0 * p[2:, 1:-1] + p[2:, 2:]) - (p[:-2, :-2] + 2.0 * p[:-2, 1:-1] + p[:-2, 2:])
    return gx, gy


def sobel_edge_weights(dga: DepthImage, beta: float = DEFAULT_BETA) -> SmoothnessWeights:
    """``exp(-beta |Sobel(d_ga)|)`` per direction.

    Invalid pixels of ``d_ga`` take their nearest valid neighbour's value
    before filtering.
    """
    if not beta > 0:
        raise ParameterError("beta must be positive")
    gx, gy = sobel(_fill_invalid(dga))
    return SmoothnessWeights(np.exp(-beta * np.abs(gx)), np.exp(-beta * np.abs(gy)))


class _Operator:
    """``A u = diag(data) u + 2 lambda L u`` with L the weighted grid Laplacian."""

    def __init__(self, data_w, wx, wy, lam):
        self.data_w = data_w
        self.ex = 2.0 * lam * wx[:, :-1]
        self.ey = 2.0 * lam * wy[:-1, :]
        diag = data_w.copy()
        diag[:, :-1] += self.ex
        diag[:, 1:] += self.ex
        diag[:-1, :] += self.ey
        diag[1:, :] += self.ey
        self.diag = diag

    def __call__(self, x):
        out = self.data_w * x
        fx = self.ex * (x[:, 1:] - x[:, :-1])
        out[:, :-1] -= fx
        out[:, 1:] += fx
        fy = self.ey * (x[1:, :] - x[:-1, :])
        out[:-1, :] -= fy
        out[1:, :] += fy
        return out


def conjugate_gradient(apply_A, b, x0, diag=None, rtol=1e-10, max_iter=None):
    """Jacobi-preconditioned CG for a symmetric positive semi-definite operator.

    Works on arrays of any shape.  Rows with zero diagonal are left at ``x0``
    (they must have zero right-hand side for a consistent system).

    Returns
    -------
    (x, iterations)
    """
    x = x0.copy()
    if max_iter is None:
        max_iter = 10 * x.size
    if diag is None:
        minv = np.ones_like(b)
    else:
        minv = np.zeros_like(b)
        np.divide(1.0, diag, out=minv, where=diag > 0)
    r = b - apply_A(x)
    bnorm = np.linalg.norm(b)
    stop = rtol * (bnorm if bnorm > 0 else 1.0)
    if np.linalg.norm(r) <= stop:
        return x, 0
    z = minv * r
    p = z.copy()
    rz = float(np.vdot(r, z))
    for k in range(1, max_iter + 1):
        Ap = apply_A(p)
        pAp = float(np.vdot(p, Ap))
        if pAp <= 0:
            return x, k
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= stop:
            return x, k
        z = minv * r
        rz_new = float(np.vdot(r, z))
        p *= rz_new / rz
        p += z
        rz = rz_new
    return x, max_iter


def huber(r, delta=HUBER_DELTA):
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r / delta, a - 0.5 * delta)


def smoothness_energy(u, weights: SmoothnessWeights):
    dx = u[:, 1:] - u[:, :-1]
    dy = u[1:, :] - u[:-1, :]
    return float((weights.wx[:, :-1] * dx * dx).sum() + (weights.wy[:-1, :] * dy * dy).sum())


def scale_energy(u, u_q, observed, weights: SmoothnessWeights, lambda_smooth, delta=None) -> float:
    """Completion energy; ``delta`` switches the data term to its Huber form."""
    r = u[observed] - u_q[observed]
    data = np.abs(r).sum() if delta is None else huber(r, delta).sum()
    return float(data) + lambda_smooth * smoothness_energy(u, weights)


def solve_scale_field(
    sq: ScaleField,
    weights: SmoothnessWeights,
    lambda_smooth: float = DEFAULT_LAMBDA_SMOOTH,
    max_iters: int = 50,
    tol: float = 1e-6,
    delta: float = HUBER_DELTA,
    cg_rtol: float = 1e-10,
    cg_max_iter: Optional[int] = None,
    polish: bool = True,
) -> ScaleField:
    """Complete the inverse-scale field by reweighted least squares.

    Starts from ``u = 1`` everywhere.  Each outer iteration majorises the
    Huberised data term by a quadratic and solves the resulting linear system
    with CG, so the Huberised energy never increases; a step that would raise
    it (CG round-off) is rejected and iteration stops.  Convergence is
    declared when the relative energy decrease falls below ``tol``.

    With ``polish`` the Huber solution is then sharpened to the exact L1
    optimum for the active set it identifies (observed pixels within
    ``delta`` of their target are pinned, the rest feel a constant pull);
    the sharpened field is kept only if it satisfies the optimality
    conditions and lowers the true energy, and then counts as converged.
    The result is clamped at zero.

    Raises
    ------
    SolverUnavailableError
        The field has no observed pixel.
    """
    if lambda_smooth < 0:
        raise ParameterError("lambda_smooth must be non-negative")
    if max_iters < 1 or tol <= 0 or delta <= 0:
        raise ParameterError("max_iters must be >= 1, tol and delta positive")
    obs = sq.observed
    if not obs.any():
        raise SolverUnavailableError("no observed scale pixel")
    if weights.wx.shape != sq.u.shape or weights.wy.shape != sq.u.shape:
        raise ParameterError("weights and scale field differ in shape")
    u_q = np.where(obs, sq.u_q, 0.0)
    u = np.ones_like(sq.u)

    def energy(x):
        return scale_energy(x, u_q, obs, weights, lambda_smooth, delta)

    e = energy(u)
    trace = [e]
    cg_its = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        r = np.abs(u - u_q)
        data_w = np.where(obs, 1.0 / np.maximum(r, delta), 0.0)
        A = _Operator(data_w, weights.wx, weights.wy, lambda_smooth)
        u_new, k = conjugate_gradient(A, data_w * u_q, u, A.diag, rtol=cg_rtol, max_iter=cg_max_iter)
        cg_its.append(k)
        e_new = energy(u_new)
        if e_new > e:
            converged = True
            it -= 1
            break
        u, drop = u_new, e - e_new
        trace.append(e_new)
        e = e_new
        if drop <= tol * max(e, np.finfo(float).tiny):
            converged = True
            break
    polished = False
    if polish and lambda_smooth > 0:
        u_p = _active_set_polish(u, u_q, obs, weights, lambda_smooth, delta, cg_rtol, cg_max_iter)
        if u_p is not None:
            # the optimality conditions were verified, whatever IRLS managed
            u, polished, converged = u_p, True, True
    clamp = int(np.count_nonzero(u < 0))
    u = np.maximum(u, 0.0)
    prov = np.where(obs, OBSERVED, SOLVED).astype(np.int8)
    report = SolverReport(
        energy_trace=trace,
        energy=scale_energy(u, u_q, obs, weights, lambda_smooth),
        iterations=it,
        converged=converged,
        clamp_count=clamp,
        cg_iterations=cg_its,
        polished=polished,
    )
    return ScaleField(u, prov, sq.u_q, sq.demoted, report)


def _active_set_polish(u, u_q, obs, weights, lam, delta, cg_rtol, cg_max_iter, max_rounds=30):
    """Primal-dual active-set iteration on the exact L1 optimality conditions.

    Observed pixels are either pinned to their target or pulled with a fixed
    unit force toward it; each round solves the resulting linear system and
    moves violators between the two sets.  Returns None unless a round ends
    with every condition met and a lower true energy than ``u``.
    """
    r = u - u_q
    pinned = obs & (np.abs(r) <= delta)
    sign = np.where(obs & ~pinned, np.sign(r), 0.0)
    L = _Operator(np.zeros_like(u), weights.wx, weights.wy, lam)
    x0 = u
    for _ in range(max_rounds):
        free = ~pinned
        moved = obs & free
        fixed = np.where(pinned, u_q, 0.0)
        b = np.where(free, -sign - L(fixed), 0.0)
        diag = np.where(free, L.diag, 0.0)

        def apply(x):
            return np.where(free, L(np.where(free, x, 0.0)), 0.0)

        x, _ = conjugate_gradient(apply, b, np.where(free, x0, 0.0), diag, rtol=cg_rtol, max_iter=cg_max_iter)
        cand = np.where(free, x, fixed)
        grad = L(cand)
        crossed = moved & (np.sign(cand - u_q) != sign)
        strained = pinned & (np.abs(grad) > 1.0 + 1e-9)
        if not crossed.any() and not strained.any():
            if np.any(np.abs(grad[free] + sign[free]) > 1e-6):
                return None
            if scale_energy(cand, u_q, obs, weights, lam) >= scale_energy(u, u_q, obs, weights, lam):
                return None
            return cand
        pinned = (pinned & ~strained) | crossed
        sign = np.where(crossed, 0.0, sign)
        sign = np.where(strained, -np.sign(grad), sign)
        x0 = cand
    return None


def compose_depth(u: ScaleField, zga: InverseDepthImage, u_floor: float = U_FLOOR) -> DepthImage:
    """Metric depth ``(1/u) / z_ga``; pixels with ``u <= u_floor`` are invalid."""
    if u.u.shape != zga.shape:
        raise ParameterError(f"shape mismatch {u.u.shape} vs {zga.shape}")
    mask = zga.mask & (u.u > u_floor)
    values = np.zeros(zga.shape)
    np.divide(1.0, u.u * zga.values, out=values, where=mask)
    return DepthImage(values, mask)


def _l1(d: DepthImage, dhat: DepthImage):
    dom = d.mask & dhat.mask
    if not dom.any():
        return None
    return float(np.abs(d.values[dom] - dhat.values[dom]).mean())


def smoothness_loss(dhat: DepthImage, dga: DepthImage, beta: float = DEFAULT_BETA) -> float:
    """Edge-aware smoothness: mean of ``wx |d/du dhat| + wy |d/dv dhat|`` over pixels valid in both maps."""
    w = sobel_edge_weights(dga, beta)
    gx, gy = sobel(_fill_invalid(dhat))
    dom = dhat.mask & dga.mask
    if not dom.any():
        return 0.0
    return float((w.wx * np.abs(gx) + w.wy * np.abs(gy))[dom].mean())


def sml_losses(
    dhat: DepthImage,
    dgt: DepthImage,
    dint: DepthImage,
    dga: DepthImage,
    lambda_gt: float = DEFAULT_LAMBDA_GT,
    lambda_smooth: float = DEFAULT_LAMBDA_SMOOTH,
    beta: float = DEFAULT_BETA,
) -> LossReport:
    """Depth-fidelity and smoothness losses of a metric depth estimate.

    Each L1 term averages over its own ground-truth domain (pixels valid in
    both the reference and ``dhat``); a term with an empty domain counts as
    zero, and both empty is an error.
    """
    shapes = {dhat.shape, dgt.shape, dint.shape, dga.shape}
    if len(shapes) != 1:
        raise ParameterError(f"shape mismatch: {sorted(shapes)}")
    l_int = _l1(dint, dhat)
    l_gt = _l1(dgt, dhat)
    if l_int is None and l_gt is None:
        raise UndefinedLossError("no valid ground-truth pixel for either depth term")
    l_int = l_int or 0.0
    l_gt = l_gt or 0.0
    l_smooth = smoothness_loss(dhat, dga, beta)
    total = l_int + lambda_gt * l_gt + lambda_smooth * l_smooth
    return LossReport(l_int, l_gt, l_smooth, total, lambda_gt, lambda_smooth)
