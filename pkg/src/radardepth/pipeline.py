"""End-to-end frame processing: alignment, radar augmentation, scale refinement, evaluation."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from . import align, augment, refine
from .errors import AlignmentUnavailableError, DegenerateInputError, InputError, ParameterError, SolverUnavailableError
from .geometry import DEFAULT_RADAR_RANGE, CameraModel, DepthImage, RadarPointCloud, RigidTransform, project_points
from .interp import interpolate_log_linear
from .metrics import DEFAULT_RANGES, compute_metrics

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    """Every free parameter of the pipeline.

    Patch size defaults to 150x50 pixels (the 640x512 setting); use 240x100
    for 640x480 imagery with taller objects.  Radar returns count when their
    depth lies in (0, 100] m.
    """

    tau: float = augment.DEFAULT_TAU
    lambda_smooth: float = refine.DEFAULT_LAMBDA_SMOOTH
    lambda_gt: float = refine.DEFAULT_LAMBDA_GT
    beta: float = refine.DEFAULT_BETA
    patch_w: int = augment.DEFAULT_PATCH[0]
    patch_h: int = augment.DEFAULT_PATCH[1]
    sigma_d: float = augment.DEFAULT_SIGMA_D
    sigma_uv: Optional[float] = None
    brent_tol: float = align.BRENT_TOL
    align_space: str = "depth"
    solver_max_iters: int = 50
    solver_tol: float = 1e-6
    range_caps: Tuple[float, ...] = DEFAULT_RANGES
    radar_range: Tuple[float, float] = DEFAULT_RADAR_RANGE
    provider: str = "heuristic"
    # depth the heuristic kernel is centred on: "guide" uses the aligned
    # monocular depth under the radar pixel, "radar" the radar depth itself
    confidence_reference: str = "radar"
    # "depth" averages radar depths per pixel; "scale" averages the ratios
    # radar / aligned depth and re-applies them to the aligned depth
    quasi_dense_mode: str = "scale"

    def __post_init__(self):
        object.__setattr__(self, "range_caps", tuple(float(r) for r in self.range_caps))
        object.__setattr__(self, "radar_range", tuple(float(r) for r in self.radar_range))
        if not 0 < self.tau < 1:
            raise ParameterError("tau must lie in (0, 1)")
        if self.brent_tol <= 0 or self.solver_tol <= 0:
            raise ParameterError("tolerances must be positive")
        if self.patch_w < 1 or self.patch_h < 1:
            raise ParameterError("patch size must be >= 1")
        if self.sigma_d <= 0 or (self.sigma_uv is not None and self.sigma_uv <= 0):
            raise ParameterError("confidence widths must be positive")
        if self.lambda_smooth < 0 or self.lambda_gt < 0 or self.beta <= 0:
            raise ParameterError("lambda weights must be >= 0 and beta > 0")
        if self.solver_max_iters < 1:
            raise ParameterError("solver_max_iters must be >= 1")
        if not self.range_caps or min(self.range_caps) <= 0:
            raise ParameterError("range_caps must be positive")
        if len(self.radar_range) != 2 or not self.radar_range[0] < self.radar_range[1]:
            raise ParameterError("radar_range must be (lo, hi) with lo < hi")
        if self.provider not in ("heuristic", "external"):
            raise ParameterError(f"unknown confidence provider {self.provider!r}")
        if self.confidence_reference not in ("guide", "radar"):
            raise ParameterError(f"unknown confidence reference {self.confidence_reference!r}")
        if self.quasi_dense_mode not in ("depth", "scale"):
            raise ParameterError(f"unknown quasi-dense mode {self.quasi_dense_mode!r}")
        if self.align_space not in ("depth", "inverse"):
            raise ParameterError(f"unknown alignment space {self.align_space!r}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["range_caps"] = list(self.range_caps)
        d["radar_range"] = list(self.radar_range)
        return d

    @property
    def effective_sigma_uv(self):
        return self.sigma_uv if self.sigma_uv is not None else augment.default_sigma_uv(self.patch_w, self.patch_h)


@dataclass
class FrameResult:
    frame_id: str = ""
    status: str = "ok"
    alignment: Optional[dict] = None
    n_radar_projected: int = 0
    n_confidence_maps: int = 0
    dq_coverage: Optional[float] = None
    solver: Optional[dict] = None
    metrics: dict = field(default_factory=dict)
    metrics_aligned: dict = field(default_factory=dict)
    losses: Optional[dict] = None
    timings_ms: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


class _Clock:
    def __init__(self, sink):
        self.sink = sink

    def __call__(self, name):
        clock = self

        class _Span:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                clock.sink[name] = (time.perf_counter() - self.t0) * 1e3

        return _Span()


def confidence_maps(proj, d_ga: DepthImage, cam: CameraModel, config: PipelineConfig):
    """Heuristic confidence map for every projected radar point.

    With the "radar" reference the kernel favours pixels whose aligned depth
    already agrees with the radar, which mostly re-confirms the monocular
    error.  The "guide" reference spreads each return over the surface it
    landed on instead.
    """
    maps = []
    sigma_uv = config.effective_sigma_uv
    for u, v, d, idx in zip(proj.u.tolist(), proj.v.tolist(), proj.depth.tolist(), proj.source_index.tolist()):
        rect = augment.crop_patch_rect(u, v, config.patch_w, config.patch_h, cam)
        ref = d
        if config.confidence_reference == "guide" and d_ga.mask[v, u]:
            ref = float(d_ga.values[v, u])
        maps.append(augment.heuristic_confidence(rect, ref, d_ga, config.sigma_d, sigma_uv, point_index=idx))
    return maps


def _scale_transfer(maps, depths, proj, d_ga: DepthImage, tau):
    """Quasi-dense depth from averaged per-point scale ratios.

    Each return carries ``depth / d_ga`` at its own pixel; the confidence
    weighted mean ratio at a pixel is multiplied by ``d_ga`` there.  Points
    whose pixel has no aligned depth contribute nothing.
    """
    ratio = np.zeros(len(depths))
    at_px = d_ga.values[proj.v, proj.u]
    ok = d_ga.mask[proj.v, proj.u] & (at_px > 0)
    ratio[proj.source_index[ok]] = proj.depth[ok] / at_px[ok]
    keep = [m for m in maps if ratio[m.point_index] > 0]
    rq = augment.quasi_dense_depth(keep, ratio, d_ga.height, d_ga.width, tau)
    mask = rq.mask & d_ga.mask
    return DepthImage(np.where(mask, rq.values * d_ga.values, 0.0), mask)


def augment_frame(proj, n_points: int, d_ga: DepthImage, cam: CameraModel, config: PipelineConfig,
                  confidence_dir=None, frame_id: str = "frame"):
    """Confidence maps and quasi-dense depth for projected radar returns.

    ``proj`` must already be range-filtered and z-buffered; ``n_points`` is
    the size of the original cloud (external maps index into it).

    Returns
    -------
    (DepthImage, list of ConfidenceMap)
    """
    depths = np.full(n_points, np.nan)
    depths[proj.source_index] = proj.depth
    if config.provider == "external":
        if confidence_dir is None:
            raise ParameterError("external confidence provider needs a confidence directory")
        maps, _ = augment.load_external_confidence(confidence_dir, frame_id, cam.width, cam.height)
        usable = [m for m in maps if 0 <= m.point_index < n_points and np.isfinite(depths[m.point_index])]
        if len(usable) < len(maps):
            logger.warning("%s: %d confidence maps refer to unprojected radar points", frame_id, len(maps) - len(usable))
        maps = usable
    else:
        maps = confidence_maps(proj, d_ga, cam, config)
    if config.quasi_dense_mode == "scale":
        dq = _scale_transfer(maps, depths, proj, d_ga, config.tau)
    else:
        dq = augment.quasi_dense_depth(maps, np.nan_to_num(depths), cam.height, cam.width, config.tau)
    return dq, maps


def run_pipeline(
    mono: DepthImage,
    cloud: RadarPointCloud,
    cam: CameraModel,
    extrinsic: RigidTransform,
    config: PipelineConfig = None,
    gt: DepthImage = None,
    confidence_dir=None,
    frame_id: str = "frame",
    debug_dir=None,
):
    """Process one frame.

    Returns ``(d_hat, FrameResult)``.  ``d_hat`` is None when the frame is
    skipped (no radar return survives for the global alignment).  Ground
    truth, when given, is densified in log space (unless already dense) for
    the training losses and used as-is for the metrics.
    """
    config = config or PipelineConfig()
    if mono.shape != cam.shape:
        raise InputError(f"mono depth is {mono.width}x{mono.height}, calibration says {cam.width}x{cam.height}")
    if gt is not None and gt.shape != cam.shape:
        raise InputError(f"ground truth is {gt.width}x{gt.height}, calibration says {cam.width}x{cam.height}")
    result = FrameResult(frame_id=str(frame_id))
    clock = _Clock(result.timings_ms)

    with clock("project"):
        proj = project_points(cloud, extrinsic, cam).within_range(*config.radar_range).zbuffered()
    result.n_radar_projected = len(proj)

    with clock("align"):
        try:
            fit, d_ga, z_ga = align.align_global(
                mono, proj, tol=config.brent_tol, space=config.align_space, valid_range=config.radar_range
            )
        except AlignmentUnavailableError:
            result.status = "skipped: alignment-unavailable"
            return None, result
    result.alignment = fit.to_dict()

    with clock("augment"):
        dq, maps = augment_frame(proj, len(cloud), d_ga, cam, config, confidence_dir, frame_id)
    result.n_confidence_maps = len(maps)
    result.dq_coverage = dq.coverage()

    with clock("refine"):
        sq = refine.quasi_dense_scale(dq, d_ga)
        weights = refine.sobel_edge_weights(d_ga, config.beta)
        try:
            field_ = refine.solve_scale_field(
                sq, weights, config.lambda_smooth, max_iters=config.solver_max_iters, tol=config.solver_tol
            )
        except SolverUnavailableError:
            result.status = "degraded: solver-unavailable"
            field_ = sq
        else:
            result.solver = field_.report.to_dict()
            if not field_.report.converged:
                result.status = "ok: not-converged"
        d_hat = refine.compose_depth(field_, z_ga)

    if debug_dir is not None:
        from .io import write_depth_pfm, write_pfm_array

        debug_dir = Path(debug_dir)
        debug_dir.mkdir(parents=True, exist_ok=True)
        write_depth_pfm(debug_dir / f"{frame_id}_d_ga.pfm", d_ga)
        write_depth_pfm(debug_dir / f"{frame_id}_d_q.pfm", dq)
        write_pfm_array(debug_dir / f"{frame_id}_u.pfm", field_.u)

    if gt is not None:
        with clock("evaluate"):
            for cap in config.range_caps:
                key = f"{cap:g}"
                for target, pred in ((result.metrics, d_hat), (result.metrics_aligned, d_ga)):
                    try:
                        target[key] = compute_metrics(pred, gt, cap).to_dict()
                    except DegenerateInputError as exc:
                        target[key] = {"error": str(exc)}
            if gt.mask.all():
                d_int = gt
            else:
                try:
                    d_int = interpolate_log_linear(gt)
                except DegenerateInputError:
                    d_int = DepthImage.invalid(*gt.shape)
            try:
                result.losses = refine.sml_losses(
                    d_hat, gt, d_int, d_ga, config.lambda_gt, config.lambda_smooth, config.beta
                ).to_dict()
            except DegenerateInputError:
                result.losses = None
    return d_hat, result


def _run_manifest_entry(args):
    entry, base, config, out_dir, debug_dir = args
    from .io import read_calibration, read_cloud, read_depth_pfm, write_depth_pfm, write_json

    def resolve(p):
        return None if p is None else (base / p)

    frame_id = str(entry.get("id", Path(entry["mono"]).stem))
    mono = read_depth_pfm(resolve(entry["mono"]))
    cloud = read_cloud(resolve(entry["cloud"]))
    cam, extr = read_calibration(resolve(entry["calib"]))
    gt = read_depth_pfm(resolve(entry["gt"])) if entry.get("gt") else None
    d_hat, result = run_pipeline(
        mono, cloud, cam, extr, config, gt=gt, confidence_dir=resolve(entry.get("conf_dir")),
        frame_id=frame_id, debug_dir=debug_dir,
    )
    if out_dir is not None:
        if d_hat is not None:
            write_depth_pfm(out_dir / f"{frame_id}_dhat.pfm", d_hat)
        write_json(out_dir / f"{frame_id}.json", result.to_dict())
    return result.to_dict()


def run_batch(manifest, config: PipelineConfig = None, out_dir=None, jobs: int = None, debug_dir=None):
    """Process every frame listed in a JSON manifest.

    The manifest is a list of ``{id, mono, cloud, calib, gt?, conf_dir?}``
    records with paths relative to the manifest.  Results come back in
    manifest order whatever the degree of parallelism.
    """
    from .io import read_json

    manifest = Path(manifest)
    entries = read_json(manifest)
    if not isinstance(entries, list):
        raise InputError("batch manifest must be a JSON list of frame records")
    config = config or PipelineConfig()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    jobs = jobs or os.cpu_count() or 1
    tasks = [(e, manifest.parent, config, out_dir, debug_dir) for e in entries]
    if jobs <= 1 or len(tasks) <= 1:
        return [_run_manifest_entry(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_manifest_entry, tasks))
