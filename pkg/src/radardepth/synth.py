"""Synthetic frames with analytic ground truth.

A scene is a handful of primitives seen by a level pinhole camera (y down):
a ground plane ``height`` metres below the camera, fronto-parallel boxes and
a fronto-parallel background.  Depth is the z-distance of the nearest hit.

Randomness comes from PCG64 generators keyed by ``(seed, stream)``; each
consumer (layout, radar, mono field, guide noise) has its own stream, so
changing the radar point count leaves the monocular corruption untouched.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional

import numpy as np

from .errors import DegenerateInputError, ParameterError
from .geometry import CameraModel, DepthImage, RadarPointCloud, RigidTransform

STREAM_LAYOUT, STREAM_RADAR, STREAM_MONO, STREAM_GUIDE = 1, 2, 3, 4
MAX_DEPTH = 100.0


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(stream),))))


@dataclass(frozen=True)
class RadarSpec:
    n_points: int = 200
    depth_noise_sigma: float = 0.2
    outlier_rate: float = 0.0
    outlier_scale: float = 5.0
    # sampling weight grows like ((v + 0.5) / height) ** row_bias
    row_bias: float = 1.0

    def __post_init__(self):
        if self.n_points < 0:
            raise ParameterError("n_points must be >= 0")
        if not 0 <= self.outlier_rate <= 1:
            raise ParameterError("outlier_rate must lie in [0, 1]")
        if self.depth_noise_sigma < 0 or self.outlier_scale <= 0:
            raise ParameterError("noise sigma must be >= 0 and outlier scale > 0")


@dataclass(frozen=True)
class MonoCorruption:
    global_scale: float = 1.0
    amplitude: float = 0.0
    wavelength: float = 120.0

    def __post_init__(self):
        if not self.global_scale > 0:
            raise ParameterError("global_scale must be positive")
        if not 0 <= self.amplitude < 0.5:
            raise ParameterError("amplitude must lie in [0, 0.5)")
        if not self.wavelength > 0:
            raise ParameterError("wavelength must be positive")


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to regenerate a frame bit-for-bit.

    ``layout`` entries are dicts:
    ``{"type": "ground", "height": h}``,
    ``{"type": "box", "x": [x0, x1], "y": [y0, y1], "z": depth}`` (camera-frame metres, y down),
    ``{"type": "background", "z": depth}``.
    """

    seed: int
    camera: CameraModel
    layout: List[dict]
    radar: RadarSpec = field(default_factory=RadarSpec)
    mono_corruption: MonoCorruption = field(default_factory=MonoCorruption)
    extrinsic: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        for prim in self.layout:
            kind = prim.get("type")
            if kind == "ground":
                if not prim["height"] > 0:
                    raise ParameterError("ground height must be positive")
            elif kind in ("box", "background"):
                if not 0 < prim["z"] <= MAX_DEPTH:
                    raise ParameterError(f"{kind} depth must lie in (0, {MAX_DEPTH}]")
            else:
                raise ParameterError(f"unknown primitive type {kind!r}")

    def to_dict(self):
        cam = self.camera
        return {
            "seed": self.seed,
            "camera": {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy, "width": cam.width, "height": cam.height},
            "layout": [dict(p) for p in self.layout],
            "radar": asdict(self.radar),
            "mono_corruption": asdict(self.mono_corruption),
            "T_cam_radar": self.extrinsic.matrix().reshape(-1).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            extr = RigidTransform.identity()
            if "T_cam_radar" in d:
                extr = RigidTransform.from_matrix(d["T_cam_radar"])
            return cls(
                seed=int(d["seed"]),
                camera=CameraModel(**d["camera"]),
                layout=[dict(p) for p in d["layout"]],
                radar=RadarSpec(**d.get("radar", {})),
                mono_corruption=MonoCorruption(**d.get("mono_corruption", {})),
                extrinsic=extr,
            )
        except (KeyError, TypeError) as exc:
            raise ParameterError(f"invalid scene spec: {exc}") from None


@dataclass(frozen=True)
class FrameBundle:
    gt_depth: DepthImage
    mono_depth: DepthImage
    cloud: RadarPointCloud
    guide_image: np.ndarray
    camera: CameraModel
    extrinsic: RigidTransform
    spec: Optional[SceneSpec] = None


def raycast_depth(layout, cam: CameraModel) -> np.ndarray:
    """z-depth of the nearest primitive per pixel; ``inf`` where nothing is hit within range."""
    v, u = np.mgrid[0 : cam.height, 0 : cam.width].astype(float)
    dx = (u - cam.cx) / cam.fx
    dy = (v - cam.cy) / cam.fy
    depth = np.full(u.shape, np.inf)
    for prim in layout:
        kind = prim["type"]
        if kind == "background":
            hit = np.full(u.shape, float(prim["z"]))
        elif kind == "box":
            z = float(prim["z"])
            x0, x1 = sorted(prim["x"])
            y0, y1 = sorted(prim["y"])
            inside = (dx * z >= x0) & (dx * z <= x1) & (dy * z >= y0) & (dy * z <= y1)
            hit = np.where(inside, z, np.inf)
        elif kind == "ground":
            with np.errstate(divide="ignore"):
                hit = np.where(dy > 0, float(prim["height"]) / np.where(dy > 0, dy, 1.0), np.inf)
        else:
            raise ParameterError(f"unknown primitive type {kind!r}")
        depth = np.minimum(depth, hit)
    depth[depth > MAX_DEPTH] = np.inf
    return depth


def smooth_field(height: int, width: int, wavelength: float, rng: np.random.Generator) -> np.ndarray:
    """Mean of four plane waves with random directions and phases; values in [-1, 1]."""
    v, u = np.mgrid[0:height, 0:width].astype(float)
    theta = rng.uniform(0.0, 2.0 * math.pi, 4)
    phase = rng.uniform(0.0, 2.0 * math.pi, 4)
    stretch = rng.uniform(0.75, 1.5, 4)
    f = np.zeros((height, width))
    for k in range(4):
        lam = wavelength * stretch[k]
        f += np.sin(2.0 * math.pi * (math.cos(theta[k]) * u + math.sin(theta[k]) * v) / lam + phase[k])
    return f / 4.0


def corrupt_mono(gt: DepthImage, corruption: MonoCorruption, seed: int) -> DepthImage:
    """``a * gt * (1 + eps * f)`` with ``f`` a smooth field in [-1, 1]."""
    f = smooth_field(gt.height, gt.width, corruption.wavelength, rng_stream(seed, STREAM_MONO))
    values = corruption.global_scale * gt.values * (1.0 + corruption.amplitude * f)
    return DepthImage(np.where(gt.mask, values, 0.0), gt.mask.copy())


def sample_radar(gt: DepthImage, cam: CameraModel, radar: RadarSpec, seed: int, extrinsic: RigidTransform = None):
    """Draw radar returns from valid ground-truth pixels.

    Pixels are drawn without replacement, favouring lower rows.  Each depth
    gets Gaussian noise; a random ``outlier_rate`` fraction is then scaled by
    ``outlier_scale``.  Points are back-projected through the pixel centre
    and expressed in the radar frame.
    """
    extrinsic = extrinsic or RigidTransform.identity()
    rng = rng_stream(seed, STREAM_RADAR)
    flat = np.flatnonzero(gt.mask)
    if radar.n_points > flat.size:
        raise ParameterError(f"n_points {radar.n_points} exceeds {flat.size} valid pixels")
    if radar.n_points == 0:
        return RadarPointCloud.empty()
    rows = flat // gt.width
    weight = ((rows + 0.5) / gt.height) ** radar.row_bias
    pick = np.sort(rng.choice(flat.size, size=radar.n_points, replace=False, p=weight / weight.sum()))
    idx = flat[pick]
    v, u = idx // gt.width, idx % gt.width
    depth = gt.values.reshape(-1)[idx] + rng.normal(0.0, radar.depth_noise_sigma, radar.n_points)
    n_out = int(round(radar.outlier_rate * radar.n_points))
    if n_out:
        out = rng.choice(radar.n_points, size=n_out, replace=False)
        depth[out] *= radar.outlier_scale
    depth = np.maximum(depth, 1e-3)
    pts_cam = cam.backproject(u, v, depth)
    return RadarPointCloud(extrinsic.inverse().apply(pts_cam))


def guide_from_depth(gt: DepthImage, seed: int, noise: float = 0.01) -> np.ndarray:
    """Thermal stand-in: normalised inverse depth plus Gaussian noise."""
    inv = np.where(gt.mask, 1.0 / np.where(gt.mask, gt.values, 1.0), 0.0)
    peak = inv.max() if inv.size and inv.max() > 0 else 1.0
    return inv / peak + rng_stream(seed, STREAM_GUIDE).normal(0.0, noise, gt.shape)


def generate_scene(spec: SceneSpec) -> FrameBundle:
    """Render ground truth, the corrupted monocular depth, radar returns and a guide image."""
    if not spec.layout:
        raise DegenerateInputError("scene layout is empty")
    depth = raycast_depth(spec.layout, spec.camera)
    if not np.all(np.isfinite(depth)):
        raise DegenerateInputError(f"{int((~np.isfinite(depth)).sum())} pixels hit no primitive within {MAX_DEPTH} m")
    gt = DepthImage(depth, np.ones(depth.shape, dtype=bool))
    mono = corrupt_mono(gt, spec.mono_corruption, spec.seed)
    cloud = sample_radar(gt, spec.camera, spec.radar, spec.seed, spec.extrinsic)
    guide = guide_from_depth(gt, spec.seed)
    return FrameBundle(gt, mono, cloud, guide, spec.camera, spec.extrinsic, spec)


def default_camera(width: int = 320, height: int = 240) -> CameraModel:
    f = 0.78 * width
    return CameraModel(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def default_extrinsic() -> RigidTransform:
    """Radar 20 cm below and 10 cm behind the camera, axes aligned."""
    return RigidTransform(np.eye(3), np.array([0.0, -0.2, 0.1]))


def random_scene_spec(
    seed: int,
    camera: CameraModel = None,
    global_scale: float = 2.0,
    amplitude: float = 0.1,
    noise_sigma: float = 0.2,
    n_points: int = 300,
    outlier_rate: float = 0.0,
    wavelength: float = None,
) -> SceneSpec:
    """A street-like layout: ground, a background wall and two to four boxes."""
    cam = camera or default_camera()
    rng = rng_stream(seed, STREAM_LAYOUT)
    layout = [{"type": "ground", "height": 1.5}, {"type": "background", "z": float(rng.uniform(40.0, 70.0))}]
    for _ in range(int(rng.integers(2, 5))):
        z = float(rng.uniform(6.0, 30.0))
        half_w = float(rng.uniform(0.8, 3.0))
        xc = float(rng.uniform(-0.6, 0.6)) * z * cam.width / (2 * cam.fx)
        top = float(rng.uniform(-2.5, 0.0))
        layout.append({"type": "box", "x": [xc - half_w, xc + half_w], "y": [top, 1.5], "z": z})
    if wavelength is None:
        wavelength = 0.75 * cam.width
    return SceneSpec(
        seed=seed,
        camera=cam,
        layout=layout,
        radar=RadarSpec(n_points=n_points, depth_noise_sigma=noise_sigma, outlier_rate=outlier_rate),
        mono_corruption=MonoCorruption(global_scale=global_scale, amplitude=amplitude, wavelength=wavelength),
        extrinsic=default_extrinsic(),
    )


def with_seed(spec: SceneSpec, seed: int) -> SceneSpec:
    return replace(spec, seed=int(seed))
