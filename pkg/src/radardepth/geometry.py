"""Pinhole camera geometry, radar point clouds and depth rasters.

Conventions
-----------
Camera frame: x right, y down, z forward along the optical axis.
Image frame: u to the right (columns), v down (rows), origin at the centre of
the top-left pixel, so pixel ``(u, v)`` lives at ``values[v, u]``.
Extrinsics map radar-frame points into the camera frame:
``p_cam = R @ p_radar + t``.  No lens distortion is modelled; thermal images
are assumed to be undistorted before they reach this library.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InputError, ParameterError

ORTHO_TOL = 1e-9
DEFAULT_RADAR_RANGE = (0.0, 100.0)


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ParameterError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ParameterError(f"image size must be >= 1, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ParameterError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image")

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def from_matrix(cls, K, width, height):
        K = np.asarray(K, dtype=float).reshape(3, 3)
        if K[0, 1] != 0 or K[1, 0] != 0 or K[2, 0] != 0 or K[2, 1] != 0 or K[2, 2] != 1:
            raise ParameterError("intrinsic matrix must be [[fx,0,cx],[0,fy,cy],[0,0,1]] (no skew)")
        return cls(float(K[0, 0]), float(K[1, 1]), float(K[0, 2]), float(K[1, 2]), int(width), int(height))

    def backproject(self, u, v, depth) -> np.ndarray:
        """Camera-frame points (N, 3) for pixel coordinates and z-depths."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        z = np.asarray(depth, dtype=float)
        x = (u - self.cx) / self.fx * z
        y = (v - self.cy) / self.fy * z
        return np.stack([x, y, z], axis=-1)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ParameterError("rigid transform has non-finite entries")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ParameterError("rotation is not orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float).reshape(4, 4)
        if np.any(T[3] != (0.0, 0.0, 0.0, 1.0)):
            raise ParameterError("homogeneous transform must have last row [0, 0, 0, 1]")
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        return points @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)


@dataclass(frozen=True)
class RadarPointCloud:
    """Radar returns in the radar frame.  ``doppler`` (m/s) and ``rcs`` (dB) are optional."""

    xyz: np.ndarray
    doppler: Optional[np.ndarray] = None
    rcs: Optional[np.ndarray] = None

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(xyz)):
            raise ParameterError("radar point coordinates must be finite")
        object.__setattr__(self, "xyz", xyz)
        for name in ("doppler", "rcs"):
            col = getattr(self, name)
            if col is not None:
                col = np.asarray(col, dtype=float).reshape(-1)
                if col.shape[0] != xyz.shape[0]:
                    raise ParameterError(f"{name} has {col.shape[0]} entries for {xyz.shape[0]} points")
                object.__setattr__(self, name, col)

    def __len__(self):
        return self.xyz.shape[0]

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)))


@dataclass(frozen=True)
class DepthImage:
    """Dense raster of depth in metres; invalid pixels are ignored everywhere.

    ``values`` keeps whatever sits under invalid pixels (the PFM codec relies
    on that for byte-exact round trips); never read it without the mask.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if values.ndim != 2 or values.shape != mask.shape:
            raise ParameterError(f"values {values.shape} and mask {mask.shape} must be equal 2-D shapes")
        with np.errstate(invalid="ignore"):
            bad = mask & ~(np.isfinite(values) & (values > 0))
        if bad.any():
            raise ParameterError(f"{int(bad.sum())} valid pixels are non-positive or non-finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def from_array(cls, values):
        """Wrap an array, marking pixels valid where they are finite and > 0."""
        values = np.asarray(values, dtype=float)
        with np.errstate(invalid="ignore"):
            mask = np.isfinite(values) & (values > 0)
        return cls(values, mask)

    @classmethod
    def invalid(cls, height, width):
        return cls(np.zeros((height, width)), np.zeros((height, width), dtype=bool))

    def filled(self, fill=0.0) -> np.ndarray:
        return np.where(self.mask, self.values, fill)

    def coverage(self) -> float:
        return float(self.mask.mean())

    def reciprocal(self):
        """Inverse of a depth map (or vice versa) on valid pixels."""
        cls = DepthImage if isinstance(self, InverseDepthImage) else InverseDepthImage
        out = np.zeros_like(self.values)
        np.divide(1.0, self.values, out=out, where=self.mask)
        return cls(out, self.mask.copy())


class InverseDepthImage(DepthImage):
    """Same layout as :class:`DepthImage`, values in 1/m."""


@dataclass(frozen=True)
class SparseDepthProjection:
    """Radar points that landed in the image: integer pixels, camera-frame depth,
    and the index of the originating point.  ``n_dropped`` counts points that
    were behind the camera or off-image."""

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    source_index: np.ndarray
    width: int
    height: int
    n_dropped: int = 0

    def __post_init__(self):
        for name in ("u", "v", "source_index"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64).reshape(-1))
        object.__setattr__(self, "depth", np.asarray(self.depth, dtype=float).reshape(-1))
        n = self.u.shape[0]
        if not (self.v.shape[0] == self.depth.shape[0] == self.source_index.shape[0] == n):
            raise ParameterError("projection columns must have equal length")
        if n and (self.u.min() < 0 or self.u.max() >= self.width or self.v.min() < 0 or self.v.max() >= self.height):
            raise ParameterError("projection entries outside the image")
        if n and not np.all(self.depth > 0):
            raise ParameterError("projection depths must be positive")

    def __len__(self):
        return self.u.shape[0]

    def subset(self, keep) -> "SparseDepthProjection":
        keep = np.asarray(keep)
        return SparseDepthProjection(
            self.u[keep], self.v[keep], self.depth[keep], self.source_index[keep], self.width, self.height, self.n_dropped
        )

    def within_range(self, lo=DEFAULT_RADAR_RANGE[0], hi=DEFAULT_RADAR_RANGE[1]) -> "SparseDepthProjection":
        """Entries with ``lo < depth <= hi``."""
        if not lo < hi:
            raise ParameterError(f"range lower bound {lo} must be below upper bound {hi}")
        return self.subset((self.depth > lo) & (self.depth <= hi))

    def zbuffered(self) -> "SparseDepthProjection":
        """One entry per occupied pixel: the nearest one, earliest on depth ties.

        Survivors keep their original relative order.
        """
        if len(self) == 0:
            return self
        flat = self.v * self.width + self.u
        order = np.lexsort((np.arange(len(self)), self.depth, flat))
        first = np.ones(order.shape[0], dtype=bool)
        first[1:] = flat[order[1:]] != flat[order[:-1]]
        return self.subset(np.sort(order[first]))


def project_points(cloud: RadarPointCloud, extrinsic: RigidTransform, cam: CameraModel) -> SparseDepthProjection:
    """Project radar points into the image with round-to-nearest pixel assignment.

    Points with camera-frame ``z <= 0`` or whose rounded pixel falls outside the
    image are dropped silently; ``n_dropped`` on the result counts them.
    Input order is preserved.
    """
    pts = extrinsic.apply(cloud.xyz)
    z = pts[:, 2]
    front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(front, cam.fx * pts[:, 0] / np.where(front, z, 1.0) + cam.cx, -1.0)
        v = np.where(front, cam.fy * pts[:, 1] / np.where(front, z, 1.0) + cam.cy, -1.0)
    # floor(x + 0.5): halves round up, independent of numpy's banker's rounding
    ui = np.floor(u + 0.5)
    vi = np.floor(v + 0.5)
    keep = front & (ui >= 0) & (ui < cam.width) & (vi >= 0) & (vi < cam.height)
    idx = np.flatnonzero(keep)
    return SparseDepthProjection(
        ui[idx].astype(np.int64),
        vi[idx].astype(np.int64),
        z[idx],
        idx,
        cam.width,
        cam.height,
        n_dropped=int(len(cloud) - idx.size),
    )


def build_sparse_depth_map(proj: SparseDepthProjection, cam: CameraModel = None) -> DepthImage:
    """Rasterise a projection; colliding entries keep the minimum depth."""
    height, width = (cam.height, cam.width) if cam is not None else (proj.height, proj.width)
    if (height, width) != (proj.height, proj.width):
        raise InputError(f"projection is {proj.width}x{proj.height}, camera is {width}x{height}")
    values = np.full(height * width, np.inf)
    np.minimum.at(values, proj.v * width + proj.u, proj.depth)
    values = values.reshape(height, width)
    mask = np.isfinite(values)
    values[~mask] = 0.0
    return DepthImage(values, mask)


def range_valid_mask(depth: DepthImage, lo: float = DEFAULT_RADAR_RANGE[0], hi: float = DEFAULT_RADAR_RANGE[1]) -> DepthImage:
    """Restrict validity to ``lo < value <= hi``; values are left untouched."""
    if not lo < hi:
        raise ParameterError(f"range lower bound {lo} must be below upper bound {hi}")
    with np.errstate(invalid="ignore"):
        mask = depth.mask & (depth.values > lo) & (depth.values <= hi)
    return type(depth)(depth.values, mask)


def sample_at(image: DepthImage, proj: SparseDepthProjection):
    """Values and validity of ``image`` at each projection entry."""
    return image.values[proj.v, proj.u], image.mask[proj.v, proj.u]
