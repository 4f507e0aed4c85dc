"""Quasi-dense radar depth from per-point association confidence maps.

Every projected radar point owns a patch of pixels around its projection and
a confidence, per pixel, that the pixel shows the surface the point hit.
Pixels where at least one point is confident above ``tau`` get the
confidence-weighted mean of those points' depths.

Confidence maps come either from :func:`heuristic_confidence` (an analytic
stand-in for a learned association network) or from files written by an
external network, see :func:`load_external_confidence`.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .errors import FormatError, ParameterError, UndefinedScoreError
from .geometry import CameraModel, DepthImage

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.5
DEFAULT_SIGMA_D = 1.0
DEFAULT_PATCH = (150, 50)
LABEL_TOL = 0.5

POSITIVE, NEGATIVE, IGNORE = 1, 0, -1


@dataclass(frozen=True)
class PatchRect:
    """Pixel rectangle ``[u0, u0 + w) x [v0, v0 + h)``.

    ``cu, cv`` is the radar pixel the patch was centred on before clipping.
    """

    u0: int
    v0: int
    w: int
    h: int
    cu: int
    cv: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ParameterError(f"empty patch {self.w}x{self.h}")

    @property
    def slices(self):
        return slice(self.v0, self.v0 + self.h), slice(self.u0, self.u0 + self.w)

    def inside(self, width, height) -> bool:
        return self.u0 >= 0 and self.v0 >= 0 and self.u0 + self.w <= width and self.v0 + self.h <= height


@dataclass(frozen=True)
class ConfidenceMap:
    point_index: int
    rect: PatchRect
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.rect.h, self.rect.w):
            raise ParameterError(f"confidence grid {values.shape} does not match rect {self.rect.h}x{self.rect.w}")
        if not (np.all(values >= 0) and np.all(values <= 1)):
            raise ParameterError("confidence values must lie in [0, 1]")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class AssociationLabels:
    """Per-pixel labels: 1 positive, 0 negative, -1 ignore (no ground truth)."""

    point_index: int
    rect: PatchRect
    labels: np.ndarray


def crop_patch_rect(u: int, v: int, patch_w: int, patch_h: int, cam: CameraModel) -> PatchRect:
    """Patch of nominal size ``patch_w x patch_h`` centred on ``(u, v)``, clipped to the image.

    The nominal top-left corner is ``(u - patch_w // 2, v - patch_h // 2)``.
    """
    if patch_w < 1 or patch_h < 1:
        raise ParameterError("patch size must be >= 1")
    if not (0 <= u < cam.width and 0 <= v < cam.height):
        raise ParameterError(f"centre ({u}, {v}) outside the image")
    u0 = u - patch_w // 2
    v0 = v - patch_h // 2
    u1 = min(u0 + patch_w, cam.width)
    v1 = min(v0 + patch_h, cam.height)
    u0 = max(u0, 0)
    v0 = max(v0, 0)
    return PatchRect(int(u0), int(v0), int(u1 - u0), int(v1 - v0), int(u), int(v))


def default_sigma_uv(patch_w: int, patch_h: int) -> float:
    """Half of the nominal patch half-diagonal."""
    return 0.5 * math.hypot(patch_w / 2.0, patch_h / 2.0)


def heuristic_confidence(
    rect: PatchRect,
    radar_depth: float,
    guide: DepthImage,
    sigma_d: float = DEFAULT_SIGMA_D,
    sigma_uv: Optional[float] = None,
    point_index: int = 0,
) -> ConfidenceMap:
    """Gaussian agreement between guide depth and radar depth, times a spatial falloff.

    ``exp(-(guide - radar_depth)^2 / (2 sigma_d^2)) * exp(-r^2 / (2 sigma_uv^2))``
    with ``r`` the pixel distance to the patch centre.  Pixels where the guide
    is invalid get zero confidence.
    """
    if sigma_uv is None:
        sigma_uv = default_sigma_uv(rect.w, rect.h)
    if not (sigma_d > 0 and sigma_uv > 0):
        raise ParameterError("sigma_d and sigma_uv must be positive")
    rows, cols = rect.slices
    g = guide.values[rows, cols]
    ok = guide.mask[rows, cols]
    vv, uu = np.mgrid[rows, cols]
    r2 = (uu - rect.cu) ** 2 + (vv - rect.cv) ** 2
    conf = np.exp(-((g - radar_depth) ** 2) / (2.0 * sigma_d**2)) * np.exp(-r2 / (2.0 * sigma_uv**2))
    conf = np.where(ok, conf, 0.0)
    return ConfidenceMap(int(point_index), rect, conf)


def quasi_dense_depth(
    maps: Sequence[ConfidenceMap], depths, height: int, width: int, tau: float = DEFAULT_TAU
) -> DepthImage:
    """Confidence-weighted average of candidate radar depths per pixel.

    Candidates of a pixel are the maps whose confidence there is strictly
    above ``tau``; pixels without candidates are invalid.  ``depths`` is
    indexed by ``ConfidenceMap.point_index``.  Accumulation runs in
    ascending point index, so the result does not depend on list order.
    """
    if not 0 < tau < 1:
        raise ParameterError(f"tau must lie in (0, 1), got {tau}")
    depths = np.asarray(depths, dtype=float)
    num = np.zeros((height, width))
    den = np.zeros((height, width))
    for cm in sorted(maps, key=lambda c: c.point_index):
        if not 0 <= cm.point_index < depths.shape[0]:
            raise ParameterError(f"point index {cm.point_index} out of range")
        if not cm.rect.inside(width, height):
            raise ParameterError(f"patch of point {cm.point_index} exceeds the image")
        y = np.where(cm.values > tau, cm.values, 0.0)
        rows, cols = cm.rect.slices
        num[rows, cols] += depths[cm.point_index] * y
        den[rows, cols] += y
    mask = den > 0
    values = np.zeros((height, width))
    np.divide(num, den, out=values, where=mask)
    return DepthImage(values, mask)


def make_association_labels(
    d_int: DepthImage, rect: PatchRect, radar_depth: float, tol: float = LABEL_TOL, point_index: int = 0
) -> AssociationLabels:
    """Positive where ``|d_int - radar_depth| < tol``, negative elsewhere on
    valid ground truth, ignore where ground truth is missing."""
    if tol <= 0:
        raise ParameterError("tol must be positive")
    rows, cols = rect.slices
    g = d_int.values[rows, cols]
    ok = d_int.mask[rows, cols]
    labels = np.where(np.abs(g - radar_depth) < tol, POSITIVE, NEGATIVE).astype(np.int8)
    labels[~ok] = IGNORE
    return AssociationLabels(int(point_index), rect, labels)


def bce_score(conf: ConfidenceMap, labels: AssociationLabels, eps: float = 1e-6) -> float:
    """Mean binary cross-entropy over labelled pixels; confidences clamped to ``[eps, 1 - eps]``."""
    if conf.rect != labels.rect:
        raise ParameterError("confidence map and labels cover different patches")
    if not 0 < eps <= 1e-3:
        raise ParameterError("eps must lie in (0, 1e-3]")
    keep = labels.labels != IGNORE
    if not keep.any():
        raise UndefinedScoreError(f"no labelled pixel in patch of point {labels.point_index}")
    y = labels.labels[keep].astype(float)
    p = np.clip(conf.values[keep], eps, 1.0 - eps)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def load_external_confidence(directory, frame_id: str, width: int, height: int):
    """Read confidence maps produced outside this library.

    Layout: ``<directory>/<frame_id>.json`` holds a list of objects
    ``{point_index, u0, v0, w, h, pfm_path}``; ``pfm_path`` is relative to the
    directory and stores an ``h x w`` PFM grid.  Values outside ``[0, 1]`` are
    clamped.

    Returns
    -------
    (list of ConfidenceMap, int)
        Maps sorted by point index and the number of clamped values.
    """
    from .io import read_pfm_array

    directory = Path(directory)
    index_path = directory / f"{frame_id}.json"
    if not index_path.is_file():
        raise FormatError("missing confidence index file", path=index_path)
    try:
        entries = json.loads(index_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc}", path=index_path) from None
    if isinstance(entries, dict):
        entries = entries.get("maps")
    if not isinstance(entries, list):
        raise FormatError("index must be a list of map records", path=index_path)
    maps: List[ConfidenceMap] = []
    clamped = 0
    for entry in entries:
        try:
            idx = int(entry["point_index"])
            u0, v0, w, h = (int(entry[k]) for k in ("u0", "v0", "w", "h"))
            pfm = directory / entry["pfm_path"]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad map record {entry!r}: {exc}", path=index_path) from None
        if w < 1 or h < 1 or u0 < 0 or v0 < 0 or u0 + w > width or v0 + h > height:
            raise FormatError(f"patch ({u0}, {v0}, {w}, {h}) outside {width}x{height} image", path=pfm)
        values = read_pfm_array(pfm)
        if values.shape != (h, w):
            raise FormatError(f"grid is {values.shape[1]}x{values.shape[0]}, index says {w}x{h}", path=pfm)
        if not np.all(np.isfinite(values)):
            raise FormatError("non-finite confidence value", path=pfm)
        bad = int(np.count_nonzero((values < 0) | (values > 1)))
        if bad:
            logger.warning("%s: clamped %d confidence values into [0, 1]", pfm, bad)
            clamped += bad
        rect = PatchRect(u0, v0, w, h, u0 + w // 2, v0 + h // 2)
        maps.append(ConfidenceMap(idx, rect, np.clip(values, 0.0, 1.0)))
    maps.sort(key=lambda c: c.point_index)
    return maps, clamped


def write_external_confidence(directory, frame_id: str, maps: Sequence[ConfidenceMap]) -> Path:
    """Write maps in the layout read by :func:`load_external_confidence`."""
    from .io import write_pfm_array

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = []
    for cm in maps:
        name = f"{frame_id}_{cm.point_index:05d}.pfm"
        write_pfm_array(directory / name, cm.values)
        r = cm.rect
        index.append({"point_index": cm.point_index, "u0": r.u0, "v0": r.v0, "w": r.w, "h": r.h, "pfm_path": name})
    path = directory / f"{frame_id}.json"
    path.write_text(json.dumps(index, indent=1))
    return path
