"""File formats: PFM depth maps, ASCII PLY / CSV point clouds, calibration JSON.

PFM files are single-channel ("Pf"), little-endian (negative scale) and
stored bottom row first.  On read, pixels that are non-positive or
non-finite are invalid.  Text formats write floats with ``repr`` so values
survive a round trip exactly.
"""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError
from .geometry import CameraModel, DepthImage, RadarPointCloud, RigidTransform

_PFM_TOKEN = re.compile(rb"\S+")


def _pfm_header(data: bytes, path):
    """Parse the three header tokens; returns (width, height, scale, data_offset)."""
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PFM_TOKEN.search(data, pos)
        if m is None:
            raise FormatError("truncated header", path=path, offset=len(data))
        tokens.append((m.group(), m.start()))
        pos = m.end()
    magic, off = tokens[0]
    if magic == b"PF":
        raise FormatError("colour PFM ('PF') is not supported; expected single-channel 'Pf'", path=path, offset=off)
    if magic != b"Pf":
        raise FormatError(f"bad magic {magic[:8]!r}, expected b'Pf'", path=path, offset=off)
    try:
        width = int(tokens[1][0])
        height = int(tokens[2][0])
    except ValueError:
        raise FormatError("image dimensions are not integers", path=path, offset=tokens[1][1]) from None
    if width < 1 or height < 1:
        raise FormatError(f"invalid dimensions {width}x{height}", path=path, offset=tokens[1][1])
    try:
        scale = float(tokens[3][0])
    except ValueError:
        raise FormatError("scale is not a number", path=path, offset=tokens[3][1]) from None
    if scale == 0 or not np.isfinite(scale):
        raise FormatError(f"invalid scale {scale}", path=path, offset=tokens[3][1])
    if scale > 0:
        raise FormatError("big-endian PFM (positive scale) is not supported", path=path, offset=tokens[3][1])
    # exactly one whitespace byte separates the header from the raster
    return width, height, scale, pos + 1


def read_pfm_array(path) -> np.ndarray:
    """Raw float grid of a single-channel little-endian PFM, top row first."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read: {exc.strerror}", path=path) from None
    width, height, _, offset = _pfm_header(data, path)
    need = width * height * 4
    have = len(data) - offset
    if have < need:
        raise FormatError(f"raster truncated: {have} of {need} bytes", path=path, offset=len(data))
    if have > need:
        raise FormatError(f"{have - need} trailing bytes after raster", path=path, offset=offset + need)
    grid = np.frombuffer(data, dtype="<f4", count=width * height, offset=offset).reshape(height, width)
    return np.flipud(grid).astype(np.float64)


def write_pfm_array(path, values) -> None:
    values = np.asarray(values)
    if values.ndim != 2 or values.size == 0:
        raise ParameterError("PFM raster must be a non-empty 2-D array")
    height, width = values.shape
    header = f"Pf\n{width} {height}\n-1\n".encode("ascii")
    Path(path).write_bytes(header + np.flipud(values).astype("<f4").tobytes())


def read_depth_pfm(path) -> DepthImage:
    return DepthImage.from_array(read_pfm_array(path))


def write_depth_pfm(path, image: DepthImage) -> None:
    """Valid pixels are written as-is; invalid ones keep a non-positive or
    non-finite stored value, anything else becomes 0."""
    raw = image.values
    with np.errstate(invalid="ignore"):
        keep_raw = ~(np.isfinite(raw) & (raw > 0))
    write_pfm_array(path, np.where(image.mask | keep_raw, raw, 0.0))


_PLY_COLUMNS = ("x", "y", "z", "doppler", "rcs")
_PLY_TYPES = {"float", "float32", "double", "float64", "int", "int32", "uint", "uint32", "short", "ushort", "char", "uchar", "int8", "uint8", "int16", "uint16"}


def _columns(cloud: RadarPointCloud):
    cols = [cloud.xyz[:, 0], cloud.xyz[:, 1], cloud.xyz[:, 2]]
    names = ["x", "y", "z"]
    if cloud.doppler is not None or cloud.rcs is not None:
        nan = np.full(len(cloud), np.nan)
        cols += [cloud.doppler if cloud.doppler is not None else nan, cloud.rcs if cloud.rcs is not None else nan]
        names += ["doppler", "rcs"]
    return names, cols


def _cloud_from_columns(table: dict, path):
    for k in ("x", "y", "z"):
        if k not in table:
            raise FormatError(f"missing required column {k!r}", path=path)
    xyz = np.stack([table["x"], table["y"], table["z"]], axis=1) if len(table["x"]) else np.zeros((0, 3))
    if not np.all(np.isfinite(xyz)):
        raise FormatError("non-finite point coordinate", path=path)
    return RadarPointCloud(xyz, table.get("doppler"), table.get("rcs"))


def write_ply(path, cloud: RadarPointCloud) -> None:
    names, cols = _columns(cloud)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
    lines += [f"property double {n}" for n in names]
    lines.append("end_header")
    rows = (" ".join(repr(float(c[i])) for c in cols) for i in range(len(cloud)))
    Path(path).write_text("\n".join([*lines, *rows]) + "\n")


def read_ply(path) -> RadarPointCloud:
    path = Path(path)
    try:
        text = path.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise FormatError(f"cannot read as text: {exc}", path=path) from None
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FormatError("missing 'ply' magic line", path=path)
    n_vertex = None
    props = []
    in_vertex = False
    header_end = None
    for i, line in enumerate(lines[1:], start=1):
        tok = line.split()
        if not tok or tok[0] == "comment" or tok[0] == "obj_info":
            continue
        if tok[0] == "format":
            if tok[1:2] != ["ascii"]:
                raise FormatError(f"line {i + 1}: only ASCII PLY is supported, got {' '.join(tok[1:])}", path=path)
        elif tok[0] == "element":
            if len(tok) != 3:
                raise FormatError(f"line {i + 1}: malformed element line", path=path)
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                try:
                    n_vertex = int(tok[2])
                except ValueError:
                    raise FormatError(f"line {i + 1}: vertex count is not an integer", path=path) from None
                if n_vertex < 0:
                    raise FormatError(f"line {i + 1}: negative vertex count", path=path)
            elif n_vertex is None:
                raise FormatError(f"line {i + 1}: vertex element must come first", path=path)
        elif tok[0] == "property":
            if in_vertex:
                if len(tok) != 3 or tok[1] not in _PLY_TYPES:
                    raise FormatError(f"line {i + 1}: unsupported property {' '.join(tok[1:])}", path=path)
                props.append(tok[2])
        elif tok[0] == "end_header":
            header_end = i
            break
        else:
            raise FormatError(f"line {i + 1}: unexpected header keyword {tok[0]!r}", path=path)
    if header_end is None:
        raise FormatError("missing end_header", path=path)
    if n_vertex is None:
        raise FormatError("no vertex element", path=path)
    body = lines[header_end + 1 : header_end + 1 + n_vertex]
    if len(body) < n_vertex:
        raise FormatError(f"expected {n_vertex} vertices, found {len(body)}", path=path)
    rows = np.zeros((n_vertex, len(props)))
    for k, line in enumerate(body):
        tok = line.split()
        if len(tok) != len(props):
            raise FormatError(f"line {header_end + 2 + k}: expected {len(props)} values, got {len(tok)}", path=path)
        try:
            rows[k] = [float(t) for t in tok]
        except ValueError:
            raise FormatError(f"line {header_end + 2 + k}: non-numeric value", path=path) from None
    table = {name: rows[:, j] for j, name in enumerate(props) if name in _PLY_COLUMNS}
    return _cloud_from_columns(table, path)


def write_csv(path, cloud: RadarPointCloud) -> None:
    names, cols = _columns(cloud)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for i in range(len(cloud)):
            w.writerow([repr(float(c[i])) for c in cols])


def read_csv(path) -> RadarPointCloud:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise FormatError("empty file, expected a header row", path=path)
            header = [h.strip() for h in header]
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise FormatError(f"line {lineno}: expected {len(header)} fields, got {len(row)}", path=path)
                try:
                    rows.append([float(x) for x in row])
                except ValueError:
                    raise FormatError(f"line {lineno}: non-numeric value", path=path) from None
    except csv.Error as exc:
        raise FormatError(f"line {reader.line_num}: {exc}", path=path) from None
    except (OSError, UnicodeDecodeError) as exc:
        raise FormatError(f"cannot read: {exc}", path=path) from None
    arr = np.asarray(rows, dtype=float).reshape(len(rows), len(header))
    table = {name: arr[:, j] for j, name in enumerate(header) if name in _PLY_COLUMNS}
    return _cloud_from_columns(table, path)


def read_cloud(path) -> RadarPointCloud:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    if suffix == ".csv":
        return read_csv(path)
    raise FormatError(f"unknown point cloud extension {suffix!r} (expected .ply or .csv)", path=path)


def write_cloud(path, cloud: RadarPointCloud) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        write_ply(path, cloud)
    elif suffix == ".csv":
        write_csv(path, cloud)
    else:
        raise ParameterError(f"unknown point cloud extension {suffix!r}")


def read_calibration(path):
    """``{K: 9 floats, T_cam_radar: 16 floats, width, height}`` -> (CameraModel, RigidTransform)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise FormatError(f"cannot read: {exc.strerror}", path=path) from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"invalid JSON: {exc}", path=path) from None
    if not isinstance(doc, dict):
        raise FormatError("calibration must be a JSON object", path=path)
    try:
        K = [float(x) for x in doc["K"]]
        T = [float(x) for x in doc["T_cam_radar"]]
        width, height = doc["width"], doc["height"]
    except KeyError as exc:
        raise FormatError(f"missing key {exc}", path=path) from None
    except (TypeError, ValueError) as exc:
        raise FormatError(f"non-numeric calibration entry: {exc}", path=path) from None
    if len(K) != 9 or len(T) != 16:
        raise FormatError(f"K needs 9 values and T_cam_radar 16, got {len(K)} and {len(T)}", path=path)
    if not isinstance(width, int) or not isinstance(height, int) or isinstance(width, bool) or isinstance(height, bool):
        raise FormatError("width and height must be integers", path=path)
    try:
        return CameraModel.from_matrix(K, width, height), RigidTransform.from_matrix(T)
    except ParameterError as exc:
        raise FormatError(str(exc), path=path) from None


def write_calibration(path, cam: CameraModel, extrinsic: RigidTransform) -> None:
    doc = {
        "K": [float(x) for x in cam.K.reshape(-1)],
        "T_cam_radar": [float(x) for x in extrinsic.matrix().reshape(-1)],
        "width": cam.width,
        "height": cam.height,
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise FormatError(f"cannot read: {exc.strerror}", path=path) from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"invalid JSON: {exc}", path=path) from None


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))
