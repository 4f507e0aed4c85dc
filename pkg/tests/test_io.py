import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from radardepth.errors import FormatError
from radardepth.geometry import CameraModel, DepthImage, RadarPointCloud, RigidTransform
from radardepth.io import (
    read_calibration,
    read_cloud,
    read_csv,
    read_depth_pfm,
    read_pfm_array,
    read_ply,
    write_calibration,
    write_cloud,
    write_csv,
    write_depth_pfm,
    write_pfm_array,
    write_ply,
)

FUZZ = settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])

float32s = st.floats(width=32, allow_nan=True, allow_infinity=True)
finite64 = st.floats(-1e6, 1e6, allow_nan=False)


def test_pfm_2x2_byte_identical(tmp_path):
    a = tmp_path / "a.pfm"
    write_pfm_array(a, np.array([[1.0, 2.5], [-1.0, 4.0]]))
    raw = a.read_bytes()
    assert raw.startswith(b"Pf\n2 2\n-1\n") and len(raw) == len(b"Pf\n2 2\n-1\n") + 16
    img = read_depth_pfm(a)
    assert img.mask.tolist() == [[True, True], [False, True]]
    b = tmp_path / "b.pfm"
    write_depth_pfm(b, img)
    assert b.read_bytes() == raw


def test_pfm_rows_stored_bottom_up(tmp_path):
    p = tmp_path / "r.pfm"
    write_pfm_array(p, np.array([[1.0], [2.0]]))
    body = p.read_bytes()[len(b"Pf\n1 2\n-1\n"):]
    assert np.frombuffer(body, "<f4").tolist() == [2.0, 1.0]


@FUZZ
@given(arrays(np.float32, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=float32s))
def test_pfm_fuzzed_round_trip(tmp_path, grid):
    a = tmp_path / "f.pfm"
    write_pfm_array(a, grid)
    back = read_pfm_array(a)
    assert np.array_equal(back, grid.astype(float), equal_nan=True)
    b = tmp_path / "g.pfm"
    write_depth_pfm(b, read_depth_pfm(a))
    assert b.read_bytes() == a.read_bytes()


@pytest.mark.parametrize(
    "blob, fragment",
    [
        (b"PF\n1 1\n-1\n" + b"\0" * 12, "colour"),
        (b"P6\n1 1\n-1\n" + b"\0" * 4, "magic"),
        (b"Pf\n1 1\n1\n" + b"\0" * 4, "big-endian"),
        (b"Pf\n0 1\n-1\n", "dimensions"),
        (b"Pf\nx 1\n-1\n", "integers"),
        (b"Pf\n2 2\n-1\n" + b"\0" * 7, "truncated"),
        (b"Pf\n1 1\n-1\n" + b"\0" * 5, "trailing"),
        (b"Pf\n1 1\n", "header"),
        (b"Pf\n1 1\nabc\n" + b"\0" * 4, "scale"),
        (b"Pf\n1 1\n0\n" + b"\0" * 4, "scale"),
    ],
)
def test_pfm_malformed(tmp_path, blob, fragment):
    p = tmp_path / "bad.pfm"
    p.write_bytes(blob)
    with pytest.raises(FormatError) as exc:
        read_pfm_array(p)
    assert fragment in str(exc.value) and "bad.pfm" in str(exc.value)
    assert exc.value.category == "format"


def test_pfm_error_carries_byte_offset(tmp_path):
    p = tmp_path / "be.pfm"
    p.write_bytes(b"Pf\n1 1\n1\n" + b"\0" * 4)
    with pytest.raises(FormatError) as exc:
        read_pfm_array(p)
    assert exc.value.offset == 7


@FUZZ
@given(st.binary(max_size=64), st.integers(0, 40))
def test_pfm_garbage_never_crashes(tmp_path, junk, cut):
    good = b"Pf\n3 2\n-1\n" + np.arange(6, dtype="<f4").tobytes()
    for blob in (junk, good[:cut] + junk, good[:cut]):
        p = tmp_path / "x.pfm"
        p.write_bytes(blob)
        try:
            read_pfm_array(p)
        except FormatError:
            pass


def cloud_strategy():
    return st.integers(0, 30).flatmap(
        lambda n: st.tuples(
            arrays(np.float64, (n, 3), elements=finite64),
            st.one_of(st.none(), arrays(np.float64, (n,), elements=st.floats(allow_nan=True, allow_infinity=False))),
            st.one_of(st.none(), arrays(np.float64, (n,), elements=finite64)),
        )
    )


@FUZZ
@given(cloud_strategy(), st.sampled_from(["ply", "csv"]))
def test_cloud_fuzzed_round_trip(tmp_path, cols, fmt):
    xyz, doppler, rcs = cols
    cloud = RadarPointCloud(xyz, doppler, rcs)
    path = tmp_path / f"c.{fmt}"
    write_cloud(path, cloud)
    back = read_cloud(path)
    assert np.array_equal(back.xyz, cloud.xyz)
    for name in ("doppler", "rcs"):
        a, b = getattr(cloud, name), getattr(back, name)
        if a is None and (doppler is None and rcs is None):
            assert b is None
        elif a is not None:
            assert np.array_equal(a, b, equal_nan=True)


def test_ply_accepts_foreign_headers(tmp_path):
    p = tmp_path / "f.ply"
    p.write_text(
        "ply\nformat ascii 1.0\ncomment from a driver\nelement vertex 2\nproperty float x\nproperty float y\n"
        "property float z\nproperty float intensity\nelement face 0\nproperty list uchar int vertex_indices\n"
        "end_header\n1 2 3 9\n4 5 6 9\n"
    )
    c = read_ply(p)
    assert c.xyz.tolist() == [[1, 2, 3], [4, 5, 6]] and c.doppler is None


@pytest.mark.parametrize(
    "text",
    [
        "",
        "plx\n",
        "ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n",
        "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n",
        "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2\n",
        "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 a\n",
        "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n",
        "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 inf\n",
        "ply\nformat ascii 1.0\nelement vertex -1\nend_header\n",
        "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n",
        "ply\nformat ascii 1.0\nbogus\nend_header\n",
    ],
)
def test_ply_malformed(tmp_path, text):
    p = tmp_path / "bad.ply"
    p.write_text(text)
    with pytest.raises(FormatError):
        read_ply(p)


@pytest.mark.parametrize("text", ["", "x,y\n1,2\n", "x,y,z\n1,2\n", "x,y,z\n1,2,q\n", "x,y,z\nnan,1,1\n", "x,y,z\n1,2,\x003\n"])
def test_csv_malformed(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(FormatError):
        read_csv(p)


@FUZZ
@given(st.binary(max_size=200), st.integers(0, 200), st.sampled_from(["ply", "csv"]))
def test_cloud_garbage_never_crashes(tmp_path, junk, cut, fmt):
    good = tmp_path / f"good.{fmt}"
    write_cloud(good, RadarPointCloud(np.arange(12.0).reshape(4, 3), np.ones(4), np.zeros(4)))
    data = good.read_bytes()
    for blob in (junk, data[:cut] + junk, data[:cut]):
        p = tmp_path / f"x.{fmt}"
        p.write_bytes(blob)
        try:
            read_cloud(p)
        except FormatError:
            pass


@FUZZ
@given(
    st.floats(10, 2000),
    st.floats(10, 2000),
    st.integers(2, 4000),
    st.integers(2, 4000),
    st.floats(0, 1),
    st.floats(0, 1),
    st.tuples(st.floats(-3.1, 3.1), st.floats(-3.1, 3.1), st.floats(-3.1, 3.1)),
    st.tuples(finite64, finite64, finite64),
)
def test_calibration_round_trip(tmp_path, fx, fy, w, h, ax, ay, angles, t):
    a, b, c = angles
    rz = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])
    ry = np.array([[np.cos(b), 0, np.sin(b)], [0, 1, 0], [-np.sin(b), 0, np.cos(b)]])
    rx = np.array([[1, 0, 0], [0, np.cos(c), -np.sin(c)], [0, np.sin(c), np.cos(c)]])
    cam = CameraModel(fx, fy, ax * (w - 1), ay * (h - 1), w, h)
    extr = RigidTransform(rz @ ry @ rx, np.array(t))
    p = tmp_path / "calib.json"
    write_calibration(p, cam, extr)
    cam2, extr2 = read_calibration(p)
    assert cam2 == cam
    assert np.array_equal(extr2.matrix(), extr.matrix())


@pytest.mark.parametrize(
    "doc",
    [
        "not json",
        "[]",
        json.dumps({"K": [1] * 9, "width": 4, "height": 4}),
        json.dumps({"K": [1] * 8, "T_cam_radar": np.eye(4).ravel().tolist(), "width": 4, "height": 4}),
        json.dumps({"K": [2, 1, 1, 0, 2, 1, 0, 0, 1], "T_cam_radar": np.eye(4).ravel().tolist(), "width": 4, "height": 4}),
        json.dumps({"K": [2, 0, 1, 0, 2, 1, 0, 0, 1], "T_cam_radar": (2 * np.eye(4)).ravel().tolist(), "width": 4, "height": 4}),
        json.dumps({"K": [2, 0, 1, 0, 2, 1, 0, 0, 1], "T_cam_radar": np.eye(4).ravel().tolist(), "width": 4.5, "height": 4}),
        json.dumps({"K": ["a"] * 9, "T_cam_radar": np.eye(4).ravel().tolist(), "width": 4, "height": 4}),
        json.dumps({"K": [2, 0, 9, 0, 2, 1, 0, 0, 1], "T_cam_radar": np.eye(4).ravel().tolist(), "width": 4, "height": 4}),
    ],
)
def test_calibration_malformed(tmp_path, doc):
    p = tmp_path / "c.json"
    p.write_text(doc)
    with pytest.raises(FormatError):
        read_calibration(p)


def test_missing_files_are_format_errors(tmp_path):
    for fn, name in ((read_pfm_array, "a.pfm"), (read_cloud, "a.ply"), (read_cloud, "a.csv"), (read_calibration, "a.json")):
        with pytest.raises(FormatError):
            fn(tmp_path / name)
    with pytest.raises(FormatError):
        read_cloud(tmp_path / "a.xyz")


def test_depth_writer_zeroes_positive_values_under_mask(tmp_path):
    img = DepthImage(np.array([[3.0, 7.0, -2.0]]), np.array([[True, False, False]]))
    p = tmp_path / "d.pfm"
    write_depth_pfm(p, img)
    assert read_pfm_array(p).tolist() == [[3.0, 0.0, -2.0]]


def test_csv_writer_output(tmp_path):
    p = tmp_path / "c.csv"
    write_csv(p, RadarPointCloud(np.array([[0.1, 2.0, 3.0]])))
    assert p.read_text().splitlines() == ["x,y,z", "0.1,2.0,3.0"]
    q = tmp_path / "c.ply"
    write_ply(q, RadarPointCloud(np.array([[0.1, 2.0, 3.0]])))
    assert q.read_text().splitlines()[-1] == "0.1 2.0 3.0"
