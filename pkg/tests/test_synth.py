import json
from dataclasses import replace

import numpy as np
import pytest

from radardepth.errors import DegenerateInputError, ParameterError
from radardepth.geometry import project_points
from radardepth.synth import (
    MonoCorruption,
    RadarSpec,
    SceneSpec,
    default_camera,
    generate_scene,
    random_scene_spec,
    raycast_depth,
    rng_stream,
    smooth_field,
)

CAM = default_camera(80, 60)


def test_same_spec_same_frame():
    spec = random_scene_spec(5, camera=CAM)
    a, b = generate_scene(spec), generate_scene(spec)
    assert np.array_equal(a.gt_depth.values, b.gt_depth.values)
    assert np.array_equal(a.mono_depth.values, b.mono_depth.values)
    assert np.array_equal(a.cloud.xyz, b.cloud.xyz)
    assert np.array_equal(a.guide_image, b.guide_image)


def test_streams_are_independent():
    spec = random_scene_spec(5, camera=CAM, n_points=100)
    more = replace(spec, radar=replace(spec.radar, n_points=250))
    a, b = generate_scene(spec), generate_scene(more)
    assert np.array_equal(a.mono_depth.values, b.mono_depth.values)
    assert np.array_equal(a.guide_image, b.guide_image)
    assert len(b.cloud) == 250


def test_raycast_analytic_depths():
    layout = [
        {"type": "ground", "height": 1.5},
        {"type": "background", "z": 50.0},
        {"type": "box", "x": [-1.0, 1.0], "y": [-1.0, 1.5], "z": 10.0},
    ]
    d = raycast_depth(layout, CAM)
    # row below the horizon: ground depth h * fy / (v - cy) unless the wall is nearer
    v = 55
    ground = 1.5 * CAM.fy / (v - CAM.cy)
    assert d[v, 0] == pytest.approx(min(ground, 50.0))
    assert d[int(CAM.cy), int(CAM.cx)] == 10.0
    assert d[0, 0] == 50.0
    assert np.isinf(raycast_depth([{"type": "ground", "height": 1.5}], CAM)[0, 0])


def test_noiseless_radar_lands_on_ground_truth():
    spec = random_scene_spec(2, camera=CAM, noise_sigma=0.0, amplitude=0.0, n_points=150)
    frame = generate_scene(spec)
    proj = project_points(frame.cloud, frame.extrinsic, frame.camera)
    assert len(proj) == 150
    np.testing.assert_allclose(proj.depth, frame.gt_depth.values[proj.v, proj.u], rtol=1e-12)
    # no smooth corruption: mono is the ground truth times the global factor
    np.testing.assert_allclose(frame.mono_depth.values, 2.0 * frame.gt_depth.values, rtol=1e-15)


def test_outlier_count_is_exact():
    base = random_scene_spec(4, camera=CAM, noise_sigma=0.0, n_points=200)
    clean = generate_scene(base)
    dirty = generate_scene(replace(base, radar=RadarSpec(200, 0.0, outlier_rate=0.1, outlier_scale=5.0)))
    # the radar sits 10 cm behind the camera, so compare camera-frame depths
    zc = dirty.extrinsic.apply(dirty.cloud.xyz)[:, 2] / clean.extrinsic.apply(clean.cloud.xyz)[:, 2]
    assert np.sum(np.isclose(zc, 5.0)) == 20
    assert np.sum(np.isclose(zc, 1.0)) == 180


def test_corruption_field_bounds():
    f = smooth_field(60, 80, 40.0, rng_stream(0, 3))
    assert np.all(np.abs(f) <= 1.0) and f.std() > 0.05
    frame = generate_scene(random_scene_spec(1, camera=CAM, amplitude=0.2))
    r = frame.mono_depth.values / frame.gt_depth.values
    assert np.all(r >= 2.0 * 0.8 - 1e-12) and np.all(r <= 2.0 * 1.2 + 1e-12)


def test_spec_json_round_trip():
    spec = random_scene_spec(9, camera=CAM, outlier_rate=0.05)
    again = SceneSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert again.to_dict() == spec.to_dict()
    assert np.array_equal(generate_scene(again).cloud.xyz, generate_scene(spec).cloud.xyz)


def test_invalid_specs():
    with pytest.raises(ParameterError):
        MonoCorruption(amplitude=0.5)
    with pytest.raises(ParameterError):
        RadarSpec(outlier_rate=1.5)
    with pytest.raises(ParameterError):
        SceneSpec(0, CAM, [{"type": "sphere"}])
    with pytest.raises(ParameterError):
        SceneSpec.from_dict({"seed": 0})
    with pytest.raises(DegenerateInputError):
        generate_scene(SceneSpec(0, CAM, []))
    with pytest.raises(DegenerateInputError):
        generate_scene(SceneSpec(0, CAM, [{"type": "box", "x": [-1, 1], "y": [-1, 1], "z": 5.0}]))
    with pytest.raises(ParameterError):
        generate_scene(replace(random_scene_spec(0, camera=CAM), radar=RadarSpec(n_points=80 * 60 + 1)))


def test_radar_noise_statistics_and_all_outliers():
    spec = random_scene_spec(6, camera=default_camera(80, 60), noise_sigma=0.2, amplitude=0.0, n_points=1000)
    frame = generate_scene(spec)
    proj = project_points(frame.cloud, frame.extrinsic, frame.camera)
    assert len(proj) == 1000
    resid = proj.depth - frame.gt_depth.values[proj.v, proj.u]
    assert 0.15 <= resid.std() <= 0.25
    spec = replace(spec, radar=RadarSpec(200, 0.0, outlier_rate=1.0, outlier_scale=5.0))
    frame = generate_scene(spec)
    zc = frame.extrinsic.apply(frame.cloud.xyz)[:, 2]
    clean = generate_scene(replace(spec, radar=RadarSpec(200, 0.0)))
    np.testing.assert_allclose(zc, 5.0 * clean.extrinsic.apply(clean.cloud.xyz)[:, 2], rtol=1e-12)


def test_single_frontal_plane():
    d = raycast_depth([{"type": "background", "z": 10.0}], CAM)
    assert np.all(d == 10.0)
