import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage as ndi

from mosquito_pnp.calibration import (CalibrationMap, GridSpec, OnboardScale, acquire_grid, bernstein_basis,
                                      calibrate_axis_scale, calibrate_onboard, calibrate_onboard_scale,
                                      calibrate_overhead, de_casteljau, detect_tooltip, fit_bernstein_map,
                                      map_camera_to_robot, measure_shift, overhead_grid, tensor_eval)
from mosquito_pnp.localizer import default_crop
from mosquito_pnp.errors import CalibrationError, DetectionError, ParameterError
from mosquito_pnp.render import overhead_camera, render_tool_overhead
from mosquito_pnp.robot import MotionProfile, Robot, RobotState
from oracles import bernstein_naive


# ------------------------------------------------------------------ Bernstein basics
@settings(max_examples=200, deadline=None)
@given(st.integers(0, 8), st.lists(st.floats(0, 1), min_size=1, max_size=10))
def test_bernstein_partition_of_unity_and_oracle(degree, ts):
    B = bernstein_basis(ts, degree)
    assert np.allclose(B.sum(axis=1), 1.0, atol=1e-12)
    assert (B >= 0).all()
    assert np.allclose(B, bernstein_naive(ts, degree), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_de_casteljau_matches_basis_sum(degree, seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=degree + 1)
    t = rng.random(7)
    assert np.allclose(de_casteljau(c[:, None], t), bernstein_basis(t, degree) @ c, atol=1e-10)


def test_tensor_eval_corners_and_midpoint():
    c = np.arange(25, dtype=float).reshape(5, 5)
    assert tensor_eval(c, 0, 0) == 0.0
    assert tensor_eval(c, 1, 0) == 20.0  # c[4, 0]
    assert tensor_eval(c, 0, 1) == 4.0  # c[0, 4]
    assert tensor_eval(c, 1, 1) == 24.0
    # c[j,k] = 5j + k is bilinear in (j, k): mean index 2 in each direction
    assert tensor_eval(c, 0.5, 0.5) == pytest.approx(12.0, abs=1e-12)


# ------------------------------------------------------------------ fitting
def _grid(n=7, lo=100.0, hi=900.0):
    g = np.linspace(lo, hi, n)
    U, V = np.meshgrid(g, g)
    return np.column_stack([U.ravel(), V.ravel()])


def test_polynomial_recovered_exactly():
    px = _grid()
    u, v = px[:, 0], px[:, 1]
    ex = 3 + 0.5 * u - 0.2 * v + 1e-4 * u * v + 1e-7 * u**3 - 2e-11 * u**2 * v**2
    ey = -7 + 0.3 * v + 2e-5 * u**2 + 1e-12 * v**4
    cmap = fit_bernstein_map(px, np.column_stack([ex, ey]), degree=4)
    assert cmap.residual_max < 1e-8
    test = np.array([[123.4, 567.8], [899.0, 101.0], [500.0, 500.0]])
    u, v = test[:, 0], test[:, 1]
    want_x = 3 + 0.5 * u - 0.2 * v + 1e-4 * u * v + 1e-7 * u**3 - 2e-11 * u**2 * v**2
    assert np.allclose(cmap.evaluate(test)[:, 0], want_x, atol=1e-8)


def test_corner_evaluation_hits_corner_coefficients():
    px = _grid()
    enc = px * 2.0 + 1.0
    cmap = fit_bernstein_map(px, enc)
    cx = np.asarray(cmap.coeffs_x)
    assert cmap.evaluate(np.array([100.0, 100.0]))[0] == pytest.approx(cx[0, 0], abs=1e-9)
    assert cmap.evaluate(np.array([900.0, 900.0]))[0] == pytest.approx(cx[4, 4], abs=1e-9)
    assert cmap.evaluate(np.array([500.0, 500.0])) == pytest.approx([1001.0, 1001.0], abs=1e-9)


def test_dense_distortion_residual_under_one_count(layout):
    cam = overhead_camera(layout)
    assert cam.kappa == 1e-7
    cx, cy = layout.cup_center
    r = layout.cup_radius + 1.0
    k = 1000.0 / 10.0

    def samples(n):
        g = np.linspace(-r, r, n)
        X, Y = np.meshgrid(cx + g, cy + g)
        world = np.column_stack([X.ravel(), Y.ravel()])
        return cam.world_to_pixel(world), world * k

    px, enc = samples(7)
    cmap = fit_bernstein_map(px, enc)
    dense_px, dense_enc = samples(50)
    err = np.abs(cmap.evaluate(dense_px) - dense_enc)
    assert err.max() < 1.0


def test_rank_deficiency_reported():
    collinear = np.column_stack([np.linspace(0, 100, 30), np.linspace(0, 100, 30)])
    with pytest.raises(CalibrationError, match="rank-deficient"):
        fit_bernstein_map(collinear, collinear * 2)
    # 30 points but only 3 distinct columns: degree 4 needs 5
    u = np.repeat([0.0, 50.0, 100.0], 10)
    v = np.tile(np.linspace(0, 100, 10), 3)
    px = np.column_stack([u, v])
    with pytest.raises(CalibrationError, match="rank-deficient"):
        fit_bernstein_map(px, px)
    with pytest.raises(CalibrationError):
        fit_bernstein_map(_grid(4), _grid(4))  # 16 < 25 samples
    with pytest.raises(ParameterError):
        fit_bernstein_map(np.zeros((30, 3)), np.zeros((30, 3)))


def test_extrapolation_warning():
    px = _grid()
    cmap = fit_bernstein_map(px, px)
    inside = map_camera_to_robot(cmap, (850.0, 200.0))
    assert not inside.extrapolated and inside.warning is None
    edge = map_camera_to_robot(cmap, (960.0, 500.0))  # 7.5% of the span outside
    assert not edge.extrapolated
    far = map_camera_to_robot(cmap, (1100.0, 500.0))  # 25% outside
    assert far.extrapolated and "outside the fit domain" in far.warning
    assert far.encoder == pytest.approx((1100.0, 500.0), abs=1e-6)


def test_map_round_trip(tmp_path):
    px = _grid()
    cmap = fit_bernstein_map(px, px * 1.5)
    again = CalibrationMap.from_dict(json.loads(json.dumps(cmap.to_dict())))
    assert again == cmap
    path = tmp_path / "map.json"
    cmap.save(path)
    assert CalibrationMap.load(path) == cmap
    bad = cmap.to_dict() | {"extra": 1}
    with pytest.raises(CalibrationError):
        CalibrationMap.from_dict(bad)
    with pytest.raises(CalibrationError):
        CalibrationMap.from_dict(cmap.to_dict() | {"schema": "other"})
    with pytest.raises(CalibrationError):
        CalibrationMap.from_dict(cmap.to_dict() | {"degree": 3})


# ------------------------------------------------------------------ onboard scale
def _texture(shape=(240, 320), seed=0):
    rng = np.random.default_rng(seed)
    return ndi.gaussian_filter(rng.random(shape), 3.0) * 255


def test_integer_shift_scale_example():
    tex = _texture((240, 600))
    before = tex[:, :480]
    after = tex[:, 100:580]  # content moves 100 px towards -u
    est = measure_shift(before, after)
    assert est.du == pytest.approx(-100.0, abs=0.05) and est.dv == pytest.approx(0.0, abs=0.05)
    assert calibrate_axis_scale(before, after, -400, "x") == pytest.approx(4.0, rel=1e-3)


def test_subpixel_shift():
    tex = _texture((240, 480), seed=1)
    before = tex
    after = ndi.shift(tex, (0.0, 100.5), order=3, mode="nearest")
    est = measure_shift(before, after)
    assert est.du == pytest.approx(100.5, abs=0.1)
    assert est.dv == pytest.approx(0.0, abs=0.1)


def test_zero_move_errors():
    tex = _texture()
    with pytest.raises(CalibrationError):
        calibrate_axis_scale(tex, tex, 0, "x")
    with pytest.raises(CalibrationError, match="zero displacement"):
        calibrate_axis_scale(tex, tex, 100, "x")
    with pytest.raises(CalibrationError, match="texture"):
        measure_shift(np.zeros((50, 50)), np.zeros((50, 50)))
    with pytest.raises(ParameterError):
        calibrate_axis_scale(tex, tex, 100, "z")
    with pytest.raises(CalibrationError):
        OnboardScale(0.0, 1.0)


def test_onboard_scale_matches_optics(layout):
    scale = calibrate_onboard(layout)
    # 10 um per count over 12 um per pixel, content moves opposite the tool
    assert scale.counts_per_px_x == pytest.approx(-1.2, rel=2e-3)
    assert scale.counts_per_px_y == pytest.approx(-1.2, rel=2e-3)
    assert scale.pixel_offset_to_counts([10.0, -5.0]) == pytest.approx([12.0, -6.0], rel=2e-3)


def test_single_axis_scale_copies_x():
    tex = _texture((240, 600))
    s = calibrate_onboard_scale(tex[:, :480], tex[:, 100:580], (-400, 0))
    assert s.counts_per_px_y == s.counts_per_px_x


# ------------------------------------------------------------------ tooltip detection
def _canvas():
    return np.full((60, 80, 3), 128, np.uint8)


def test_tooltip_triangle_apex():
    img = _canvas()
    for r in range(10, 30):  # downward triangle, apex at (40, 29)
        half = (29 - r) // 2
        img[r, 40 - half:40 + half + 1] = (220, 30, 30)
    assert detect_tooltip(img) == (40, 29)


def test_tooltip_flat_bottom_leftmost():
    img = _canvas()
    img[20:35, 30:45] = (30, 200, 30)
    assert detect_tooltip(img) == (30, 34)
    assert detect_tooltip(img, roi=(20, 10, 40, 40)) == (30, 34)


def test_tooltip_largest_region_wins():
    img = _canvas()
    img[5:8, 5:8] = (220, 30, 30)
    img[20:35, 30:45] = (220, 30, 30)
    assert detect_tooltip(img) == (30, 34)


def test_tooltip_none():
    with pytest.raises(DetectionError):
        detect_tooltip(_canvas())


# ------------------------------------------------------------------ acquisition
def test_acquisition_grid_with_occlusion(layout):
    grid = overhead_grid(layout, 5, 5)
    robot = Robot(RobotState.at(grid.points()[0]), MotionProfile())
    calls = []

    def camera(pos):
        calls.append(pos)
        return render_tool_overhead(layout, pos[:2], seed=len(calls), occluded=len(calls) == 8)

    roi = default_crop(layout, margin_mm=2.0)
    acq = acquire_grid(robot, camera, grid, detector=lambda img: detect_tooltip(img, roi))
    assert len(acq.pairs) == 24 and len(acq.failures) == 1
    assert acq.failures[0] == grid.points()[7]
    assert [e["cmd"] for e in robot.log] == ["calib_move"] * 25
    assert acq.pixels.shape == acq.encoders.shape == (24, 2)
    full, acq25, _ = calibrate_overhead(layout, nx=5, ny=5)
    assert len(acq25.pairs) == 25 and not acq25.failures
    assert full.residual_max < 1.0
    with pytest.raises(CalibrationError):
        calibrate_overhead(layout, nx=5, ny=5, occluded=[7])  # 24 < 25 samples for degree 4


def test_acquisition_too_many_failures():
    grid = GridSpec((10.0, 20.0), (10.0, 20.0), 3, 3)
    robot = Robot(RobotState.at(grid.points()[0]), MotionProfile())

    def blind(_):
        raise DetectionError("hidden")

    with pytest.raises(CalibrationError):
        acquire_grid(robot, lambda pos: None, grid, detector=blind)


def test_overhead_calibration_accuracy(calib, layout):
    cmap = calib.overhead
    cam = overhead_camera(layout)
    rng = np.random.default_rng(5)
    cx, cy = layout.cup_center
    world = np.column_stack([cx + rng.uniform(-2, 2, 50), cy + rng.uniform(-2, 2, 50)])
    err = np.abs(cmap.evaluate(cam.world_to_pixel(world)) - world * 100.0)
    assert err.max() < 3.0  # integer tooltip pixels are 2 counts wide
