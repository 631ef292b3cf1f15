import math

import numpy as np
import pytest

from mosquito_pnp.render import (BACKGROUND, BODY, HEAD, PROBOSCIS, Camera, load_pgm, load_png,
                                 onboard_camera, onboard_tooltip_pixel, overhead_camera, overhead_label_mask,
                                 render_calibration_grid, render_onboard, render_overhead, render_tool_overhead,
                                 save_pgm, save_png)
from mosquito_pnp.robot import RobotState
from mosquito_pnp.scene import THORAX_END, NECK_END, TAIL, SpecimenVariability, make_scene
from mosquito_pnp.vision import rgb_to_hsv_saturation


def _body_oracle(spec, step=0.002):
    """Centroid of the thorax ellipse union the blunt abdomen, on a fine world grid."""
    p = spec.points
    back = (p[NECK_END] - p[THORAX_END]) / np.linalg.norm(p[NECK_END] - p[THORAX_END])
    abd_start = p[THORAX_END] + 0.35 * back

    def inside(P, a, b, hw, power):
        m, u = (a + b) / 2, b - a
        half = np.linalg.norm(u) / 2
        u = u / (2 * half)
        rel = P - m
        along = rel @ u
        across = rel[..., 0] * u[1] - rel[..., 1] * u[0]
        return np.abs(along / half) ** power + (across / hw) ** 2 <= 1

    lo, hi = p[[NECK_END, TAIL]].min(0) - 1, p[[NECK_END, TAIL]].max(0) + 1
    xs, ys = np.arange(lo[0], hi[0], step), np.arange(lo[1], hi[1], step)
    P = np.stack(np.meshgrid(xs, ys), -1)
    m = inside(P, p[NECK_END], p[THORAX_END], spec.thorax_width / 2, 2) | inside(
        P, abd_start, p[TAIL], spec.abdomen_width / 2, 4)
    return P[m].mean(axis=0)


def test_overhead_shape_and_determinism(layout):
    scene = make_scene(3, layout)
    a, b = render_overhead(scene), render_overhead(scene)
    assert a.shape == (1922, 2560, 3) and a.dtype == np.uint8
    assert a.tobytes() == b.tobytes()


def test_empty_overhead_has_no_saturation_in_cup(layout):
    img = render_overhead(make_scene(0, layout, empty=True))
    cam = overhead_camera(layout)
    u, v = cam.world_to_pixel(layout.cup_center).astype(int)
    assert rgb_to_hsv_saturation(img[v - 300:v + 300, u - 300:u + 300]).max() == 0
    assert not overhead_label_mask(make_scene(0, layout, empty=True)).any()


def test_specimen_darker_and_more_saturated(layout):
    scene = make_scene(2, layout)
    img = render_overhead(scene, noise=False)
    mask = overhead_label_mask(scene)
    sat = rgb_to_hsv_saturation(img)
    assert sat[mask == BODY].mean() > sat[mask == BACKGROUND].mean() + 50
    assert img[mask == BODY].mean() < img[mask == BACKGROUND].mean() - 50


def test_silhouette_centroid_at_cup_center(layout):
    scene = make_scene(7, layout, SpecimenVariability.zero())
    spec = scene.specimen
    spec = spec.translated(np.array(layout.cup_center) - _body_oracle(spec))
    scene = scene.with_specimen(spec)
    ys, xs = np.nonzero(overhead_label_mask(scene) == BODY)
    cam = overhead_camera(layout)
    got = cam.pixel_to_world(np.array([xs.mean(), ys.mean()]))
    assert np.linalg.norm(got - layout.cup_center) / cam.scale < 1


def test_camera_round_trip():
    cam = Camera(2560, 1922, 0.02, (48.0, 50.0), 1e-7)
    rng = np.random.default_rng(0)
    uv = rng.uniform([0, 0], [2559, 1921], (500, 2))
    assert np.abs(cam.world_to_pixel(cam.pixel_to_world(uv)) - uv).max() < 1e-6


def test_distortion_forward_model():
    cam = Camera(101, 101, 1.0, (0.0, 0.0), 1e-4)
    assert np.allclose(cam.world_to_pixel((10.0, 0.0)), (50 + 10 * (1 + 1e-2), 50))


def _held_view(layout, seed):
    scene = make_scene(seed, layout)
    st = RobotState.at([*(scene.specimen.thorax_center + [4.0, 0.0]), 25.0])
    return scene, st


def test_onboard_out_of_view_is_background(layout):
    scene = make_scene(1, layout)
    img, mask = render_onboard(scene, RobotState.at([90.0, 90.0, 25.0]))
    assert img.shape == (1200, 1600, 3) and not mask.any()


@pytest.mark.parametrize("seed", range(4))
def test_onboard_proboscis_connected_and_touches_head(layout, seed):
    from scipy import ndimage as ndi

    scene, st = _held_view(layout, seed)
    _, mask = render_onboard(scene, st, with_image=False)
    _, n = ndi.label(mask == PROBOSCIS, np.ones((3, 3)))
    assert n == 1
    grown = ndi.binary_dilation(mask == PROBOSCIS, np.ones((3, 3)))
    assert (grown & (mask == HEAD)).any()


@pytest.mark.parametrize("seed", range(6))
def test_onboard_proboscis_centroid_consistent(layout, seed):
    scene, st = _held_view(layout, seed)
    _, mask = render_onboard(scene, st, with_image=False)
    cam = onboard_camera(layout, st.position_mm[:2])
    ys, xs = np.nonzero(mask == PROBOSCIS)
    got = cam.pixel_to_world(np.array([xs.mean(), ys.mean()]))
    assert np.linalg.norm(got - scene.specimen.proboscis_centroid) / cam.scale < 2


def test_onboard_deterministic_and_mask_matches_image_shape(layout):
    scene, st = _held_view(layout, 2)
    a, ma = render_onboard(scene, st)
    b, mb = render_onboard(scene, st)
    assert a.tobytes() == b.tobytes() and np.array_equal(ma, mb)
    assert ma.shape == a.shape[:2] and set(np.unique(ma)) <= {0, 1, 2, 3}
    _, mc = render_onboard(scene, st, with_image=False)
    assert np.array_equal(ma, mc)


def test_tooltip_pixel_matches_camera(layout):
    tip = np.array([33.0, 44.0])
    cam = onboard_camera(layout, tip)
    assert np.allclose(cam.world_to_pixel(tip), onboard_tooltip_pixel(layout))


def test_tool_render_occlusion(layout):
    a = render_tool_overhead(layout, (40.0, 50.0), seed=1)
    b = render_tool_overhead(layout, (40.0, 50.0), seed=1, occluded=True)
    assert rgb_to_hsv_saturation(a).max() > 100 and rgb_to_hsv_saturation(b).max() < 50


def test_calibration_grid_shifts_with_camera(layout):
    a = render_calibration_grid(layout, (30.0, 30.0))
    b = render_calibration_grid(layout, (30.0 + 0.012 * 10, 30.0))
    assert np.array_equal(a[:, 10:], b[:, :-10])


def test_png_and_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (7, 9, 3), dtype=np.uint8)
    mask = rng.integers(0, 4, (7, 9), dtype=np.uint8)
    save_png(tmp_path / "a.png", img)
    save_pgm(tmp_path / "m.pgm", mask)
    assert np.array_equal(load_png(tmp_path / "a.png"), img)
    assert np.array_equal(load_pgm(tmp_path / "m.pgm"), mask)
