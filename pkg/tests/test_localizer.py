import functools
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mosquito_pnp.controller import body_centroid
from mosquito_pnp.errors import ParameterError
from mosquito_pnp.localizer import STAGE_NAMES, default_crop, locate_mosquito
from mosquito_pnp.render import BODY, overhead_camera, overhead_label_mask, render_overhead
from mosquito_pnp.scene import make_scene
from mosquito_pnp.vision import PipelineParams


@functools.lru_cache(maxsize=None)
def _frame(seed):
    scene = make_scene(seed)
    return scene, render_overhead(scene)


def _body_label_centroid(scene):
    ys, xs = np.nonzero(overhead_label_mask(scene) == BODY)
    return np.array([xs.mean(), ys.mean()])


def test_empty_cup_not_present(layout):
    res = locate_mosquito(render_overhead(make_scene(0, layout, empty=True)), crop=default_crop(layout))
    assert not res.present and res.centroid is None and res.components == ()


def test_constant_frame_is_degenerate_not_error():
    assert not locate_mosquito(np.full((50, 60, 3), 128, np.uint8)).present


@pytest.mark.parametrize("seed", range(6))
def test_single_specimen_one_component_near_body(layout, seed):
    scene, frame = _frame(seed)
    res = locate_mosquito(frame, crop=default_crop(layout))
    assert res.present and len(res.components) == 1
    assert np.hypot(*(np.array(res.centroid) - _body_label_centroid(scene))) < 10
    x, y, w, h = res.bbox
    assert x <= res.centroid[0] <= x + w and y <= res.centroid[1] <= y + h


def test_subthreshold_speck_suppressed(layout):
    scene, frame = _frame(1)
    frame = frame.copy()
    cam = overhead_camera(layout)
    u, v = (cam.world_to_pixel(np.array(layout.cup_center) + [-6.0, 6.0])).astype(int)
    frame[v:v + 8, u:u + 8] = (40, 20, 10)
    res = locate_mosquito(frame, crop=default_crop(layout))
    assert len(res.components) == 1
    assert np.hypot(*(np.array(res.centroid) - _body_label_centroid(scene))) < 10


def test_crop_outside_frame_rejected():
    with pytest.raises(ParameterError):
        locate_mosquito(np.zeros((20, 20, 3), np.uint8), crop=(10, 10, 20, 5))


def test_debug_dump_writes_ten_stages(tmp_path, layout):
    _, frame = _frame(2)
    locate_mosquito(frame, crop=default_crop(layout), debug_dir=tmp_path)
    names = sorted(p.stem for p in tmp_path.glob("*.png"))
    assert names == sorted(STAGE_NAMES)


def test_deterministic(layout):
    _, frame = _frame(3)
    a = locate_mosquito(frame, crop=default_crop(layout))
    b = locate_mosquito(frame.copy(), crop=default_crop(layout))
    assert a == b


def test_coordinate_round_trip(layout):
    cam = overhead_camera(layout)
    _, frame = _frame(4)
    res = locate_mosquito(frame, crop=default_crop(layout))
    back = cam.world_to_pixel(cam.pixel_to_world(np.array(res.centroid)))
    assert np.hypot(*(back - res.centroid)) < 1


def test_runtime_under_one_second(layout):
    _, frame = _frame(5)
    crop = default_crop(layout)
    best = min(_timed(lambda: locate_mosquito(frame, crop=crop)) for _ in range(2))
    assert best < 1.0


def _timed(fn):
    t = time.perf_counter()
    fn()
    return time.perf_counter() - t


def _window(scene, half=350):
    u, v = overhead_camera(scene.layout).world_to_pixel(scene.specimen.thorax_center).astype(int)
    return u - half, v - half, 2 * half, 2 * half


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 4), st.integers(-40, 40), st.integers(-40, 40))
def test_translation_equivariance(seed, dx, dy):
    scene, frame = _frame(seed)
    crop = _window(scene)
    params = PipelineParams()
    base = locate_mosquito(frame, params, crop)
    shifted = np.roll(frame, (dy, dx), axis=(0, 1))
    moved = locate_mosquito(shifted, params, crop)
    assert base.present and moved.present
    assert abs(moved.centroid[0] - base.centroid[0] - dx) <= 1
    assert abs(moved.centroid[1] - base.centroid[1] - dy) <= 1
