"""Overhead localization: raw frame to mosquito bounding box and centroid."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import vision
from .errors import DegenerateHistogramError, ParameterError, ShapeError
from .scene import WorkcellLayout
from .vision import ComponentStats, PipelineParams

STAGE_NAMES = (
    "01_gamma",
    "02_crop",
    "03_saturation",
    "04_blur",
    "05_otsu",
    "06_open",
    "07_blur",
    "08_erode",
    "09_components",
    "10_detection",
)


@dataclass(frozen=True)
class DetectionResult:
    present: bool
    bbox: tuple[int, int, int, int] | None = None  # x, y, w, h in frame pixels
    centroid: tuple[float, float] | None = None
    components: tuple[ComponentStats, ...] = ()
    otsu_threshold: int | None = None

    def to_dict(self) -> dict:
        return {
            "present": self.present,
            "bbox": list(self.bbox) if self.bbox else None,
            "centroid": list(self.centroid) if self.centroid else None,
            "otsu_threshold": self.otsu_threshold,
            "components": [c.to_dict() for c in self.components],
        }


def default_crop(layout: WorkcellLayout, margin_mm: float = 0.5) -> tuple[int, int, int, int]:
    """Crop rectangle ``(x, y, w, h)`` covering the cup and excluding the fixture."""
    from .render import overhead_camera

    cam = overhead_camera(layout)
    r = layout.cup_radius + margin_mm
    cx, cy = layout.cup_center
    corners = cam.world_to_pixel(np.array([[cx - r, cy - r], [cx + r, cy + r]]))
    x0 = max(int(math.floor(corners[0, 0])), 0)
    y0 = max(int(math.floor(corners[0, 1])), 0)
    x1 = min(int(math.ceil(corners[1, 0])) + 1, cam.width)
    y1 = min(int(math.ceil(corners[1, 1])) + 1, cam.height)
    return x0, y0, x1 - x0, y1 - y0


def _check_crop(crop, shape) -> tuple[int, int, int, int]:
    h, w = shape[:2]
    if crop is None:
        return 0, 0, w, h
    x, y, cw, ch = (int(v) for v in crop)
    if cw <= 0 or ch <= 0 or x < 0 or y < 0 or x + cw > w or y + ch > h:
        raise ParameterError(f"crop {crop} lies outside the {w}x{h} frame")
    return x, y, cw, ch


def locate_mosquito(frame, params: PipelineParams | None = None, crop=None, *,
                    debug_dir: str | Path | None = None) -> DetectionResult:
    """Run the ten-stage overhead pipeline on an RGB frame.

    Stages: gamma, crop, saturation, blur, Otsu, opening, blur of the mask,
    erosion, components above the area floor, statistics.  The blurred mask
    of stage 7 keeps every pixel the blur reaches (> 0), so the smoothing
    also bridges hairline gaps before the erosion.  Reported coordinates are
    in the uncropped frame.
    """
    params = params or PipelineParams()
    frame = np.asarray(frame)
    if frame.dtype != np.uint8 or frame.ndim != 3 or frame.shape[2] != 3:
        raise ShapeError("locate_mosquito expects an (H, W, 3) uint8 frame")
    x0, y0, cw, ch = _check_crop(crop, frame.shape)
    dump = _Dumper(debug_dir)

    # gamma is pointwise, so cropping first gives the same pixels
    cropped = frame[y0:y0 + ch, x0:x0 + cw]
    gam = vision.gamma_correct(cropped, params.gamma)
    if dump:
        dump("01_gamma", vision.gamma_correct(frame, params.gamma))
        dump("02_crop", gam)
    sat = vision.rgb_to_hsv_saturation(gam)
    dump("03_saturation", sat)
    blurred = vision.gaussian_blur(sat, params.blur_sigma, params.blur_kernel)
    dump("04_blur", blurred)
    try:
        t, binary = vision.otsu_threshold(blurred)
    except DegenerateHistogramError:
        return DetectionResult(present=False)
    dump("05_otsu", binary)
    opened = vision.morph_open(binary, params.open_kernel)
    dump("06_open", opened)
    smooth = vision.gaussian_blur(opened.astype(np.uint8) * 255, params.blur_sigma, params.blur_kernel) > 0
    dump("07_blur", smooth)
    eroded = vision.morph_erode(smooth, params.erode_kernel)
    dump("08_erode", eroded)
    comps = vision.connected_components(eroded, params.area_threshold, intensity=sat)
    if dump:
        dump("09_components", _label_image(eroded, comps))
    shifted = tuple(
        ComponentStats(c.label, c.area, (c.bbox[0] + x0, c.bbox[1] + y0, c.bbox[2], c.bbox[3]),
                       (c.centroid[0] + x0, c.centroid[1] + y0))
        for c in comps
    )
    if not shifted:
        result = DetectionResult(present=False, otsu_threshold=t)
    else:
        best = shifted[0]
        result = DetectionResult(True, best.bbox, best.centroid, shifted, t)
    if dump:
        dump("10_detection", _annotate(frame, result))
    return result


class _Dumper:
    def __init__(self, directory):
        self.dir = Path(directory) if directory is not None else None
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def __bool__(self):
        return self.dir is not None

    def __call__(self, name, img):
        if self.dir is None:
            return
        from .render import save_png

        img = np.asarray(img)
        if img.dtype == bool:
            img = img.astype(np.uint8) * 255
        save_png(self.dir / f"{name}.png", img)


def _label_image(mask, comps) -> np.ndarray:
    labels, _ = vision.label_components(mask)
    out = np.zeros(mask.shape, np.uint8)
    for rank, c in enumerate(comps):
        out[labels == c.label] = max(255 - 40 * rank, 60)
    return out


def _annotate(frame, result: DetectionResult) -> np.ndarray:
    img = frame.copy()
    if not result.present:
        return img
    x, y, w, h = result.bbox
    colour = np.array([255, 0, 0], np.uint8)
    img[y, x:x + w] = colour
    img[y + h - 1, x:x + w] = colour
    img[y:y + h, x] = colour
    img[y:y + h, x + w - 1] = colour
    cu, cv = (int(round(c)) for c in result.centroid)
    img[max(cv - 6, 0):cv + 7, cu] = colour
    img[cv, max(cu - 6, 0):cu + 7] = colour
    return img
