"""Deterministic image operations shared by the overhead and onboard stages.

Images are numpy arrays: ``(H, W)`` for single channel, ``(H, W, 3)`` RGB,
dtype uint8.  Binary masks are boolean ``(H, W)`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from .errors import DegenerateHistogramError, ParameterError, ShapeError


@dataclass(frozen=True)
class PipelineParams:
    """Parameters of the overhead localization pipeline."""

    gamma: float = 0.5
    blur_sigma: float = 15.0
    blur_kernel: tuple[int, int] = (15, 15)
    erode_kernel: tuple[int, int] = (30, 30)
    open_kernel: tuple[int, int] = (5, 5)
    area_threshold: float = 0.001

    def __post_init__(self):
        for name in ("blur_kernel", "erode_kernel", "open_kernel"):
            object.__setattr__(self, name, _kernel_shape(getattr(self, name)))
        if not self.gamma > 0:
            raise ParameterError("gamma must be positive")
        if not self.blur_sigma > 0:
            raise ParameterError("blur_sigma must be positive")
        if any(k % 2 == 0 for k in self.blur_kernel):
            raise ParameterError("blur kernel must be odd-sized")
        if not 0 < self.area_threshold < 1:
            raise ParameterError("area_threshold must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "blur_sigma": self.blur_sigma,
            "blur_kernel": list(self.blur_kernel),
            "erode_kernel": list(self.erode_kernel),
            "open_kernel": list(self.open_kernel),
            "area_threshold": self.area_threshold,
        }


@dataclass(frozen=True)
class ComponentStats:
    label: int
    area: int
    bbox: tuple[int, int, int, int]  # x, y, w, h
    centroid: tuple[float, float]  # x, y, sub-pixel

    def to_dict(self) -> dict:
        return {"label": self.label, "area": self.area, "bbox": list(self.bbox),
                "centroid": [float(c) for c in self.centroid]}


def _kernel_shape(kernel) -> tuple[int, int]:
    if np.isscalar(kernel):
        kernel = (int(kernel), int(kernel))
    kh, kw = (int(k) for k in kernel)
    if kh <= 0 or kw <= 0:
        raise ParameterError(f"kernel sizes must be positive, got {kernel}")
    return kh, kw


def _as_u8(img) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ShapeError(f"expected uint8 samples, got {img.dtype}")
    return img


# ------------------------------------------------------------------ pointwise
def gamma_lut(gamma: float) -> np.ndarray:
    if not gamma > 0:
        raise ParameterError("gamma must be positive")
    x = np.arange(256, dtype=np.float64) / 255.0
    return np.floor(255.0 * x**gamma + 0.5).astype(np.uint8)


def gamma_correct(img, gamma: float) -> np.ndarray:
    """``round(255 * (v / 255) ** gamma)`` per sample."""
    return gamma_lut(gamma)[_as_u8(img)]


def _saturation_lut() -> np.ndarray:
    mx = np.arange(256)[:, None]
    d = np.arange(256)[None, :]
    # integer round-half-up of 255 * d / mx
    lut = np.where(mx > 0, (2 * 255 * d + mx) // np.maximum(2 * mx, 1), 0)
    lut[d > mx] = 0  # unreachable (d = max - min <= max)
    return lut.astype(np.uint8)


_SAT_LUT = _saturation_lut()


def rgb_to_hsv_saturation(img) -> np.ndarray:
    """Hexcone saturation ``255 * (max - min) / max`` (0 where max is 0)."""
    img = _as_u8(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"saturation needs a 3-channel image, got shape {img.shape}")
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    return _SAT_LUT[mx, mx - mn]


# ------------------------------------------------------------------ filtering
def gaussian_kernel(sigma: float, size: int) -> np.ndarray:
    """Normalised 1-D Gaussian weights of odd length ``size``."""
    if not sigma > 0:
        raise ParameterError("sigma must be positive")
    if size <= 0 or size % 2 == 0:
        raise ParameterError(f"kernel size must be odd and positive, got {size}")
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def gaussian_blur(img, sigma: float, kernel=(15, 15)) -> np.ndarray:
    """Separable Gaussian blur with reflective borders; uint8 in, uint8 out."""
    img = _as_u8(img)
    kh, kw = _kernel_shape(kernel)
    wy = gaussian_kernel(sigma, kh)
    wx = gaussian_kernel(sigma, kw)
    out = img.astype(np.float64)
    out = ndi.correlate1d(out, wy, axis=0, mode="reflect")
    out = ndi.correlate1d(out, wx, axis=1, mode="reflect")
    return np.floor(out + 0.5).clip(0, 255).astype(np.uint8)


# ------------------------------------------------------------------ Otsu
def otsu_threshold(img) -> tuple[int, np.ndarray]:
    """Otsu binarization over the 256-bin histogram.

    Returns ``(t, mask)`` with ``mask = img > t``.  The between-class variance
    is compared in exact integer arithmetic so ties resolve to the smallest
    maximizing threshold.
    """
    img = _as_u8(img)
    if img.ndim != 2:
        raise ShapeError("otsu_threshold needs a single-channel image")
    t = otsu_from_histogram(np.bincount(img.ravel(), minlength=256))
    return t, img > t


def otsu_from_histogram(hist) -> int:
    hist = [int(h) for h in hist]
    if sum(1 for h in hist if h) < 2:
        raise DegenerateHistogramError("histogram has a single populated bin")
    n = sum(hist)
    total = sum(i * h for i, h in enumerate(hist))
    best_t, best_num, best_den = None, -1, 1
    n0 = s0 = 0
    for t in range(255):
        n0 += hist[t]
        s0 += t * hist[t]
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            continue
        # between-class variance is (total*n0 - n*s0)^2 / (n^2 * n0 * n1)
        num = (total * n0 - n * s0) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


# ------------------------------------------------------------------ morphology
def _as_mask(mask) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ShapeError("binary masks are 2-D")
    return mask.astype(bool, copy=False)


def morph_erode(mask, kernel) -> np.ndarray:
    """Erosion by a ``kh x kw`` rectangle anchored at ``(kh//2, kw//2)``.

    Pixels outside the image count as background.
    """
    kh, kw = _kernel_shape(kernel)
    m = _as_mask(mask).view(np.uint8)
    out = ndi.minimum_filter1d(m, kh, axis=0, mode="constant", cval=0)
    out = ndi.minimum_filter1d(out, kw, axis=1, mode="constant", cval=0)
    return out.astype(bool)


def morph_dilate(mask, kernel) -> np.ndarray:
    """Dilation by the same anchored rectangle (Minkowski sum)."""
    kh, kw = _kernel_shape(kernel)
    m = _as_mask(mask).view(np.uint8)
    out = ndi.maximum_filter1d(m, kh, axis=0, mode="constant", cval=0, origin=-1 if kh % 2 == 0 else 0)
    out = ndi.maximum_filter1d(out, kw, axis=1, mode="constant", cval=0, origin=-1 if kw % 2 == 0 else 0)
    return out.astype(bool)


def morph_open(mask, kernel) -> np.ndarray:
    return morph_dilate(morph_erode(mask, kernel), kernel)


def morph_close(mask, kernel) -> np.ndarray:
    return morph_erode(morph_dilate(mask, kernel), kernel)


# ------------------------------------------------------------------ components
_EIGHT = np.ones((3, 3), dtype=bool)


def label_components(mask) -> tuple[np.ndarray, int]:
    """8-connected labelling; labels run from 1."""
    return ndi.label(_as_mask(mask), structure=_EIGHT)


def connected_components(mask, min_area_fraction: float = 0.0, intensity=None) -> list[ComponentStats]:
    """Component statistics, largest first, dropping those below the area floor.

    ``min_area_fraction`` is relative to the full image area.  When
    ``intensity`` is given the centroid is weighted by it, otherwise uniform.
    """
    mask = _as_mask(mask)
    if not 0 <= min_area_fraction < 1:
        raise ParameterError("min_area_fraction must lie in [0, 1)")
    labels, n = label_components(mask)
    if n == 0:
        return []
    flat = labels.ravel()
    areas = np.bincount(flat, minlength=n + 1)
    floor = min_area_fraction * mask.size
    keep = [k for k in range(1, n + 1) if areas[k] > 0 and areas[k] >= floor]
    if not keep:
        return []
    h, w = mask.shape
    ys, xs = np.divmod(np.arange(mask.size), w)
    if intensity is None:
        weights = np.ones(mask.size)
    else:
        intensity = np.asarray(intensity, dtype=np.float64)
        if intensity.shape != mask.shape:
            raise ShapeError("intensity image must match the mask")
        weights = intensity.ravel()
    wsum = np.bincount(flat, weights=weights, minlength=n + 1)
    wx = np.bincount(flat, weights=weights * xs, minlength=n + 1)
    wy = np.bincount(flat, weights=weights * ys, minlength=n + 1)
    usum = areas.astype(float)
    ux = np.bincount(flat, weights=xs.astype(float), minlength=n + 1)
    uy = np.bincount(flat, weights=ys.astype(float), minlength=n + 1)
    slices = ndi.find_objects(labels)
    out = []
    for k in keep:
        sl = slices[k - 1]
        bbox = (sl[1].start, sl[0].start, sl[1].stop - sl[1].start, sl[0].stop - sl[0].start)
        if wsum[k] > 0:
            c = (wx[k] / wsum[k], wy[k] / wsum[k])
        else:
            c = (ux[k] / usum[k], uy[k] / usum[k])
        out.append(ComponentStats(label=int(k), area=int(areas[k]), bbox=bbox, centroid=(float(c[0]), float(c[1]))))
    out.sort(key=lambda c: (-c.area, c.label))
    return out


def largest_component(mask) -> np.ndarray:
    """Mask of the single largest 8-connected region (empty if none)."""
    labels, n = label_components(mask)
    if n == 0:
        return np.zeros(labels.shape, bool)
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    areas[0] = 0
    return labels == int(np.argmax(areas))


def centroid(mask) -> tuple[float, float]:
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        raise ValueError("centroid of an empty mask")
    return float(xs.mean()), float(ys.mean())
