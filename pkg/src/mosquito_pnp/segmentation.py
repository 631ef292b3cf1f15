"""Onboard anatomical segmentation: oracle segmenter, post-processing priors,
quality metrics, the weighted loss and paired augmentation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from scipy import ndimage as ndi

from . import vision
from .errors import NoDissectionPointError, NoGraspPointError, ParameterError, ShapeError
from .render import BACKGROUND, BODY, HEAD, PROBOSCIS

N_CATEGORIES = 4
CE_EPSILON = 1e-12


# ------------------------------------------------------------------ segmenters
class Segmenter(Protocol):
    def segment(self, img, truth=None) -> np.ndarray: ...


@dataclass(frozen=True)
class OracleSegmenter:
    """Returns the renderer's ground truth, optionally corrupted.

    ``flip_probability`` replaces each pixel, independently, with one of the
    other three categories.  ``boundary_erosion`` first strips that many
    pixels off every anatomical region (a crude stand-in for blurry network
    boundaries).  The corruption is seeded by ``seed`` and ``frame_key``.
    """

    shape: tuple[int, int] = (1200, 1600)
    flip_probability: float = 0.0
    boundary_erosion: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.flip_probability <= 1:
            raise ParameterError("flip_probability must lie in [0, 1]")
        if self.boundary_erosion < 0:
            raise ParameterError("boundary_erosion must be non-negative")

    def segment(self, img, truth=None, frame_key: int = 0) -> np.ndarray:
        if img is not None:
            img = np.asarray(img)
            if img.shape[:2] != tuple(self.shape):
                raise ShapeError(f"expected a {self.shape} onboard frame, got {img.shape[:2]}")
        if truth is None:
            raise ParameterError("the oracle segmenter needs the ground-truth mask")
        truth = np.asarray(truth, np.uint8)
        if truth.shape != tuple(self.shape):
            raise ShapeError(f"truth mask shape {truth.shape} does not match {self.shape}")
        out = truth.copy()
        if self.boundary_erosion:
            k = 2 * self.boundary_erosion + 1
            for cat in (PROBOSCIS, HEAD, BODY):
                region = out == cat
                if region.any():
                    out[region & ~vision.morph_erode(region, k)] = BACKGROUND
        if self.flip_probability > 0:
            rng = np.random.default_rng([self.seed, frame_key])
            flip = rng.random(out.shape) < self.flip_probability
            shift = rng.integers(1, N_CATEGORIES, size=int(flip.sum()), dtype=np.uint8)
            out[flip] = (out[flip] + shift) % N_CATEGORIES
        return out


# ------------------------------------------------------------------ post-processing
@dataclass(frozen=True)
class SegmentationResult:
    mask: np.ndarray
    proboscis_centroid: tuple[float, float]
    grasp_point: tuple[float, float]
    dissection_point: tuple[float, float] | None
    proboscis_head_edge_centroid: tuple[float, float] | None

    def to_dict(self) -> dict:
        def pt(p):
            return None if p is None else [float(p[0]), float(p[1])]

        return {
            "proboscis_centroid": pt(self.proboscis_centroid),
            "grasp_point": pt(self.grasp_point),
            "dissection_point": pt(self.dissection_point),
            "proboscis_head_edge_centroid": pt(self.proboscis_head_edge_centroid),
        }


def _foreground_window(mask: np.ndarray, pad: int):
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    r0 = max(rows[0] - pad, 0)
    r1 = min(rows[-1] + pad + 1, mask.shape[0])
    c0 = max(cols[0] - pad, 0)
    c1 = min(cols[-1] + pad + 1, mask.shape[1])
    return r0, r1, c0, c1


def keep_largest_regions(mask) -> np.ndarray:
    """Per category, keep the largest 8-connected region; the rest becomes background."""
    mask = np.asarray(mask, np.uint8)
    out = np.zeros_like(mask)
    for cat in (PROBOSCIS, HEAD, BODY):
        region = mask == cat
        if region.any():
            out[vision.largest_component(region)] = cat
    return out


def postprocess(mask, dilation_kernel=(5, 5), *, require_dissection: bool = True) -> SegmentationResult:
    """Largest-region prior plus the edge construction between categories.

    Edges are ``dilate(A) & dilate(B)``; the dissection point is the centroid
    of the head-body edge and the grasp point is the proboscis centroid.
    Points are ``(u, v)`` pixel coordinates.
    """
    mask = np.asarray(mask, np.uint8)
    if mask.ndim != 2:
        raise ShapeError("label masks are 2-D")
    kh, kw = vision._kernel_shape(dilation_kernel)
    out = np.zeros_like(mask)
    window = _foreground_window(mask, max(kh, kw))
    if window is None:
        raise NoGraspPointError("no proboscis region in the mask")
    r0, r1, c0, c1 = window
    sub = keep_largest_regions(mask[r0:r1, c0:c1])
    out[r0:r1, c0:c1] = sub

    def shift(p):
        return (p[0] + c0, p[1] + r0)

    if not (sub == PROBOSCIS).any():
        raise NoGraspPointError("no proboscis region in the mask")
    prob_c = shift(vision.centroid(sub == PROBOSCIS))
    grown = {cat: vision.morph_dilate(sub == cat, (kh, kw)) for cat in (PROBOSCIS, HEAD, BODY)}
    ph = grown[PROBOSCIS] & grown[HEAD]
    hb = grown[HEAD] & grown[BODY]
    ph_c = shift(vision.centroid(ph)) if ph.any() else None
    if hb.any():
        diss = shift(vision.centroid(hb))
    elif require_dissection:
        raise NoDissectionPointError("head and body regions are not adjacent")
    else:
        diss = None
    out.setflags(write=False)
    return SegmentationResult(out, prob_c, prob_c, diss, ph_c)


# ------------------------------------------------------------------ metrics
def _pair(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return pred, truth


def pixel_accuracy(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.count_nonzero(pred == truth)) / pred.size


def confusion_matrix(pred, truth, n: int = N_CATEGORIES) -> np.ndarray:
    """Counts with rows = true category, columns = predicted category."""
    pred, truth = _pair(pred, truth)
    idx = truth.astype(np.int64).ravel() * n + pred.astype(np.int64).ravel()
    return np.bincount(idx, minlength=n * n).reshape(n, n)


def normalize_rows(cm) -> np.ndarray:
    cm = np.asarray(cm, float)
    sums = cm.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(sums > 0, cm / np.where(sums > 0, sums, 1), 0.0)


def per_class_iou(pred, truth, n: int = N_CATEGORIES) -> np.ndarray:
    """IoU per category; NaN where the category is absent from both masks."""
    cm = confusion_matrix(pred, truth, n)
    inter = np.diag(cm).astype(float)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1), np.nan)


def weighted_iou(pred, truth, weights) -> float:
    """Sum of weight * IoU over categories present in either mask, weights renormalized."""
    iou = per_class_iou(pred, truth, len(weights))
    w = np.asarray(weights, float)
    if np.any(w < 0):
        raise ParameterError("weights must be non-negative")
    ok = ~np.isnan(iou)
    if not ok.any() or w[ok].sum() == 0:
        raise ParameterError("no weighted category present")
    return float(np.sum(w[ok] * iou[ok]) / w[ok].sum())


def class_weights(masks: Sequence, n: int = N_CATEGORIES) -> np.ndarray:
    """Inverse category areas over a label set, normalized to sum 1."""
    area = np.zeros(n, np.int64)
    for m in masks:
        area += np.bincount(np.asarray(m, np.int64).ravel(), minlength=n)[:n]
    if np.any(area == 0):
        missing = [i for i in range(n) if area[i] == 0]
        raise ParameterError(f"categories {missing} never occur; inverse-area weight undefined")
    inv = 1.0 / area
    return inv / inv.sum()


def weighted_cross_entropy(pred_probs, truth, weights) -> float:
    """``-mean(w[truth] * ln p[truth])`` with p clamped below at 1e-12."""
    probs = np.asarray(pred_probs, float)
    truth = np.asarray(truth)
    if probs.shape[:-1] != truth.shape:
        raise ShapeError("probabilities must be (..., n) over the mask shape")
    if np.any(np.abs(probs.sum(axis=-1) - 1) > 1e-6):
        raise ParameterError("per-pixel distributions must sum to 1 within 1e-6")
    w = np.asarray(weights, float)
    p_true = np.take_along_axis(probs, truth[..., None].astype(np.int64), axis=-1)[..., 0]
    return float(-np.mean(w[truth] * np.log(np.maximum(p_true, CE_EPSILON))))


# ------------------------------------------------------------------ augmentation
@dataclass(frozen=True)
class AugmentParams:
    rotation_range: tuple[float, float] = (-math.pi, math.pi)
    reflect_axes: tuple[str, ...] = ("x", "y")
    translation_px: float = 100.0
    scale_range: tuple[float, float] = (0.75, 1.25)

    def __post_init__(self):
        lo, hi = self.rotation_range
        if lo > hi:
            raise ParameterError("rotation range is empty")
        if not set(self.reflect_axes) <= {"x", "y"}:
            raise ParameterError("reflection axes are 'x' and/or 'y'")
        if self.translation_px < 0:
            raise ParameterError("translation must be non-negative")
        s0, s1 = self.scale_range
        if not (0 < s0 <= s1):
            raise ParameterError("scale range must be positive and ordered")

    @classmethod
    def identity(cls) -> "AugmentParams":
        return cls(rotation_range=(0.0, 0.0), reflect_axes=(), translation_px=0.0, scale_range=(1.0, 1.0))


def transform_pair(img, mask, *, angle=0.0, flip_x=False, flip_y=False, shift=(0.0, 0.0), scale=1.0):
    """Apply one similarity transform about the image centre to both arrays.

    Forward map (u, v) -> c + scale * R(angle) * F * (p - c) + shift, with F
    the reflection.  Bilinear for the image, nearest for the mask, background
    outside the source frame.
    """
    mask = np.asarray(mask)
    h, w = mask.shape
    if img is not None and np.asarray(img).shape[:2] != (h, w):
        raise ShapeError("image and mask must share height and width")
    c = np.array([(w - 1) / 2, (h - 1) / 2])
    ca, sa = math.cos(angle), math.sin(angle)
    R = np.array([[ca, -sa], [sa, ca]])
    F = np.diag([-1.0 if flip_x else 1.0, -1.0 if flip_y else 1.0])
    A = scale * R @ F  # in (u, v)
    Ainv = np.linalg.inv(A)
    # snap float noise so exact rotations stay exact under nearest sampling
    Ainv = np.where(np.abs(Ainv) < 1e-12, 0.0, Ainv)
    # scipy works in (row, col) = (v, u)
    P = np.array([[0, 1], [1, 0]])
    M = P @ Ainv @ P
    t_uv = c - Ainv @ (c + np.asarray(shift, float))
    offset = P @ t_uv
    out_mask = ndi.affine_transform(mask, M, offset=offset, order=0, mode="constant", cval=BACKGROUND)
    out_img = None
    if img is not None:
        img = np.asarray(img)
        chans = [img] if img.ndim == 2 else [img[..., k] for k in range(img.shape[2])]
        res = [ndi.affine_transform(ch.astype(float), M, offset=offset, order=1, mode="constant", cval=0.0)
               for ch in chans]
        out = np.stack(res, axis=-1) if img.ndim == 3 else res[0]
        out_img = np.clip(np.floor(out + 0.5), 0, 255).astype(img.dtype)
    return out_img, out_mask


def augment(img, mask, params: AugmentParams | None = None, seed=0):
    """Randomly rotate, reflect, translate and scale an (image, mask) pair."""
    params = params or AugmentParams()
    rng = np.random.default_rng(seed)
    angle = float(rng.uniform(*params.rotation_range))
    flip_x = "x" in params.reflect_axes and bool(rng.random() < 0.5)
    flip_y = "y" in params.reflect_axes and bool(rng.random() < 0.5)
    t = params.translation_px
    shift = (float(rng.uniform(-t, t)), float(rng.uniform(-t, t)))
    scale = float(rng.uniform(*params.scale_range))
    return transform_pair(img, mask, angle=angle, flip_x=flip_x, flip_y=flip_y, shift=shift, scale=scale)
