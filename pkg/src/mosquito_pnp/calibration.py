"""Camera-to-robot calibration.

The overhead camera is mapped to encoder counts by two tensor-product
Bernstein polynomials (one per encoder axis) fitted to tooltip sightings on a
grid sweep.  The robot-mounted camera only needs a counts-per-pixel scale per
axis, measured from the shift of a calibration grid between two frames.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from . import vision
from .errors import CalibrationError, DegenerateHistogramError, DetectionError, ParameterError

MAP_SCHEMA = "mosquito_pnp.calibration_map/1"


# ------------------------------------------------------------------ tooltip detection
def detect_tooltip(img, roi=None) -> tuple[int, int]:
    """Lowest pixel ``(u, v)`` of the largest saturated region; ties go to smallest ``u``.

    ``roi = (x, y, w, h)`` restricts the search; the result is still in
    full-frame pixels.
    """
    img = np.asarray(img)
    x0 = y0 = 0
    if roi is not None:
        x0, y0, w, h = (int(v) for v in roi)
        img = img[y0:y0 + h, x0:x0 + w]
    sat = vision.rgb_to_hsv_saturation(img) if img.ndim == 3 else img
    try:
        _, mask = vision.otsu_threshold(sat)
    except DegenerateHistogramError as exc:
        raise DetectionError("no foreground in tooltip frame") from exc
    region = vision.largest_component(mask)
    if not region.any():
        raise DetectionError("no foreground in tooltip frame")
    rows = np.flatnonzero(region.any(axis=1))
    v = int(rows[-1])
    u = int(np.flatnonzero(region[v])[0])
    return u + x0, v + y0


# ------------------------------------------------------------------ acquisition
@dataclass(frozen=True)
class GridSpec:
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    nx: int = 7
    ny: int = 7
    z: float = 25.0

    def points(self) -> list[tuple[float, float, float]]:
        xs = np.linspace(*self.x_range, self.nx)
        ys = np.linspace(*self.y_range, self.ny)
        return [(float(x), float(y), float(self.z)) for y in ys for x in xs]


@dataclass
class Acquisition:
    pairs: list  # ((u, v), (ex, ey)) with encoder counts
    failures: list  # commanded points where detection failed

    @property
    def pixels(self) -> np.ndarray:
        return np.array([p for p, _ in self.pairs], float)

    @property
    def encoders(self) -> np.ndarray:
        return np.array([e for _, e in self.pairs], float)


def acquire_grid(robot, camera: Callable, grid: GridSpec, *, detector: Callable = detect_tooltip,
                 max_failure_fraction: float = 0.2) -> Acquisition:
    """Sweep the tooltip over ``grid``, pairing detected pixels with encoder readings.

    ``camera(position_mm)`` returns the overhead frame with the tool at that
    position; ``robot`` is a :class:`mosquito_pnp.robot.Robot`.
    """
    pairs, failures = [], []
    for target in grid.points():
        robot.move(target, cmd="calib_move")
        pos = robot.state.position_mm
        try:
            px = detector(camera(pos))
        except DetectionError:
            failures.append(target)
            continue
        ex, ey = robot.state.encoders[:2]
        pairs.append(((float(px[0]), float(px[1])), (float(ex), float(ey))))
    total = len(pairs) + len(failures)
    if total == 0 or len(failures) / total > max_failure_fraction:
        raise CalibrationError(f"{len(failures)} of {total} grid points had no tooltip detection")
    return Acquisition(pairs, failures)


# ------------------------------------------------------------------ Bernstein maps
def bernstein_basis(t, degree: int) -> np.ndarray:
    """``(len(t), degree + 1)`` matrix of ``C(n,k) t^k (1-t)^(n-k)``."""
    t = np.asarray(t, float)[:, None]
    k = np.arange(degree + 1)[None, :]
    binom = np.array([comb(degree, j) for j in range(degree + 1)], float)[None, :]
    return binom * t**k * (1 - t) ** (degree - k)


def de_casteljau(coeffs, t) -> np.ndarray:
    """Evaluate 1-D Bernstein polynomials; ``coeffs`` is ``(n+1, ...)``, ``t`` broadcasts over ``...``."""
    b = np.array(coeffs, float, copy=True)
    t = np.asarray(t, float)
    for r in range(1, b.shape[0]):
        b = (1 - t) * b[:-1] + t * b[1:]
    return b[0]


def tensor_eval(coeffs, u, v) -> np.ndarray:
    """Evaluate ``sum c[j,k] B_j(u) B_k(v)`` by nested de Casteljau."""
    c = np.asarray(coeffs, float)
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    # collapse the v direction for every row j, then the u direction
    shape = np.broadcast(u, v).shape
    rows = de_casteljau(c.T.reshape(c.shape[1], c.shape[0], *([1] * len(shape))), v)
    return de_casteljau(rows, u)


@dataclass(frozen=True)
class MapResult:
    encoder: tuple[float, float]
    extrapolated: bool = False
    warning: str | None = None


@dataclass(frozen=True)
class CalibrationMap:
    degree: int
    domain: tuple[float, float, float, float]  # u0, v0, u1, v1
    coeffs_x: tuple
    coeffs_y: tuple
    residual_max: float = 0.0
    residual_rms: float = 0.0
    n_samples: int = 0

    def normalize(self, uv) -> tuple[np.ndarray, np.ndarray]:
        uv = np.asarray(uv, float)
        u0, v0, u1, v1 = self.domain
        return (uv[..., 0] - u0) / (u1 - u0), (uv[..., 1] - v0) / (v1 - v0)

    def evaluate(self, uv) -> np.ndarray:
        """Encoder counts ``(..., 2)`` for pixels ``(..., 2)``; no extrapolation check."""
        s, t = self.normalize(uv)
        return np.stack([tensor_eval(self.coeffs_x, s, t), tensor_eval(self.coeffs_y, s, t)], axis=-1)

    def to_dict(self) -> dict:
        return {
            "schema": MAP_SCHEMA,
            "degree": self.degree,
            "domain": list(self.domain),
            "coeffs_x": np.asarray(self.coeffs_x).tolist(),
            "coeffs_y": np.asarray(self.coeffs_y).tolist(),
            "residual_max": self.residual_max,
            "residual_rms": self.residual_rms,
            "n_samples": self.n_samples,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationMap":
        data = dict(data)
        if data.pop("schema", MAP_SCHEMA) != MAP_SCHEMA:
            raise CalibrationError("unsupported calibration map schema")
        unknown = set(data) - {"degree", "domain", "coeffs_x", "coeffs_y", "residual_max", "residual_rms",
                               "n_samples"}
        if unknown:
            raise CalibrationError(f"unknown calibration map keys: {sorted(unknown)}")
        missing = {"degree", "domain", "coeffs_x", "coeffs_y"} - set(data)
        if missing:
            raise CalibrationError(f"calibration map lacks {sorted(missing)}")
        n = int(data["degree"]) + 1
        cx = np.asarray(data["coeffs_x"], float)
        cy = np.asarray(data["coeffs_y"], float)
        if cx.shape != (n, n) or cy.shape != (n, n):
            raise CalibrationError("coefficient grids do not match the degree")
        return cls(int(data["degree"]), tuple(float(v) for v in data["domain"]), _freeze(cx), _freeze(cy),
                   float(data.get("residual_max", 0.0)), float(data.get("residual_rms", 0.0)),
                   int(data.get("n_samples", 0)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "CalibrationMap":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _freeze(a: np.ndarray) -> tuple:
    return tuple(tuple(float(v) for v in row) for row in a)


def design_matrix(s, t, degree: int) -> np.ndarray:
    bu = bernstein_basis(s, degree)
    bv = bernstein_basis(t, degree)
    # column j*(n+1)+k holds B_j(s) B_k(t)
    return (bu[:, :, None] * bv[:, None, :]).reshape(len(bu), -1)


def fit_bernstein_map(pixels, encoders, degree: int = 4, domain=None, rank_tol: float = 1e-10) -> CalibrationMap:
    """Least-squares tensor Bernstein fit of encoder counts against pixels.

    Solved per axis through a reduced QR factorization of the shared design
    matrix.  ``domain`` defaults to the bounding box of the pixel samples.
    """
    px = np.asarray(pixels, float)
    enc = np.asarray(encoders, float)
    n = degree + 1
    if px.ndim != 2 or px.shape[1] != 2 or enc.shape != px.shape:
        raise ParameterError("pixels and encoders must both be (N, 2)")
    if len(px) < n * n:
        raise CalibrationError(f"need at least {n * n} samples for degree {degree}, got {len(px)}")
    if domain is None:
        domain = (px[:, 0].min(), px[:, 1].min(), px[:, 0].max(), px[:, 1].max())
    u0, v0, u1, v1 = (float(d) for d in domain)
    if not (u1 > u0 and v1 > v0):
        raise CalibrationError("rank-deficient design: samples are collinear (degenerate domain)")
    s = (px[:, 0] - u0) / (u1 - u0)
    t = (px[:, 1] - v0) / (v1 - v0)
    A = design_matrix(s, t, degree)
    Q, R = np.linalg.qr(A, mode="reduced")
    diag = np.abs(np.diag(R))
    if diag.min() <= rank_tol * diag.max():
        deficient = int(np.sum(diag <= rank_tol * diag.max()))
        raise CalibrationError(
            f"rank-deficient design: {deficient} of {n * n} basis directions unsupported "
            "(samples collinear or too few distinct rows/columns)")
    coef = solve_triangular(R, Q.T @ enc)
    resid = A @ coef - enc
    norm = np.hypot(resid[:, 0], resid[:, 1])
    return CalibrationMap(
        degree=degree,
        domain=(u0, v0, u1, v1),
        coeffs_x=_freeze(coef[:, 0].reshape(n, n)),
        coeffs_y=_freeze(coef[:, 1].reshape(n, n)),
        residual_max=float(np.abs(resid).max()),
        residual_rms=float(math.sqrt(np.mean(norm**2))),
        n_samples=int(len(px)),
    )


def map_camera_to_robot(cmap: CalibrationMap, px, extrapolation_limit: float = 0.10) -> MapResult:
    """Encoder counts for one pixel, flagging evaluation far outside the domain."""
    s, t = cmap.normalize(np.asarray(px, float))
    out = float(max(-s, s - 1, -t, t - 1, 0.0))
    enc = cmap.evaluate(np.asarray(px, float))
    warning = None
    if out > extrapolation_limit:
        warning = f"pixel {tuple(map(float, px))} lies {out:.0%} of the domain span outside the fit domain"
    return MapResult((float(enc[0]), float(enc[1])), warning is not None, warning)


# ------------------------------------------------------------------ onboard scale
@dataclass(frozen=True)
class OnboardScale:
    """Signed encoder counts per image pixel of apparent grid motion.

    A feature ``(du, dv)`` pixels from the tooltip pixel lies
    ``(-kx * du, -ky * dv)`` counts from the tooltip.
    """

    counts_per_px_x: float
    counts_per_px_y: float
    pitch_mm: float = 5.0

    def __post_init__(self):
        for v in (self.counts_per_px_x, self.counts_per_px_y):
            if not math.isfinite(v) or v == 0:
                raise CalibrationError("onboard scale must be finite and nonzero")

    def pixel_offset_to_counts(self, duv) -> np.ndarray:
        duv = np.asarray(duv, float)
        return np.stack([-self.counts_per_px_x * duv[..., 0], -self.counts_per_px_y * duv[..., 1]], axis=-1)

    def to_dict(self) -> dict:
        return {"counts_per_px_x": self.counts_per_px_x, "counts_per_px_y": self.counts_per_px_y,
                "pitch_mm": self.pitch_mm}


@dataclass(frozen=True)
class ShiftEstimate:
    du: float
    dv: float
    peak: float  # normalized correlation at the integer peak


def measure_shift(before, after, *, template_fraction: float = 0.5) -> ShiftEstimate:
    """Displacement of ``before``'s content in ``after`` via normalized cross-correlation.

    A centred template from ``before`` is matched over ``after``; the integer
    peak is refined by a parabola through its neighbours on each axis.
    """
    import cv2

    a = np.asarray(before, np.float32)
    b = np.asarray(after, np.float32)
    if a.shape != b.shape or a.ndim != 2:
        raise ParameterError("shift estimation needs two single-channel frames of equal shape")
    h, w = a.shape
    th, tw = int(h * template_fraction), int(w * template_fraction)
    r0, c0 = (h - th) // 2, (w - tw) // 2
    tmpl = a[r0:r0 + th, c0:c0 + tw]
    if float(tmpl.std()) == 0.0:
        raise CalibrationError("calibration template has no texture")
    score = cv2.matchTemplate(b, tmpl, cv2.TM_CCOEFF_NORMED)
    pr, pc = np.unravel_index(int(np.argmax(score)), score.shape)
    peak = float(score[pr, pc])

    def vertex(m1, z0, p1):
        den = m1 - 2 * z0 + p1
        return 0.0 if den == 0 else 0.5 * (m1 - p1) / den

    fr = vertex(score[pr - 1, pc], score[pr, pc], score[pr + 1, pc]) if 0 < pr < score.shape[0] - 1 else 0.0
    fc = vertex(score[pr, pc - 1], score[pr, pc], score[pr, pc + 1]) if 0 < pc < score.shape[1] - 1 else 0.0
    return ShiftEstimate(du=pc + fc - c0, dv=pr + fr - r0, peak=peak)


def calibrate_axis_scale(before, after, commanded_counts: float, axis: str, *,
                         min_peak: float = 0.5, min_shift_px: float = 0.5) -> float:
    """Signed counts per pixel for a single-axis move."""
    if axis not in ("x", "y"):
        raise ParameterError("axis must be 'x' or 'y'")
    if commanded_counts == 0:
        raise CalibrationError("zero commanded move gives zero displacement")
    est = measure_shift(before, after)
    if est.peak < min_peak:
        raise CalibrationError(f"correlation peak {est.peak:.3f} below confidence floor {min_peak}")
    shift = est.du if axis == "x" else est.dv
    if abs(shift) < min_shift_px:
        raise CalibrationError("zero displacement measured")
    return commanded_counts / shift


def calibrate_onboard_scale(image_before, image_after, commanded_move, *, pitch_mm: float = 5.0,
                            images_y: tuple | None = None) -> OnboardScale:
    """Scale from one x move (and optionally one y move).

    ``commanded_move`` is ``(dx_counts, dy_counts)``; with only the x pair
    supplied the y scale is taken equal to x (square pixels).
    """
    dx, dy = (float(c) for c in commanded_move)
    kx = calibrate_axis_scale(image_before, image_after, dx, "x")
    if images_y is not None:
        ky = calibrate_axis_scale(images_y[0], images_y[1], dy, "y")
    else:
        ky = kx
    return OnboardScale(kx, ky, pitch_mm)


# ------------------------------------------------------------------ workflows
def overhead_grid(layout, nx: int = 7, ny: int = 7, margin_mm: float = 1.0, z: float | None = None) -> GridSpec:
    cx, cy = layout.cup_center
    r = layout.cup_radius + margin_mm
    return GridSpec((cx - r, cx + r), (cy - r, cy + r), nx, ny, layout.surface_z + 5.0 if z is None else z)


def calibrate_overhead(layout, profile=None, *, nx: int = 7, ny: int = 7, occluded: Sequence[int] = (),
                       seed: int = 0):
    """Simulated grid sweep plus fit; returns ``(map, acquisition, robot)``."""
    from .render import render_tool_overhead
    from .robot import MotionProfile, Robot, RobotState

    profile = profile or MotionProfile()
    grid = overhead_grid(layout, nx, ny)
    robot = Robot(RobotState.at(grid.points()[0], profile.resolution_um), profile)
    hidden = set(occluded)
    counter = iter(range(10**9))

    def camera(pos):
        k = next(counter)
        return render_tool_overhead(layout, pos[:2], seed=[seed, k], occluded=k in hidden)

    from .localizer import default_crop

    roi = default_crop(layout, margin_mm=2.0)
    acq = acquire_grid(robot, camera, grid, detector=lambda img: detect_tooltip(img, roi))
    return fit_bernstein_map(acq.pixels, acq.encoders), acq, robot


def calibrate_onboard(layout, profile=None, *, move_counts: int = 150, start_mm=(30.0, 30.0)) -> OnboardScale:
    """Simulated before/after grid frames for one move along each axis."""
    from .render import onboard_camera, render_calibration_grid
    from .robot import MotionProfile

    profile = profile or MotionProfile()
    step = move_counts * profile.resolution_um / 1000.0
    tip = np.asarray(start_mm, float)

    def frame(t):
        return render_calibration_grid(layout, onboard_camera(layout, t).center)

    base = frame(tip)
    return calibrate_onboard_scale(base, frame(tip + [step, 0.0]), (move_counts, move_counts),
                                   images_y=(base, frame(tip + [0.0, step])))
