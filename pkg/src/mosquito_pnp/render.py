"""Synthetic overhead and onboard camera frames with oracle label masks.

Rendering is flat-shaded: anatomy is a handful of ellipses and bars over a
textured background, plus seeded sensor noise.  Only pipeline-compatible
contrast is attempted.  Pixel ``(row, col)`` has its centre at image
coordinates ``(u, v) = (col, row)``; ``u`` grows with world ``x`` and ``v``
with world ``y``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scene import (
    JUNCTION,
    NECK_END,
    NECK_START,
    TAIL,
    THORAX_END,
    TIP,
    MosquitoSpecimen,
    Scene,
    WorkcellLayout,
)

BACKGROUND, PROBOSCIS, HEAD, BODY = 0, 1, 2, 3
CATEGORY_NAMES = ("background", "proboscis", "head", "body")

# flat colours, RGB; the fixture (white nylon, clear acrylic, steel) is achromatic
_MESH = (205, 205, 205)
_THREAD = (175, 175, 175)
_RIM = (150, 150, 150)
_ACRYLIC = (216, 216, 216)
_SLOT = (162, 162, 162)
_BLADE = (173, 173, 173)
_NOTCH = (122, 122, 122)
_APRON = (198, 198, 198)
_COLORS = {
    PROBOSCIS: (70, 48, 32),
    HEAD: (88, 62, 40),
    "neck": (115, 88, 62),
    "thorax": (104, 74, 48),
    "abdomen": (124, 92, 58),
}
_LEG = (168, 155, 140)
_WING = (188, 182, 172)
_TOOL = (58, 108, 172)
NOISE_AMPLITUDE = 4
THREAD_WIDTH = 0.12
SLOT_PITCH = 3.0


@dataclass(frozen=True)
class Camera:
    """Orthographic pinhole with optional radial distortion.

    ``kappa`` (px^-2) distorts the undistorted pixel radius ``r`` into
    ``r * (1 + kappa * r**2)`` about the principal point.
    """

    width: int
    height: int
    scale: float  # mm per pixel
    center: tuple[float, float]  # world xy imaged at the principal point
    kappa: float = 0.0

    @property
    def principal(self) -> np.ndarray:
        return np.array([(self.width - 1) / 2, (self.height - 1) / 2])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def world_to_pixel(self, xy) -> np.ndarray:
        q = (np.asarray(xy, float) - np.asarray(self.center)) / self.scale
        if self.kappa:
            r2 = np.sum(q * q, axis=-1, keepdims=True)
            q = q * (1 + self.kappa * r2)
        return q + self.principal

    def pixel_to_world(self, uv) -> np.ndarray:
        d = np.asarray(uv, float) - self.principal
        if self.kappa:
            rd = np.sqrt(np.sum(d * d, axis=-1, keepdims=True))
            r = rd.copy()
            for _ in range(8):
                f = r * (1 + self.kappa * r * r) - rd
                r = r - f / (1 + 3 * self.kappa * r * r)
            with np.errstate(invalid="ignore", divide="ignore"):
                k = np.where(rd > 0, r / rd, 1.0)
            d = d * k
        return d * self.scale + np.asarray(self.center)


def overhead_camera(layout: WorkcellLayout) -> Camera:
    w, h = layout.overhead_resolution
    return Camera(w, h, layout.overhead_scale_um / 1000.0, layout.overhead_view_center, layout.overhead_kappa)


def onboard_camera(layout: WorkcellLayout, tooltip_xy) -> Camera:
    w, h = layout.onboard_resolution
    c = np.asarray(tooltip_xy, float)[:2] + np.asarray(layout.onboard_mount_offset)
    return Camera(w, h, layout.onboard_scale_um / 1000.0, (float(c[0]), float(c[1])))


def onboard_tooltip_pixel(layout: WorkcellLayout) -> np.ndarray:
    """Where the tooltip appears in the onboard image; fixed by the mount."""
    cam = onboard_camera(layout, (0.0, 0.0))
    return cam.world_to_pixel((0.0, 0.0))


# ----------------------------------------------------------------- primitives
def _bar(P, a, b, half_width, caps=False):
    d = b - a
    dd = float(d @ d)
    rel = P - a
    t = (rel @ d) / dd
    if caps:
        tc = np.clip(t, 0.0, 1.0)
        off = rel - tc[..., None] * d
        return np.einsum("...i,...i->...", off, off) <= half_width**2
    perp = (rel[..., 0] * d[1] - rel[..., 1] * d[0]) / math.sqrt(dd)
    return (t >= 0) & (t <= 1) & (np.abs(perp) <= half_width)


def _ellipse(P, a, b, half_width, power=2):
    """Ellipse with axis ``a``-``b``; ``power`` > 2 gives blunter ends."""
    m = (a + b) / 2
    u = b - a
    length = float(np.hypot(*u))
    u = u / length
    rel = P - m
    along = rel @ u
    across = rel[..., 0] * u[1] - rel[..., 1] * u[0]
    return np.abs(along / (length / 2)) ** power + (across / half_width) ** 2 <= 1.0


def _bar_param(P, a, b):
    d = b - a
    return ((P - a) @ d) / float(d @ d)


@dataclass
class _Layer:
    mask: np.ndarray
    label: int | None
    color: tuple[int, int, int]
    alpha: float = 1.0


def apparent_chain(spec: MosquitoSpecimen, grasp_s: float | None, foreshortening: bool) -> np.ndarray:
    """Chain as seen from above, shortening the lifted stretch of proboscis.

    The jaws hold the front of the proboscis at ``lift[TIP]`` while the head
    rests at ``lift[JUNCTION]``; the grasp-to-junction stretch therefore
    projects to ``sqrt(L**2 - h**2)`` and everything behind it shifts forward.
    """
    p = spec.points.copy()
    if not foreshortening or grasp_s is None:
        return p
    h = spec.lift[TIP] - spec.lift[JUNCTION]
    if h <= 0:
        return p
    length = (1 - grasp_s) * spec.proboscis_length
    if length <= 0:
        return p
    proj = math.sqrt(max(length**2 - h**2, 0.0))
    g = spec.point_at(grasp_s)
    shift = (g + (p[JUNCTION] - g) * (proj / length)) - p[JUNCTION]
    p[JUNCTION:] += shift
    # the proboscis drawn from the tip to the shifted junction
    return p


def _specimen_layers(spec: MosquitoSpecimen, P: np.ndarray, chain: np.ndarray, with_appendages: bool):
    """Paint order; later layers overwrite earlier ones."""
    p = chain
    layers: list[_Layer] = []
    origin, rot = None, None
    if with_appendages:
        origin, rot = _frame_from_chain(p)
        for app in spec.appendages:
            if app.kind != "leg":
                continue
            pts = np.array(app.points) @ rot.T + origin
            m = np.zeros(P.shape[:-1], bool)
            for a, b in zip(pts[:-1], pts[1:]):
                m |= _bar(P, a, b, app.width / 2, caps=True)
            layers.append(_Layer(m, None, _LEG))
        # folded wings lie under the body
        for app in spec.appendages:
            if app.kind != "wing":
                continue
            pts = np.array(app.points) @ rot.T + origin
            layers.append(_Layer(_ellipse(P, pts[0], pts[1], app.width / 2), None, _WING, alpha=0.35))

    fwd = p[NECK_START] - p[NECK_END]
    fwd = fwd / np.linalg.norm(fwd)
    abd_start = p[THORAX_END] + 0.35 * (p[NECK_END] - p[THORAX_END]) / np.linalg.norm(p[NECK_END] - p[THORAX_END])
    layers.append(_Layer(_ellipse(P, abd_start, p[TAIL], spec.abdomen_width / 2, power=4), BODY, _COLORS["abdomen"]))
    layers.append(_Layer(_ellipse(P, p[NECK_END], p[THORAX_END], spec.thorax_width / 2), BODY, _COLORS["thorax"]))
    neck_a = p[NECK_START] + 0.1 * fwd
    neck_b = p[NECK_END] - 0.1 * fwd
    neck = _bar(P, neck_a, neck_b, spec.neck_width / 2)
    front_half = _bar_param(P, p[NECK_START], p[NECK_END]) < 0.5
    layers.append(_Layer(neck & ~front_half, BODY, _COLORS["neck"]))
    layers.append(_Layer(neck & front_half, HEAD, _COLORS["neck"]))
    layers.append(_Layer(_ellipse(P, p[JUNCTION], p[NECK_START], spec.head_width / 2), HEAD, _COLORS[HEAD]))
    layers.append(_Layer(_bar(P, p[TIP], p[JUNCTION], spec.proboscis_diameter / 2), PROBOSCIS, _COLORS[PROBOSCIS]))

    return layers


def _frame_from_chain(p: np.ndarray):
    fwd = p[NECK_END] - p[THORAX_END]
    ang = math.atan2(fwd[1], fwd[0])
    c, s = math.cos(ang), math.sin(ang)
    return (p[NECK_END] + p[THORAX_END]) / 2, np.array([[c, -s], [s, c]])


def _specimen_extent(spec: MosquitoSpecimen, chain: np.ndarray, with_appendages: bool) -> tuple[np.ndarray, np.ndarray]:
    pts = [chain]
    if with_appendages:
        origin, rot = _frame_from_chain(chain)
        for app in spec.appendages:
            pts.append(np.array(app.points) @ rot.T + origin)
    allp = np.vstack(pts)
    pad = max(spec.thorax_width, 0.6)
    return allp.min(axis=0) - pad, allp.max(axis=0) + pad


def _pixel_window(cam: Camera, lo, hi):
    corners = np.array([[lo[0], lo[1]], [lo[0], hi[1]], [hi[0], lo[1]], [hi[0], hi[1]]])
    uv = cam.world_to_pixel(corners)
    u0 = max(int(math.floor(uv[:, 0].min())) - 3, 0)
    u1 = min(int(math.ceil(uv[:, 0].max())) + 4, cam.width)
    v0 = max(int(math.floor(uv[:, 1].min())) - 3, 0)
    v1 = min(int(math.ceil(uv[:, 1].max())) + 4, cam.height)
    if u0 >= u1 or v0 >= v1:
        return None
    return u0, u1, v0, v1


def _world_grid(cam: Camera, window) -> np.ndarray:
    u0, u1, v0, v1 = window
    vv, uu = np.mgrid[v0:v1, u0:u1]
    return cam.pixel_to_world(np.stack([uu, vv], axis=-1).astype(float))


def _paint_specimen(img, mask, cam, spec, chain, with_appendages=True):
    # appendages never reach the mask, so skip them when no image is drawn
    with_appendages = with_appendages and img is not None
    lo, hi = _specimen_extent(spec, chain, with_appendages)
    window = _pixel_window(cam, lo, hi)
    if window is None:
        return
    u0, u1, v0, v1 = window
    P = _world_grid(cam, window)
    layers = _specimen_layers(spec, P, chain, with_appendages)
    if img is not None:
        sub = img[v0:v1, u0:u1].astype(np.float32)
        for layer in layers:
            if not layer.mask.any():
                continue
            col = np.asarray(layer.color, np.float32)
            if layer.alpha >= 1.0:
                sub[layer.mask] = col
            else:
                sub[layer.mask] = (1 - layer.alpha) * sub[layer.mask] + layer.alpha * col
        img[v0:v1, u0:u1] = np.round(sub).astype(np.uint8)
    if mask is not None:
        sub = mask[v0:v1, u0:u1]
        for layer in layers:
            if layer.label is not None:
                sub[layer.mask] = layer.label


# ----------------------------------------------------------------- background
def _fixture_rgb(layout: WorkcellLayout, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Static fixture appearance at world coordinates."""
    out = np.empty(X.shape + (3,), np.uint8)
    out[...] = _ACRYLIC
    cx, cy = layout.cup_center
    r = np.hypot(X - cx, Y - cy)
    cup = r <= layout.cup_radius
    out[cup] = _MESH
    pitch = layout.mesh_pitch
    thread = cup & ((np.mod(X - cx, pitch) < THREAD_WIDTH) | (np.mod(Y - cy, pitch) < THREAD_WIDTH))
    out[thread] = _THREAD
    out[(r > layout.cup_radius) & (r <= layout.cup_radius + 0.4)] = _RIM

    bf = layout.blade_front_x
    blades_back = bf + 2 * layout.blade_thickness
    lateral = np.mod(Y - layout.slot_axis_y + SLOT_PITCH / 2, SLOT_PITCH) - SLOT_PITCH / 2
    slot = (X >= bf - layout.slot_length) & (X < bf) & (np.abs(lateral) <= layout.slot_width / 2)
    out[slot] = _SLOT
    blade = (X >= bf) & (X < blades_back)
    out[blade] = _BLADE
    out[blade & (np.abs(lateral) <= layout.notch_width / 2)] = _NOTCH
    out[X >= blades_back] = _APRON
    return out


@functools.lru_cache(maxsize=4)
def _overhead_background(layout: WorkcellLayout) -> np.ndarray:
    cam = overhead_camera(layout)
    rows = []
    # chunked to bound peak memory
    for v0 in range(0, cam.height, 256):
        window = (0, cam.width, v0, min(v0 + 256, cam.height))
        W = _world_grid(cam, window)
        rows.append(_fixture_rgb(layout, W[..., 0], W[..., 1]))
    img = np.concatenate(rows, axis=0)
    img.setflags(write=False)
    return img


_ATLAS_MARGIN = 16.0


@functools.lru_cache(maxsize=4)
def _onboard_atlas(layout: WorkcellLayout):
    s = layout.onboard_scale_um / 1000.0
    x0 = layout.cup_center[0] - layout.cup_radius - _ATLAS_MARGIN
    x1 = layout.blade_front_x + _ATLAS_MARGIN
    y0 = layout.cup_center[1] - layout.cup_radius - _ATLAS_MARGIN
    y1 = layout.cup_center[1] + layout.cup_radius + _ATLAS_MARGIN
    xs = x0 + s * np.arange(int(math.ceil((x1 - x0) / s)))
    ys = y0 + s * np.arange(int(math.ceil((y1 - y0) / s)))
    X, Y = np.meshgrid(xs, ys)
    atlas = _fixture_rgb(layout, X, Y)
    atlas.setflags(write=False)
    return atlas, x0, y0


def _onboard_background(layout: WorkcellLayout, cam: Camera) -> np.ndarray:
    atlas, x0, y0 = _onboard_atlas(layout)
    corner = cam.pixel_to_world(np.array([0.0, 0.0]))
    j0 = int(round((corner[0] - x0) / cam.scale))
    i0 = int(round((corner[1] - y0) / cam.scale))
    out = np.empty((cam.height, cam.width, 3), np.uint8)
    out[...] = _ACRYLIC
    ai0, ai1 = max(i0, 0), min(i0 + cam.height, atlas.shape[0])
    aj0, aj1 = max(j0, 0), min(j0 + cam.width, atlas.shape[1])
    if ai0 < ai1 and aj0 < aj1:
        out[ai0 - i0:ai1 - i0, aj0 - j0:aj1 - j0] = atlas[ai0:ai1, aj0:aj1]
    return out


def _add_noise(img: np.ndarray, seed) -> np.ndarray:
    """Luminance-only sensor noise: one draw per pixel, shared by the channels."""
    rng = np.random.default_rng(seed)
    noise = rng.integers(-NOISE_AMPLITUDE, NOISE_AMPLITUDE + 1, size=img.shape[:2], dtype=np.int16)
    if img.ndim == 3:
        noise = noise[..., None]
    noise = noise + img
    np.clip(noise, 0, 255, out=noise)
    return noise.astype(np.uint8)


def _frame_seed(scene: Scene, tag: int, extra=()):
    base = 0 if scene.seed is None else int(scene.seed)
    return [base, tag, *[int(round(e * 1000)) for e in extra]]


# ----------------------------------------------------------------- public API
def render_overhead(scene: Scene, *, noise: bool = True) -> np.ndarray:
    """Overhead RGB frame of the whole workspace, ``(H, W, 3)`` uint8."""
    layout = scene.layout
    cam = overhead_camera(layout)
    img = _overhead_background(layout).copy()
    if scene.specimen is not None:
        _paint_specimen(img, None, cam, scene.specimen, scene.specimen.points)
    return _add_noise(img, _frame_seed(scene, 1)) if noise else img


def overhead_label_mask(scene: Scene) -> np.ndarray:
    """Anatomical categories in the overhead view (oracle; legs/wings excluded)."""
    cam = overhead_camera(scene.layout)
    mask = np.zeros(cam.shape, np.uint8)
    if scene.specimen is not None:
        _paint_specimen(None, mask, cam, scene.specimen, scene.specimen.points, with_appendages=False)
    return mask


def render_onboard(scene: Scene, robot, *, foreshortening: bool = True, with_image: bool = True,
                   noise: bool = True):
    """Onboard camera frame and its pixel-exact label mask.

    ``robot`` is anything with ``position_mm`` (x, y, z) and ``grasp``.
    Returns ``(image, mask)``; ``image`` is None when ``with_image`` is False.
    """
    layout = scene.layout
    pos = np.asarray(robot.position_mm, float)
    cam = onboard_camera(layout, pos[:2])
    mask = np.zeros(cam.shape, np.uint8)
    img = _onboard_background(layout, cam) if with_image else None
    spec = scene.specimen
    if spec is not None:
        grasp_s = robot.grasp.s if getattr(robot, "grasp", None) is not None else None
        chain = apparent_chain(spec, grasp_s, foreshortening)
        _paint_specimen(img, mask, cam, spec, chain)
    if img is not None and noise:
        img = _add_noise(img, _frame_seed(scene, 2, pos))
    return img, mask


def render_tool_overhead(layout: WorkcellLayout, tooltip_xy, *, seed=0, occluded: bool = False,
                         noise: bool = True) -> np.ndarray:
    """Overhead frame showing only the gripper, tip at ``tooltip_xy``.

    The tool body extends toward -y from the tip, so the tip is the lowest
    point of the tool contour in the image.
    """
    cam = overhead_camera(layout)
    img = _overhead_background(layout).copy()
    if not occluded:
        tip = np.asarray(tooltip_xy, float)[:2]
        lo = tip - np.array([1.0, 14.0])
        hi = tip + np.array([1.0, 0.2])
        window = _pixel_window(cam, lo, hi)
        if window is not None:
            u0, u1, v0, v1 = window
            P = _world_grid(cam, window)
            m = _tool_shape(P, tip)
            sub = img[v0:v1, u0:u1]
            sub[m] = _TOOL
    return _add_noise(img, [seed, 3]) if noise else img


def _tool_shape(P, tip):
    dx = P[..., 0] - tip[0]
    back = tip[1] - P[..., 1]  # distance behind the tip
    # slightly blunt tip so the apex always covers a pixel centre
    taper = (back >= 0) & (back <= 3.0) & (np.abs(dx) <= 0.03 + 0.57 * back / 3.0)
    shaft = (back > 3.0) & (back <= 14.0) & (np.abs(dx) <= 0.6)
    return taper | shaft


def render_calibration_grid(layout: WorkcellLayout, camera_center_xy, *, pitch: float = 5.0,
                            line_width: float = 0.12) -> np.ndarray:
    """Onboard view of the pre-calibrated line grid, single channel uint8.

    Lines have a Gaussian cross-section so sub-pixel shifts are visible.
    """
    w, h = layout.onboard_resolution
    cam = Camera(w, h, layout.onboard_scale_um / 1000.0, tuple(map(float, camera_center_xy[:2])))
    u = np.arange(w, dtype=float)
    v = np.arange(h, dtype=float)
    x = cam.center[0] + (u - cam.principal[0]) * cam.scale
    y = cam.center[1] + (v - cam.principal[1]) * cam.scale
    dx = np.abs(np.mod(x + pitch / 2, pitch) - pitch / 2)
    dy = np.abs(np.mod(y + pitch / 2, pitch) - pitch / 2)
    lx = np.exp(-((dx / line_width) ** 2))
    ly = np.exp(-((dy / line_width) ** 2))
    # quasi-periodic shading (incommensurate periods) breaks the grid's
    # translational symmetry so shifts of a whole pitch are not ambiguous
    X, Y = np.meshgrid(x, y)
    shade = 0.5 + 0.25 * np.sin(2 * np.pi * X / 1.7 + 0.3) * np.sin(2 * np.pi * Y / 2.3 + 1.1) \
        + 0.25 * np.sin(2 * np.pi * (X + 0.6 * Y) / 3.1)
    ink = np.maximum(np.maximum(lx[None, :], ly[:, None]), 0.35 * shade)
    return np.round(230 - 180 * ink).astype(np.uint8)


# ----------------------------------------------------------------- export
def save_png(path, img: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.ascontiguousarray(img)).save(Path(path), format="PNG")


def load_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(Path(path)) as im:
        return np.array(im)


def save_pgm(path, mask: np.ndarray) -> None:
    """Binary PGM (P5) with category values 0-3 as grey levels."""
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    h, w = mask.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(mask.tobytes())


def load_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = []
    idx = 0
    # header: magic, width, height, maxval separated by whitespace
    while len(parts) < 4:
        while data[idx:idx + 1].isspace():
            idx += 1
        if data[idx:idx + 1] == b"#":
            idx = data.index(b"\n", idx) + 1
            continue
        end = idx
        while not data[end:end + 1].isspace():
            end += 1
        parts.append(data[idx:end])
        idx = end
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h = int(parts[1]), int(parts[2])
    idx += 1
    return np.frombuffer(data[idx:idx + w * h], dtype=np.uint8).reshape(h, w).copy()
