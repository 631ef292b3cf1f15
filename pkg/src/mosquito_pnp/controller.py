"""The staged pick-and-place controller and the seeded batch harness.

A trial runs: overhead locate, approach, onboard look, grasp, drag into the
groove, onboard look at the held specimen, place over the blades, cut and
retreat.  Every robot motion goes through :class:`mosquito_pnp.robot.Robot`
so timings come from the motion model.
"""
from __future__ import annotations

import csv
import dataclasses
import functools
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import robot as rb
from .calibration import CalibrationMap, OnboardScale, calibrate_onboard, calibrate_overhead, map_camera_to_robot
from .errors import ConfigurationError, SegmentationError
from .render import onboard_camera, onboard_tooltip_pixel, overhead_camera, render_onboard, render_overhead
from .scene import JUNCTION, TIP, Scene, SpecimenVariability, WorkcellLayout, apply_drag, make_scene
from .segmentation import OracleSegmenter, postprocess
from .vision import PipelineParams

PHASES = ("overhead_vision", "approach", "grasp", "drag", "onboard_vision", "place", "retreat")

NO_MOSQUITO = "no_mosquito"
NO_PROBOSCIS = "no_proboscis"
NO_GRASP = "no_grasp"
NO_JUNCTION = "no_junction"
ABORTS = (NO_MOSQUITO, NO_PROBOSCIS, NO_GRASP, NO_JUNCTION)


@dataclass(frozen=True)
class NoiseProfile:
    """Error sources injected into a trial; all zero gives the ideal system."""

    name: str = "zero"
    overhead_sigma_mm: float = 0.0  # overhead centroid
    grasp_sigma_mm: float = 0.0  # onboard proboscis centroid
    offset_sigma_mm: float = 0.0  # onboard junction and dissection points
    p_residual: float = 0.0
    foreshortening: bool = False
    label_flip_probability: float = 0.0
    label_boundary_erosion: int = 0
    blade_reference_bias_mm: float = 0.0
    provenance: str = ""

    def __post_init__(self):
        for name in ("overhead_sigma_mm", "grasp_sigma_mm", "offset_sigma_mm"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if not 0 <= self.p_residual <= 1:
            raise ConfigurationError("p_residual must lie in [0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseProfile":
        _reject_unknown(cls, data)
        return cls(**data)


@dataclass(frozen=True)
class ControllerConfig:
    approach_standoff: float = 5.0
    focus_descent: float = 3.0
    hover: float = 2.0
    drag_lift: float = 0.8
    drag_stop: float = 1.5
    align_run: float = 8.0  # straight run along the groove before the drag stop
    place_raise: float = 1.3
    place_descent: float = 3.0
    retreat_raise: float = 3.0
    blade_clearance: float | None = None  # default: drag_stop + blade_thickness
    home: tuple[float, float, float] = (42.0, 50.0, 25.0)
    capture_radius: float = 0.15
    dilation_kernel: int = 5
    correct_foreshortening: bool = False
    pipelined: bool = True
    overhead_vision_s: float = 0.16
    onboard_vision_s: float = 0.08
    grip_s: float = 0.0
    vision_mode: str = "oracle"  # "oracle" (fast) or "pipeline" (rendered frames)

    def __post_init__(self):
        for name in ("approach_standoff", "focus_descent", "hover", "drag_lift", "drag_stop", "place_raise",
                     "place_descent", "retreat_raise", "capture_radius"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.align_run < 0:
            raise ConfigurationError("align_run must be non-negative")
        if self.vision_mode not in ("oracle", "pipeline"):
            raise ConfigurationError("vision_mode must be 'oracle' or 'pipeline'")
        object.__setattr__(self, "home", tuple(float(v) for v in self.home))

    def clearance(self, layout: WorkcellLayout) -> float:
        if self.blade_clearance is not None:
            return self.blade_clearance
        return self.drag_stop + layout.blade_thickness

    def check_layout(self, layout: WorkcellLayout) -> None:
        if self.place_descent - self.place_raise - self.drag_lift > layout.notch_depth + 1e-9:
            raise ConfigurationError("place descent would drive the tooltip below the notch floor")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["home"] = list(self.home)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ControllerConfig":
        _reject_unknown(cls, data)
        return cls(**data)


def _reject_unknown(cls, data: dict) -> None:
    unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")


# ------------------------------------------------------------------ records
@dataclass
class TrialRecord:
    trial_index: int
    seed: int
    phase_times: dict = field(default_factory=lambda: {p: 0.0 for p in PHASES})
    grasp_success: bool = False
    placement_success: bool = False
    outcome: str = ""
    true_offset_mm: float = float("nan")
    estimated_offset_mm: float = float("nan")
    neck_error_x_mm: float = float("nan")
    neck_error_y_mm: float = float("nan")
    flipped: bool = False
    movement_time: float = 0.0
    vision_time: float = 0.0

    @property
    def total_time(self) -> float:
        return float(sum(self.phase_times[p] for p in PHASES))

    def to_row(self) -> dict:
        row = {"trial": self.trial_index, "seed": self.seed}
        for p in PHASES:
            row[f"t_{p}"] = _fmt(self.phase_times[p])
        row.update({
            "t_total": _fmt(self.total_time),
            "t_movement": _fmt(self.movement_time),
            "t_vision": _fmt(self.vision_time),
            "grasp_success": int(self.grasp_success),
            "placement_success": int(self.placement_success),
            "outcome": self.outcome,
            "flipped": int(self.flipped),
            "true_offset_mm": _fmt(self.true_offset_mm),
            "estimated_offset_mm": _fmt(self.estimated_offset_mm),
            "neck_error_x_mm": _fmt(self.neck_error_x_mm),
            "neck_error_y_mm": _fmt(self.neck_error_y_mm),
        })
        return row


CSV_HEADER = (["trial", "seed"] + [f"t_{p}" for p in PHASES]
              + ["t_total", "t_movement", "t_vision", "grasp_success", "placement_success", "outcome", "flipped",
                 "true_offset_mm", "estimated_offset_mm", "neck_error_x_mm", "neck_error_y_mm"])


def _fmt(v: float) -> str:
    return "nan" if v != v else f"{v:.6f}"


def records_to_csv(records: Sequence[TrialRecord]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
    w.writeheader()
    for r in sorted(records, key=lambda r: r.trial_index):
        w.writerow(r.to_row())
    return buf.getvalue()


# ------------------------------------------------------------------ vision front ends
@dataclass(frozen=True)
class Calibration:
    overhead: CalibrationMap
    onboard: OnboardScale


@functools.lru_cache(maxsize=8)
def default_calibration(layout: WorkcellLayout, profile: rb.MotionProfile) -> Calibration:
    cmap, _, _ = calibrate_overhead(layout, profile)
    return Calibration(cmap, calibrate_onboard(layout, profile))


def body_centroid(spec) -> np.ndarray:
    """Area-weighted centre of thorax and abdomen (their overlap ignored)."""
    p = spec.points
    thorax = (p[3] + p[4]) / 2
    a_thorax = math.pi / 4 * spec.thorax_length * spec.thorax_width
    back = p[3] - p[4]
    back = back / np.linalg.norm(back)
    abd_start = p[4] + 0.35 * back
    abdomen = (abd_start + p[5]) / 2
    # blunt abdomen outline |x/a|^4 + (y/b)^2 <= 1 has area 4ab * 0.87402
    a_abd = 0.87402 * np.linalg.norm(p[5] - abd_start) * spec.abdomen_width
    return (a_thorax * thorax + a_abd * abdomen) / (a_thorax + a_abd)


class TrialVision:
    """Overhead and onboard sensing for one trial.

    In ``oracle`` mode the overhead centroid comes from scene geometry and the
    onboard mask is rendered without its image; ``pipeline`` mode renders
    frames and runs the classical overhead pipeline.
    """

    def __init__(self, mode: str, noise: NoiseProfile, rng: np.random.Generator, seed: int,
                 pipeline: PipelineParams | None = None, crop=None, frames: dict | None = None,
                 dilation_kernel: int = 5):
        self.mode = mode
        self.kernel = (dilation_kernel, dilation_kernel)
        self.noise = noise
        self.rng = rng
        self.pipeline = pipeline or PipelineParams()
        self.crop = crop
        self.frames = frames
        self.segmenter = OracleSegmenter(flip_probability=noise.label_flip_probability,
                                         boundary_erosion=noise.label_boundary_erosion, seed=seed)
        self._k = 0

    def overhead_centroid(self, scene: Scene):
        cam = overhead_camera(scene.layout)
        if self.mode == "pipeline":
            from .localizer import default_crop, locate_mosquito

            frame = render_overhead(scene)
            if self.frames is not None:
                self.frames["overhead"] = frame
            res = locate_mosquito(frame, self.pipeline, self.crop or default_crop(scene.layout))
            if not res.present:
                return None
            uv = np.array(res.centroid)
        else:
            if scene.specimen is None:
                return None
            uv = cam.world_to_pixel(body_centroid(scene.specimen))
        if self.noise.overhead_sigma_mm > 0:
            uv = uv + self.rng.normal(0.0, self.noise.overhead_sigma_mm / cam.scale, 2)
        return uv

    def onboard(self, scene: Scene, robot_state, require_dissection: bool):
        img, truth = render_onboard(scene, robot_state, foreshortening=self.noise.foreshortening,
                                    with_image=self.mode == "pipeline")
        self._k += 1
        if self.frames is not None and img is not None:
            self.frames[f"onboard_{self._k}"] = img
            self.frames[f"onboard_{self._k}_mask"] = truth
        mask = self.segmenter.segment(img, truth, frame_key=self._k)
        return postprocess(mask, self.kernel, require_dissection=require_dissection)


# ------------------------------------------------------------------ trial
@dataclass
class TrialContext:
    layout: WorkcellLayout
    cfg: ControllerConfig
    profile: rb.MotionProfile
    noise: NoiseProfile
    calib: Calibration
    rng: np.random.Generator
    vision: TrialVision
    record: TrialRecord


def _pixel_to_world_onboard(ctx: TrialContext, uv, tool_xy) -> np.ndarray:
    tip_px = onboard_tooltip_pixel(ctx.layout)
    counts = ctx.calib.onboard.pixel_offset_to_counts(np.asarray(uv, float) - tip_px)
    return np.asarray(tool_xy, float) + counts / ctx.profile.counts_per_mm


def estimate_offset(seg, calib: Calibration, lift: float, cfg: ControllerConfig, *, layout: WorkcellLayout,
                    profile: rb.MotionProfile, tool_xy, noise_xy=(np.zeros(2), np.zeros(2))) -> float:
    """Groove-axis distance from the tooltip back to the neck, in mm.

    The tooltip-to-junction part comes from the onboard junction pixel;
    with ``correct_foreshortening`` its length is restored from the apparent
    length and the jaw height ``lift``.  The junction-to-neck part uses the
    measured dissection point.
    """
    if seg.proboscis_head_edge_centroid is None:
        raise SegmentationError("proboscis-head junction not visible")
    tip_px = onboard_tooltip_pixel(layout)

    def world(uv):
        c = calib.onboard.pixel_offset_to_counts(np.asarray(uv, float) - tip_px)
        return np.asarray(tool_xy, float) + c / profile.counts_per_mm

    tool = np.asarray(tool_xy, float)
    j = world(seg.proboscis_head_edge_centroid) + noise_xy[0]
    lead = tool - j
    if cfg.correct_foreshortening and lift > 0:
        app = float(np.hypot(*lead))
        if app > 0:
            lead = lead * (math.sqrt(app**2 + lift**2) / app)
    offset = lead[0]
    if seg.dissection_point is not None:
        d = world(seg.dissection_point) + noise_xy[1]
        offset += (j - d)[0]
    return float(offset)


def _abort(ctx: TrialContext, robot: rb.Robot, phase: str, reason: str) -> None:
    if robot.state.gripper == rb.CLOSED:
        robot.state = rb.grip_open(robot.state)
    home = np.array(ctx.cfg.home)
    t = 0.0
    if np.any(robot.state.position_mm != home):
        pos = robot.state.position_mm
        if pos[2] < home[2]:
            t += robot.move([pos[0], pos[1], home[2]], cmd="abort_raise")
        t += robot.move(home, cmd="abort_home")
    ctx.record.phase_times[phase] += t
    ctx.record.movement_time += t
    ctx.record.outcome = reason


def _timed_move(ctx, robot, phase, target, speed=None, cmd="move"):
    t = robot.move(target, speed, cmd)
    ctx.record.phase_times[phase] += t
    ctx.record.movement_time += t
    return t


def _vision_time(ctx, phase, t):
    ctx.record.phase_times[phase] += t
    ctx.record.vision_time += t


def _set_tip_lift(scene: Scene, lift: float) -> Scene:
    spec = scene.specimen
    lifts = list(spec.lift)
    lifts[TIP] = lift
    return scene.with_specimen(spec.with_chain(spec.points, lifts))


def _drag_to(scene: Scene, robot: rb.Robot, target_xy) -> Scene:
    grasp = scene.specimen.point_at(robot.state.grasp.s)
    return apply_drag(scene, grasp, [target_xy])


def run_pick(scene: Scene, robot: rb.Robot, ctx: TrialContext):
    """Locate, approach, look and grasp.  Returns ``(scene, ok)``."""
    cfg, lay, rec = ctx.cfg, ctx.layout, ctx.record
    t_ov = ctx.cfg.overhead_vision_s
    if not cfg.pipelined:
        _vision_time(ctx, "overhead_vision", t_ov)
    uv = ctx.vision.overhead_centroid(scene)
    if uv is None:
        _abort(ctx, robot, "approach", NO_MOSQUITO)
        return scene, False
    enc = map_camera_to_robot(ctx.calib.overhead, uv).encoder
    cx, cy = np.array(enc) / ctx.profile.counts_per_mm

    z_surf = lay.surface_z
    z_standoff = z_surf + cfg.focus_descent + cfg.hover
    _timed_move(ctx, robot, "approach", [cx + cfg.approach_standoff, cy, z_standoff], cmd="standoff")
    _timed_move(ctx, robot, "approach", [cx + cfg.approach_standoff, cy, z_standoff - cfg.focus_descent],
                cmd="focus")

    _vision_time(ctx, "onboard_vision", cfg.onboard_vision_s)
    try:
        seg = ctx.vision.onboard(scene, robot.state, require_dissection=False)
    except SegmentationError:
        _abort(ctx, robot, "grasp", NO_PROBOSCIS)
        return scene, False
    g = _pixel_to_world_onboard(ctx, seg.grasp_point, robot.state.position_mm[:2])
    if ctx.noise.grasp_sigma_mm > 0:
        g = g + ctx.rng.normal(0.0, ctx.noise.grasp_sigma_mm, 2)

    _timed_move(ctx, robot, "grasp", [g[0], g[1], z_surf + cfg.hover], cmd="hover")
    _timed_move(ctx, robot, "grasp", [g[0], g[1], z_surf], cmd="descend")
    robot.state = rb.grip_close(robot.state, scene, cfg.capture_radius)
    t = robot.event("grip_close", ctx.profile.settle_overhead + cfg.grip_s)
    rec.phase_times["grasp"] += t
    rec.movement_time += t
    rec.grasp_success = robot.state.grasp is not None
    if not rec.grasp_success:
        _abort(ctx, robot, "retreat", NO_GRASP)
        return scene, False
    scene = rb.seat_in_jaws(scene, robot.state)
    return scene, True


def run_drag(scene: Scene, robot: rb.Robot, ctx: TrialContext) -> Scene:
    cfg, lay = ctx.cfg, ctx.layout
    z_drag = lay.surface_z + cfg.drag_lift
    pos = robot.state.position_mm
    _timed_move(ctx, robot, "drag", [pos[0], pos[1], z_drag], cmd="drag_lift")
    scene = _set_tip_lift(scene, cfg.drag_lift)
    blade_x = lay.blade_front_x + ctx.noise.blade_reference_bias_mm
    stop = np.array([blade_x - cfg.drag_stop, lay.slot_axis_y])
    for target in (stop - [cfg.align_run, 0.0], stop):
        if np.allclose(target, robot.state.position_mm[:2]):
            continue
        _timed_move(ctx, robot, "drag", [target[0], target[1], z_drag], cmd="drag")
        scene = _drag_to(scene, robot, robot.state.position_mm[:2])
    return scene


def run_place(scene: Scene, robot: rb.Robot, ctx: TrialContext, offset: float) -> Scene:
    """Raise, move over the blades by clearance plus offset, seat, cut and retreat."""
    cfg, lay, rec = ctx.cfg, ctx.layout, ctx.record
    pos = robot.state.position_mm
    _timed_move(ctx, robot, "place", [pos[0], pos[1], pos[2] + cfg.place_raise], cmd="place_raise")
    scene = _set_tip_lift(scene, cfg.drag_lift + cfg.place_raise)
    blade_x = lay.blade_front_x + ctx.noise.blade_reference_bias_mm
    target_x = blade_x - cfg.drag_stop + cfg.clearance(lay) + offset
    pos = robot.state.position_mm
    _timed_move(ctx, robot, "place", [target_x, pos[1], pos[2]], cmd="place_forward")
    scene = _drag_to(scene, robot, robot.state.position_mm[:2])

    ex, ey = rb.neck_errors(scene)
    rec.neck_error_x_mm, rec.neck_error_y_mm = ex, ey
    robot.state, scene, placed, flipped, t = rb.lower_into_notch(
        robot.state, scene, ctx.profile, descent=cfg.place_descent, p_residual=ctx.noise.p_residual, rng=ctx.rng)
    robot._record("lower_into_notch", robot.state.position_mm, t)
    rec.phase_times["place"] += t
    rec.movement_time += t
    outcome = rb.actuate_blades(scene)
    t = robot.event("actuate_blades", ctx.profile.blade_actuation)
    rec.phase_times["place"] += t
    rec.movement_time += t
    rec.flipped = flipped
    rec.outcome = outcome
    rec.placement_success = outcome == rb.HEAD_REMOVED
    scene = dataclasses.replace(scene, head_removed=rec.placement_success)

    pos = robot.state.position_mm
    _timed_move(ctx, robot, "retreat", [pos[0], pos[1], pos[2] + cfg.retreat_raise], cmd="retreat_raise")
    _timed_move(ctx, robot, "retreat", cfg.home, cmd="home")
    # head released over the disposal point; the cleaning jet costs nothing
    robot.state = rb.grip_open(robot.state)
    return scene


def run_trial(scene: Scene, cfg: ControllerConfig, noise: NoiseProfile, calib: Calibration, *,
              profile: rb.MotionProfile | None = None, trial_index: int = 0, seed: int = 0,
              pipeline: PipelineParams | None = None, frames: dict | None = None):
    """One full pick-and-place cycle; returns ``(record, robot, scene)``."""
    profile = profile or rb.MotionProfile()
    layout = scene.layout
    cfg.check_layout(layout)
    rng = np.random.default_rng([seed, 7])
    record = TrialRecord(trial_index=trial_index, seed=seed)
    vision = TrialVision(cfg.vision_mode, noise, rng, seed, pipeline, frames=frames,
                         dilation_kernel=cfg.dilation_kernel)
    robot = rb.Robot(rb.RobotState.at(cfg.home, profile.resolution_um), profile)
    ctx = TrialContext(layout, cfg, profile, noise, calib, rng, vision, record)

    scene, ok = run_pick(scene, robot, ctx)
    if not ok:
        return record, robot, scene
    scene = run_drag(scene, robot, ctx)

    _vision_time(ctx, "onboard_vision", cfg.onboard_vision_s)
    spec = scene.specimen
    tool = robot.state.position_mm
    record.true_offset_mm = float(tool[0] - spec.neck_midpoint[0])
    try:
        seg = ctx.vision.onboard(scene, robot.state, require_dissection=True)
        noise_xy = (rng.normal(0.0, noise.offset_sigma_mm, 2), rng.normal(0.0, noise.offset_sigma_mm, 2)) \
            if noise.offset_sigma_mm > 0 else (np.zeros(2), np.zeros(2))
        offset = estimate_offset(seg, calib, cfg.drag_lift, cfg, layout=layout, profile=profile,
                                 tool_xy=tool[:2], noise_xy=noise_xy)
    except SegmentationError:
        _abort(ctx, robot, "retreat", NO_JUNCTION)
        return record, robot, scene
    record.estimated_offset_mm = offset
    scene = run_place(scene, robot, ctx, offset)
    return record, robot, scene


def held_specimen_view(scene: Scene, cfg: ControllerConfig | None = None, noise: NoiseProfile | None = None,
                       calib: Calibration | None = None, *, profile: rb.MotionProfile | None = None, seed: int = 0):
    """Pick and drag, stopping where the onboard camera looks at the held specimen.

    Returns ``(scene, robot_state)`` or None when the pick fails.
    """
    cfg = cfg or ControllerConfig()
    noise = noise or NoiseProfile()
    profile = profile or rb.MotionProfile()
    calib = calib or default_calibration(scene.layout, profile)
    rng = np.random.default_rng([seed, 7])
    record = TrialRecord(trial_index=0, seed=seed)
    vision = TrialVision(cfg.vision_mode, noise, rng, seed, dilation_kernel=cfg.dilation_kernel)
    robot = rb.Robot(rb.RobotState.at(cfg.home, profile.resolution_um), profile)
    ctx = TrialContext(scene.layout, cfg, profile, noise, calib, rng, vision, record)
    scene, ok = run_pick(scene, robot, ctx)
    if not ok:
        return None
    return run_drag(scene, robot, ctx), robot.state


# ------------------------------------------------------------------ batch
def trial_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1)[0])


@dataclass
class BatchSummary:
    n: int
    grasp_rate: float
    placement_rate: float
    mean_cycle: float
    std_cycle: float
    mean_movement: float
    mean_vision: float
    mdph: float
    mdph_std: float
    outcomes: dict

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def summarize(records: Sequence[TrialRecord]) -> BatchSummary:
    from .metrics import throughput_from_cycles

    n = len(records)
    cycles = [r.total_time for r in records]
    tp = throughput_from_cycles(cycles)
    outcomes: dict = {}
    for r in records:
        outcomes[r.outcome] = outcomes.get(r.outcome, 0) + 1
    return BatchSummary(
        n=n,
        grasp_rate=sum(r.grasp_success for r in records) / n,
        placement_rate=sum(r.placement_success for r in records) / n,
        mean_cycle=tp.mean_cycle,
        std_cycle=tp.std_cycle,
        mean_movement=float(np.mean([r.movement_time for r in records])),
        mean_vision=float(np.mean([r.vision_time for r in records])),
        mdph=tp.mdph,
        mdph_std=tp.mdph_std,
        outcomes=dict(sorted(outcomes.items())),
    )


def run_batch(n: int, cfg: ControllerConfig | None = None, noise: NoiseProfile | None = None, master_seed: int = 0,
              *, layout: WorkcellLayout | None = None, profile: rb.MotionProfile | None = None,
              variability: SpecimenVariability | None = None, calib: Calibration | None = None,
              start: int = 0, workers: int = 1):
    """Independent seeded trials; returns ``(records, summary)``.

    Trial ``k`` depends only on ``(master_seed, k)``, so a longer batch
    repeats the records of a shorter one, and ``workers`` threads give the
    same records in trial order.
    """
    if n < 1:
        raise ConfigurationError("a batch needs at least one trial")
    cfg = cfg or ControllerConfig()
    noise = noise or NoiseProfile()
    layout = layout or WorkcellLayout()
    profile = profile or rb.MotionProfile()
    calib = calib or default_calibration(layout, profile)
    if workers < 1:
        raise ConfigurationError("workers must be at least 1")

    def one(k):
        seed = trial_seed(master_seed, k)
        scene = make_scene(seed, layout, variability)
        return run_trial(scene, cfg, noise, calib, profile=profile, trial_index=k, seed=seed)[0]

    indices = range(start, start + n)
    if workers == 1:
        records = [one(k) for k in indices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, indices))
    return records, summarize(records)


# ------------------------------------------------------------------ noise calibration
@dataclass(frozen=True)
class SweepPoint:
    offset_sigma_mm: float
    p_residual: float
    grasp_rate: float
    placement_rate: float


def calibrate_noise(n: int = 500, *, target: float = 0.90, vision_sigma_mm: float = 0.05,
                    offset_sigmas: Sequence[float] = (0.03, 0.04, 0.05),
                    p_residuals: Sequence[float] = (0.04, 0.06, 0.08), master_seed: int = 0,
                    cfg: ControllerConfig | None = None, layout: WorkcellLayout | None = None,
                    profile: rb.MotionProfile | None = None, calib: Calibration | None = None,
                    workers: int = 1):
    """Grid search for the noise profile whose placement rate is nearest ``target``.

    Foreshortening is on and the controller corrects for it. Ties go to the
    first grid point in (offset sigma, p_residual) order. Returns
    ``(noise_profile, sweep_points)``.
    """
    if not 0 < target < 1:
        raise ConfigurationError("target rate must lie in (0, 1)")
    if not offset_sigmas or not p_residuals:
        raise ConfigurationError("the sweep grid is empty")
    cfg = dataclasses.replace(cfg or ControllerConfig(), correct_foreshortening=True)
    layout = layout or WorkcellLayout()
    profile = profile or rb.MotionProfile()
    calib = calib or default_calibration(layout, profile)
    points, best, best_gap = [], None, math.inf
    for s in offset_sigmas:
        for p in p_residuals:
            noise = NoiseProfile(name="calibrated", overhead_sigma_mm=vision_sigma_mm, grasp_sigma_mm=vision_sigma_mm,
                                 offset_sigma_mm=float(s), p_residual=float(p), foreshortening=True)
            _, summary = run_batch(n, cfg, noise, master_seed, layout=layout, profile=profile, calib=calib,
                                     workers=workers)
            points.append(SweepPoint(float(s), float(p), summary.grasp_rate, summary.placement_rate))
            gap = abs(summary.placement_rate - target)
            if gap < best_gap - 1e-12:
                best, best_gap = (noise, summary), gap
    noise, summary = best
    provenance = (f"grid search, {n} trials per point, master seed {master_seed}, vision sigma {vision_sigma_mm} mm, "
                  f"placement {summary.placement_rate:.3f} nearest target {target}")
    return dataclasses.replace(noise, provenance=provenance), points
