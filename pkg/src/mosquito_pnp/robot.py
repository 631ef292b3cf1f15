"""Kinematic model of the four-axis linear-stage robot, gripper and blades.

Positions are encoder counts; one count is ``resolution_um`` micrometres.
Motion is constant velocity per segment with all axes moving together, plus
a fixed settle overhead, so a segment takes ``max_axis_distance / speed +
settle``.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, MotionError, ParameterError
from .scene import JUNCTION, TIP, Scene

OPEN, CLOSED = "open", "closed"
TRAVEL_MM = 100.0

HEAD_REMOVED = "head_removed"
CUT_ON_HEAD = "cut_on_head"
CUT_ON_BODY = "cut_on_body"
NO_CONTACT = "no_contact"
FLIPPED = "flipped"
CUT_OUTCOMES = (HEAD_REMOVED, CUT_ON_HEAD, CUT_ON_BODY, NO_CONTACT, FLIPPED)


@dataclass(frozen=True)
class MotionProfile:
    nominal_speed: float = 12.5  # mm/s
    slow_speed: float = 2.5  # mm/s, neck insertion
    settle_overhead: float = 0.09  # s per segment
    resolution_um: float = 10.0
    blade_actuation: float = 0.09  # s, one settle-like event

    def __post_init__(self):
        if not (self.nominal_speed > 0 and self.slow_speed > 0):
            raise ParameterError("speeds must be positive")
        if not self.resolution_um > 0:
            raise ParameterError("encoder resolution must be positive")
        if self.settle_overhead < 0 or self.blade_actuation < 0:
            raise ParameterError("overheads must be non-negative")

    @property
    def counts_per_mm(self) -> float:
        return 1000.0 / self.resolution_um

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MotionProfile":
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ParameterError(f"unknown motion profile keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Grasp:
    specimen_id: int
    s: float  # arc fraction from proboscis tip (0) to junction (1)
    neck_offset: float  # chain arc length from the jaws to the neck midpoint, mm


@dataclass(frozen=True)
class RobotState:
    encoders: tuple[int, int, int, int]  # x, y, z, rotary (parked)
    gripper: str = OPEN
    grasp: Grasp | None = None
    resolution_um: float = 10.0

    def __post_init__(self):
        if self.grasp is not None and self.gripper != CLOSED:
            raise ContractViolation("a grasp requires a closed gripper")
        limit = round(TRAVEL_MM * 1000.0 / self.resolution_um)
        for c in self.encoders[:3]:
            if not 0 <= c <= limit:
                raise MotionError(f"encoder value {c} outside travel")

    @property
    def position_mm(self) -> np.ndarray:
        return np.array(self.encoders[:3], float) * (self.resolution_um / 1000.0)

    @classmethod
    def at(cls, xyz_mm, resolution_um: float = 10.0) -> "RobotState":
        return cls(encoders=(*quantize(xyz_mm, resolution_um), 0), resolution_um=resolution_um)


def quantize(xyz_mm, resolution_um: float = 10.0) -> tuple[int, int, int]:
    """Nearest encoder counts (half away from zero is irrelevant: travel is non-negative)."""
    k = 1000.0 / resolution_um
    return tuple(int(math.floor(float(v) * k + 0.5)) for v in xyz_mm[:3])


def check_travel(xyz_mm) -> None:
    for axis, v in zip("xyz", xyz_mm[:3]):
        if not 0.0 <= float(v) <= TRAVEL_MM:
            raise MotionError(f"{axis} = {float(v):.4f} mm is outside 0-{TRAVEL_MM:g} mm travel")


def move_to(state: RobotState, target_mm, speed: float, profile: MotionProfile | None = None):
    """Simultaneous constant-speed move; returns ``(new_state, elapsed_s)``."""
    profile = profile or MotionProfile(resolution_um=state.resolution_um)
    if not speed > 0:
        raise ParameterError("speed must be positive")
    check_travel(target_mm)
    counts = quantize(target_mm, state.resolution_um)
    delta = max(abs(a - b) for a, b in zip(counts, state.encoders[:3]))
    dist = delta * state.resolution_um / 1000.0
    elapsed = dist / speed + profile.settle_overhead
    return dataclasses.replace(state, encoders=(*counts, state.encoders[3])), elapsed


def grip_close(state: RobotState, scene: Scene, capture_radius: float = 0.15) -> RobotState:
    """Close the jaws; grasp the proboscis if it lies within ``capture_radius``."""
    if state.gripper != OPEN:
        raise ContractViolation("gripper is already closed")
    spec = scene.specimen
    closed = dataclasses.replace(state, gripper=CLOSED, grasp=None)
    if spec is None:
        return closed
    tool = state.position_mm
    s, planar = spec.project_on_proboscis(tool[:2])
    height = tool[2] - (scene.layout.surface_z + spec.lift[TIP] + s * (spec.lift[JUNCTION] - spec.lift[TIP]))
    if math.hypot(planar, height) > capture_radius:
        return closed
    return dataclasses.replace(closed, grasp=Grasp(spec.specimen_id, s, spec.neck_arc_from(s)))


def grip_open(state: RobotState) -> RobotState:
    return dataclasses.replace(state, gripper=OPEN, grasp=None)


def seat_in_jaws(scene: Scene, state: RobotState) -> Scene:
    """Closing jaws centre the grasped proboscis point on the tooltip."""
    if state.grasp is None or scene.specimen is None:
        return scene
    spec = scene.specimen
    delta = state.position_mm[:2] - spec.point_at(state.grasp.s)
    return scene.with_specimen(spec.translated(delta))


# ------------------------------------------------------------------ blades
def neck_errors(scene: Scene) -> tuple[float, float]:
    """Longitudinal (neck centre minus cut plane) and lateral neck errors, mm."""
    spec = scene.specimen
    if spec is None:
        raise ContractViolation("no specimen in the scene")
    m = spec.neck_midpoint
    lay = scene.layout
    return float(m[0] - lay.cut_plane_x), float(m[1] - lay.slot_axis_y)


def geometric_flip(scene: Scene) -> bool:
    """Head or thorax would rest on the blade tops outside the notch."""
    ex, ey = neck_errors(scene)
    lay = scene.layout
    return abs(ex) > lay.neck_window + 1e-12 or abs(ey) > lay.notch_width / 2 + 1e-12


def lower_into_notch(state: RobotState, scene: Scene, profile: MotionProfile | None = None, *,
                     descent: float = 3.0, p_residual: float = 0.0, rng=None):
    """Slow descent that seats the neck in the notch or flips the body over.

    Returns ``(state, scene, placed, flipped, elapsed)``.
    """
    profile = profile or MotionProfile(resolution_um=state.resolution_um)
    if state.grasp is None:
        raise ContractViolation("lowering into the notch needs a grasped specimen")
    if not 0 <= p_residual <= 1:
        raise ParameterError("p_residual must lie in [0, 1]")
    target = state.position_mm - np.array([0.0, 0.0, descent])
    new_state, elapsed = move_to(state, target, profile.slow_speed, profile)
    flipped = geometric_flip(scene)
    if not flipped and p_residual > 0:
        rng = rng if rng is not None else np.random.default_rng()
        flipped = bool(rng.random() < p_residual)
    spec = scene.specimen
    lift = list(spec.lift)
    lift[TIP] = max(lift[TIP] - descent, -scene.layout.notch_depth)
    scene = dataclasses.replace(scene, specimen=spec.with_chain(spec.points, lift), flipped=flipped)
    return new_state, scene, not flipped, flipped, elapsed


def actuate_blades(scene: Scene) -> str:
    """Cut outcome as a function of the seated geometry."""
    if scene.specimen is None:
        return NO_CONTACT
    if scene.flipped:
        return FLIPPED
    ex, ey = neck_errors(scene)
    lay = scene.layout
    if abs(ey) > lay.notch_width / 2 + 1e-12:
        return NO_CONTACT
    if ex < -lay.neck_window - 1e-12:
        return CUT_ON_HEAD
    if ex > lay.neck_window + 1e-12:
        return CUT_ON_BODY
    return HEAD_REMOVED


# ------------------------------------------------------------------ stateful wrapper
@dataclass
class Robot:
    """A robot instance with a clock and a command/telemetry log."""

    state: RobotState
    profile: MotionProfile = field(default_factory=MotionProfile)
    clock: float = 0.0
    log: list = field(default_factory=list)

    def _record(self, cmd: str, target, elapsed: float) -> None:
        self.clock += elapsed
        self.log.append({
            "t": round(self.clock, 6),
            "cmd": cmd,
            "target": None if target is None else [round(float(v), 6) for v in target],
            "elapsed": round(elapsed, 6),
            "encoders": list(self.state.encoders),
            "gripper": self.state.gripper,
        })

    def move(self, target_mm, speed: float | None = None, cmd: str = "move") -> float:
        self.state, elapsed = move_to(self.state, target_mm, speed or self.profile.nominal_speed, self.profile)
        self._record(cmd, target_mm, elapsed)
        return elapsed

    def move_by(self, delta_mm, speed: float | None = None, cmd: str = "move") -> float:
        return self.move(self.state.position_mm + np.asarray(delta_mm, float), speed, cmd)

    def event(self, cmd: str, elapsed: float) -> float:
        self._record(cmd, None, elapsed)
        return elapsed

    def telemetry_lines(self) -> list[str]:
        return [json.dumps(entry, sort_keys=True) for entry in self.log]
