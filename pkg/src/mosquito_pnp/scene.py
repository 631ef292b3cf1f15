"""Workcell geometry, randomized specimens and the drag model.

All lengths are millimetres in the robot's world frame: ``x`` runs along the
cartridge groove from the cup toward the blades, ``y`` is lateral and ``z`` is
up.  A specimen is a planar chain of six vertices

    proboscis tip, proboscis/head junction, neck start, neck end,
    thorax/abdomen joint, abdomen tip

with one scalar lift height per vertex.  Scenes are immutable; every operation
returns a new value.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation

TIP, JUNCTION, NECK_START, NECK_END, THORAX_END, TAIL = range(6)

LEFT, RIGHT = "left", "right"


@dataclass(frozen=True)
class WorkcellLayout:
    """Fixed geometry of the cup, cartridge, blades and cameras."""

    cup_radius: float = 10.0
    cup_center_to_blades: float = 23.0
    mesh_pitch: float = 0.750
    slot_width: float = 1.25
    slot_length: float = 3.0
    slot_depth: float = 1.5
    blade_thickness: float = 0.050
    notch_width: float = 0.5
    notch_depth: float = 1.0
    overhead_resolution: tuple[int, int] = (2560, 1922)
    onboard_resolution: tuple[int, int] = (1600, 1200)
    overhead_scale_um: float = 20.0
    onboard_scale_um: float = 12.0
    # placement of the fixture inside the 100 mm robot travel
    cup_center: tuple[float, float] = (40.0, 50.0)
    surface_z: float = 20.0
    overhead_view_center: tuple[float, float] = (48.0, 50.0)
    overhead_kappa: float = 1e-7
    onboard_mount_offset: tuple[float, float] = (-4.0, 0.0)

    def __post_init__(self):
        lengths = {
            "cup_radius": self.cup_radius,
            "cup_center_to_blades": self.cup_center_to_blades,
            "mesh_pitch": self.mesh_pitch,
            "slot_width": self.slot_width,
            "slot_length": self.slot_length,
            "slot_depth": self.slot_depth,
            "blade_thickness": self.blade_thickness,
            "notch_width": self.notch_width,
            "notch_depth": self.notch_depth,
            "overhead_scale_um": self.overhead_scale_um,
            "onboard_scale_um": self.onboard_scale_um,
        }
        for name, value in lengths.items():
            if not value > 0:
                raise ConfigurationError(f"{name} must be strictly positive, got {value}")
        if not self.notch_width < self.slot_width:
            raise ConfigurationError("notch_width must be smaller than slot_width")
        if not self.blade_thickness < self.notch_width:
            raise ConfigurationError("blade_thickness must be smaller than notch_width")
        for name in ("overhead_resolution", "onboard_resolution"):
            w, h = getattr(self, name)
            if w <= 0 or h <= 0:
                raise ConfigurationError(f"{name} must be positive")
        # json round-trips give lists; keep the dataclass hashable
        for name in ("overhead_resolution", "onboard_resolution"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        for name in ("cup_center", "overhead_view_center", "onboard_mount_offset"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    @property
    def blade_front_x(self) -> float:
        """x of the stationary blade face nearest the cup."""
        return self.cup_center[0] + self.cup_center_to_blades

    @property
    def cut_plane_x(self) -> float:
        """Interface between the two blades; centre of the cut zone."""
        return self.blade_front_x + self.blade_thickness

    @property
    def slot_axis_y(self) -> float:
        return self.cup_center[1]

    @property
    def neck_window(self) -> float:
        """Half-width of the longitudinal window the neck centre must hit."""
        return (NOMINAL_NECK_LENGTH - 2 * self.blade_thickness) / 2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "WorkcellLayout":
        _reject_unknown(cls, data)
        return cls(**data)


NOMINAL_NECK_LENGTH = 0.3


@dataclass(frozen=True)
class SpecimenVariability:
    """Sampling ranges for specimen anatomy and pose, each ``(min, max)``."""

    proboscis_length: tuple[float, float] = (1.85, 2.15)
    head_length: tuple[float, float] = (0.45, 0.55)
    thorax_length: tuple[float, float] = (1.2, 1.4)
    abdomen_length: tuple[float, float] = (2.4, 2.8)
    heading_deg: tuple[float, float] = (-45.0, 45.0)
    position_radius: tuple[float, float] = (0.0, 5.0)
    # joint bends in degrees, applied walking from the proboscis backward
    proboscis_bend_deg: tuple[float, float] = (-10.0, 10.0)
    neck_bend_deg: tuple[float, float] = (-12.0, 12.0)
    abdomen_bend_deg: tuple[float, float] = (-20.0, 20.0)
    # neck offset toward the side the body rests on
    lying_side_bend_deg: float = 6.0
    random_lying_side: bool = True

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (tuple, list)):
                lo, hi = (float(v) for v in value)
                if lo > hi:
                    raise ConfigurationError(f"{f.name}: min {lo} > max {hi}")
                object.__setattr__(self, f.name, (lo, hi))
        if self.position_radius[0] < 0:
            raise ConfigurationError("position_radius must be non-negative")
        if self.heading_deg[0] < -90 or self.heading_deg[1] > 90:
            raise ConfigurationError("heading range must lie within +-90 degrees")

    @classmethod
    def zero(cls) -> "SpecimenVariability":
        """Degenerate ranges: a nominal straight specimen at the cup centre."""
        return cls(
            proboscis_length=(2.0, 2.0),
            head_length=(0.5, 0.5),
            thorax_length=(1.3, 1.3),
            abdomen_length=(2.6, 2.6),
            heading_deg=(0.0, 0.0),
            position_radius=(0.0, 0.0),
            proboscis_bend_deg=(0.0, 0.0),
            neck_bend_deg=(0.0, 0.0),
            abdomen_bend_deg=(0.0, 0.0),
            lying_side_bend_deg=0.0,
            random_lying_side=False,
        )

    @classmethod
    def with_cone(cls, half_angle_deg: float, **kwargs) -> "SpecimenVariability":
        return cls(heading_deg=(-half_angle_deg, half_angle_deg), **kwargs)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "SpecimenVariability":
        _reject_unknown(cls, data)
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


@dataclass(frozen=True)
class Appendage:
    """A leg or wing stroke expressed in the thorax frame (x forward, y left)."""

    points: tuple[tuple[float, float], ...]
    width: float
    kind: str = "leg"


@dataclass(frozen=True)
class MosquitoSpecimen:
    chain: tuple[tuple[float, float], ...]
    proboscis_length: float
    head_length: float
    thorax_length: float
    abdomen_length: float
    lying_side: str = RIGHT
    heading: float = 0.0
    lift: tuple[float, ...] = (0.0,) * 6
    proboscis_diameter: float = 0.1
    neck_length: float = NOMINAL_NECK_LENGTH
    head_width: float = 0.6
    neck_width: float = 0.2
    thorax_width: float = 1.0
    abdomen_width: float = 0.75
    bends_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)
    appendages: tuple[Appendage, ...] = ()
    specimen_id: int = 0

    def __post_init__(self):
        if len(self.chain) != 6:
            raise ContractViolation("a specimen chain has exactly six vertices")
        if not self.proboscis_length > 0:
            raise ContractViolation("proboscis_length must be positive")
        object.__setattr__(self, "chain", tuple((float(x), float(y)) for x, y in self.chain))
        object.__setattr__(self, "lift", tuple(float(v) for v in self.lift))

    @property
    def points(self) -> np.ndarray:
        return np.array(self.chain, dtype=float)

    @property
    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)

    @property
    def neck_midpoint(self) -> np.ndarray:
        p = self.points
        return (p[NECK_START] + p[NECK_END]) / 2

    @property
    def proboscis_centroid(self) -> np.ndarray:
        p = self.points
        return (p[TIP] + p[JUNCTION]) / 2

    @property
    def thorax_center(self) -> np.ndarray:
        p = self.points
        return (p[NECK_END] + p[THORAX_END]) / 2

    @property
    def body_heading(self) -> float:
        """Direction (rad) from the abdomen tip toward the neck."""
        p = self.points
        d = p[NECK_END] - p[TAIL]
        return math.atan2(d[1], d[0])

    def point_at(self, s: float) -> np.ndarray:
        """Point on the proboscis at arc fraction ``s`` (0 = tip, 1 = junction)."""
        p = self.points
        return p[TIP] + s * (p[JUNCTION] - p[TIP])

    def project_on_proboscis(self, xy) -> tuple[float, float]:
        """Nearest arc fraction on the proboscis axis and the distance to it."""
        p = self.points
        a, b = p[TIP], p[JUNCTION]
        d = b - a
        s = float(np.clip(np.dot(np.asarray(xy, float) - a, d) / np.dot(d, d), 0.0, 1.0))
        dist = float(np.linalg.norm(a + s * d - np.asarray(xy, float)))
        return s, dist

    def neck_arc_from(self, s: float) -> float:
        """Chain arc length from proboscis fraction ``s`` to the neck midpoint."""
        return (1 - s) * self.proboscis_length + self.head_length + self.neck_length / 2

    def translated(self, delta) -> "MosquitoSpecimen":
        d = np.asarray(delta, float)
        return dataclasses.replace(self, chain=tuple(map(tuple, self.points + d)))

    def with_chain(self, points: np.ndarray, lift: Sequence[float] | None = None) -> "MosquitoSpecimen":
        kwargs = {"chain": tuple(map(tuple, np.asarray(points, float)))}
        if lift is not None:
            kwargs["lift"] = tuple(lift)
        return dataclasses.replace(self, **kwargs)

    def thorax_frame(self) -> tuple[np.ndarray, np.ndarray]:
        """Origin and 2x2 rotation of the thorax frame used for appendages."""
        p = self.points
        fwd = p[NECK_END] - p[THORAX_END]
        ang = math.atan2(fwd[1], fwd[0])
        c, s = math.cos(ang), math.sin(ang)
        return self.thorax_center, np.array([[c, -s], [s, c]])

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["chain"] = [list(p) for p in self.chain]
        d["lift"] = list(self.lift)
        d["bends_deg"] = list(self.bends_deg)
        d["appendages"] = [
            {"points": [list(q) for q in a.points], "width": a.width, "kind": a.kind}
            for a in self.appendages
        ]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "MosquitoSpecimen":
        _reject_unknown(cls, data)
        data = dict(data)
        data["chain"] = tuple(tuple(p) for p in data["chain"])
        data["lift"] = tuple(data.get("lift", (0.0,) * 6))
        data["bends_deg"] = tuple(data.get("bends_deg", (0.0, 0.0, 0.0)))
        data["appendages"] = tuple(
            Appendage(points=tuple(tuple(q) for q in a["points"]), width=a["width"], kind=a["kind"])
            for a in data.get("appendages", ())
        )
        return cls(**data)


@dataclass(frozen=True)
class Scene:
    """A layout plus at most one specimen and the state of the blades."""

    layout: WorkcellLayout = field(default_factory=WorkcellLayout)
    specimen: MosquitoSpecimen | None = None
    flipped: bool = False
    head_removed: bool = False
    seed: int | None = None

    def with_specimen(self, specimen: MosquitoSpecimen | None) -> "Scene":
        return dataclasses.replace(self, specimen=specimen)

    def to_dict(self) -> dict:
        return {
            "schema": "mosquito_pnp.scene/1",
            "layout": self.layout.to_dict(),
            "specimen": None if self.specimen is None else self.specimen.to_dict(),
            "flipped": self.flipped,
            "head_removed": self.head_removed,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scene":
        if data.get("schema") != "mosquito_pnp.scene/1":
            raise ConfigurationError(f"unsupported scene schema {data.get('schema')!r}")
        spec = data.get("specimen")
        return cls(
            layout=WorkcellLayout.from_dict(data["layout"]),
            specimen=None if spec is None else MosquitoSpecimen.from_dict(spec),
            flipped=bool(data.get("flipped", False)),
            head_removed=bool(data.get("head_removed", False)),
            seed=data.get("seed"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "Scene":
        return cls.from_dict(json.loads(text))


def _reject_unknown(cls, data: dict) -> None:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")


def _uniform(rng: np.random.Generator, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    if lo == hi:
        return lo
    return float(rng.uniform(lo, hi))


def _unit(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


def _appendages(side: float, rng: np.random.Generator, jitter: bool) -> tuple[Appendage, ...]:
    """Six legs and two folded wings in the thorax frame."""
    out = []
    # (attach x, first segment angle, knee angle) per leg pair, degrees
    base = [(0.35, 60.0, 40.0), (0.0, 95.0, -30.0), (-0.35, 130.0, -35.0)]
    for lateral in (1.0, -1.0):
        for ax, a1, a2 in base:
            d1 = a1 + (rng.uniform(-15, 15) if jitter else 0.0)
            d2 = a2 + (rng.uniform(-15, 15) if jitter else 0.0)
            t1 = math.radians(d1) * lateral
            t2 = t1 + math.radians(d2) * lateral
            p0 = np.array([ax, 0.3 * lateral])
            p1 = p0 + 1.6 * _unit(t1)
            p2 = p1 + 2.2 * _unit(t2)
            out.append(Appendage(points=tuple(map(tuple, (p0, p1, p2))), width=0.05, kind="leg"))
    for lateral in (1.0, -1.0):
        tilt = 0.12 * lateral * side
        p0 = np.array([0.0, 0.15 * lateral])
        p1 = p0 + 2.9 * _unit(math.pi - tilt)
        out.append(Appendage(points=(tuple(p0), tuple(p1)), width=0.45, kind="wing"))
    return tuple(out)


def sample_specimen(
    rng_seed: int,
    layout: WorkcellLayout | None = None,
    variability: SpecimenVariability | None = None,
) -> MosquitoSpecimen:
    """Draw a specimen resting on the cup; deterministic for a given seed."""
    layout = layout or WorkcellLayout()
    var = variability or SpecimenVariability()
    rng = np.random.default_rng(rng_seed)

    probl = _uniform(rng, var.proboscis_length)
    headl = _uniform(rng, var.head_length)
    thorl = _uniform(rng, var.thorax_length)
    abdl = _uniform(rng, var.abdomen_length)
    heading = math.radians(_uniform(rng, var.heading_deg))
    # area-uniform position inside the annulus
    r_lo, r_hi = var.position_radius
    radius = math.sqrt(rng.uniform(r_lo**2, r_hi**2)) if r_hi > 0 else 0.0
    theta = float(rng.uniform(0, 2 * math.pi))
    side = (RIGHT if rng.random() < 0.5 else LEFT) if var.random_lying_side else RIGHT
    sgn = 1.0 if side == RIGHT else -1.0
    bend_p = math.radians(_uniform(rng, var.proboscis_bend_deg))
    bend_n = math.radians(_uniform(rng, var.neck_bend_deg) + sgn * var.lying_side_bend_deg)
    bend_a = math.radians(_uniform(rng, var.abdomen_bend_deg))
    jitter = var != SpecimenVariability.zero()

    # walk backward from the proboscis tip; each direction points tail-ward
    back = heading + math.pi
    d_prob = back
    d_head = d_prob + bend_p
    d_neck = d_head + bend_n
    d_thor = d_neck
    d_abd = d_thor + bend_a
    pts = [np.zeros(2)]
    for length, direction in (
        (probl, d_prob),
        (headl, d_head),
        (NOMINAL_NECK_LENGTH, d_neck),
        (thorl, d_thor),
        (abdl, d_abd),
    ):
        pts.append(pts[-1] + length * _unit(direction))
    pts = np.array(pts)
    thorax_center = (pts[NECK_END] + pts[THORAX_END]) / 2
    target = np.array(layout.cup_center) + radius * _unit(theta)
    pts = pts + (target - thorax_center)

    return MosquitoSpecimen(
        chain=tuple(map(tuple, pts)),
        proboscis_length=probl,
        head_length=headl,
        thorax_length=thorl,
        abdomen_length=abdl,
        lying_side=side,
        heading=heading,
        bends_deg=tuple(math.degrees(b) for b in (bend_p, bend_n, bend_a)),
        appendages=_appendages(sgn, rng, jitter),
        specimen_id=int(rng_seed),
    )


def make_scene(seed: int | None, layout: WorkcellLayout | None = None,
               variability: SpecimenVariability | None = None, empty: bool = False) -> Scene:
    layout = layout or WorkcellLayout()
    specimen = None if empty else sample_specimen(seed or 0, layout, variability)
    return Scene(layout=layout, specimen=specimen, seed=seed)


def _follow(chain: list[list[float]], lengths: Sequence[float]) -> None:
    """Follow-the-leader update in place: vertex 0 has already moved."""
    for i in range(1, len(chain)):
        px, py = chain[i - 1]
        dx, dy = chain[i][0] - px, chain[i][1] - py
        n = math.hypot(dx, dy)
        if n == 0.0:
            continue
        k = lengths[i - 1] / n
        chain[i][0] = px + dx * k
        chain[i][1] = py + dy * k


def apply_drag(scene: Scene, grasp_point, path: Iterable, step: float = 0.01) -> Scene:
    """Pull the specimen by a point on its proboscis along ``path``.

    The proboscis ahead of the grasp point is held rigidly by the jaws; every
    vertex behind it follows its predecessor at fixed distance.  ``path`` lists
    the waypoints the grasp point visits after its current position.
    """
    spec = scene.specimen
    if spec is None:
        raise ContractViolation("no specimen to drag")
    s, dist = spec.project_on_proboscis(grasp_point)
    if dist > spec.proboscis_diameter / 2 + 1e-9:
        raise ContractViolation(f"grasp point is {dist:.4f} mm off the proboscis")
    waypoints = [np.asarray(w, float)[:2] for w in path]
    p = spec.points
    g = spec.point_at(s)
    if all(np.allclose(w, g, atol=1e-12) for w in waypoints):
        return scene

    # chain used for following: grasp, junction, neck start, ..., tail
    chain = [list(g)] + [list(q) for q in p[JUNCTION:]]
    lengths = [(1 - s) * spec.proboscis_length] + list(np.linalg.norm(np.diff(p[JUNCTION:], axis=0), axis=1))
    if lengths[0] == 0.0:
        # grasped exactly at the junction; the head leads the chain
        chain = chain[1:]
        lengths = lengths[1:]
        lead_has_gap = False
    else:
        lead_has_gap = True

    cur = np.array(chain[0])
    for w in waypoints:
        seg = w - cur
        n = math.hypot(*seg)
        if n == 0:
            continue
        k = max(1, math.ceil(n / step))
        for j in range(1, k + 1):
            q = cur + seg * (j / k)
            chain[0][0], chain[0][1] = q
            _follow(chain, lengths)
        cur = w.copy()

    chain = np.array(chain)
    new = p.copy()
    if lead_has_gap:
        new[JUNCTION:] = chain[1:]
        back = chain[1] - chain[0]
        back /= np.linalg.norm(back)
        new[TIP] = chain[0] - back * s * spec.proboscis_length
    else:
        new[JUNCTION:] = chain
        lead = new[JUNCTION] - new[NECK_START]
        lead /= np.linalg.norm(lead)
        new[TIP] = new[JUNCTION] + lead * spec.proboscis_length
    return scene.with_specimen(spec.with_chain(new))
