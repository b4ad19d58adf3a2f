"""Task definitions: objects, seeded placement ranges, and success thresholds.

The seven tasks mirror the usual tabletop benchmark set at desk scale.
Success thresholds are approximations chosen for this simulator, not values
taken from any external benchmark; all of them live in TaskSpec.params so
callers can override.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import AxisTriple, Obb

TASK_NAMES = (
    "lift_can",
    "move_near",
    "stack_cube",
    "put_carrot_on_plate",
    "put_spoon_on_towel",
    "drawer_open",
    "drawer_close",
)

TASK_TEXTS = {
    "lift_can": "lift the coke can",
    "move_near": "move the red block near the orange",
    "stack_cube": "stack the green cube onto the yellow cube",
    "put_carrot_on_plate": "put the carrot on the plate",
    "put_spoon_on_towel": "put the spoon on the towel",
    "drawer_open": "open the drawer",
    "drawer_close": "close the drawer",
}

# thresholds are labeled approximations, configurable per TaskSpec
DEFAULT_PARAMS = {
    "lift_can": {"lift_height": 0.10},
    "move_near": {"near_distance": 0.05},
    "stack_cube": {"support_gap": 0.005, "footprint_scale": 0.5},
    "put_carrot_on_plate": {"support_gap": 0.005, "footprint_scale": 1.0},
    "put_spoon_on_towel": {"support_gap": 0.005, "footprint_scale": 1.0},
    "drawer_open": {"open_joint": 0.12},
    "drawer_close": {"closed_joint": 0.01},
}


@dataclass(frozen=True)
class TaskSpec:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in TASK_NAMES:
            raise ValueError(f"unknown task {self.name!r}; expected one of {TASK_NAMES}")
        merged = dict(DEFAULT_PARAMS[self.name])
        merged.update(self.params)
        object.__setattr__(self, "params", merged)

    @property
    def text(self) -> str:
        return TASK_TEXTS[self.name]


def _rz(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def standing_obb(center_xy, half_lbn, yaw: float) -> Obb:
    """Upright box: longitudinal +z, binormal/normal horizontal, resting on the table."""
    rot = _rz(yaw)
    lon = np.array([0.0, 0.0, 1.0])
    binorm = rot @ np.array([1.0, 0.0, 0.0])
    center = np.array([center_xy[0], center_xy[1], half_lbn[0]])
    return Obb(center, np.asarray(half_lbn, dtype=float),
               AxisTriple(lon, binorm, np.cross(binorm, lon)))


def lying_obb(center_xy, half_lbn, yaw: float) -> Obb:
    """Box lying flat: longitudinal horizontal, normal +z."""
    rot = _rz(yaw)
    lon = rot @ np.array([1.0, 0.0, 0.0])
    binorm = rot @ np.array([0.0, -1.0, 0.0])
    center = np.array([center_xy[0], center_xy[1], half_lbn[2]])
    return Obb(center, np.asarray(half_lbn, dtype=float),
               AxisTriple(lon, binorm, np.cross(binorm, lon)))


def bar_obb(center, half_lbn) -> Obb:
    """Horizontal bar along +y (drawer handle)."""
    lon = np.array([0.0, 1.0, 0.0])
    binorm = np.array([1.0, 0.0, 0.0])
    return Obb(np.asarray(center, dtype=float), np.asarray(half_lbn, dtype=float),
               AxisTriple(lon, binorm, np.cross(binorm, lon)))


@dataclass
class ObjectBlueprint:
    id: str
    part_labels: list
    obb: Obb
    color: tuple
    kind: str = "rigid"
    fixed: bool = False
    graspable: bool = True


def _place_apart(rng: np.random.Generator, x_range, y_range, count: int,
                 min_dist: float) -> list[np.ndarray]:
    """Rejection-sample xy positions with a minimum pairwise separation."""
    placed: list[np.ndarray] = []
    while len(placed) < count:
        p = np.array([rng.uniform(*x_range), rng.uniform(*y_range)])
        if all(np.linalg.norm(p - q) >= min_dist for q in placed):
            placed.append(p)
    return placed


def build_objects(task: TaskSpec, rng: np.random.Generator):
    """Seeded object blueprints plus drawer joint info (or None)."""
    name = task.name
    if name == "lift_can":
        (p,) = _place_apart(rng, (-0.12, 0.08), (-0.15, 0.15), 1, 0.0)
        yaw = rng.uniform(-math.pi, math.pi)
        return [
            ObjectBlueprint("coke_can", ["coke can"],
                            standing_obb(p, (0.0605, 0.033, 0.030), yaw),
                            (205, 32, 44)),
        ], None

    if name == "move_near":
        # horizontal halves kept small enough that side-by-side placement
        # stays inside the near-distance threshold at any yaw
        pts = _place_apart(rng, (-0.12, 0.10), (-0.18, 0.18), 3, 0.12)
        yaws = rng.uniform(-math.pi, math.pi, size=3)
        return [
            ObjectBlueprint("red_block", ["red block"],
                            standing_obb(pts[0], (0.024, 0.016, 0.0145), yaws[0]),
                            (210, 45, 45)),
            ObjectBlueprint("orange", ["orange"],
                            standing_obb(pts[1], (0.021, 0.017, 0.0155), yaws[1]),
                            (240, 150, 25)),
            ObjectBlueprint("blue_block", ["blue block"],
                            standing_obb(pts[2], (0.020, 0.015, 0.0135), yaws[2]),
                            (50, 90, 210)),
        ], None

    if name == "stack_cube":
        pts = _place_apart(rng, (-0.12, 0.10), (-0.16, 0.16), 2, 0.13)
        yaws = rng.uniform(-0.5, 0.5, size=2)
        return [
            ObjectBlueprint("green_cube", ["green cube"],
                            standing_obb(pts[0], (0.026, 0.025, 0.0245), yaws[0]),
                            (55, 185, 70)),
            ObjectBlueprint("yellow_cube", ["yellow cube"],
                            standing_obb(pts[1], (0.0265, 0.0255, 0.025), yaws[1]),
                            (235, 212, 48)),
        ], None

    if name in ("put_carrot_on_plate", "put_spoon_on_towel"):
        pts = _place_apart(rng, (-0.12, 0.10), (-0.18, 0.18), 2, 0.20)
        yaw = rng.uniform(-0.7, 0.7)
        if name == "put_carrot_on_plate":
            source = ObjectBlueprint("carrot", ["carrot"],
                                     lying_obb(pts[0], (0.050, 0.013, 0.012), yaw),
                                     (236, 128, 32))
            target = ObjectBlueprint("plate", ["plate"],
                                     lying_obb(pts[1], (0.070, 0.068, 0.006), 0.0),
                                     (238, 238, 238), graspable=False)
        else:
            source = ObjectBlueprint("spoon", ["spoon"],
                                     lying_obb(pts[0], (0.052, 0.012, 0.007), yaw),
                                     (186, 186, 196))
            target = ObjectBlueprint("towel", ["towel"],
                                     lying_obb(pts[1], (0.075, 0.072, 0.004), 0.0),
                                     (72, 132, 222), graspable=False)
        return [source, target], None

    if name in ("drawer_open", "drawer_close"):
        bx = rng.uniform(0.22, 0.30)
        by = rng.uniform(-0.06, 0.06)
        if name == "drawer_open":
            value = 0.0
        else:
            value = rng.uniform(0.13, 0.15)
        axis = np.array([-1.0, 0.0, 0.0])  # sliding toward the robot opens
        body_c = np.array([bx, by, 0.088])
        slider_closed = body_c + np.array([-0.010, 0.0, -0.040])
        handle_closed = np.array([bx - 0.108, by, 0.055])
        shift = axis * value
        body = ObjectBlueprint(
            "cabinet_body", ["cabinet body"],
            Obb(body_c, (0.110, 0.092, 0.088),
                AxisTriple(np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0]),
                           np.array([0.0, 0.0, 1.0]))),
            (152, 112, 72), fixed=True, graspable=False)
        slider = ObjectBlueprint(
            "drawer", ["drawer"],
            Obb(slider_closed + shift, (0.095, 0.075, 0.035),
                AxisTriple(np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0]),
                           np.array([0.0, 0.0, 1.0]))),
            (122, 86, 56), kind="drawer", graspable=False)
        handle = ObjectBlueprint(
            "drawer_handle", ["drawer handle"],
            bar_obb(handle_closed + shift, (0.035, 0.008, 0.006)),
            (62, 62, 66), kind="drawer", graspable=True)
        joint = {
            "axis": axis,
            "value": value,
            "limit": 0.16,
            "part_ids": ["drawer", "drawer_handle"],
        }
        return [body, slider, handle], joint

    raise ValueError(f"unknown task {name!r}")
