"""Deterministic kinematic tabletop world.

The gripper is a floating end effector: two finger boxes hanging off a tool
center point.  apply_goal moves it along a straight line in fixed sub-steps,
drags any rigidly attached object along, sweeps standing objects over
(toppling them), and handles open/close as grasp/release.  There is no
dynamics beyond release-snap-to-support.

Everything is a pure function of (task, seed, goal sequence): identical
inputs give bit-identical states, snapshots and outcomes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidGoalAxes, OutOfWorkspace, ParallelAxes, ZeroAxis
from ..geometry import (
    AxisTriple,
    Obb,
    obb_intersects,
    obb_penetration,
    orthonormalize,
)
from ..protocol import GripperGoal, ObjectPartState, SceneInfo
from .tasks import TaskSpec, build_objects

# gripper geometry (meters)
FINGER_LENGTH = 0.060
FINGER_THICKNESS = 0.012
FINGER_WIDTH = 0.024
OPEN_SEPARATION = 0.080   # inner-face gap between fingers when open
GRASP_RADIUS = 0.030
PERP_TOL_DEG = 20.0       # lateral axis vs object longitudinal tolerance
SUBSTEPS = 50
TOPPLE_UPRIGHT_DOT = 0.70  # |longitudinal . z| above this counts as standing
SURFACE_GRID = 5           # per-face grid resolution; 6 * 5^2 = 150 points

WORKSPACE_LO = np.array([-0.40, -0.40, 0.0])
WORKSPACE_HI = np.array([0.45, 0.40, 0.60])

GRIPPER_HOME_POS = np.array([-0.25, 0.0, 0.30])
GRIPPER_HOME_LON = np.array([0.0, 0.0, -1.0])
GRIPPER_HOME_BIN = np.array([0.0, 1.0, 0.0])

STATE_VERSION = 1


def _surface_grid_local(k: int = SURFACE_GRID) -> np.ndarray:
    """Symmetric per-face grid on the unit box surface.

    Symmetry makes the sampled covariance exactly diagonal in the box frame,
    so principal-axis extraction recovers the box axes without sampling
    noise.
    """
    ticks = np.linspace(-1.0 + 1.0 / k, 1.0 - 1.0 / k, k)
    u, v = np.meshgrid(ticks, ticks)
    uv = np.column_stack([u.ravel(), v.ravel()])
    pts = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            face = np.empty((uv.shape[0], 3))
            face[:, axis] = sign
            other = [i for i in range(3) if i != axis]
            face[:, other[0]] = uv[:, 0]
            face[:, other[1]] = uv[:, 1]
            pts.append(face)
    return np.vstack(pts)


_LOCAL_SURFACE = _surface_grid_local()


@dataclass
class SimObject:
    id: str
    part_labels: list[str]
    obb: Obb
    color: tuple[int, int, int]
    kind: str = "rigid"            # rigid | drawer
    fixed: bool = False
    graspable: bool = True
    grasped: bool = False
    toppled: bool = False

    @property
    def label(self) -> str:
        return " ".join(self.part_labels)

    @property
    def surface_points(self) -> np.ndarray:
        m = self.obb.axis_matrix()
        return self.obb.center + (_LOCAL_SURFACE * self.obb.half_extents) @ m.T

    def top_z(self) -> float:
        return float(self.obb.center[2] + 0.5 * self.obb.extent_along([0.0, 0.0, 1.0]))

    def bottom_z(self) -> float:
        return float(self.obb.center[2] - 0.5 * self.obb.extent_along([0.0, 0.0, 1.0]))

    def xy_half_size(self) -> np.ndarray:
        return np.array([
            0.5 * self.obb.extent_along([1.0, 0.0, 0.0]),
            0.5 * self.obb.extent_along([0.0, 1.0, 0.0]),
        ])


@dataclass
class GripperState:
    position: np.ndarray
    longitudinal: np.ndarray
    binormal: np.ndarray
    closed: bool = False
    attached_object: str | None = None
    # object pose relative to the gripper frame, frozen at grasp time
    attach_rot: np.ndarray | None = None
    attach_offset: np.ndarray | None = None

    def frame(self) -> np.ndarray:
        """Right-handed rotation with columns (longitudinal, binormal, l x b)."""
        return np.column_stack(
            [self.longitudinal, self.binormal,
             np.cross(self.longitudinal, self.binormal)]
        )

    def finger_obbs(self, separation_half: float) -> list[Obb]:
        lon = self.longitudinal
        binorm = self.binormal
        normal = np.cross(binorm, lon)
        axes = AxisTriple(lon, binorm, normal)
        half = np.array([FINGER_LENGTH / 2, FINGER_THICKNESS / 2, FINGER_WIDTH / 2])
        offset = separation_half + FINGER_THICKNESS / 2
        base = self.position - lon * (FINGER_LENGTH / 2)
        return [
            Obb(base + binorm * offset, half, axes),
            Obb(base - binorm * offset, half, axes),
        ]


@dataclass
class DrawerJoint:
    axis: np.ndarray
    value: float
    limit: float
    part_ids: list[str]


@dataclass
class StepOutcome:
    reached: bool
    collision_events: list[tuple[str, float]] = field(default_factory=list)
    grasp_change: tuple[str, str] | None = None  # ("grasped"|"released", object id)
    toppled: list[str] = field(default_factory=list)


@dataclass
class WorldState:
    objects: list[SimObject]
    gripper: GripperState
    task: TaskSpec
    seed: int
    round: int = 0
    workspace_lo: np.ndarray = field(default_factory=lambda: WORKSPACE_LO.copy())
    workspace_hi: np.ndarray = field(default_factory=lambda: WORKSPACE_HI.copy())
    drawer: DrawerJoint | None = None

    def find(self, object_id: str) -> SimObject:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise KeyError(object_id)

    def attached(self) -> SimObject | None:
        if self.gripper.attached_object is None:
            return None
        return self.find(self.gripper.attached_object)

    # --- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        def vec(v):
            return [float(x) for x in np.asarray(v).ravel()]

        g = self.gripper
        return {
            "version": STATE_VERSION,
            "task": {"name": self.task.name, "params": self.task.params},
            "seed": int(self.seed),
            "round": int(self.round),
            "workspace": {"lo": vec(self.workspace_lo), "hi": vec(self.workspace_hi)},
            "gripper": {
                "position": vec(g.position),
                "longitudinal": vec(g.longitudinal),
                "binormal": vec(g.binormal),
                "closed": g.closed,
                "attached_object": g.attached_object,
                "attach_rot": None if g.attach_rot is None else vec(g.attach_rot),
                "attach_offset": None if g.attach_offset is None else vec(g.attach_offset),
            },
            "drawer": None if self.drawer is None else {
                "axis": vec(self.drawer.axis),
                "value": float(self.drawer.value),
                "limit": float(self.drawer.limit),
                "part_ids": list(self.drawer.part_ids),
            },
            "objects": [
                {
                    "id": o.id,
                    "part_labels": list(o.part_labels),
                    "color": list(o.color),
                    "kind": o.kind,
                    "fixed": o.fixed,
                    "graspable": o.graspable,
                    "grasped": o.grasped,
                    "toppled": o.toppled,
                    "center": vec(o.obb.center),
                    "half_extents": vec(o.obb.half_extents),
                    "longitudinal": vec(o.obb.axes.longitudinal),
                    "binormal": vec(o.obb.axes.binormal),
                    "normal": vec(o.obb.axes.normal),
                }
                for o in self.objects
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_dict(data: dict) -> "WorldState":
        if data.get("version") != STATE_VERSION:
            raise ValueError(f"unsupported world state version {data.get('version')!r}")
        task = TaskSpec(data["task"]["name"], data["task"]["params"])
        objects = []
        for od in data["objects"]:
            axes = AxisTriple(
                np.array(od["longitudinal"]),
                np.array(od["binormal"]),
                np.array(od["normal"]),
            )
            objects.append(
                SimObject(
                    id=od["id"],
                    part_labels=list(od["part_labels"]),
                    obb=Obb(np.array(od["center"]), np.array(od["half_extents"]), axes),
                    color=tuple(od["color"]),
                    kind=od["kind"],
                    fixed=od["fixed"],
                    graspable=od["graspable"],
                    grasped=od["grasped"],
                    toppled=od["toppled"],
                )
            )
        gd = data["gripper"]
        gripper = GripperState(
            position=np.array(gd["position"]),
            longitudinal=np.array(gd["longitudinal"]),
            binormal=np.array(gd["binormal"]),
            closed=gd["closed"],
            attached_object=gd["attached_object"],
            attach_rot=None if gd["attach_rot"] is None else np.array(gd["attach_rot"]).reshape(3, 3),
            attach_offset=None if gd["attach_offset"] is None else np.array(gd["attach_offset"]),
        )
        dd = data.get("drawer")
        drawer = None if dd is None else DrawerJoint(
            axis=np.array(dd["axis"]), value=dd["value"],
            limit=dd["limit"], part_ids=list(dd["part_ids"]),
        )
        return WorldState(
            objects=objects,
            gripper=gripper,
            task=task,
            seed=data["seed"],
            round=data["round"],
            workspace_lo=np.array(data["workspace"]["lo"]),
            workspace_hi=np.array(data["workspace"]["hi"]),
            drawer=drawer,
        )


def world_init(task: TaskSpec | str, seed: int) -> WorldState:
    """Seeded deterministic world; equal (task, seed) gives bit-identical states."""
    if isinstance(task, str):
        task = TaskSpec(task)
    rng = np.random.default_rng(seed)
    blueprints, joint = build_objects(task, rng)
    objects = [
        SimObject(
            id=bp.id, part_labels=bp.part_labels, obb=bp.obb, color=bp.color,
            kind=bp.kind, fixed=bp.fixed, graspable=bp.graspable,
        )
        for bp in blueprints
    ]
    gripper = GripperState(
        position=GRIPPER_HOME_POS.copy(),
        longitudinal=GRIPPER_HOME_LON.copy(),
        binormal=GRIPPER_HOME_BIN.copy(),
    )
    drawer = None
    if joint is not None:
        drawer = DrawerJoint(
            axis=joint["axis"], value=joint["value"],
            limit=joint["limit"], part_ids=joint["part_ids"],
        )
    return WorldState(objects=objects, gripper=gripper, task=task, seed=int(seed), drawer=drawer)


# --- scene snapshot ----------------------------------------------------------


def scene_snapshot(world: WorldState) -> SceneInfo:
    """Per-part quantitative state, axes recovered from surface points via PCA.

    The gripper is appended as a distinguished final entry; its normal axis
    is binormal x longitudinal (so the triple stays right-handed as defined;
    longitudinal x binormal is its negation).
    """
    from ..geometry import principal_axes  # local import keeps module load light

    parts: list[ObjectPartState] = []
    for obj in world.objects:
        axes = principal_axes(obj.surface_points)
        extents = np.array([
            obj.obb.extent_along(axes.longitudinal),
            obj.obb.extent_along(axes.binormal),
            obj.obb.extent_along(axes.normal),
        ])
        parts.append(
            ObjectPartState(
                label=obj.label,
                center=obj.obb.center.copy(),
                extents=extents,
                axes=axes,
            )
        )
    g = world.gripper
    sep_half = _separation_half(world)
    g_axes = AxisTriple(g.longitudinal, g.binormal, np.cross(g.binormal, g.longitudinal))
    parts.append(
        ObjectPartState(
            label="gripper",
            center=g.position.copy(),
            extents=np.array([
                FINGER_LENGTH,
                2.0 * (sep_half + FINGER_THICKNESS),
                FINGER_WIDTH,
            ]),
            axes=g_axes,
            is_gripper=True,
            gripper_closed=g.closed,
        )
    )
    return parts


def _separation_half(world: WorldState) -> float:
    g = world.gripper
    if not g.closed:
        return OPEN_SEPARATION / 2
    attached = world.attached()
    if attached is not None:
        return 0.5 * attached.obb.extent_along(g.binormal)
    return 0.0


# --- goal execution ----------------------------------------------------------


def _object_frame(obj: SimObject) -> np.ndarray:
    a = obj.obb.axes
    return np.column_stack([a.longitudinal, a.binormal,
                            np.cross(a.longitudinal, a.binormal)])


def _set_object_pose(obj: SimObject, center: np.ndarray, frame: np.ndarray) -> None:
    lon = frame[:, 0]
    binorm = frame[:, 1]
    obj.obb = Obb(center, obj.obb.half_extents,
                  AxisTriple(lon, binorm, np.cross(binorm, lon)))


def _topple(world: WorldState, obj: SimObject, push_dir: np.ndarray) -> None:
    """Snap a standing object to a lying pose along the push direction."""
    horiz = push_dir.copy()
    horiz[2] = 0.0
    n = np.linalg.norm(horiz)
    lon = horiz / n if n > 1e-9 else np.array([1.0, 0.0, 0.0])
    binorm = np.cross(lon, np.array([0.0, 0.0, 1.0]))
    frame = np.column_stack([lon, binorm, np.cross(lon, binorm)])
    center = obj.obb.center.copy()
    center[2] = float(obj.obb.half_extents[2])  # rest on the smallest extent
    _set_object_pose(obj, center, frame)
    obj.toppled = True


def _drop_to_support(world: WorldState, obj: SimObject) -> None:
    """Snap straight down until the object rests on the table or another top."""
    rest_z = 0.0
    cx, cy = obj.obb.center[0], obj.obb.center[1]
    bottom = obj.bottom_z()
    for other in world.objects:
        if other.id == obj.id:
            continue
        half = other.xy_half_size()
        if (abs(cx - other.obb.center[0]) <= half[0]
                and abs(cy - other.obb.center[1]) <= half[1]):
            top = other.top_z()
            if top <= bottom + 1e-6:
                rest_z = max(rest_z, top)
    drop = bottom - rest_z
    if drop > 0:
        center = obj.obb.center.copy()
        center[2] -= drop
        _set_object_pose(obj, center, _object_frame(obj))


def _perpendicular_enough(binormal: np.ndarray, obj: SimObject) -> bool:
    dot = abs(float(binormal @ obj.obb.axes.longitudinal))
    return dot <= np.cos(np.deg2rad(90.0 - PERP_TOL_DEG)) + 1e-12


def _try_grasp(world: WorldState) -> str | None:
    g = world.gripper
    best = None
    best_dist = GRASP_RADIUS
    for obj in world.objects:
        if obj.fixed or not obj.graspable:
            continue
        dist = float(np.linalg.norm(obj.obb.center - g.position))
        if dist <= best_dist and _perpendicular_enough(g.binormal, obj):
            best = obj
            best_dist = dist
    if best is None:
        return None
    frame = g.frame()
    g.attached_object = best.id
    g.attach_rot = frame.T @ _object_frame(best)
    g.attach_offset = frame.T @ (best.obb.center - g.position)
    best.grasped = True
    return best.id


def _release(world: WorldState) -> str | None:
    g = world.gripper
    if g.attached_object is None:
        return None
    obj = world.find(g.attached_object)
    obj.grasped = False
    released = obj.id
    g.attached_object = None
    g.attach_rot = None
    g.attach_offset = None
    if obj.kind != "drawer":  # drawer parts are held by the joint, not gravity
        _drop_to_support(world, obj)
    return released


def apply_goal(world: WorldState, goal: GripperGoal) -> StepOutcome:
    """Move the gripper to the goal pose and apply open/close semantics."""
    try:
        lon, binorm = orthonormalize(goal.longitudinal, goal.binormal)
    except (ParallelAxes, ZeroAxis) as exc:
        raise InvalidGoalAxes(str(exc)) from exc
    target = np.asarray(goal.position, dtype=float).reshape(3)
    if np.any(target < world.workspace_lo) or np.any(target > world.workspace_hi):
        raise OutOfWorkspace(f"goal position {target.tolist()} outside workspace")

    g = world.gripper
    attached = world.attached()
    drawer_drag = (
        attached is not None
        and world.drawer is not None
        and attached.id in world.drawer.part_ids
    )
    if drawer_drag:
        # motion is constrained to the joint axis; orientation is held
        disp = float((target - g.position) @ world.drawer.axis)
        allowed = float(np.clip(world.drawer.value + disp, 0.0, world.drawer.limit))
        delta = allowed - world.drawer.value
        target = g.position + world.drawer.axis * delta
        lon, binorm = g.longitudinal.copy(), g.binormal.copy()

    start_pos = g.position.copy()
    start_lon = g.longitudinal.copy()
    start_bin = g.binormal.copy()
    move_dir = target - start_pos
    sep_half = _separation_half(world)

    collisions: dict[str, float] = {}
    toppled: list[str] = []
    drawer_parts = list(world.drawer.part_ids) if world.drawer is not None else []

    for step in range(1, SUBSTEPS + 1):
        t = step / SUBSTEPS
        g.position = start_pos + move_dir * t
        try:
            g.longitudinal, g.binormal = orthonormalize(
                start_lon + (lon - start_lon) * t,
                start_bin + (binorm - start_bin) * t,
            )
        except (ParallelAxes, ZeroAxis):
            # interpolation can degenerate for ~180 degree flips; jump to goal
            g.longitudinal, g.binormal = lon.copy(), binorm.copy()
        if attached is not None:
            frame = g.frame()
            _set_object_pose(
                attached,
                g.position + frame @ g.attach_offset,
                frame @ g.attach_rot,
            )
            if drawer_drag:
                world.drawer.value = float(
                    np.clip(
                        world.drawer.value + float((move_dir / SUBSTEPS) @ world.drawer.axis),
                        0.0,
                        world.drawer.limit,
                    )
                )
                for pid in drawer_parts:
                    if pid != attached.id:
                        part = world.find(pid)
                        _set_object_pose(
                            part,
                            part.obb.center + move_dir / SUBSTEPS,
                            _object_frame(part),
                        )
        fingers = g.finger_obbs(sep_half)
        for obj in world.objects:
            if attached is not None and obj.id == attached.id:
                continue
            if drawer_drag and obj.id in drawer_parts:
                continue
            if obj.id in toppled:
                continue
            for finger in fingers:
                if obb_intersects(finger, obj.obb):
                    depth = obb_penetration(finger, obj.obb)
                    collisions[obj.id] = max(collisions.get(obj.id, 0.0), depth)
                    standing = abs(float(obj.obb.axes.longitudinal[2])) > TOPPLE_UPRIGHT_DOT
                    if (not obj.fixed and obj.kind == "rigid" and standing
                            and not obj.grasped):
                        _topple(world, obj, move_dir)
                        toppled.append(obj.id)
                    break

    g.position = target
    g.longitudinal, g.binormal = lon, binorm
    if attached is not None:
        frame = g.frame()
        _set_object_pose(
            attached,
            g.position + frame @ g.attach_offset,
            frame @ g.attach_rot,
        )

    grasp_change: tuple[str, str] | None = None
    if goal.close and not g.closed:
        g.closed = True
        grabbed = _try_grasp(world)
        if grabbed is not None:
            grasp_change = ("grasped", grabbed)
    elif not goal.close and g.closed:
        g.closed = False
        released = _release(world)
        if released is not None:
            grasp_change = ("released", released)

    world.round += 1
    return StepOutcome(
        reached=True,
        collision_events=sorted(collisions.items()),
        grasp_change=grasp_change,
        toppled=toppled,
    )


# --- success predicates -------------------------------------------------------


def _supported_on(source: SimObject, target: SimObject, gap: float, scale: float) -> bool:
    if source.grasped:
        return False
    half = target.xy_half_size() * scale
    dx = abs(source.obb.center[0] - target.obb.center[0])
    dy = abs(source.obb.center[1] - target.obb.center[1])
    if dx > half[0] or dy > half[1]:
        return False
    return abs(source.bottom_z() - target.top_z()) <= gap


def evaluate_success(world: WorldState) -> bool:
    """Task-specific binary success; a pure function of the state."""
    name = world.task.name
    params = world.task.params
    if name == "lift_can":
        can = world.find("coke_can")
        return bool(can.grasped and can.obb.center[2] >= params["lift_height"])
    if name == "move_near":
        src = world.find("red_block")
        tgt = world.find("orange")
        dist = float(np.linalg.norm(src.obb.center[:2] - tgt.obb.center[:2]))
        return dist <= params["near_distance"]
    if name == "stack_cube":
        return _supported_on(world.find("green_cube"), world.find("yellow_cube"),
                             params["support_gap"], params["footprint_scale"])
    if name == "put_carrot_on_plate":
        return _supported_on(world.find("carrot"), world.find("plate"),
                             params["support_gap"], params["footprint_scale"])
    if name == "put_spoon_on_towel":
        return _supported_on(world.find("spoon"), world.find("towel"),
                             params["support_gap"], params["footprint_scale"])
    if name == "drawer_open":
        return world.drawer.value >= params["open_joint"]
    if name == "drawer_close":
        return world.drawer.value <= params["closed_joint"]
    raise ValueError(f"unknown task {name!r}")
