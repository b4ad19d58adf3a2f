from .tasks import TASK_NAMES, TaskSpec
from .world import (
    GripperState,
    SimObject,
    StepOutcome,
    WorldState,
    apply_goal,
    evaluate_success,
    scene_snapshot,
    world_init,
)
from .render import CameraSpec, render

__all__ = [
    "TASK_NAMES",
    "TaskSpec",
    "GripperState",
    "SimObject",
    "StepOutcome",
    "WorldState",
    "apply_goal",
    "evaluate_success",
    "scene_snapshot",
    "world_init",
    "CameraSpec",
    "render",
]
