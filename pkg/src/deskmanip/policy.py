"""Policy gateway: remote chat-completions client and scripted oracle experts.

Both produce assistant text from a message history.  The remote client
speaks the OpenAI-style chat-completions wire format with base64-inlined
PNG images; the oracles are hand-coded per-task experts that read the
ground-truth world state, emit templated reasoning, and always satisfy the
ACTION grammar.  They are used for pipeline verification, regression runs
and seed-data bootstrapping.
"""

from __future__ import annotations

import base64
import logging
import random
import threading
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from .errors import (
    EmptyCompletion,
    OracleStuck,
    PolicyTimeout,
    RemoteRefusal,
    TransportError,
)
from .protocol import GripperGoal, Message, format_action
from .sim.world import GRASP_RADIUS, WorldState

log = logging.getLogger("deskmanip.policy")

DEFAULT_TIMEOUT = 60.0
DEFAULT_MAX_RETRIES = 3
DEFAULT_BACKOFF_BASE = 1.0
DEFAULT_CONCURRENCY = 8
ORACLE_PLAN_LIMIT = 10

HOVER_CLEARANCE = 0.10
PLACE_CLEARANCE = 0.001
XY_TOL = 0.002
Z_TOL = 0.002
DOWN = np.array([0.0, 0.0, -1.0])


@dataclass
class PolicyConfig:
    kind: str = "oracle"  # oracle | remote
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "DESKMANIP_API_KEY"
    temperature: float = 0.7
    timeout: float = DEFAULT_TIMEOUT
    max_retries: int = DEFAULT_MAX_RETRIES
    backoff_base: float = DEFAULT_BACKOFF_BASE
    max_concurrency: int = DEFAULT_CONCURRENCY

    def __post_init__(self):
        if self.kind not in ("oracle", "remote"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "remote" and not (self.endpoint and self.model):
            raise ValueError("remote policy requires endpoint and model")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "endpoint": self.endpoint, "model": self.model,
            "api_key_env": self.api_key_env, "temperature": self.temperature,
            "timeout": self.timeout, "max_retries": self.max_retries,
        }


@dataclass
class PolicyReply:
    text: str
    latency: float = 0.0
    token_usage: dict | None = None
    retries: int = 0


# --- remote chat-completions client -------------------------------------------

_semaphores: dict[int, threading.BoundedSemaphore] = {}
_semaphores_lock = threading.Lock()


def _semaphore_for(cfg: PolicyConfig) -> threading.BoundedSemaphore:
    key = id(cfg)
    with _semaphores_lock:
        if key not in _semaphores:
            _semaphores[key] = threading.BoundedSemaphore(cfg.max_concurrency)
        return _semaphores[key]


def _wire_messages(messages: list[Message]) -> list[dict]:
    wire = []
    for msg in messages:
        if msg.images:
            content: list | str = [{"type": "text", "text": msg.text}]
            for img in msg.images:
                b64 = base64.b64encode(img).decode("ascii")
                content.append({
                    "type": "image_url",
                    "image_url": {"url": f"data:image/png;base64,{b64}"},
                })
        else:
            content = msg.text
        wire.append({"role": msg.role, "content": content})
    return wire


def complete(cfg: PolicyConfig, messages: list[Message], api_key: str | None = None) -> PolicyReply:
    """POST to {endpoint}/chat/completions with retry and backoff.

    Retries transport errors and 5xx responses up to max_retries with
    exponential backoff (base 1 s, factor 2, jitter).  The API key is read
    from the configured environment variable unless passed explicitly and
    never logged.
    """
    import os

    key = api_key if api_key is not None else os.environ.get(cfg.api_key_env, "")
    url = cfg.endpoint.rstrip("/") + "/chat/completions"
    payload = {
        "model": cfg.model,
        "messages": _wire_messages(messages),
        "temperature": cfg.temperature,
    }
    headers = {"Content-Type": "application/json"}
    if key:
        headers["Authorization"] = f"Bearer {key}"

    last_exc: Exception | None = None
    last_status: int | None = None
    last_body = ""
    start = time.monotonic()
    with _semaphore_for(cfg):
        for attempt in range(cfg.max_retries + 1):
            if attempt > 0:
                delay = cfg.backoff_base * (2 ** (attempt - 1)) * (1.0 + 0.25 * random.random())
                time.sleep(delay)
            try:
                log.debug("policy request attempt=%d url=%s (auth redacted)", attempt, url)
                resp = requests.post(url, json=payload, headers=headers, timeout=cfg.timeout)
            except requests.Timeout as exc:
                last_exc = PolicyTimeout(str(exc))
                continue
            except requests.RequestException as exc:
                last_exc = TransportError(str(exc))
                continue
            if resp.status_code >= 500:
                last_status, last_body = resp.status_code, resp.text[:500]
                last_exc = None
                continue
            if resp.status_code >= 300:
                raise RemoteRefusal(resp.status_code, resp.text[:500])
            data = resp.json()
            try:
                text = data["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise EmptyCompletion(f"malformed completion body: {exc}") from exc
            if not text:
                raise EmptyCompletion("completion text is empty")
            log.debug("policy response status=200 bytes=%d", len(text))
            return PolicyReply(
                text=text,
                latency=time.monotonic() - start,
                token_usage=data.get("usage"),
                retries=attempt,
            )
    if last_exc is not None:
        raise last_exc
    raise RemoteRefusal(last_status or 0, last_body)


# --- scripted oracle experts ---------------------------------------------------


def _reply(think: str, plan: str, goal: GripperGoal, representation: str) -> PolicyReply:
    action = format_action(goal, representation)
    text = (
        f"<think>\n{think}\n</think>\n\n"
        f"<answer>\n{plan}\n{action}\n</answer>"
    )
    return PolicyReply(text=text)


def _goal(position, longitudinal, binormal, close) -> GripperGoal:
    return GripperGoal(
        np.asarray(position, dtype=float),
        np.asarray(longitudinal, dtype=float),
        np.asarray(binormal, dtype=float),
        bool(close),
    )


def _top_grasp_binormal(obj) -> np.ndarray:
    """Horizontal closing direction perpendicular to the object's long axis.

    For standing objects, closing along the part's normal axis (its smallest
    horizontal extent) keeps the open fingers clear of the part during the
    descent regardless of its yaw.
    """
    lon = obj.obb.axes.longitudinal
    if abs(float(lon[2])) > 0.9:
        b = obj.obb.axes.normal.copy()
        b[2] = 0.0
        norm = np.linalg.norm(b)
        if norm > 1e-6:
            return b / norm
        return np.array([0.0, 1.0, 0.0])
    b = np.cross(np.array([0.0, 0.0, 1.0]), lon)
    return b / np.linalg.norm(b)


def _xy_near(a, b, tol=XY_TOL) -> bool:
    return float(np.linalg.norm(np.asarray(a[:2]) - np.asarray(b[:2]))) <= tol


def _vertical_half(obj) -> float:
    return 0.5 * obj.obb.extent_along([0.0, 0.0, 1.0])


def _pick_stage(world: WorldState, src, representation: str) -> PolicyReply:
    """Shared grasp approach: hover, descend, close."""
    g = world.gripper
    binorm = _top_grasp_binormal(src)
    grasp_z = float(src.obb.center[2])
    hover_z = src.top_z() + HOVER_CLEARANCE
    if g.closed:
        return _reply(
            f"My fingers are closed but I am not holding the {src.label}. "
            "I need to open them before attempting the grasp.",
            "Open the gripper.",
            _goal(g.position, g.longitudinal, g.binormal, False),
            representation,
        )
    if not _xy_near(g.position, src.obb.center):
        return _reply(
            f"The {src.label} is at ({src.obb.center[0]:.3f}, {src.obb.center[1]:.3f}, "
            f"{src.obb.center[2]:.3f}). I will first hover above it with the gripper "
            "pointing down so the descent cannot sweep anything over.",
            f"Hover above the {src.label}.",
            _goal([src.obb.center[0], src.obb.center[1], hover_z], DOWN, binorm, False),
            representation,
        )
    if abs(g.position[2] - grasp_z) > Z_TOL:
        return _reply(
            f"I am above the {src.label}; its longitudinal axis requires my lateral axis "
            "to stay perpendicular to it. Descending until the part sits between the fingers.",
            f"Descend to the {src.label}.",
            _goal([src.obb.center[0], src.obb.center[1], grasp_z], DOWN, binorm, False),
            representation,
        )
    return _reply(
        f"The {src.label} is between the fingers (within {GRASP_RADIUS:.3f} m). "
        "Closing the gripper is a standalone step.",
        "Close the gripper.",
        _goal(g.position, g.longitudinal, g.binormal, True),
        representation,
    )


def _place_stage(world: WorldState, src, place_xy, place_z: float,
                 what: str, representation: str) -> PolicyReply:
    g = world.gripper
    safe_z = max(place_z + 0.06, 0.12)
    if not _xy_near(g.position, place_xy):
        if g.position[2] < safe_z - Z_TOL:
            return _reply(
                f"Holding the {src.label}; lifting straight up first so the traverse "
                "cannot sweep the load or the fingers through anything.",
                f"Lift the {src.label}.",
                _goal([g.position[0], g.position[1], safe_z],
                      g.longitudinal, g.binormal, True),
                representation,
            )
        return _reply(
            f"Holding the {src.label}; the gripper and the load move rigidly together. "
            f"I will traverse at a safe height of {safe_z:.3f} m to avoid collisions.",
            f"Move above {what}.",
            _goal([place_xy[0], place_xy[1], safe_z], g.longitudinal, g.binormal, True),
            representation,
        )
    if g.position[2] > place_z + Z_TOL:
        return _reply(
            f"Directly above {what}. Lowering the {src.label} to just above the support "
            "surface before releasing.",
            f"Lower the {src.label} onto {what}.",
            _goal([place_xy[0], place_xy[1], place_z], g.longitudinal, g.binormal, True),
            representation,
        )
    return _reply(
        "The load is in place; opening the gripper releases it. "
        "Opening is a standalone step.",
        "Open the gripper.",
        _goal(g.position, g.longitudinal, g.binormal, False),
        representation,
    )


def _lift_can_expert(world: WorldState, representation: str) -> PolicyReply:
    can = world.find("coke_can")
    if can.toppled:
        raise OracleStuck("the can has been knocked over; the scripted plan assumes it stands")
    if not can.grasped:
        return _pick_stage(world, can, representation)
    g = world.gripper
    lift_z = max(0.16, world.task.params["lift_height"] + 0.07)
    return _reply(
        "The can is grasped; raising it straight up completes the lift.",
        "Lift the can.",
        _goal([g.position[0], g.position[1], lift_z], g.longitudinal, g.binormal, True),
        representation,
    )


def _move_near_expert(world: WorldState, representation: str) -> PolicyReply:
    src = world.find("red_block")
    tgt = world.find("orange")
    if src.toppled:
        raise OracleStuck("the red block has been knocked over")
    if not src.grasped:
        return _pick_stage(world, src, representation)
    gap = 0.5 * src.obb.extent_along([1.0, 0.0, 0.0]) + 0.5 * tgt.obb.extent_along([1.0, 0.0, 0.0])
    place_xy = np.array([tgt.obb.center[0] - (gap + 0.003), tgt.obb.center[1]])
    place_z = float(_vertical_half(src) + PLACE_CLEARANCE)
    return _place_stage(world, src, place_xy, place_z, "the orange", representation)


def _stack_like_expert(world: WorldState, src_id: str, tgt_id: str, what: str,
                       representation: str) -> PolicyReply:
    src = world.find(src_id)
    tgt = world.find(tgt_id)
    if src.toppled:
        raise OracleStuck(f"the {src.label} has been knocked over")
    if not src.grasped:
        return _pick_stage(world, src, representation)
    place_xy = tgt.obb.center[:2]
    place_z = tgt.top_z() + _vertical_half(src) + PLACE_CLEARANCE
    return _place_stage(world, src, place_xy, float(place_z), what, representation)


def _drawer_expert(world: WorldState, representation: str, open_drawer: bool) -> PolicyReply:
    handle = world.find("drawer_handle")
    g = world.gripper
    lon = np.array([1.0, 0.0, 0.0])   # pointing into the drawer face
    binorm = np.array([0.0, 0.0, 1.0])  # fingers close vertically over the bar
    hc = handle.obb.center
    if not handle.grasped:
        if g.closed:
            return _reply(
                "My fingers are closed; I must open them before reaching for the handle.",
                "Open the gripper.",
                _goal(g.position, g.longitudinal, g.binormal, False),
                representation,
            )
        standoff = np.array([hc[0] - 0.10, hc[1], hc[2]])
        aligned = (
            abs(g.position[1] - hc[1]) <= XY_TOL
            and abs(g.position[2] - hc[2]) <= Z_TOL
        )
        if not aligned:
            return _reply(
                f"The drawer handle is a horizontal bar at ({hc[0]:.3f}, {hc[1]:.3f}, "
                f"{hc[2]:.3f}). Approaching from the front keeps the fingers clear of the "
                "cabinet, with the gripper pointing along +x and closing vertically.",
                "Move to the pre-grasp standoff in front of the handle.",
                _goal(standoff, lon, binorm, False),
                representation,
            )
        if abs(g.position[0] - hc[0]) > XY_TOL:
            return _reply(
                "Aligned with the handle; advancing straight along +x until the bar "
                "sits between the fingers.",
                "Advance to the handle.",
                _goal(hc, lon, binorm, False),
                representation,
            )
        return _reply(
            "The bar is between the fingers and my lateral axis is perpendicular to it. "
            "Closing the gripper is a standalone step.",
            "Close the gripper on the handle.",
            _goal(g.position, g.longitudinal, g.binormal, True),
            representation,
        )
    joint = world.drawer
    if open_drawer:
        target_value = world.task.params["open_joint"] + 0.02
    else:
        target_value = max(0.0, world.task.params["closed_joint"] - 0.005)
    delta = target_value - joint.value
    goal_pos = g.position + joint.axis * delta
    verb = "Pull" if open_drawer else "Push"
    return _reply(
        f"Holding the handle; the drawer slides only along its joint axis. "
        f"{verb}ing by {abs(delta):.3f} m moves the joint to {target_value:.3f} m.",
        f"{verb} the drawer {'open' if open_drawer else 'closed'}.",
        _goal(goal_pos, g.longitudinal, g.binormal, True),
        representation,
    )


_EXPERTS = {
    "lift_can": _lift_can_expert,
    "move_near": _move_near_expert,
    "stack_cube": lambda w, r: _stack_like_expert(w, "green_cube", "yellow_cube",
                                                  "the yellow cube", r),
    "put_carrot_on_plate": lambda w, r: _stack_like_expert(w, "carrot", "plate",
                                                           "the plate", r),
    "put_spoon_on_towel": lambda w, r: _stack_like_expert(w, "spoon", "towel",
                                                          "the towel", r),
    "drawer_open": lambda w, r: _drawer_expert(w, r, True),
    "drawer_close": lambda w, r: _drawer_expert(w, r, False),
}


def oracle_policy(task, world: WorldState, round_index: int,
                  representation: str = "axis") -> PolicyReply:
    """Hand-coded expert reply for the current world state."""
    name = task.name if hasattr(task, "name") else str(task)
    if round_index > ORACLE_PLAN_LIMIT:
        raise OracleStuck(f"round {round_index} exceeds the scripted plan length")
    return _EXPERTS[name](world, representation)


# --- policy objects used by the orchestration loop ----------------------------


class OraclePolicy:
    """Expert policy; reads the world, ignores the message history."""

    def __init__(self, representation: str = "axis"):
        self.representation = representation

    def respond(self, messages: list[Message], world: WorldState,
                round_index: int) -> PolicyReply:
        return oracle_policy(world.task, world, round_index, self.representation)


class RemotePolicy:
    """Chat-completions policy; sends the message history, ignores the world."""

    def __init__(self, cfg: PolicyConfig):
        self.cfg = cfg

    def respond(self, messages: list[Message], world: WorldState,
                round_index: int) -> PolicyReply:
        return complete(self.cfg, messages)


class CallablePolicy:
    """Adapter for test stubs: fn(messages, world, round_index) -> str."""

    def __init__(self, fn):
        self.fn = fn

    def respond(self, messages, world, round_index) -> PolicyReply:
        return PolicyReply(text=self.fn(messages, world, round_index))


def build_policy(cfg: PolicyConfig, representation: str = "axis"):
    if cfg.kind == "oracle":
        return OraclePolicy(representation)
    return RemotePolicy(cfg)
