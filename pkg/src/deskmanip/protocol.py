"""Prompt assembly, scene-text serialization, and response parsing.

The conversation protocol is text-first: the simulator's quantitative scene
state is serialized into a labeled block per part, the model replies with
free-form reasoning plus one line starting with ``ACTION:`` carrying a
bracketed numeric vector, and this module turns that back into an
executable gripper goal.

Two representation modes exist. In ``axis`` mode (default) orientations are
three unit axes and the action vector has 10 entries:
position(3) + longitudinal(3) + binormal(3) + open/close flag.  In ``euler``
mode orientations are roll/pitch/yaw and the action vector has 7 entries:
position(3) + rpy(3) + flag.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import (
    AmbiguousGripperFlag,
    NoActionLine,
    NonNumericToken,
    TemplateSlotMissing,
    WrongArity,
)
from .geometry import AxisTriple, EulerAngles, axes_to_euler, euler_to_axes, orthonormalize

SCENE_DECIMALS = 3
ACTION_DECIMALS = 6
FLAG_SNAP_TOL = 0.25
AXIS_ARITY = 10
EULER_ARITY = 7
REPAIR_WARN_DEG = 10.0

IMAGE_PLACEHOLDER = "<image>"


def load_base_template() -> str:
    return resources.files("deskmanip.assets").joinpath("base_prompt.txt").read_text()


@dataclass
class Message:
    role: str  # system | user | assistant
    text: str
    images: list[bytes] = field(default_factory=list)

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")
        if self.role == "assistant" and self.images:
            raise ValueError("assistant messages carry no images")


@dataclass(frozen=True)
class ObjectPartState:
    """The per-part quantitative state serialized into the prompt."""

    label: str
    center: np.ndarray
    extents: np.ndarray  # full (l, w, h) along (longitudinal, binormal, normal)
    axes: AxisTriple
    is_gripper: bool = False
    gripper_closed: bool | None = None


SceneInfo = list[ObjectPartState]


@dataclass
class GripperGoal:
    """Parsed 10-dim solution: where to move and whether to close."""

    position: np.ndarray
    longitudinal: np.ndarray
    binormal: np.ndarray
    close: bool

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.longitudinal, self.binormal = orthonormalize(self.longitudinal, self.binormal)


@dataclass
class ParsedResponse:
    think: str
    answer: str
    action_vector: list[float]
    goal: GripperGoal
    warnings: list[str] = field(default_factory=list)


@dataclass
class Turn:
    """One completed conversation round."""

    index: int
    scene_text: str
    image: bytes | None
    assistant_text: str
    guidance: str | None = None


@dataclass
class ConversationState:
    """Completed rounds plus the frozen round-1 user text."""

    task_text: str
    base_prompt: str = ""
    turns: list[Turn] = field(default_factory=list)

    def append_turn(self, turn: Turn) -> None:
        expected = len(self.turns) + 1
        if turn.index != expected:
            raise ValueError(f"turn index {turn.index}, expected {expected}")
        self.turns.append(turn)


# --- scene serialization -----------------------------------------------------


def _fmt_triplet(v) -> str:
    return ", ".join(f"{float(x):.{SCENE_DECIMALS}f}" for x in np.asarray(v).reshape(3))


def serialize_scene(scene: SceneInfo, representation: str = "axis") -> str:
    """One labeled block per part; every real printed with 3 decimals."""
    blocks = []
    for part in scene:
        lines = [
            f"part: {part.label}",
            f"center: {_fmt_triplet(part.center)}",
            f"size: {_fmt_triplet(part.extents)}",
        ]
        if representation == "euler":
            e = axes_to_euler(part.axes)
            lines.append(
                f"orientation rpy: {e.roll:.{SCENE_DECIMALS}f}, "
                f"{e.pitch:.{SCENE_DECIMALS}f}, {e.yaw:.{SCENE_DECIMALS}f}"
            )
        else:
            lines.append(f"longitudinal axis: {_fmt_triplet(part.axes.longitudinal)}")
            lines.append(f"binormal axis: {_fmt_triplet(part.axes.binormal)}")
            lines.append(f"normal axis: {_fmt_triplet(part.axes.normal)}")
        if part.is_gripper:
            lines.append(f"gripper state: {'closed' if part.gripper_closed else 'open'}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


_TRIPLET_RE = re.compile(r"([a-z ]+): (-?\d+\.\d+), (-?\d+\.\d+), (-?\d+\.\d+)")


def parse_scene_text(text: str) -> list[dict]:
    """Inverse of serialize_scene at 3-decimal precision (used for checks)."""
    parts: list[dict] = []
    current: dict | None = None
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("part: "):
            current = {"label": line[len("part: "):]}
            parts.append(current)
        elif line.startswith("gripper state: "):
            current["gripper_closed"] = line.endswith("closed")
        else:
            m = _TRIPLET_RE.fullmatch(line)
            if m is None or current is None:
                raise ValueError(f"unparseable scene line: {line!r}")
            current[m.group(1)] = [float(m.group(2)), float(m.group(3)), float(m.group(4))]
    return parts


# --- prompt assembly ---------------------------------------------------------


def fill_template(template: str, scene_text: str, task_text: str) -> str:
    """Interpolate the three slots; scene text starts on its own line."""
    out = template
    for slot, value in (
        ("{scene}", "\n" + scene_text),
        ("{observation}", IMAGE_PLACEHOLDER),
        ("{task}", task_text),
    ):
        if slot not in out:
            raise TemplateSlotMissing(f"template slot {slot} missing")
        out = out.replace(slot, value)
    return out


def round_user_text(scene_text: str, guidance: str | None = None) -> str:
    """User text for rounds after the first: scene block plus optional guidance."""
    text = f"Scene information:\n{scene_text}\n\nScene observation:{IMAGE_PLACEHOLDER}"
    if guidance:
        text += f"\n\n{guidance}"
    return text


def first_user_text(
    task_text: str,
    scene_text: str,
    guidance: str | None = None,
    template: str | None = None,
) -> str:
    text = fill_template(template or load_base_template(), scene_text, task_text)
    if guidance:
        text += f"\n\n{guidance}"
    return text


def conversation_messages(
    conv: ConversationState,
    current_scene_text: str | None = None,
    current_image: bytes | None = None,
    current_guidance: str | None = None,
    image_history: int | None = None,
) -> list[Message]:
    """Rebuild the message list for the conversation.

    With ``current_scene_text`` set, the list ends with a fresh user message
    for the round about to be played; otherwise it covers completed turns
    only.  ``image_history`` keeps only the latest N observation images
    (None resends all, the default).
    """
    messages: list[Message] = []
    for turn in conv.turns:
        if turn.index == 1:
            text = conv.base_prompt
            if turn.guidance:
                text += f"\n\n{turn.guidance}"
        else:
            text = round_user_text(turn.scene_text, turn.guidance)
        messages.append(Message("user", text, [turn.image] if turn.image else []))
        messages.append(Message("assistant", turn.assistant_text))
    if current_scene_text is not None:
        if not conv.turns:
            text = first_user_text(conv.task_text, current_scene_text, current_guidance)
        else:
            text = round_user_text(current_scene_text, current_guidance)
        messages.append(
            Message("user", text, [current_image] if current_image else [])
        )
    if image_history is not None:
        kept = 0
        for msg in reversed(messages):
            if msg.images:
                kept += 1
                if kept > image_history:
                    msg.images = []
    return messages


def build_prompt(
    task_text: str,
    scene: SceneInfo | str,
    history: ConversationState | None = None,
    image: bytes | None = None,
    guidance: str | None = None,
    representation: str = "axis",
    image_history: int | None = None,
) -> list[Message]:
    """Messages to send to the policy for the round about to be played."""
    scene_text = scene if isinstance(scene, str) else serialize_scene(scene, representation)
    conv = history or ConversationState(task_text=task_text)
    return conversation_messages(conv, scene_text, image, guidance, image_history)


# --- response parsing --------------------------------------------------------

_THINK_RE = re.compile(r"<think>(.*?)</think>", re.DOTALL)
_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_BRACKET_RE = re.compile(r"\[([^\[\]]*)\]")
_NUMBER_RE = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?")


def _parse_numbers(payload: str) -> list[float]:
    values = []
    for raw in payload.split(","):
        token = raw.strip()
        if not token:
            continue  # tolerate trailing commas
        if _NUMBER_RE.fullmatch(token) is None:
            raise NonNumericToken(f"not a number: {token!r}")
        value = float(token)
        if not math.isfinite(value):
            raise NonNumericToken(f"non-finite value: {token!r}")
        values.append(value)
    return values


def _snap_flag(value: float) -> int:
    if abs(value) <= FLAG_SNAP_TOL:
        return 0
    if abs(value - 1.0) <= FLAG_SNAP_TOL:
        return 1
    raise AmbiguousGripperFlag(f"gripper flag {value} not within {FLAG_SNAP_TOL} of 0 or 1")


def parse_response(text: str, representation: str = "axis") -> ParsedResponse:
    """Extract the goal from arbitrary model output.

    Tolerates missing <think>/<answer> tags (recorded as warnings), array
    constructor text around the bracketed list, and repeated ACTION lines
    (the last one wins).
    """
    warnings: list[str] = []
    think_m = _THINK_RE.search(text)
    answer_m = _ANSWER_RE.search(text)
    if think_m is None:
        warnings.append("missing <think> span")
    if answer_m is None:
        warnings.append("missing <answer> span")

    action_lines = [ln for ln in text.splitlines() if ln.startswith("ACTION:")]
    if not action_lines:
        raise NoActionLine("no line starting with 'ACTION:'")
    if len(action_lines) > 1:
        warnings.append(f"{len(action_lines)} ACTION lines; using the last")
    payload_m = _BRACKET_RE.search(action_lines[-1])
    if payload_m is None:
        raise NonNumericToken("ACTION line has no bracketed list")
    values = _parse_numbers(payload_m.group(1))

    expected = EULER_ARITY if representation == "euler" else AXIS_ARITY
    if len(values) != expected:
        raise WrongArity(len(values), expected)

    flag = _snap_flag(values[-1])
    position = np.array(values[0:3])
    if representation == "euler":
        triple = euler_to_axes(EulerAngles(values[3], values[4], values[5]))
        longitudinal, binormal = triple.longitudinal, triple.binormal
    else:
        raw_long = np.array(values[3:6])
        raw_bin = np.array(values[6:9])
        longitudinal, binormal = orthonormalize(raw_long, raw_bin)
        norm = float(np.linalg.norm(raw_bin))
        cos_repair = float(np.clip((raw_bin / norm) @ binormal, -1.0, 1.0))
        repair_deg = math.degrees(math.acos(cos_repair))
        if repair_deg > REPAIR_WARN_DEG:
            warnings.append(f"binormal repaired by {repair_deg:.1f} deg")

    goal = GripperGoal(position, longitudinal, binormal, bool(flag))
    vector = [float(v) for v in values[:-1]] + [float(flag)]
    return ParsedResponse(
        think=think_m.group(1).strip() if think_m else "",
        answer=answer_m.group(1).strip() if answer_m else "",
        action_vector=vector,
        goal=goal,
        warnings=warnings,
    )


def format_action(goal: GripperGoal, representation: str = "axis") -> str:
    """Canonical ACTION line; format-then-parse reproduces the goal."""
    if representation == "euler":
        triple = AxisTriple.from_longitudinal_normal(
            goal.longitudinal, np.cross(goal.binormal, goal.longitudinal)
        )
        e = axes_to_euler(triple)
        values = list(goal.position) + [e.roll, e.pitch, e.yaw]
    else:
        values = list(goal.position) + list(goal.longitudinal) + list(goal.binormal)
    body = ", ".join(f"{float(v):.{ACTION_DECIMALS}f}" for v in values)
    return f"ACTION: np.array([{body}, {int(goal.close)}])"
