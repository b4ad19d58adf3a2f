"""Multi-round episode loop, role reversion, batch evaluation, persistence.

An episode loops: snapshot -> render -> build prompt -> (guided: collect
guidance) -> query policy -> parse -> execute -> evaluate, recording every
intermediate artifact.  It stops at success, at max_rounds, or after two
consecutive unparseable replies.

Guided episodes keep the human guidance as user text during the live run;
revert_roles moves each guidance string out of its user message and
prepends it to the assistant reply it produced, yielding self-talk style
training conversations.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import DeskmanipError, NotSuccessful, SimError
from .protocol import (
    ConversationState,
    GripperGoal,
    Turn,
    first_user_text,
    build_prompt,
    parse_response,
    round_user_text,
    serialize_scene,
)
from .sim.render import CameraSpec, render
from .sim.world import (
    StepOutcome,
    apply_goal,
    evaluate_success,
    scene_snapshot,
    world_init,
)
from .sim.tasks import TaskSpec

DEFAULT_MAX_ROUNDS = 12
PARSE_ABORT_AFTER = 2  # consecutive unparseable replies

EPISODE_VERSION = 1


@dataclass
class Round:
    index: int
    scene_text: str
    image: bytes | None = None
    guidance: str | None = None
    assistant_text: str = ""
    parse_ok: bool = False
    parse_error: str | None = None
    action_vector: list[float] | None = None
    warnings: list[str] = field(default_factory=list)
    step: dict | None = None
    step_error: str | None = None
    success_after: bool = False


@dataclass
class Episode:
    task: str
    task_text: str
    seed: int
    mode: str
    representation: str
    max_rounds: int
    rounds: list[Round] = field(default_factory=list)
    outcome: str = "failure"  # success | failure | max_rounds | parse_abort
    created_at: str = ""
    config: dict = field(default_factory=dict)
    id: str = ""

    def goal_sequence(self) -> list[tuple[int, list[float]]]:
        return [(r.index, r.action_vector) for r in self.rounds if r.action_vector]


def _step_to_dict(step: StepOutcome) -> dict:
    return {
        "reached": step.reached,
        "collision_events": [[oid, float(d)] for oid, d in step.collision_events],
        "grasp_change": list(step.grasp_change) if step.grasp_change else None,
        "toppled": list(step.toppled),
    }


def goal_from_vector(vector: list[float]) -> GripperGoal:
    v = [float(x) for x in vector]
    return GripperGoal(np.array(v[0:3]), np.array(v[3:6]), np.array(v[6:9]), bool(round(v[9])))


def run_episode(
    task: TaskSpec | str,
    seed: int,
    policy,
    mode: str = "auto",
    max_rounds: int = DEFAULT_MAX_ROUNDS,
    guidance_provider=None,
    camera: CameraSpec | None = None,
    representation: str = "axis",
    record_images: bool = True,
    config: dict | None = None,
) -> Episode:
    """Run one full episode; policy and simulator errors become outcomes."""
    if isinstance(task, str):
        task = TaskSpec(task)
    world = world_init(task, seed)
    conv = ConversationState(task_text=task.text)
    created = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    episode = Episode(
        task=task.name,
        task_text=task.text,
        seed=int(seed),
        mode=mode,
        representation=representation,
        max_rounds=max_rounds,
        created_at=created,
        config=dict(config or {}),
        id=f"{task.name}-s{seed}-{created.replace(':', '').replace('.', '')}",
    )

    consecutive_bad = 0
    for index in range(1, max_rounds + 1):
        scene_text = serialize_scene(scene_snapshot(world), representation)
        image = render(world, camera) if record_images else None
        guidance = None
        if mode == "guided" and guidance_provider is not None:
            guidance = guidance_provider(episode, index)
        if index == 1:
            conv.base_prompt = first_user_text(task.text, scene_text)
        messages = build_prompt(
            task.text, scene_text, conv, image, guidance, representation
        )
        record = Round(index=index, scene_text=scene_text, image=image, guidance=guidance)
        episode.rounds.append(record)

        try:
            reply = policy.respond(messages, world, index)
        except DeskmanipError as exc:
            record.parse_error = f"policy error: {exc}"
            episode.outcome = "failure"
            return episode
        record.assistant_text = reply.text
        conv.append_turn(Turn(index, scene_text, image, reply.text, guidance))

        try:
            parsed = parse_response(reply.text, representation)
        except DeskmanipError as exc:
            record.parse_error = f"{type(exc).__name__}: {exc}"
            consecutive_bad += 1
            if consecutive_bad >= PARSE_ABORT_AFTER:
                episode.outcome = "parse_abort"
                return episode
            continue
        consecutive_bad = 0
        record.parse_ok = True
        record.action_vector = parsed.action_vector
        record.warnings = parsed.warnings

        try:
            step = apply_goal(world, parsed.goal)
        except SimError as exc:
            record.step_error = f"{type(exc).__name__}: {exc}"
            continue
        record.step = _step_to_dict(step)
        record.success_after = evaluate_success(world)
        if record.success_after:
            episode.outcome = "success"
            return episode

    episode.outcome = "max_rounds"
    return episode


# --- role reversion ------------------------------------------------------------


@dataclass
class TrainingConversation:
    """Messages ready for SFT export: guidance merged into assistant turns."""

    task: str
    seed: int
    source_episode: str
    messages: list[dict] = field(default_factory=list)  # {role, content, image_index}

    def image_rounds(self) -> list[int]:
        return [m["image_round"] for m in self.messages if m.get("image_round")]


def revert_roles(episode: Episode) -> TrainingConversation:
    """Move guidance strings from user messages into the following reply.

    Only successful episodes are exportable.  Each round's user message is
    re-rendered without guidance; the guidance text (when present) is
    prepended, separated by a blank line, to that round's assistant message.
    """
    if episode.outcome != "success":
        raise NotSuccessful(f"episode outcome is {episode.outcome!r}")
    conv = TrainingConversation(
        task=episode.task, seed=episode.seed, source_episode=episode.id
    )
    for r in episode.rounds:
        if r.index == 1:
            user_text = first_user_text(episode.task_text, r.scene_text)
        else:
            user_text = round_user_text(r.scene_text, None)
        conv.messages.append(
            {"role": "user", "content": user_text, "image_round": r.index if r.image else None}
        )
        assistant_text = r.assistant_text
        if r.guidance:
            assistant_text = f"{r.guidance}\n\n{assistant_text}"
        conv.messages.append(
            {"role": "assistant", "content": assistant_text, "image_round": None}
        )
    return conv


# --- batch evaluation -----------------------------------------------------------


@dataclass
class SuccessReport:
    task: str
    seeds: list[int]
    outcomes: list[dict]
    success_rate: float
    mean_rounds: float
    mean_wall_time: float

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "seeds": self.seeds,
            "outcomes": self.outcomes,
            "success_rate": self.success_rate,
            "mean_rounds": self.mean_rounds,
            "mean_wall_time": self.mean_wall_time,
        }


def evaluate_batch(
    task: TaskSpec | str,
    seeds: list[int],
    policy,
    parallelism: int = 1,
    episodes_out: list | None = None,
    **run_kwargs,
) -> SuccessReport:
    """Independent episodes over many seeds; per-episode errors become failures."""
    if isinstance(task, str):
        task = TaskSpec(task)
    if not seeds:
        raise ValueError("seeds must be non-empty")

    def one(seed: int) -> tuple[int, Episode | None, float]:
        start = time.monotonic()
        try:
            ep = run_episode(task, seed, policy, **run_kwargs)
        except DeskmanipError:
            ep = None
        return seed, ep, time.monotonic() - start

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]

    outcomes = []
    for seed, ep, wall in results:
        if ep is None:
            outcomes.append({"seed": seed, "outcome": "failure", "rounds": 0,
                             "wall_time": wall})
        else:
            outcomes.append({
                "seed": seed,
                "outcome": ep.outcome,
                "rounds": len(ep.rounds),
                "wall_time": wall,
            })
            if episodes_out is not None:
                episodes_out.append(ep)
    successes = sum(1 for o in outcomes if o["outcome"] == "success")
    return SuccessReport(
        task=task.name,
        seeds=list(seeds),
        outcomes=outcomes,
        success_rate=successes / len(seeds),
        mean_rounds=float(np.mean([o["rounds"] for o in outcomes])),
        mean_wall_time=float(np.mean([o["wall_time"] for o in outcomes])),
    )


# --- persistence -----------------------------------------------------------------


def episode_to_dict(episode: Episode) -> dict:
    return {
        "version": EPISODE_VERSION,
        "id": episode.id,
        "task": episode.task,
        "task_text": episode.task_text,
        "seed": episode.seed,
        "mode": episode.mode,
        "representation": episode.representation,
        "max_rounds": episode.max_rounds,
        "outcome": episode.outcome,
        "created_at": episode.created_at,
        "config": episode.config,
        "rounds": [
            {
                "index": r.index,
                "scene_text": r.scene_text,
                "image": f"frames/round_{r.index:03d}.png" if r.image else None,
                "guidance": r.guidance,
                "assistant_text": r.assistant_text,
                "parse_ok": r.parse_ok,
                "parse_error": r.parse_error,
                "action_vector": r.action_vector,
                "warnings": r.warnings,
                "step": r.step,
                "step_error": r.step_error,
                "success_after": r.success_after,
            }
            for r in episode.rounds
        ],
    }


def save_episode(episode: Episode, out_dir: str | Path) -> Path:
    """episode.json plus PNG frames in a sibling frames/ directory."""
    root = Path(out_dir) / episode.id
    frames = root / "frames"
    root.mkdir(parents=True, exist_ok=True)
    doc = episode_to_dict(episode)
    for r in episode.rounds:
        if r.image:
            frames.mkdir(exist_ok=True)
            (frames / f"round_{r.index:03d}.png").write_bytes(r.image)
    (root / "episode.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return root


def load_episode(path: str | Path) -> Episode:
    root = Path(path)
    doc = json.loads((root / "episode.json").read_text())
    if doc.get("version") != EPISODE_VERSION:
        raise ValueError(f"unsupported episode version {doc.get('version')!r}")
    episode = Episode(
        task=doc["task"],
        task_text=doc["task_text"],
        seed=doc["seed"],
        mode=doc["mode"],
        representation=doc["representation"],
        max_rounds=doc["max_rounds"],
        outcome=doc["outcome"],
        created_at=doc["created_at"],
        config=doc["config"],
        id=doc["id"],
    )
    for rd in doc["rounds"]:
        image = None
        if rd["image"]:
            image = (root / rd["image"]).read_bytes()
        episode.rounds.append(
            Round(
                index=rd["index"],
                scene_text=rd["scene_text"],
                image=image,
                guidance=rd["guidance"],
                assistant_text=rd["assistant_text"],
                parse_ok=rd["parse_ok"],
                parse_error=rd["parse_error"],
                action_vector=rd["action_vector"],
                warnings=rd["warnings"],
                step=rd["step"],
                step_error=rd["step_error"],
                success_after=rd["success_after"],
            )
        )
    return episode


def replay_episode(episode: Episode, camera: CameraSpec | None = None,
                   check_frames: bool = False) -> list[str]:
    """Re-execute the stored goal sequence; return a list of mismatches."""
    world = world_init(TaskSpec(episode.task), episode.seed)
    mismatches: list[str] = []
    for r in episode.rounds:
        if check_frames and r.image is not None:
            frame = render(world, camera)
            if frame != r.image:
                mismatches.append(f"round {r.index}: rendered frame differs")
        if not r.action_vector:
            continue
        step = apply_goal(world, goal_from_vector(r.action_vector))
        if r.step is not None and _step_to_dict(step) != r.step:
            mismatches.append(f"round {r.index}: step outcome differs")
        success = evaluate_success(world)
        if success != r.success_after:
            mismatches.append(f"round {r.index}: success flag differs")
    final_success = evaluate_success(world)
    if (episode.outcome == "success") != final_success:
        mismatches.append("final success flag differs from stored outcome")
    return mismatches
