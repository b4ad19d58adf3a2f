"""Group rollout collection, advantages, clipped objective, and export.

A rollout group is K episodes from identical initial worlds with binary
rewards (1 iff the episode succeeded).  Advantages standardize the rewards
with the population mean/std; an all-equal group gets zero advantages
instead of dividing by zero.  The objective evaluates the clipped
importance-ratio surrogate against token log-probabilities supplied by any
external runtime through a JSON interchange file; the gradient step itself
is out of scope here.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DeskmanipError, MisalignedLogProbs
from .orchestrator import Episode, run_episode
from .protocol import first_user_text, round_user_text
from .sim.tasks import TaskSpec

DEFAULT_EPSILON = 0.2
ROLLOUT_VERSION = 1


@dataclass
class RolloutGroup:
    task: str
    seed: int
    k: int
    episodes: list[Episode]
    rewards: list[int]
    advantages: list[float]
    group_id: str = ""

    def __post_init__(self):
        if not self.group_id:
            self.group_id = f"{self.task}-s{self.seed}-k{self.k}"


def group_advantages(rewards: list[int | float]) -> list[float]:
    """Standard scores over the group (population std); all-equal groups -> zeros."""
    if len(rewards) < 2:
        raise ValueError("a rollout group needs at least 2 rewards")
    arr = np.asarray(rewards, dtype=float)
    std = float(arr.std())  # population normalization
    if std == 0.0:
        return [0.0] * len(rewards)
    mean = float(arr.mean())
    return [float((r - mean) / std) for r in arr]


def collect_group(
    task: TaskSpec | str,
    seed: int,
    k: int,
    policy,
    parallelism: int = 1,
    **run_kwargs,
) -> RolloutGroup:
    """K episodes from the same (task, seed) initial world."""
    if k < 2:
        raise ValueError("K must be >= 2")
    if isinstance(task, str):
        task = TaskSpec(task)

    def one(_: int) -> Episode | None:
        try:
            return run_episode(task, seed, policy, **run_kwargs)
        except DeskmanipError:
            return None

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            episodes = list(pool.map(one, range(k)))
    else:
        episodes = [one(i) for i in range(k)]

    rewards = [1 if ep is not None and ep.outcome == "success" else 0 for ep in episodes]
    kept = [
        ep if ep is not None else Episode(
            task=task.name, task_text=task.text, seed=seed, mode="auto",
            representation="axis", max_rounds=0, outcome="failure",
        )
        for ep in episodes
    ]
    return RolloutGroup(
        task=task.name, seed=int(seed), k=k, episodes=kept,
        rewards=rewards, advantages=group_advantages(rewards),
    )


# --- token log-probabilities interchange --------------------------------------


@dataclass
class TokenLogProbs:
    """Per-episode, per-round token log-probs under current and old policy.

    episodes[k][t] = {"tokens": [...], "current": [...], "old": [...]} for
    the assistant message of round t+1 of episode k.  The provider's own
    tokenization is echoed back verbatim for audit.
    """

    episodes: list[list[dict]] = field(default_factory=list)

    def validate_against(self, group: RolloutGroup) -> None:
        if len(self.episodes) != group.k:
            raise MisalignedLogProbs(
                f"{len(self.episodes)} episodes of log-probs for a group of {group.k}"
            )
        for k, (rounds, ep) in enumerate(zip(self.episodes, group.episodes)):
            if len(rounds) != len(ep.rounds):
                raise MisalignedLogProbs(
                    f"episode {k}: {len(rounds)} rounds of log-probs, "
                    f"episode has {len(ep.rounds)}"
                )
            for t, rec in enumerate(rounds):
                n = len(rec["tokens"])
                if len(rec["current"]) != n or len(rec["old"]) != n:
                    raise MisalignedLogProbs(
                        f"episode {k} round {t + 1}: token/log-prob lengths differ"
                    )
                if n == 0:
                    raise MisalignedLogProbs(f"episode {k} round {t + 1}: empty round")

    @staticmethod
    def from_dict(data: dict) -> "TokenLogProbs":
        return TokenLogProbs(episodes=[list(ep["rounds"]) for ep in data["episodes"]])

    @staticmethod
    def load(path: str | Path) -> "TokenLogProbs":
        return TokenLogProbs.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {"version": 1, "episodes": [{"rounds": r} for r in self.episodes]}


def whitespace_logprobs(group: RolloutGroup, current_fn=None, old_fn=None) -> TokenLogProbs:
    """Reference provider: whitespace tokens with caller-supplied log-probs.

    Useful for exercising the objective without a model runtime; by default
    every log-prob is 0 under both policies (ratio 1).
    """
    current_fn = current_fn or (lambda token, k, t, i: 0.0)
    old_fn = old_fn or (lambda token, k, t, i: 0.0)
    episodes = []
    for k, ep in enumerate(group.episodes):
        rounds = []
        for t, r in enumerate(ep.rounds):
            tokens = r.assistant_text.split() or ["<empty>"]
            rounds.append({
                "tokens": tokens,
                "current": [float(current_fn(tok, k, t, i)) for i, tok in enumerate(tokens)],
                "old": [float(old_fn(tok, k, t, i)) for i, tok in enumerate(tokens)],
            })
        episodes.append(rounds)
    return TokenLogProbs(episodes=episodes)


def grpo_objective(group: RolloutGroup, logprobs: TokenLogProbs,
                   epsilon: float = DEFAULT_EPSILON) -> float:
    """Clipped importance-ratio surrogate.

    Per episode: mean over rounds of the mean over tokens of
    min(ratio * A, clip(ratio, 1-eps, 1+eps) * A); the result is the mean
    over the K episodes.  Round/token counts may differ between episodes,
    which is why the token and round means nest inside the episode mean.
    """
    logprobs.validate_against(group)
    lo, hi = 1.0 - epsilon, 1.0 + epsilon
    episode_values = []
    for k, rounds in enumerate(logprobs.episodes):
        adv = group.advantages[k]
        round_means = []
        for rec in rounds:
            ratios = np.exp(np.asarray(rec["current"], dtype=float)
                            - np.asarray(rec["old"], dtype=float))
            clipped = np.clip(ratios, lo, hi) if math.isfinite(epsilon) else ratios
            term = np.minimum(ratios * adv, clipped * adv)
            round_means.append(float(term.mean()))
        episode_values.append(float(np.mean(round_means)) if round_means else 0.0)
    return float(np.mean(episode_values))


# --- rollout export -------------------------------------------------------------


def _conversation_payload(ep: Episode) -> list[dict]:
    messages = []
    for r in ep.rounds:
        if r.index == 1:
            text = first_user_text(ep.task_text, r.scene_text)
            if r.guidance:
                text += f"\n\n{r.guidance}"
        else:
            text = round_user_text(r.scene_text, r.guidance)
        images = []
        if r.image is not None:
            images.append(f"round_{r.index:03d}.png")
        messages.append({"role": "user", "content": text, "images": images})
        messages.append({"role": "assistant", "content": r.assistant_text, "images": []})
    return messages


def canonical_json_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def export_rollouts(groups: list[RolloutGroup], out_dir: str | Path) -> dict:
    """Line-delimited records plus per-round images and a manifest."""
    if not groups:
        raise ValueError("no rollout groups to export")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    count = 0
    for group in groups:
        for idx, (ep, reward, adv) in enumerate(
            zip(group.episodes, group.rewards, group.advantages)
        ):
            image_dir = Path("images") / group.group_id / f"ep{idx:02d}"
            for r in ep.rounds:
                if r.image is not None:
                    target = out / image_dir / f"round_{r.index:03d}.png"
                    target.parent.mkdir(parents=True, exist_ok=True)
                    target.write_bytes(r.image)
            messages = _conversation_payload(ep)
            for msg in messages:
                msg["images"] = [str(image_dir / name) for name in msg["images"]]
            record = {
                "schema": "rollout_record",
                "version": ROLLOUT_VERSION,
                "group_id": group.group_id,
                "task": group.task,
                "seed": group.seed,
                "k": group.k,
                "episode_index": idx,
                "reward": reward,
                "advantage": adv,
                "outcome": ep.outcome,
                "rounds": len(ep.rounds),
                "messages": messages,
            }
            lines.append(canonical_json_line(record))
            count += 1
    payload = "\n".join(lines) + "\n"
    (out / "rollouts.jsonl").write_text(payload)
    manifest = {
        "records": count,
        "groups": len(groups),
        "sha256": hashlib.sha256(payload.encode()).hexdigest(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_rollout_records(path: str | Path) -> list[dict]:
    records = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records
