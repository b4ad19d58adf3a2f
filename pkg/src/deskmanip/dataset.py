"""SFT dataset construction, schema validation, and statistics.

The exported artifact is line-delimited JSON: one reverted conversation per
line with observation images stored by relative path (an inlined base64
variant exists for trainer convenience).  Only successful episodes are
exported; everything else is counted as skipped.
"""

from __future__ import annotations

import base64
import hashlib
import json
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import SchemaViolation
from .orchestrator import Episode, revert_roles
from .rl import canonical_json_line

SFT_VERSION = 1


def _load_schema(name: str) -> dict:
    text = resources.files("deskmanip.schemas").joinpath(name).read_text()
    return json.loads(text)


_VALIDATORS: dict[str, jsonschema.Validator] = {}


def record_validator(kind: str) -> "jsonschema.Validator":
    if kind not in _VALIDATORS:
        schema = _load_schema(f"{kind}_record.schema.json")
        _VALIDATORS[kind] = jsonschema.Draft202012Validator(schema)
    return _VALIDATORS[kind]


def conversation_record(episode: Episode, image_dir: Path | None,
                        inline_images: bool = False) -> tuple[dict, dict[str, bytes]]:
    """Record dict plus the {relative path: bytes} images it references."""
    conv = revert_roles(episode)
    images: dict[str, bytes] = {}
    by_round = {r.index: r.image for r in episode.rounds}
    messages = []
    for msg in conv.messages:
        image_refs: list[str] = []
        round_idx = msg.get("image_round")
        if round_idx and by_round.get(round_idx) is not None:
            if inline_images:
                image_refs.append(
                    "data:image/png;base64,"
                    + base64.b64encode(by_round[round_idx]).decode("ascii")
                )
            else:
                rel = str((image_dir or Path(".")) / f"round_{round_idx:03d}.png")
                image_refs.append(rel)
                images[rel] = by_round[round_idx]
        messages.append({"role": msg["role"], "content": msg["content"],
                         "images": image_refs})
    record = {
        "schema": "sft_record",
        "version": SFT_VERSION,
        "id": conv.source_episode,
        "task": conv.task,
        "seed": conv.seed,
        "source_episode": conv.source_episode,
        "rounds": len(episode.rounds),
        "messages": messages,
    }
    return record, images


def export_sft(episodes: list[Episode], out_dir: str | Path,
               inline_images: bool = False) -> dict:
    """Filter to successes, revert roles, write JSONL + images + manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    skipped = 0
    per_task: dict[str, int] = {}
    for episode in episodes:
        if episode.outcome != "success":
            skipped += 1
            continue
        image_dir = Path("images") / episode.id
        record, images = conversation_record(episode, image_dir, inline_images)
        for rel, data in images.items():
            target = out / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
        record_validator("sft").validate(record)
        lines.append(canonical_json_line(record))
        per_task[episode.task] = per_task.get(episode.task, 0) + 1
    payload = "\n".join(lines) + ("\n" if lines else "")
    (out / "sft.jsonl").write_text(payload)
    manifest = {
        "records": len(lines),
        "skipped": skipped,
        "per_task": dict(sorted(per_task.items())),
        "sha256": hashlib.sha256(payload.encode()).hexdigest(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def iter_records(path: str | Path, kind: str = "sft"):
    """Yield (line number, record) pairs, validating each line."""
    validator = record_validator(kind)
    with open(path, "r") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"invalid JSON: {exc}", line=lineno) from exc
            errors = sorted(validator.iter_errors(record), key=str)
            if errors:
                raise SchemaViolation(errors[0].message, line=lineno)
            yield lineno, record


def validate_file(path: str | Path, kind: str = "sft") -> int:
    """Count of valid records; raises SchemaViolation with the offending line."""
    return sum(1 for _ in iter_records(path, kind))


def dataset_stats(path: str | Path, kind: str = "sft") -> dict:
    """Per-task counts, round histogram, token/image summaries."""
    per_task: dict[str, int] = {}
    round_hist: dict[str, int] = {}
    assistant_tokens = 0
    assistant_messages = 0
    image_count = 0
    conversations = 0
    for _, record in iter_records(path, kind):
        conversations += 1
        per_task[record["task"]] = per_task.get(record["task"], 0) + 1
        rounds = sum(1 for m in record["messages"] if m["role"] == "assistant")
        round_hist[str(rounds)] = round_hist.get(str(rounds), 0) + 1
        for msg in record["messages"]:
            image_count += len(msg.get("images", []))
            if msg["role"] == "assistant":
                assistant_messages += 1
                assistant_tokens += len(msg["content"].split())
    return {
        "conversations": conversations,
        "per_task": dict(sorted(per_task.items())),
        "round_histogram": dict(sorted(round_hist.items(), key=lambda kv: int(kv[0]))),
        "mean_assistant_tokens": (
            assistant_tokens / assistant_messages if assistant_messages else 0.0
        ),
        "images": image_count,
    }
