"""Seed corpus loading, validation, filtering, and instance sampling.

Seed corpora are JSONL files with one task per line:

    {"task_id": str, "category": str, "instruction": str,
     "input_language": str, "output_language": str,
     "instances": [{"input": str, "output": str}, ...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, ValidationError
from .seeding import stable_rng


@dataclass(frozen=True)
class Instance:
    """One input/output pair of a seed task."""

    input: str
    output: str


@dataclass(frozen=True)
class SeedTask:
    """A single-instruction task with its instances.

    ``line_number`` records where the task was read from (1-based) and is
    excluded from equality so hand-built tasks compare equal to loaded ones.
    """

    task_id: str
    category: str
    instruction: str
    input_language: str
    output_language: str
    instances: tuple[Instance, ...]
    line_number: int | None = field(default=None, compare=False)


_STR_FIELDS = ("task_id", "category", "instruction", "input_language", "output_language")


def _parse_task(obj: object, line_number: int, allow_empty: bool) -> SeedTask:
    if not isinstance(obj, dict):
        raise ParseError(f"line {line_number}: expected a JSON object, got {type(obj).__name__}")
    for key in _STR_FIELDS:
        if key not in obj:
            raise ParseError(f"line {line_number}: missing required field `{key}`")
        if not isinstance(obj[key], str):
            raise ParseError(f"line {line_number}: field `{key}` must be a string")
    for key in ("task_id", "category"):
        if not obj[key].strip():
            raise ValidationError(f"line {line_number}: field `{key}` must be nonempty")
    raw_instances = obj.get("instances")
    if not isinstance(raw_instances, list):
        raise ParseError(f"line {line_number}: missing required field `instances`")
    if not raw_instances:
        raise ValidationError(
            f"line {line_number}: task {obj['task_id']!r} has no instances"
        )
    instances = []
    for i, inst in enumerate(raw_instances):
        if not isinstance(inst, dict) or not isinstance(inst.get("input"), str) \
                or not isinstance(inst.get("output"), str):
            raise ParseError(
                f"line {line_number}: instance {i} must be an object with string "
                f"`input` and `output`"
            )
        if not allow_empty and (inst["input"] == "" or inst["output"] == ""):
            raise ValidationError(
                f"line {line_number}: instance {i} has an empty input or output "
                f"(pass allow_empty to accept these)"
            )
        instances.append(Instance(input=inst["input"], output=inst["output"]))
    return SeedTask(
        task_id=obj["task_id"],
        category=obj["category"],
        instruction=obj["instruction"],
        input_language=obj["input_language"],
        output_language=obj["output_language"],
        instances=tuple(instances),
        line_number=line_number,
    )


def load_seed_corpus(path: str | Path, allow_empty: bool = False) -> list[SeedTask]:
    """Load a JSONL seed corpus, one SeedTask per well-formed line.

    Blank lines are skipped. Raises ParseError naming the line for malformed
    records and ValidationError for duplicate task ids.
    """
    path = Path(path)
    tasks: list[SeedTask] = []
    seen: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: line {line_number}: invalid JSON: {exc}") from exc
            try:
                task = _parse_task(obj, line_number, allow_empty)
            except (ParseError, ValidationError) as exc:
                raise type(exc)(f"{path}: {exc}") from None
            if task.task_id in seen:
                raise ValidationError(
                    f"{path}: line {line_number}: duplicate task_id {task.task_id!r} "
                    f"(first seen on line {seen[task.task_id]})"
                )
            seen[task.task_id] = line_number
            tasks.append(task)
    return tasks


def serialize_seed_corpus(tasks: list[SeedTask], path: str | Path) -> None:
    """Write tasks back out in the seed JSONL schema (UTF-8, one per line)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for task in tasks:
            record = {
                "task_id": task.task_id,
                "category": task.category,
                "instruction": task.instruction,
                "input_language": task.input_language,
                "output_language": task.output_language,
                "instances": [
                    {"input": inst.input, "output": inst.output} for inst in task.instances
                ],
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def filter_english_input(tasks: list[SeedTask]) -> list[SeedTask]:
    """Keep only tasks whose input language is English, preserving order."""
    return [task for task in tasks if task.input_language == "en"]


def sample_instances(task: SeedTask, n: int, seed: int) -> list[Instance]:
    """Draw min(n, available) instances without replacement.

    The draw depends only on (task_id, n unaffected, seed), so reruns with the
    same seed select the same instances. n larger than the instance count
    clamps to all instances.
    """
    if n < 0:
        raise ValidationError(f"sample size must be >= 0, got {n}")
    k = min(n, len(task.instances))
    if k == 0:
        return []
    rng = stable_rng("sample-instances", seed, task.task_id)
    return rng.sample(list(task.instances), k)
