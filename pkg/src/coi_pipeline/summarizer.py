"""Shorten seed instructions into concise general instructions.

Summaries longer than the 30-word budget are retried; a record that still
misses the budget after retries is kept (shortest attempt) and flagged.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from . import prompts
from .corpus import SeedTask
from .errors import ParseError, ValidationError
from .gateway import Gateway, LlmRequest

logger = logging.getLogger(__name__)

MAX_SUMMARY_WORDS = 30


@dataclass(frozen=True)
class SummarizedInstruction:
    task_id: str
    original: str
    summary: str
    original_words: int
    summary_words: int
    flagged: bool


def word_count(text: str) -> int:
    """Number of maximal whitespace-delimited tokens."""
    return len(text.split())


def summarize_instruction(
    task: SeedTask,
    gateway: Gateway,
    *,
    model_id: str = "default",
    retry_limit: int = 2,
    prompts_dir=None,
    use_cache: bool = True,
) -> SummarizedInstruction:
    """Summarize one task instruction via the few-shot shortening prompt.

    Retries (bypassing the response cache, so a sampling provider can produce
    a fresh attempt) up to `retry_limit` times when the reply exceeds
    MAX_SUMMARY_WORDS, then keeps the shortest attempt and flags the record.
    An all-empty reply series falls back to the original instruction, flagged.
    """
    if not task.instruction.strip():
        raise ValidationError(f"task {task.task_id!r} has an empty instruction")
    template = prompts.load_prompt(prompts.SUMMARIZE, prompts_dir)
    prompt = prompts.render_prompt(template, instruction=task.instruction, category=task.category)
    request = LlmRequest(model_id=model_id, prompt=prompt)

    best: str | None = None
    for attempt in range(retry_limit + 1):
        if attempt == 0 and use_cache:
            response = gateway.cached_complete(request)
        else:
            response = gateway.complete(request)
        summary = response.text.strip()
        if not summary:
            continue
        if word_count(summary) <= MAX_SUMMARY_WORDS:
            return _record(task, summary, flagged=False)
        if best is None or word_count(summary) < word_count(best):
            best = summary
    if best is None:
        logger.warning("empty summaries for task %s; keeping original", task.task_id)
        best = task.instruction
    return _record(task, best, flagged=True)


def _record(task: SeedTask, summary: str, flagged: bool) -> SummarizedInstruction:
    return SummarizedInstruction(
        task_id=task.task_id,
        original=task.instruction,
        summary=summary,
        original_words=word_count(task.instruction),
        summary_words=word_count(summary),
        flagged=flagged,
    )


def corpus_word_stats(
    before: list[SeedTask], after: list[SummarizedInstruction]
) -> dict[str, float]:
    """Mean instruction word counts before and after summarization.

    `before` and `after` must cover the same task ids.
    """
    if not before or not after:
        raise ValidationError("word stats need a nonempty corpus on both sides")
    before_ids = {t.task_id for t in before}
    after_ids = {s.task_id for s in after}
    if before_ids != after_ids:
        missing = sorted(before_ids ^ after_ids)
        raise ValidationError(f"task id sets differ, e.g. {missing[:3]}")
    mean_before = sum(word_count(t.instruction) for t in before) / len(before)
    mean_after = sum(s.summary_words for s in after) / len(after)
    return {"mean_before": mean_before, "mean_after": mean_after}


def serialize_summaries(summaries: list[SummarizedInstruction], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for s in summaries:
            record = {
                "task_id": s.task_id,
                "original": s.original,
                "summary": s.summary,
                "original_words": s.original_words,
                "summary_words": s.summary_words,
                "flagged": s.flagged,
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_summaries(path: str | Path) -> list[SummarizedInstruction]:
    path = Path(path)
    summaries = []
    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: line {line_number}: invalid JSON: {exc}") from exc
            try:
                summaries.append(
                    SummarizedInstruction(
                        task_id=obj["task_id"],
                        original=obj["original"],
                        summary=obj["summary"],
                        original_words=int(obj["original_words"]),
                        summary_words=int(obj["summary_words"]),
                        flagged=bool(obj["flagged"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}: line {line_number}: bad summary record: {exc}") from None
    return summaries
