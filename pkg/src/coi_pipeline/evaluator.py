"""Score model outputs: exact ROUGE-L, per-subtask spans, pairwise judging.

Tokenization (lowercase, punctuation split into separate tokens) is fixed and
versioned; reports carry TOKENIZER_VERSION so scores from different
conventions are never silently compared.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from pathlib import Path

from . import prompts
from .composer import ComposedChain
from .dataset_builder import extract_spans
from .errors import ParseError, ValidationError
from .gateway import Gateway, LlmRequest

TOKENIZER_VERSION = "lower-punct-v1"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class SubtaskScore:
    hop_index: int
    span: str | None
    score: RougeScore
    valid: bool


@dataclass(frozen=True)
class Preference:
    winner: str | None
    raw_verdict: str
    order_swapped: bool


def tokenize(text: str) -> list[str]:
    """Lowercased tokens; each punctuation character is its own token."""
    return _TOKEN_RE.findall(text.lower())


def lcs_length(a: list[str], b: list[str]) -> int:
    """Longest common subsequence length via the standard DP, O(|a|*|b|)."""
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token_a in a:
        current = [0]
        for j, token_b in enumerate(b, 1):
            if token_a == token_b:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[len(b)]


def rouge_l(candidate: str, reference: str) -> RougeScore:
    """ROUGE-L precision/recall/F1 over the token LCS; empty side scores zero."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return RougeScore(0.0, 0.0, 0.0)
    lcs = lcs_length(cand, ref)
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    if precision + recall == 0:
        return RougeScore(0.0, 0.0, 0.0)
    f1 = 2 * precision * recall / (precision + recall)
    return RougeScore(precision, recall, f1)


def score_whole(output: str, gold_target: str) -> RougeScore:
    """Whole-string ROUGE-L of a model output against the scaffolded target."""
    return rouge_l(output, gold_target)


def extract_subtask_spans_marker(output: str, k: int) -> list[str | None]:
    """Marker-based per-hop span recovery (tolerant; missing hops stay absent)."""
    return extract_spans(output, k)


def separate_with_llm(
    sub_instruction: str,
    input: str,
    output: str,
    gateway: Gateway,
    *,
    model_id: str = "default",
    prompts_dir=None,
    use_cache: bool = True,
) -> str | None:
    """Ask the LLM which span of `output` answers `sub_instruction`.

    The reply counts only when it occurs verbatim inside the output; a
    "Wrong" reply or any non-substring (hallucinated) span yields None.
    """
    if not output.strip():
        raise ValidationError("separation requires a nonempty output")
    template = prompts.load_prompt(prompts.SEPARATION, prompts_dir)
    prompt = prompts.render_prompt(
        template, instruction=sub_instruction, input=input, output=output
    )
    request = LlmRequest(model_id=model_id, prompt=prompt)
    response = gateway.cached_complete(request) if use_cache else gateway.complete(request)
    reply = response.text.strip()
    if not reply or reply.lower() == "wrong":
        return None
    if reply not in output:
        return None
    return reply


def score_subtasks(
    output: str,
    gold_chain: ComposedChain,
    mode: str = "marker",
    gateway: Gateway | None = None,
    *,
    model_id: str = "default",
    prompts_dir=None,
    use_cache: bool = True,
) -> list[SubtaskScore]:
    """Score each hop of `output` against the gold chain's hop outputs.

    mode "marker" recovers spans from the scaffold; mode "llm" asks the
    gateway to separate them (hop i's input being the previous gold output).
    An unrecovered span scores zero and is marked invalid.
    """
    if mode not in ("marker", "llm"):
        raise ValidationError(f"unknown scoring mode {mode!r}")
    k = gold_chain.chain_length
    if mode == "marker":
        spans = extract_spans(output, k)
    else:
        if gateway is None:
            raise ValidationError("llm mode requires a gateway")
        spans = []
        for i in range(k):
            hop_input = gold_chain.input if i == 0 else gold_chain.hop_outputs[i - 1]
            if not output.strip():
                spans.append(None)
                continue
            spans.append(
                separate_with_llm(
                    gold_chain.hops[i].instruction,
                    hop_input,
                    output,
                    gateway,
                    model_id=model_id,
                    prompts_dir=prompts_dir,
                    use_cache=use_cache,
                )
            )
    scores = []
    for i, span in enumerate(spans):
        if span is None:
            scores.append(SubtaskScore(i + 1, None, RougeScore(0.0, 0.0, 0.0), False))
        else:
            scores.append(SubtaskScore(i + 1, span, rouge_l(span, gold_chain.hop_outputs[i]), True))
    return scores


def judge_pair(
    instruction: str,
    input: str,
    gold: str,
    output_a: str,
    output_b: str,
    gateway: Gateway,
    seed: int | random.Random,
    *,
    model_id: str = "default",
    prompts_dir=None,
    use_cache: bool = True,
) -> Preference:
    """Pairwise preference with seeded position randomization.

    The verdict token must equal "A", "B", or "None" exactly after trimming;
    anything else maps to no winner. A swapped presentation is un-swapped
    before returning.
    """
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    swapped = rng.random() < 0.5
    slot_a, slot_b = (output_b, output_a) if swapped else (output_a, output_b)
    template = prompts.load_prompt(prompts.JUDGE, prompts_dir)
    prompt = prompts.render_prompt(
        template,
        instruction=instruction,
        input=input,
        gold=gold,
        output_a=slot_a,
        output_b=slot_b,
    )
    request = LlmRequest(model_id=model_id, prompt=prompt)
    response = gateway.cached_complete(request) if use_cache else gateway.complete(request)
    verdict = response.text.strip()
    if verdict == "A":
        winner = "B" if swapped else "A"
    elif verdict == "B":
        winner = "A" if swapped else "B"
    else:
        winner = None
    return Preference(winner=winner, raw_verdict=response.text, order_swapped=swapped)


def aggregate_scores(scores: list[RougeScore]) -> dict[str, float]:
    """Mean precision/recall/F1, reported x100 as in result tables."""
    if not scores:
        raise ValidationError("cannot aggregate an empty score list")
    n = len(scores)
    return {
        "count": n,
        "mean_precision": 100.0 * sum(s.precision for s in scores) / n,
        "mean_recall": 100.0 * sum(s.recall for s in scores) / n,
        "mean_f1": 100.0 * sum(s.f1 for s in scores) / n,
    }


def aggregate_preferences(preferences: list[Preference]) -> dict[str, float]:
    """Preference percentages for A, B, and no-winner."""
    if not preferences:
        raise ValidationError("cannot aggregate an empty preference list")
    n = len(preferences)
    count_a = sum(1 for p in preferences if p.winner == "A")
    count_b = sum(1 for p in preferences if p.winner == "B")
    return {
        "count": n,
        "A": 100.0 * count_a / n,
        "B": 100.0 * count_b / n,
        "None": 100.0 * (n - count_a - count_b) / n,
    }


def load_predictions(path: str | Path) -> dict[str, str]:
    """Load a predictions JSONL file of {"example_id": str, "output": str}."""
    path = Path(path)
    predictions: dict[str, str] = {}
    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: line {line_number}: invalid JSON: {exc}") from exc
            if (
                not isinstance(obj, dict)
                or not isinstance(obj.get("example_id"), str)
                or not isinstance(obj.get("output"), str)
            ):
                raise ParseError(
                    f"{path}: line {line_number}: expected string fields `example_id` and `output`"
                )
            if obj["example_id"] in predictions:
                raise ValidationError(
                    f"{path}: line {line_number}: duplicate example_id {obj['example_id']!r}"
                )
            predictions[obj["example_id"]] = obj["output"]
    return predictions


def aggregate_subtasks(rows: list[list[SubtaskScore]]) -> list[dict[str, float]]:
    """Per-hop mean F1 (x100) and valid-span counts over a uniform test set."""
    if not rows:
        raise ValidationError("cannot aggregate an empty subtask score list")
    k = len(rows[0])
    if any(len(row) != k for row in rows):
        raise ValidationError("all rows must score the same number of hops")
    summary = []
    for hop in range(k):
        scores = [row[hop] for row in rows]
        summary.append(
            {
                "hop": hop + 1,
                "mean_f1": 100.0 * sum(s.score.f1 for s in scores) / len(scores),
                "valid": sum(1 for s in scores if s.valid),
                "total": len(scores),
            }
        )
    return summary
