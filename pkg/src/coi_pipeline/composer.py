"""Build composable instruction chains.

Candidate pairs come from one sampled task per category. A heuristic category
filter removes pairs whose non-final hop belongs to a final-position-only
category, then an LLM verdict decides composability and supplies the
second-hop output. Longer chains are grown by joining chains that end at a
task with pairs that start at it.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from . import prompts
from .corpus import SeedTask
from .errors import ParseError, ValidationError
from .gateway import Gateway, LlmRequest
from .seeding import stable_rng
from .summarizer import SummarizedInstruction, word_count

logger = logging.getLogger(__name__)

CONNECTOR = " and then "
CONCISE_MAX_WORDS = 20


@dataclass(frozen=True)
class CategoryRules:
    """Categories allowed only in the last position of a chain."""

    final_only: frozenset[str]

    def __contains__(self, category: str) -> bool:
        return category in self.final_only


def load_category_rules(path: str | Path | None = None) -> CategoryRules:
    """Read a rules file (one category per line, `#` comments allowed).

    With no path, the bundled blocklist ships as the default.
    """
    if path is None:
        text = (
            resources.files("coi_pipeline")
            .joinpath("assets/rules/final_only.txt")
            .read_text(encoding="utf-8")
        )
    else:
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"rules file not found: {path}")
        text = path.read_text(encoding="utf-8")
    names = set()
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            names.add(line)
    return CategoryRules(final_only=frozenset(names))


@dataclass(frozen=True)
class ChainCandidate:
    hops: tuple[str, ...]
    categories: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.hops) < 2:
            raise ValidationError("a chain candidate needs at least 2 hops")
        if len(self.hops) != len(self.categories):
            raise ValidationError("hops and categories must align")
        if len(set(self.hops)) != len(self.hops):
            raise ValidationError(f"candidate hops must be distinct: {self.hops}")


@dataclass(frozen=True)
class ValidityResult:
    valid: bool
    reason: str
    output: str
    raw: str


@dataclass(frozen=True)
class ChainHop:
    task_id: str
    instruction: str


@dataclass(frozen=True)
class ComposedChain:
    hops: tuple[ChainHop, ...]
    joined_instruction: str
    input: str
    hop_outputs: tuple[str, ...]
    categories: tuple[str, ...]
    variant: str = "standard"
    flagged: bool = False

    def __post_init__(self) -> None:
        if not (len(self.hops) == len(self.hop_outputs) == len(self.categories)):
            raise ValidationError(
                f"chain hops ({len(self.hops)}), outputs ({len(self.hop_outputs)}) and "
                f"categories ({len(self.categories)}) must align"
            )

    @property
    def chain_length(self) -> int:
        return len(self.hops)


def sample_category_pairs(tasks: list[SeedTask], seed: int) -> list[ChainCandidate]:
    """One seeded task per category, then every ordered pair of distinct categories."""
    by_category: dict[str, list[SeedTask]] = {}
    for task in tasks:
        by_category.setdefault(task.category, []).append(task)
    if len(by_category) < 2:
        raise ValidationError(
            f"need at least 2 categories to build pairs, got {len(by_category)}"
        )
    chosen: dict[str, SeedTask] = {}
    for category, members in by_category.items():
        rng = stable_rng("category-pick", seed, category)
        chosen[category] = rng.choice(members)
    categories = list(chosen)
    candidates = []
    for first in categories:
        for second in categories:
            if first == second:
                continue
            candidates.append(
                ChainCandidate(
                    hops=(chosen[first].task_id, chosen[second].task_id),
                    categories=(first, second),
                )
            )
    return candidates


def heuristic_filter(
    candidates: list[ChainCandidate], rules: CategoryRules
) -> list[ChainCandidate]:
    """Drop candidates with a final-only category at any non-final position."""
    return [
        cand
        for cand in candidates
        if all(cat not in rules.final_only for cat in cand.categories[:-1])
    ]


def first_json_object(text: str) -> str | None:
    """Extract the first balanced top-level {...} object, honoring strings."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start : i + 1]
        start = text.find("{", start + 1)
    return None


def check_composability(
    first_instruction: str,
    first_output: str,
    second_instruction: str,
    gateway: Gateway,
    *,
    model_id: str = "default",
    prompts_dir=None,
    use_cache: bool = True,
) -> ValidityResult:
    """Ask the LLM whether `first_output` is a valid input for the second
    instruction, and for the second-hop output when it is.

    Replies without a parseable JSON object are treated as not composable.
    """
    for name, value in (
        ("first_instruction", first_instruction),
        ("first_output", first_output),
        ("second_instruction", second_instruction),
    ):
        if not value.strip():
            raise ValidationError(f"composability check requires nonempty {name}")
    template = prompts.load_prompt(prompts.COMPOSABILITY, prompts_dir)
    prompt = prompts.render_prompt(template, instruction=second_instruction, input=first_output)
    request = LlmRequest(model_id=model_id, prompt=prompt)
    response = gateway.cached_complete(request) if use_cache else gateway.complete(request)
    raw = response.text
    blob = first_json_object(raw)
    if blob is None:
        return ValidityResult(valid=False, reason="unparseable", output="", raw=raw)
    try:
        obj = json.loads(blob)
    except json.JSONDecodeError:
        return ValidityResult(valid=False, reason="unparseable", output="", raw=raw)
    verdict = str(obj.get("Valid input", "")).strip().lower()
    reason = str(obj.get("Reason", ""))
    output = str(obj.get("Output", ""))
    valid = verdict == "yes"
    if valid and not output.strip():
        # A yes-verdict without a usable second output cannot seed a chain.
        return ValidityResult(valid=False, reason="valid verdict but empty output", output="", raw=raw)
    return ValidityResult(valid=valid, reason=reason, output=output if valid else "", raw=raw)


def compose_instruction_text(instructions: list[str]) -> str:
    """Join summarized instructions with the literal connector, punctuation kept."""
    if len(instructions) < 2:
        raise ValidationError("composition needs at least 2 instructions")
    return CONNECTOR.join(instructions)


def rewrite_consistency(
    joined_instruction: str,
    subtask_instructions: list[str],
    gateway: Gateway,
    *,
    model_id: str = "default",
    prompts_dir=None,
    use_cache: bool = True,
) -> str:
    """Rewrite the joined instruction so each hop's input names the previous output.

    On an unparseable reply the input is returned unchanged and a warning is
    logged.
    """
    template = prompts.load_prompt(prompts.CONSISTENCY, prompts_dir)
    subtasks = "\n\n".join(
        f'Subtask {i}: "{text}"' for i, text in enumerate(subtask_instructions, 1)
    )
    prompt = prompts.render_prompt(template, instruction=joined_instruction, subtasks=subtasks)
    request = LlmRequest(model_id=model_id, prompt=prompt)
    response = gateway.cached_complete(request) if use_cache else gateway.complete(request)
    blob = first_json_object(response.text)
    if blob is not None:
        try:
            obj = json.loads(blob)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            modified = obj.get("modified_instruction")
            if isinstance(modified, str) and modified.strip():
                return modified
    logger.warning(
        "consistency rewrite returned no modified_instruction; keeping %r",
        joined_instruction[:80],
    )
    return joined_instruction


def distill_pair(
    candidate: ChainCandidate,
    tasks: dict[str, SeedTask],
    summaries: dict[str, SummarizedInstruction],
    gateway: Gateway,
    *,
    seed: int = 0,
    model_id: str = "default",
    rewrite: bool = True,
    prompts_dir=None,
    use_cache: bool = True,
) -> tuple[ComposedChain | None, str | None]:
    """Turn a length-2 candidate into a ComposedChain, or report why not.

    Returns (chain, None) on a valid verdict and (None, reason) otherwise.
    The first hop's output is the seed instance's original output; the second
    comes from the composability verdict.
    """
    if len(candidate.hops) != 2:
        raise ValidationError("distill_pair expects a length-2 candidate")
    try:
        first_task = tasks[candidate.hops[0]]
        first_sum = summaries[candidate.hops[0]]
        second_sum = summaries[candidate.hops[1]]
    except KeyError as exc:
        raise ValidationError(f"candidate references unknown task {exc}") from None
    rng = stable_rng("distill-instance", seed, *candidate.hops)
    instance = rng.choice(list(first_task.instances))
    verdict = check_composability(
        first_sum.summary,
        instance.output,
        second_sum.summary,
        gateway,
        model_id=model_id,
        prompts_dir=prompts_dir,
        use_cache=use_cache,
    )
    if not verdict.valid:
        return None, verdict.reason or "not composable"
    joined = compose_instruction_text([first_sum.summary, second_sum.summary])
    if rewrite:
        joined = rewrite_consistency(
            joined,
            [first_sum.summary, second_sum.summary],
            gateway,
            model_id=model_id,
            prompts_dir=prompts_dir,
            use_cache=use_cache,
        )
    chain = ComposedChain(
        hops=(
            ChainHop(first_task.task_id, first_sum.summary),
            ChainHop(candidate.hops[1], second_sum.summary),
        ),
        joined_instruction=joined,
        input=instance.input,
        hop_outputs=(instance.output, verdict.output),
        categories=candidate.categories,
    )
    return chain, None


def extend_chains(
    chains_k: list[ComposedChain],
    pairs_2: list[ComposedChain],
    gateway: Gateway,
    *,
    rules: CategoryRules | None = None,
    model_id: str = "default",
    rewrite: bool = False,
    prompts_dir=None,
    use_cache: bool = True,
    rejections: list[dict] | None = None,
) -> list[ComposedChain]:
    """Grow every chain ending at task y with every pair (y, z) by one hop.

    The joined task must not already occur in the chain, and the chain's
    current final category must not be final-only (extension would push it
    mid-chain). Each added hop's output comes from a fresh composability
    check on the chain's last output. Duplicate hop sequences are dropped.
    """
    for pair in pairs_2:
        if pair.chain_length != 2:
            raise ValidationError("pairs_2 must contain only length-2 chains")
    pairs_by_first: dict[str, list[ComposedChain]] = {}
    for pair in pairs_2:
        pairs_by_first.setdefault(pair.hops[0].task_id, []).append(pair)

    extended: list[ComposedChain] = []
    seen: set[tuple[str, ...]] = set()
    for chain in chains_k:
        last = chain.hops[-1]
        if rules is not None and chain.categories[-1] in rules.final_only:
            continue
        used_ids = {hop.task_id for hop in chain.hops}
        for pair in pairs_by_first.get(last.task_id, []):
            new_hop = pair.hops[1]
            new_category = pair.categories[1]
            if new_hop.task_id in used_ids:
                continue
            key = tuple(hop.task_id for hop in chain.hops) + (new_hop.task_id,)
            if key in seen:
                continue
            verdict = check_composability(
                last.instruction,
                chain.hop_outputs[-1],
                new_hop.instruction,
                gateway,
                model_id=model_id,
                prompts_dir=prompts_dir,
                use_cache=use_cache,
            )
            if not verdict.valid:
                if rejections is not None:
                    rejections.append(
                        {
                            "candidate": {"hops": list(key), "categories": list(chain.categories) + [new_category]},
                            "stage": "extension-composability",
                            "reason": verdict.reason or "not composable",
                        }
                    )
                continue
            seen.add(key)
            texts = [hop.instruction for hop in chain.hops] + [new_hop.instruction]
            joined = compose_instruction_text(texts)
            if rewrite:
                joined = rewrite_consistency(
                    joined, texts, gateway,
                    model_id=model_id, prompts_dir=prompts_dir, use_cache=use_cache,
                )
            extended.append(
                ComposedChain(
                    hops=chain.hops + (new_hop,),
                    joined_instruction=joined,
                    input=chain.input,
                    hop_outputs=chain.hop_outputs + (verdict.output,),
                    categories=chain.categories + (new_category,),
                    variant=chain.variant,
                    flagged=chain.flagged,
                )
            )
    return extended


def build_irrelevant_variant(
    chain: ComposedChain, corpus: list[SeedTask], seed: int
) -> ComposedChain:
    """Replace o2..ok with seeded-random outputs from unrelated corpus tasks."""
    if chain.chain_length < 2:
        raise ValidationError("irrelevant variant needs a chain of length >= 2")
    chain_ids = {hop.task_id for hop in chain.hops}
    pool = [
        inst.output
        for task in corpus
        if task.task_id not in chain_ids
        for inst in task.instances
    ]
    if not pool:
        raise ValidationError(
            "corpus too small: no instance outside the chain's tasks to draw from"
        )
    rng = stable_rng("irrelevant", seed, *(hop.task_id for hop in chain.hops))
    new_outputs = (chain.hop_outputs[0],) + tuple(
        rng.choice(pool) for _ in range(chain.chain_length - 1)
    )
    return replace(chain, hop_outputs=new_outputs, variant="irrelevant")


def build_concise_variant(
    chain: ComposedChain,
    gateway: Gateway,
    *,
    model_id: str = "default",
    retry_limit: int = 2,
    prompts_dir=None,
    use_cache: bool = True,
) -> ComposedChain:
    """Compress the joined instruction to at most 20 words; flag on failure."""
    if chain.chain_length < 2:
        raise ValidationError("concise variant needs a chain of length >= 2")
    template = prompts.load_prompt(prompts.CONCISE, prompts_dir)
    prompt = prompts.render_prompt(template, input=chain.joined_instruction)
    request = LlmRequest(model_id=model_id, prompt=prompt)
    best: str | None = None
    for attempt in range(retry_limit + 1):
        if attempt == 0 and use_cache:
            response = gateway.cached_complete(request)
        else:
            response = gateway.complete(request)
        summary = response.text.strip().strip('"')
        if not summary:
            continue
        if word_count(summary) <= CONCISE_MAX_WORDS:
            return replace(chain, joined_instruction=summary, variant="concise", flagged=False)
        if best is None or word_count(summary) < word_count(best):
            best = summary
    return replace(
        chain,
        joined_instruction=best if best is not None else chain.joined_instruction,
        variant="concise",
        flagged=True,
    )


def serialize_chains(chains: list[ComposedChain], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for chain in chains:
            record = {
                "hops": [
                    {"task_id": hop.task_id, "instruction": hop.instruction}
                    for hop in chain.hops
                ],
                "joined_instruction": chain.joined_instruction,
                "input": chain.input,
                "hop_outputs": list(chain.hop_outputs),
                "chain_length": chain.chain_length,
                "categories": list(chain.categories),
                "variant": chain.variant,
                "flagged": chain.flagged,
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_chains(path: str | Path) -> list[ComposedChain]:
    path = Path(path)
    chains = []
    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: line {line_number}: invalid JSON: {exc}") from exc
            try:
                chain = ComposedChain(
                    hops=tuple(ChainHop(h["task_id"], h["instruction"]) for h in obj["hops"]),
                    joined_instruction=obj["joined_instruction"],
                    input=obj["input"],
                    hop_outputs=tuple(obj["hop_outputs"]),
                    categories=tuple(obj["categories"]),
                    variant=obj.get("variant", "standard"),
                    flagged=bool(obj.get("flagged", False)),
                )
            except (KeyError, TypeError, ValidationError) as exc:
                raise ParseError(f"{path}: line {line_number}: bad chain record: {exc}") from None
            if chain.chain_length != obj.get("chain_length", chain.chain_length):
                raise ParseError(
                    f"{path}: line {line_number}: chain_length field disagrees with hops"
                )
            chains.append(chain)
    return chains
