"""Assemble chains into serialized train/test datasets.

Targets are scaffolded with hop markers:

    Task 1 output and task 2 input: <o1> Task 2 output: <o2>

The renderer emits only this canonical long form; the parser additionally
tolerates the shorthand variants that fine-tuned models are known to produce
("1 output and 2 input:", "2 output:", swapped "task 1 input and task 2
output."), assigning each span to the hop named next to "output".
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, replace
from pathlib import Path

from .composer import ComposedChain
from .corpus import SeedTask, sample_instances
from .errors import ParseError, ValidationError
from .seeding import stable_rng
from .summarizer import word_count

MARKER_RE = re.compile(
    r"(?:task\s+)?(?P<out1>\d+)\s+output(?:\s+and\s+(?:task\s+)?\d+\s+input)?\s*:"
    r"|(?:task\s+)?\d+\s+input\s+and\s+(?:task\s+)?(?P<out2>\d+)\s+output\s*[:.]",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class CoiExample:
    example_id: str
    instruction: str
    input: str
    target: str
    chain_length: int
    category_path: tuple[str, ...]
    split: str = "train"
    variant: str = "standard"
    source: str | None = None

    def __post_init__(self) -> None:
        if self.chain_length < 1:
            raise ValidationError("chain_length must be >= 1")
        if len(self.category_path) != self.chain_length:
            raise ValidationError("category_path length must equal chain_length")
        if self.split not in ("train", "test"):
            raise ValidationError(f"split must be train or test, got {self.split!r}")


@dataclass(frozen=True)
class DatasetReport:
    counts_by_length: dict[int, dict[str, int]]
    unique_category_tuples: dict[int, int]
    mean_instruction_words: dict[int, float]

    def total(self) -> int:
        return sum(c["train"] + c["test"] for c in self.counts_by_length.values())

    def to_json_dict(self) -> dict:
        return {
            "counts_by_length": {
                str(k): dict(v) for k, v in sorted(self.counts_by_length.items())
            },
            "unique_category_tuples": {
                str(k): v for k, v in sorted(self.unique_category_tuples.items())
            },
            "mean_instruction_words": {
                str(k): round(v, 4) for k, v in sorted(self.mean_instruction_words.items())
            },
            "total": self.total(),
        }

    def to_text(self) -> str:
        lines = [
            f"{'length':>6}  {'train':>7}  {'test':>7}  {'tuples':>7}  {'mean words':>10}",
        ]
        for k in sorted(self.counts_by_length):
            counts = self.counts_by_length[k]
            lines.append(
                f"{k:>6}  {counts['train']:>7}  {counts['test']:>7}  "
                f"{self.unique_category_tuples.get(k, 0):>7}  "
                f"{self.mean_instruction_words.get(k, 0.0):>10.2f}"
            )
        lines.append(f"total examples: {self.total()}")
        return "\n".join(lines)


def render_target(hop_outputs: list[str] | tuple[str, ...]) -> str:
    """Render hop outputs into the canonical scaffolded target string.

    A single output is passed through verbatim. Hop texts containing a marker
    substring are rejected rather than escaped, since escaping would alter
    training text.
    """
    if not hop_outputs:
        raise ValidationError("render_target needs at least one hop output")
    for i, text in enumerate(hop_outputs, 1):
        if MARKER_RE.search(text):
            raise ValidationError(
                f"hop {i} output contains a scaffold marker and cannot be rendered: {text[:60]!r}"
            )
    k = len(hop_outputs)
    if k == 1:
        return hop_outputs[0]
    segments = [
        f"Task {i} output and task {i + 1} input: {hop_outputs[i - 1]}"
        for i in range(1, k)
    ]
    segments.append(f"Task {k} output: {hop_outputs[k - 1]}")
    return " ".join(segments)


def extract_spans(text: str, k: int) -> list[str | None]:
    """Tolerant span recovery: one optional span per hop index 1..k.

    Spans run from a marker to the next marker (or end of text) and are
    whitespace-trimmed; empty segments count as unrecovered. For k == 1 a
    marker-free text is itself the hop span, matching unscaffolded
    single-instruction outputs.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    matches = list(MARKER_RE.finditer(text))
    if not matches:
        if k == 1 and text.strip():
            return [text.strip()]
        return [None] * k
    spans: list[str | None] = [None] * k
    for index, match in enumerate(matches):
        hop = int(match.group("out1") or match.group("out2"))
        if not (1 <= hop <= k) or spans[hop - 1] is not None:
            continue
        end = matches[index + 1].start() if index + 1 < len(matches) else len(text)
        segment = text[match.end() : end].strip()
        if segment:
            spans[hop - 1] = segment
    return spans


def parse_target(text: str, k: int) -> list[str]:
    """Strict inverse of render_target: exactly k spans or a ParseError."""
    spans = extract_spans(text, k)
    if any(span is None for span in spans):
        recovered = {i + 1: span for i, span in enumerate(spans) if span is not None}
        raise ParseError(
            f"recovered {len(recovered)} of {k} hop spans (present: {sorted(recovered)})"
        )
    return [span for span in spans if span is not None]


def chain_to_example(chain: ComposedChain, split: str = "train") -> CoiExample:
    digest = hashlib.sha256(
        json.dumps(
            {
                "hops": [hop.task_id for hop in chain.hops],
                "input": chain.input,
                "outputs": list(chain.hop_outputs),
                "variant": chain.variant,
            },
            sort_keys=True,
            ensure_ascii=False,
        ).encode("utf-8")
    ).hexdigest()[:12]
    return CoiExample(
        example_id=f"coi{chain.chain_length}-{digest}",
        instruction=chain.joined_instruction,
        input=chain.input,
        target=render_target(chain.hop_outputs),
        chain_length=chain.chain_length,
        category_path=chain.categories,
        split=split,
        variant=chain.variant,
    )


def task_to_examples(
    task: SeedTask, summary: str, n: int, seed: int, split: str = "train"
) -> list[CoiExample]:
    """Single-instruction examples from up to n sampled instances of a task."""
    examples = []
    for idx, instance in enumerate(sample_instances(task, n, seed)):
        digest = hashlib.sha256(
            f"{task.task_id}\x1f{idx}\x1f{instance.input}".encode("utf-8")
        ).hexdigest()[:12]
        examples.append(
            CoiExample(
                example_id=f"coi1-{digest}",
                instruction=summary,
                input=instance.input,
                target=render_target([instance.output]),
                chain_length=1,
                category_path=(task.category,),
                split=split,
            )
        )
    return examples


def limit_per_category(
    examples: list[CoiExample], cap: int, seed: int
) -> list[CoiExample]:
    """Keep at most `cap` seeded picks per distinct category path, stable order."""
    if cap < 1:
        raise ValidationError(f"cap must be >= 1, got {cap}")
    groups: dict[tuple[str, ...], list[int]] = {}
    for i, example in enumerate(examples):
        groups.setdefault(example.category_path, []).append(i)
    keep: set[int] = set()
    for path, indices in groups.items():
        if len(indices) <= cap:
            keep.update(indices)
            continue
        rng = stable_rng("cap", seed, *path)
        keep.update(indices[j] for j in sorted(rng.sample(range(len(indices)), cap)))
    return [example for i, example in enumerate(examples) if i in keep]


def split_train_test(
    examples: list[CoiExample], test_fraction: float, seed: int
) -> list[CoiExample]:
    """Assign splits, stratified by category path; half-up rounding per group."""
    if not 0.0 <= test_fraction <= 1.0:
        raise ValidationError(f"test_fraction must be in [0, 1], got {test_fraction}")
    groups: dict[tuple[str, ...], list[int]] = {}
    for i, example in enumerate(examples):
        groups.setdefault(example.category_path, []).append(i)
    test_indices: set[int] = set()
    for path, indices in groups.items():
        n_test = int(len(indices) * test_fraction + 0.5)
        if n_test == 0:
            continue
        rng = stable_rng("split", seed, *path)
        test_indices.update(indices[j] for j in rng.sample(range(len(indices)), n_test))
    return [
        replace(example, split="test" if i in test_indices else "train")
        for i, example in enumerate(examples)
    ]


def build_mixture(
    parts: list[tuple[list[CoiExample], set[int] | None]],
    names: list[str] | None = None,
) -> list[CoiExample]:
    """Concatenate selected chain-length slices, tagging each example's source."""
    if names is not None and len(names) != len(parts):
        raise ValidationError("names must align with parts")
    mixture: list[CoiExample] = []
    seen: dict[str, str] = {}
    for i, (examples, lengths) in enumerate(parts):
        name = names[i] if names is not None else f"part{i}"
        for example in examples:
            if lengths is not None and example.chain_length not in lengths:
                continue
            if example.example_id in seen:
                raise ValidationError(
                    f"duplicate example_id {example.example_id!r} across parts "
                    f"({seen[example.example_id]} and {name})"
                )
            seen[example.example_id] = name
            mixture.append(replace(example, source=name))
    return mixture


def compute_report(examples: list[CoiExample]) -> DatasetReport:
    counts: dict[int, dict[str, int]] = {}
    tuples: dict[int, set[tuple[str, ...]]] = {}
    words: dict[int, list[int]] = {}
    for example in examples:
        k = example.chain_length
        counts.setdefault(k, {"train": 0, "test": 0})[example.split] += 1
        tuples.setdefault(k, set()).add(example.category_path)
        words.setdefault(k, []).append(word_count(example.instruction))
    return DatasetReport(
        counts_by_length=counts,
        unique_category_tuples={k: len(v) for k, v in tuples.items()},
        mean_instruction_words={k: sum(v) / len(v) for k, v in words.items()},
    )


_REQUIRED_FIELDS = {
    "example_id": str,
    "instruction": str,
    "input": str,
    "target": str,
    "chain_length": int,
    "category_path": list,
    "split": str,
    "variant": str,
}


def serialize_dataset(examples: list[CoiExample], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for example in examples:
            record = {
                "example_id": example.example_id,
                "instruction": example.instruction,
                "input": example.input,
                "target": example.target,
                "chain_length": example.chain_length,
                "category_path": list(example.category_path),
                "split": example.split,
                "variant": example.variant,
            }
            if example.source is not None:
                record["source"] = example.source
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_dataset(path: str | Path) -> list[CoiExample]:
    path = Path(path)
    examples = []
    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: line {line_number}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise ParseError(f"{path}: line {line_number}: expected a JSON object")
            for key, kind in _REQUIRED_FIELDS.items():
                if key not in obj:
                    raise ParseError(f"{path}: line {line_number}: missing field `{key}`")
                if not isinstance(obj[key], kind) or (kind is int and isinstance(obj[key], bool)):
                    raise ParseError(
                        f"{path}: line {line_number}: field `{key}` must be {kind.__name__}"
                    )
            if not all(isinstance(c, str) for c in obj["category_path"]):
                raise ParseError(
                    f"{path}: line {line_number}: category_path must be a list of strings"
                )
            source = obj.get("source")
            if source is not None and not isinstance(source, str):
                raise ParseError(f"{path}: line {line_number}: field `source` must be a string")
            try:
                examples.append(
                    CoiExample(
                        example_id=obj["example_id"],
                        instruction=obj["instruction"],
                        input=obj["input"],
                        target=obj["target"],
                        chain_length=obj["chain_length"],
                        category_path=tuple(obj["category_path"]),
                        split=obj["split"],
                        variant=obj["variant"],
                        source=source,
                    )
                )
            except ValidationError as exc:
                raise ParseError(f"{path}: line {line_number}: {exc}") from None
    return examples
