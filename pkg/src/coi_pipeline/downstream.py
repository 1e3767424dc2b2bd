"""Bilingual summarization scoring.

Model outputs are split into a source-language and a target-language summary,
either by the scaffold markers (chain-tuned models) or by a character-trigram
language identifier (baseline models with no marker structure), then each
side is scored against its reference.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .dataset_builder import extract_spans
from .errors import ParseError, ValidationError
from .evaluator import rouge_l

logger = logging.getLogger(__name__)

UNKNOWN = "unknown"

_LETTERS_RE = re.compile(r"[\W\d_]+", re.UNICODE)
_SENTENCE_RE = re.compile(r"[^.!?\n]+[.!?]*\s*")


@dataclass(frozen=True)
class BilingualSummary:
    src_span: str | None
    tgt_span: str | None
    method: str


@dataclass(frozen=True)
class DownstreamReport:
    rouge_all: float
    rouge_src: float
    rouge_tgt: float
    valid_src: int
    valid_tgt: int
    total: int

    def to_json_dict(self) -> dict:
        return {
            "rouge_all": round(100.0 * self.rouge_all, 4),
            "rouge_src": round(100.0 * self.rouge_src, 4),
            "rouge_tgt": round(100.0 * self.rouge_tgt, 4),
            "valid_src": self.valid_src,
            "valid_tgt": self.valid_tgt,
            "total": self.total,
        }

    def to_text(self) -> str:
        d = self.to_json_dict()
        lines = [
            f"ROUGE-L (all)      {d['rouge_all']:>8.2f}",
            f"ROUGE-L (src)      {d['rouge_src']:>8.2f}",
            f"ROUGE-L (tgt)      {d['rouge_tgt']:>8.2f}",
            f"#valid src outputs {self.valid_src:>8}",
            f"#valid tgt outputs {self.valid_tgt:>8}",
            f"total              {self.total:>8}",
        ]
        return "\n".join(lines)


def _trigrams(text: str) -> list[str]:
    normalized = _LETTERS_RE.sub(" ", text.lower()).strip()
    if not normalized:
        return []
    padded = f" {normalized} "
    return [padded[i : i + 3] for i in range(len(padded) - 2)]


def _ranked(grams: list[str], top_k: int) -> list[str]:
    counts = Counter(grams)
    ordered = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return [gram for gram, _ in ordered[:top_k]]


class TrigramLanguageIdentifier:
    """Rank-based character-trigram classifier (out-of-place distance).

    Any object with a ``classify(text) -> str`` method can stand in for this
    class, so an external identifier can be plugged into the split functions.
    """

    def __init__(
        self,
        profiles: dict[str, list[str]],
        *,
        top_k: int = 400,
        min_trigrams: int = 4,
        max_distance: float = 0.95,
    ) -> None:
        if not profiles:
            raise ValidationError("identifier needs at least one language profile")
        self.top_k = top_k
        self.min_trigrams = min_trigrams
        self.max_distance = max_distance
        self._ranks = {
            lang: {gram: rank for rank, gram in enumerate(ranked[:top_k])}
            for lang, ranked in profiles.items()
        }

    @classmethod
    def from_training_texts(
        cls, texts: dict[str, str], *, top_k: int = 400, **kwargs
    ) -> "TrigramLanguageIdentifier":
        profiles = {lang: _ranked(_trigrams(text), top_k) for lang, text in texts.items()}
        return cls(profiles, top_k=top_k, **kwargs)

    @classmethod
    def bundled(cls) -> "TrigramLanguageIdentifier":
        """Identifier for the shipped en/fr/es profiles."""
        return _bundled_identifier()

    def languages(self) -> list[str]:
        return sorted(self._ranks)

    def classify(self, text: str) -> str:
        grams = _trigrams(text)
        if len(grams) < self.min_trigrams:
            return UNKNOWN
        text_ranked = _ranked(grams, self.top_k)
        best_lang, best_distance = UNKNOWN, float("inf")
        for lang, ranks in self._ranks.items():
            total = 0
            for rank, gram in enumerate(text_ranked):
                total += abs(rank - ranks[gram]) if gram in ranks else self.top_k
            distance = total / (len(text_ranked) * self.top_k)
            if distance < best_distance:
                best_lang, best_distance = lang, distance
        if best_distance > self.max_distance:
            return UNKNOWN
        return best_lang


@lru_cache(maxsize=1)
def _bundled_identifier() -> TrigramLanguageIdentifier:
    base = resources.files("coi_pipeline").joinpath("assets/langdata")
    texts = {}
    for entry in sorted(base.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".txt"):
            texts[entry.name[:-4]] = entry.read_text(encoding="utf-8")
    return TrigramLanguageIdentifier.from_training_texts(texts)


def lang_identify(text: str, identifier: TrigramLanguageIdentifier | None = None) -> str:
    """Classify text among the configured languages, or ``unknown``."""
    ident = identifier if identifier is not None else _bundled_identifier()
    return ident.classify(text)


def split_by_marker(output: str) -> BilingualSummary:
    """Scaffold-marker split: hop 1 becomes src, hop 2 becomes tgt."""
    spans = extract_spans(output, 2)
    return BilingualSummary(src_span=spans[0], tgt_span=spans[1], method="marker")


def split_by_language(
    output: str,
    src: str,
    tgt: str,
    identifier: TrigramLanguageIdentifier | None = None,
) -> BilingualSummary:
    """Language-identification split for outputs without marker structure.

    The output is cut into sentences; contiguous same-language runs are
    formed, and the longest run per language becomes that side's span.
    Sentences classified as unknown break runs and stay unassigned.
    """
    if src == tgt:
        raise ValidationError("source and target language must differ")
    ident = identifier if identifier is not None else _bundled_identifier()
    runs: list[tuple[str, int, int]] = []
    for match in _SENTENCE_RE.finditer(output):
        lang = ident.classify(match.group())
        if runs and runs[-1][0] == lang:
            runs[-1] = (lang, runs[-1][1], match.end())
        else:
            runs.append((lang, match.start(), match.end()))

    def longest(language: str) -> str | None:
        best = None
        for lang, start, end in runs:
            if lang != language:
                continue
            if best is None or end - start > best[1] - best[0]:
                best = (start, end)
        if best is None:
            return None
        span = output[best[0] : best[1]].strip()
        return span or None

    return BilingualSummary(src_span=longest(src), tgt_span=longest(tgt), method="language_id")


def load_references(path: str | Path) -> dict[str, dict]:
    """Load references JSONL keyed by example_id.

    Records: {"example_id", "src_ref", "tgt_ref", "src_lang", "tgt_lang"}.
    """
    path = Path(path)
    refs: dict[str, dict] = {}
    fields = ("example_id", "src_ref", "tgt_ref", "src_lang", "tgt_lang")
    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: line {line_number}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict) or not all(isinstance(obj.get(f), str) for f in fields):
                raise ParseError(
                    f"{path}: line {line_number}: expected string fields {', '.join(fields)}"
                )
            if obj["example_id"] in refs:
                raise ValidationError(
                    f"{path}: line {line_number}: duplicate example_id {obj['example_id']!r}"
                )
            refs[obj["example_id"]] = {f: obj[f] for f in fields[1:]}
    return refs


def evaluate_downstream(
    outputs: dict[str, str],
    refs: dict[str, dict],
    mode: str = "marker",
    identifier: TrigramLanguageIdentifier | None = None,
) -> DownstreamReport:
    """Score each output's source/target spans against the references.

    `outputs` maps example_id to the raw model output; `refs` maps example_id
    to {"src_ref", "tgt_ref", "src_lang", "tgt_lang"}. Outputs without a
    reference are skipped with a warning and do not count toward the total.
    An absent span contributes exactly 0 to its mean.
    """
    if mode not in ("marker", "language_id"):
        raise ValidationError(f"unknown downstream mode {mode!r}")
    sum_all = sum_src = sum_tgt = 0.0
    valid_src = valid_tgt = total = 0
    for example_id, output in outputs.items():
        ref = refs.get(example_id)
        if ref is None:
            logger.warning("no reference for example %s; skipping", example_id)
            continue
        if mode == "marker":
            summary = split_by_marker(output)
        else:
            summary = split_by_language(
                output, ref["src_lang"], ref["tgt_lang"], identifier
            )
        total += 1
        sum_all += rouge_l(output, ref["tgt_ref"]).f1
        sum_src += rouge_l(summary.src_span or "", ref["src_ref"]).f1
        sum_tgt += rouge_l(summary.tgt_span or "", ref["tgt_ref"]).f1
        valid_src += summary.src_span is not None
        valid_tgt += summary.tgt_span is not None
    if total == 0:
        raise ValidationError("no scorable examples (all outputs lacked references)")
    return DownstreamReport(
        rouge_all=sum_all / total,
        rouge_src=sum_src / total,
        rouge_tgt=sum_tgt / total,
        valid_src=valid_src,
        valid_tgt=valid_tgt,
        total=total,
    )
