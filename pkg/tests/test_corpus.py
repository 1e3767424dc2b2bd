from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from coi_pipeline.corpus import (
    Instance,
    SeedTask,
    filter_english_input,
    load_seed_corpus,
    sample_instances,
    serialize_seed_corpus,
)
from coi_pipeline.errors import ParseError, ValidationError


def make_task(task_id="t1", category="Summarization", lang="en", n_instances=3):
    return SeedTask(
        task_id=task_id,
        category=category,
        instruction=f"Do the {category} thing for {task_id}.",
        input_language=lang,
        output_language="en",
        instances=tuple(
            Instance(input=f"in-{task_id}-{i}", output=f"out-{task_id}-{i}")
            for i in range(n_instances)
        ),
    )


def test_empty_file_gives_empty_list(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    assert load_seed_corpus(path) == []


def test_fixture_has_twelve_tasks(mini_corpus_path):
    # Independent count: raw nonblank line count of the fixture file.
    raw_lines = [
        line for line in mini_corpus_path.read_text(encoding="utf-8").splitlines() if line.strip()
    ]
    tasks = load_seed_corpus(mini_corpus_path)
    assert len(raw_lines) == 12
    assert len(tasks) == 12
    assert len({t.task_id for t in tasks}) == 12


def test_missing_category_names_line(tmp_path):
    path = tmp_path / "bad.jsonl"

    def record(task_id, **extra):
        base = {
            "task_id": task_id, "category": "X", "instruction": "i",
            "input_language": "en", "output_language": "en",
            "instances": [{"input": "x", "output": "y"}],
        }
        base.update(extra)
        return json.dumps(base)

    bad = record("c")
    bad = json.dumps({k: v for k, v in json.loads(bad).items() if k != "category"})
    path.write_text(f"{record('a')}\n{record('b')}\n{bad}\n", encoding="utf-8")
    with pytest.raises(ParseError, match="line 3.*category"):
        load_seed_corpus(path)


def test_malformed_json_names_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"task_id": "a"\n', encoding="utf-8")
    with pytest.raises(ParseError, match="line 1"):
        load_seed_corpus(path)


def test_duplicate_task_id_rejected(tmp_path):
    record = json.dumps(
        {
            "task_id": "dup", "category": "X", "instruction": "i",
            "input_language": "en", "output_language": "en",
            "instances": [{"input": "x", "output": "y"}],
        }
    )
    path = tmp_path / "dup.jsonl"
    path.write_text(f"{record}\n{record}\n", encoding="utf-8")
    with pytest.raises(ValidationError, match="duplicate task_id"):
        load_seed_corpus(path)


def test_zero_instances_rejected(tmp_path):
    path = tmp_path / "zero.jsonl"
    path.write_text(
        json.dumps(
            {
                "task_id": "a", "category": "X", "instruction": "i",
                "input_language": "en", "output_language": "en", "instances": [],
            }
        )
        + "\n",
        encoding="utf-8",
    )
    with pytest.raises(ValidationError, match="no instances"):
        load_seed_corpus(path)


def test_empty_instance_fields_need_allow_empty(tmp_path):
    path = tmp_path / "empties.jsonl"
    path.write_text(
        json.dumps(
            {
                "task_id": "a", "category": "X", "instruction": "i",
                "input_language": "en", "output_language": "en",
                "instances": [{"input": "", "output": "y"}],
            }
        )
        + "\n",
        encoding="utf-8",
    )
    with pytest.raises(ValidationError, match="empty input or output"):
        load_seed_corpus(path)
    tasks = load_seed_corpus(path, allow_empty=True)
    assert tasks[0].instances[0].input == ""


def test_round_trip_is_identity(tmp_path, mini_corpus_path):
    tasks = load_seed_corpus(mini_corpus_path)
    out = tmp_path / "copy.jsonl"
    serialize_seed_corpus(tasks, out)
    assert load_seed_corpus(out) == tasks


def test_filter_english_keeps_order(mini_corpus_path):
    tasks = load_seed_corpus(mini_corpus_path)
    english = filter_english_input(tasks)
    assert len(english) == 10
    assert all(t.input_language == "en" for t in english)
    ids = [t.task_id for t in tasks if t.input_language == "en"]
    assert [t.task_id for t in english] == ids


def test_filter_english_idempotent(mini_corpus_path):
    tasks = load_seed_corpus(mini_corpus_path)
    once = filter_english_input(tasks)
    assert filter_english_input(once) == once


def test_filter_english_trivial_cases():
    assert filter_english_input([]) == []
    en1, fr, en2 = make_task("a"), make_task("b", lang="fr"), make_task("c")
    assert filter_english_input([en1, fr, en2]) == [en1, en2]


def test_sample_zero_gives_empty():
    assert sample_instances(make_task(), 0, seed=1) == []


def test_sample_clamps_to_available():
    task = make_task(n_instances=3)
    assert sorted(sample_instances(task, 5, seed=1), key=lambda i: i.input) == list(task.instances)


def test_sample_negative_rejected():
    with pytest.raises(ValidationError):
        sample_instances(make_task(), -1, seed=1)


def test_sample_deterministic():
    task = make_task(n_instances=8)
    assert sample_instances(task, 2, seed=42) == sample_instances(task, 2, seed=42)


@given(n=st.integers(min_value=0, max_value=12), seed=st.integers(min_value=0, max_value=999))
def test_sample_is_duplicate_free_subset(n, seed):
    task = make_task(n_instances=7)
    picked = sample_instances(task, n, seed)
    assert len(picked) == min(n, 7)
    assert len(set(picked)) == len(picked)
    assert all(inst in task.instances for inst in picked)
