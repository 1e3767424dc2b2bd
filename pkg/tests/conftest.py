from __future__ import annotations

import json
from pathlib import Path

import pytest

from coi_pipeline.gateway import Gateway, MockProvider

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def mini_corpus_path() -> Path:
    return FIXTURES / "mini_corpus.jsonl"


@pytest.fixture(scope="session")
def mock_table_path() -> Path:
    return FIXTURES / "mock_table.json"


@pytest.fixture
def mock_gateway():
    """Factory for gateways over in-test canned tables, no backoff sleeps."""

    def make(table=None, *, rules=None, default=None, fail_times=0, retry_limit=3,
             cache_dir=None, **provider_kwargs) -> Gateway:
        provider = MockProvider(
            table, rules=rules, default=default, fail_times=fail_times, **provider_kwargs
        )
        return Gateway(provider, retry_limit=retry_limit, cache_dir=cache_dir, sleep=lambda _: None)

    return make


def write_config(path: Path, **overrides) -> Path:
    """Write a pipeline config file for CLI tests."""
    lines = [f"{key} = {value}" for key, value in overrides.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_jsonl(path: Path) -> list[dict]:
    with Path(path).open("r", encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]
