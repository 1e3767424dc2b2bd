"""Pipeline configuration: key=value file plus CLI flag overrides.

Flags win over the file. Unknown keys are rejected. Every path-valued key
that is set must exist at startup, except output and cache locations, which
are created on demand. The API key never lives in a config file; it comes
from the COI_API_KEY environment variable.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError
from .gateway import Gateway, MockProvider, RemoteProvider


@dataclass
class PipelineConfig:
    provider: str = "mock"
    model_id: str = "default"
    requests_per_minute: int | None = None
    retry_limit: int = 3
    cache_dir: str | None = None
    mock_table: str | None = None
    api_base: str = "https://api.openai.com/v1"

    seed_corpus: str | None = None
    rules_file: str | None = None
    prompts_dir: str | None = None
    output_dir: str = "coi_out"

    sample_seed: int = 13
    split_seed: int = 17
    judge_seed: int = 19

    instances_per_task: int = 10
    cap_per_category: int = 3
    max_chain_length: int = 3
    test_fraction: float = 0.2
    test_only_from: int = 4
    summary_retry_limit: int = 2
    concise_retry_limit: int = 2
    workers: int = 4

    consistency_rewrite: bool = True
    allow_empty: bool = False
    variant: str = "standard"

    # Paths validated for existence when set; output/cache are created instead.
    _INPUT_PATH_KEYS = ("mock_table", "seed_corpus", "rules_file", "prompts_dir")
    _LOCATION_KEYS = ("output_dir", "cache_dir")

    @classmethod
    def field_types(cls) -> dict[str, type]:
        hints = {
            "provider": str, "model_id": str, "requests_per_minute": int,
            "retry_limit": int, "cache_dir": str, "mock_table": str,
            "api_base": str, "seed_corpus": str, "rules_file": str,
            "prompts_dir": str, "output_dir": str, "sample_seed": int,
            "split_seed": int, "judge_seed": int, "instances_per_task": int,
            "cap_per_category": int, "max_chain_length": int,
            "test_fraction": float, "test_only_from": int,
            "summary_retry_limit": int, "concise_retry_limit": int,
            "workers": int, "consistency_rewrite": bool, "allow_empty": bool,
            "variant": str,
        }
        return hints

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        config = cls()
        types = cls.field_types()
        for line_number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}: line {line_number}: expected key = value")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in types:
                raise ValidationError(f"{path}: line {line_number}: unknown config key {key!r}")
            setattr(config, key, _coerce(key, value, types[key], f"{path}: line {line_number}"))
        return config

    def validate(self) -> None:
        if self.provider not in ("mock", "remote"):
            raise ValidationError(f"provider must be mock or remote, got {self.provider!r}")
        if self.variant not in ("standard", "concise", "irrelevant"):
            raise ValidationError(f"unknown variant {self.variant!r}")
        if not 0.0 <= self.test_fraction <= 1.0:
            raise ValidationError(f"test_fraction must be in [0, 1], got {self.test_fraction}")
        if self.max_chain_length < 2:
            raise ValidationError("max_chain_length must be >= 2")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        for key in self._INPUT_PATH_KEYS:
            value = getattr(self, key)
            if value is not None and not Path(value).exists():
                raise ValidationError(f"{key} not found: {value}")

    def effective_dict(self, include_locations: bool = False) -> dict:
        """Config as a plain dict; locations are dropped by default so runs
        into different directories share a manifest digest."""
        data = dataclasses.asdict(self)
        if not include_locations:
            for key in self._LOCATION_KEYS:
                data.pop(key, None)
        return data

    def seeds(self) -> dict[str, int]:
        return {
            "sample_seed": self.sample_seed,
            "split_seed": self.split_seed,
            "judge_seed": self.judge_seed,
        }


def _coerce(key: str, value: str, kind: type, where: str):
    try:
        if kind is bool:
            lowered = value.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"expected true/false, got {value!r}")
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        return value
    except ValueError as exc:
        raise ValidationError(f"{where}: bad value for {key}: {exc}") from None


def build_gateway(config: PipelineConfig) -> Gateway:
    if config.provider == "mock":
        if config.mock_table is not None:
            provider = MockProvider.from_file(config.mock_table)
        else:
            provider = MockProvider()
    else:
        provider = RemoteProvider(api_base=config.api_base)
    return Gateway(
        provider,
        retry_limit=config.retry_limit,
        requests_per_minute=config.requests_per_minute,
        cache_dir=config.cache_dir,
    )
