"""Prompt template assets and rendering.

Templates are plain text files with `{name}` placeholders; everything else in
the file, braces included, is literal. Bundled assets ship with the package
and can be overridden by pointing `prompts_dir` at a directory containing
files with the same names.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .errors import ValidationError

SUMMARIZE = "summarize.txt"
COMPOSABILITY = "composability.txt"
CONSISTENCY = "consistency.txt"
CONCISE = "concise.txt"
SEPARATION = "separation.txt"
JUDGE = "judge.txt"


def load_prompt(name: str, prompts_dir: str | Path | None = None) -> str:
    if prompts_dir is not None:
        path = Path(prompts_dir) / name
        if not path.is_file():
            raise ValidationError(f"prompt asset not found: {path}")
        return path.read_text(encoding="utf-8")
    ref = resources.files("coi_pipeline").joinpath("assets/prompts").joinpath(name)
    if not ref.is_file():
        raise ValidationError(f"bundled prompt asset not found: {name}")
    return ref.read_text(encoding="utf-8")


def render_prompt(template: str, **fields: str) -> str:
    """Substitute `{name}` placeholders; every named field must occur."""
    rendered = template
    for name, value in fields.items():
        placeholder = "{" + name + "}"
        if placeholder not in rendered:
            raise ValidationError(f"template has no placeholder {placeholder}")
        rendered = rendered.replace(placeholder, value)
    return rendered
