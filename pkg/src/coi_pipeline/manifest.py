"""Per-run manifests: config digest, seeds, and content digests of all files.

Manifests carry no timestamps; inputs are keyed by basename, outputs relative
to the output directory, and output/cache locations are excluded from the
config digest. Two runs with the same config values, seeds, and inputs
therefore produce byte-identical manifests, auditable by digest comparison.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__
from .config import PipelineConfig


def file_digest(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for block in iter(lambda: handle.read(65536), b""):
            digest.update(block)
    return f"sha256:{digest.hexdigest()}"


def config_digest(config: PipelineConfig) -> str:
    payload = json.dumps(config.effective_dict(), sort_keys=True, ensure_ascii=False)
    return f"sha256:{hashlib.sha256(payload.encode('utf-8')).hexdigest()}"


def write_manifest(
    output_dir: str | Path,
    command: str,
    config: PipelineConfig,
    inputs: dict[str, str | Path],
    outputs: list[str | Path],
) -> Path:
    """Write manifest-<command>.json into the output directory.

    Inputs are keyed by basename; outputs are recorded relative to the
    output directory. Every output file of a run appears in exactly one
    manifest entry.
    """
    output_dir = Path(output_dir)
    manifest = {
        "tool": "coi-pipeline",
        "version": __version__,
        "command": command,
        "config": config.effective_dict(),
        "config_digest": config_digest(config),
        "seeds": config.seeds(),
        "inputs": {Path(p).name: file_digest(p) for p in inputs.values()},
        "outputs": {
            str(Path(p).relative_to(output_dir)): file_digest(p) for p in outputs
        },
    }
    path = output_dir / f"manifest-{command}.json"
    path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return path
