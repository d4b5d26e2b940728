"""Provenance manifests written alongside every export."""

from __future__ import annotations

import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

TOOL_VERSION = "0.1.0"


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(
    out_path: str | Path,
    model: str,
    prompt_template: str | None,
    inputs: dict[str, str | Path],
    outputs: list[str],
    extra: dict | None = None,
) -> Path:
    """``<out>.manifest.json`` recording tools, model, template, inputs, time."""
    out_path = Path(out_path)
    payload = {
        "tool": {
            "vocada-exporter": TOOL_VERSION,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
        "model": model,
        "prompt_template": prompt_template,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "inputs": {name: file_sha256(p) for name, p in inputs.items()},
        "outputs": outputs,
    }
    if extra:
        payload.update(extra)
    manifest_path = out_path.with_name(out_path.name + ".manifest.json")
    manifest_path.write_text(
        json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    return manifest_path
