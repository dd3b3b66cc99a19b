"""Run manifests: one JSON record written next to every command's outputs.

Re-running a command with an identical manifest (ignoring the wall-clock
field) must reproduce its outputs byte for byte.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

from . import __version__

WALL_CLOCK_KEY = "wall_clock_s"


def write_manifest(
    out_dir: str | Path,
    command: str,
    *,
    config: dict,
    inputs: dict,
    outputs: dict,
    seeds: dict | None = None,
    started_at: float | None = None,
    prng: str | None = None,
) -> str:
    """Serialize the manifest as <command>.manifest.json inside out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "config": config,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "seeds": seeds or {},
        "tool_version": __version__,
        WALL_CLOCK_KEY: time.perf_counter() - started_at if started_at is not None else 0.0,
    }
    if prng:
        record["prng"] = prng
    path = out_dir / f"{command}.manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return str(path)
