"""Run directories: JSONL persistence and a deterministic manifest.

A run directory is the unit of reproducibility.  The manifest records what
was run (config, models, template ids, counts) but never when, so replaying
a cached run writes byte-identical output files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

from .translate import ErrorRecord, ExplanationRecord, TranslationRecord

MANIFEST_NAME = "manifest.json"

TRANSLATIONS_NAME = "translations.jsonl"
EXPLANATIONS_NAME = "explanations.jsonl"
ERRORS_NAME = "errors.jsonl"


class RunError(ValueError):
    """Raised on malformed run directories or manifests."""


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> int:
    """Write one JSON object per line; returns the row count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False, sort_keys=True))
            handle.write("\n")
            count += 1
    return count


def read_jsonl(path: str | Path) -> Iterator[dict]:
    path = Path(path)
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise RunError(f"{path.name}:{lineno}: invalid JSON: {exc}") from exc


def write_manifest(directory: str | Path, manifest: dict) -> Path:
    """Write the run manifest.

    Deterministic by construction: keys are sorted and the caller must not
    include timestamps, hostnames, or other ambient state.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / MANIFEST_NAME
    path.write_text(
        json.dumps(manifest, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    return path


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise RunError(f"no {MANIFEST_NAME} in {path.parent}")
    with path.open(encoding="utf-8") as handle:
        return json.load(handle)


def save_translations(
    directory: str | Path, records: Sequence[TranslationRecord]
) -> Path:
    path = Path(directory) / TRANSLATIONS_NAME
    write_jsonl(path, (record.to_json() for record in records))
    return path


def load_translations(directory: str | Path) -> list[TranslationRecord]:
    return [
        TranslationRecord.from_json(row)
        for row in read_jsonl(Path(directory) / TRANSLATIONS_NAME)
    ]


def save_explanations(
    directory: str | Path, records: Sequence[ExplanationRecord]
) -> Path:
    path = Path(directory) / EXPLANATIONS_NAME
    write_jsonl(path, (record.to_json() for record in records))
    return path


def load_explanations(directory: str | Path) -> list[ExplanationRecord]:
    return [
        ExplanationRecord.from_json(row)
        for row in read_jsonl(Path(directory) / EXPLANATIONS_NAME)
    ]


def save_errors(directory: str | Path, errors: Sequence[ErrorRecord]) -> Path:
    path = Path(directory) / ERRORS_NAME
    write_jsonl(
        path,
        (
            {"pair_id": e.pair_id, "system": e.system, "message": e.message}
            for e in errors
        ),
    )
    return path
