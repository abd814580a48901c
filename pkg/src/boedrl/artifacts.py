"""Append-safe CSV and JSON-lines writers with strict readers."""

from __future__ import annotations

import csv
import json
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import Any

from boedrl.errors import ConfigError


def append_csv_rows(
    path: str | Path, fieldnames: Sequence[str], rows: Iterable[Mapping[str, Any]]
) -> Path:
    """Append ``rows``; the header is written only when the file is new or empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fresh = not path.exists() or path.stat().st_size == 0
    if not fresh:
        with path.open(newline="") as handle:
            header = next(csv.reader(handle), [])
        if header != list(fieldnames):
            raise ConfigError(f"{path} has columns {header}, expected {list(fieldnames)}")
    with path.open("a", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(fieldnames), lineterminator="\n")
        if fresh:
            writer.writeheader()
        for row in rows:
            writer.writerow({name: row[name] for name in fieldnames})
    return path


def read_csv_rows(path: str | Path, fieldnames: Sequence[str]) -> list[dict[str, str]]:
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != list(fieldnames):
            raise ConfigError(
                f"{path} has columns {reader.fieldnames}, expected {list(fieldnames)}"
            )
        rows = list(reader)
    for number, row in enumerate(rows, start=2):
        if None in row or any(value is None for value in row.values()):
            raise ConfigError(f"{path}:{number}: row does not match the header")
    return rows


def append_json_record(path: str | Path, record: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as handle:
        handle.write(json.dumps(dict(record), sort_keys=True) + "\n")
    return path


def read_json_records(path: str | Path, keys: Sequence[str]) -> list[dict[str, Any]]:
    expected = set(keys)
    records = []
    for number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{number}: malformed JSON record") from exc
        if not isinstance(record, dict) or set(record) != expected:
            found = sorted(record) if isinstance(record, dict) else type(record).__name__
            raise ConfigError(f"{path}:{number}: expected keys {sorted(expected)}, got {found}")
        records.append(record)
    return records
