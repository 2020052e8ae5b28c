"""Versioned results-CSV parsing.

The first line of a results file is ``# schema=<version>``; files with an
unknown version are refused outright rather than half-parsed.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

SCHEMA_VERSION = "chung-lab-results-1"

COLUMNS = [
    "campaign_id",
    "subcommand",
    "config_hash",
    "seed_master",
    "replicate",
    "stream",
    "n",
    "r",
    "statistic",
    "value",
    "ci_low",
    "ci_high",
    "resolution",
    "timestamp",
]


class SchemaError(ValueError):
    """The input file is not a known results CSV."""


def read_results(path) -> list[dict]:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# schema="):
        raise SchemaError(f"{path}: missing schema line")
    version = text[0].split("=", 1)[1].strip()
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{path}: unknown schema version {version!r} (expected {SCHEMA_VERSION})")
    rows = list(csv.DictReader(io.StringIO("\n".join(text[1:]))))
    for row in rows:
        missing = [c for c in COLUMNS if c not in row]
        if missing:
            raise SchemaError(f"{path}: rows lack columns {missing}")
    return rows


def fvalue(row: dict, key: str = "value") -> float:
    return float(row[key])
