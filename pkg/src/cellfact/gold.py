"""Deterministic gold-fact generation from CSV cells, plus gold-file I/O.

The generator reads raw cells through fixed (row, column) indices on the
parsed table only -- it never sees chunk sets or schemas, so the ground
truth cannot favour any serialization or schema pairing. Sampling uses the
Mersenne-Twister ``random.Random(seed).sample`` sequence (documented in the
JSONL header comment convention as ``mt19937-python-sample-v1``) so a seed
written into a gold file replays byte-identically.
"""

from __future__ import annotations

import json
import random
import warnings
from dataclasses import dataclass
from decimal import Decimal, ROUND_DOWN
from pathlib import Path

from .errors import GoldError
from .table import CsvTable, parse_number

PRNG_NAME = "mt19937-python-sample-v1"

GOLD_FIELDS = ("dataset_id", "subject", "time", "value", "row", "col")


@dataclass(frozen=True)
class GoldFact:
    dataset_id: str
    subject: str
    time: str
    value: str
    row: int
    col: int

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in GOLD_FIELDS}


@dataclass(frozen=True)
class GoldSet:
    facts: tuple[GoldFact, ...]
    n_entities: int
    years: tuple[str, ...]
    seed: int
    dataset_id: str
    missing_cells: int = 0

    @property
    def subjects(self) -> list[str]:
        seen: dict[str, None] = {}
        for f in self.facts:
            seen.setdefault(f.subject)
        return list(seen)


def generate_gold(
    table: CsvTable,
    subject_col: str,
    n_entities: int,
    years: list[str],
    seed: int,
    dataset_id: str = "dataset",
) -> GoldSet:
    """Sample ``n_entities`` complete rows and emit one fact per (entity, year).

    Only rows with non-missing values for *all* requested years are
    eligible, and duplicate subject values keep their first row, so
    (subject, time) pairs are unique and ``len(facts) == n_entities * len(years)``.
    """
    subj_idx = _column(table, subject_col)
    year_idx = [_column(table, y) for y in years]

    eligible: list[int] = []
    seen_subjects: set[str] = set()
    for r, row in enumerate(table.rows):
        subject = row[subj_idx].strip()
        if not subject or subject in seen_subjects:
            continue
        if all(row[c].strip() for c in year_idx):
            eligible.append(r)
            seen_subjects.add(subject)
    if len(eligible) < n_entities:
        raise GoldError(
            f"need {n_entities} complete entities but only {len(eligible)} rows "
            f"have values for all of {years}"
        )

    rng = random.Random(seed)
    chosen = sorted(rng.sample(eligible, n_entities))
    facts = [
        GoldFact(
            dataset_id=dataset_id,
            subject=table.rows[r][subj_idx],
            time=year,
            value=table.rows[r][c],
            row=r,
            col=c,
        )
        for r in chosen
        for year, c in zip(years, year_idx)
    ]
    return GoldSet(
        facts=tuple(facts),
        n_entities=n_entities,
        years=tuple(years),
        seed=seed,
        dataset_id=dataset_id,
    )


def _column(table: CsvTable, label: str) -> int:
    try:
        return table.column_by_label(label)
    except KeyError as exc:
        raise GoldError(str(exc)) from exc


def round_value_for_display(value: str | float, convention: str = "none") -> str:
    """Apply a display convention; ``floor2`` truncates (never rounds) to 2 decimals."""
    if convention == "none":
        return str(value)
    if convention != "floor2":
        raise GoldError(f"unknown display convention {convention!r}")
    text = str(value)
    if parse_number(text) is None:
        warnings.warn(f"floor2 on non-numeric value {text!r}; passing through")
        return text
    quantized = Decimal(text.replace(",", "")).quantize(Decimal("0.01"), rounding=ROUND_DOWN)
    out = format(quantized, "f")
    if "." in out:
        out = out.rstrip("0").rstrip(".")
    return out


def write_gold(gold: GoldSet, path: str | Path) -> None:
    path = Path(path)
    lines = [json.dumps(f.as_dict(), ensure_ascii=False) for f in gold.facts]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def gold_to_jsonl(gold: GoldSet) -> str:
    lines = [json.dumps(f.as_dict(), ensure_ascii=False) for f in gold.facts]
    return "\n".join(lines) + ("\n" if lines else "")


def read_gold(path: str | Path, *, dataset_id: str | None = None) -> GoldSet:
    path = Path(path)
    facts: list[GoldFact] = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            facts.append(
                GoldFact(
                    dataset_id=rec["dataset_id"],
                    subject=rec["subject"],
                    time=str(rec["time"]),
                    value=str(rec["value"]),
                    row=int(rec["row"]),
                    col=int(rec["col"]),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise GoldError(f"malformed gold record on line {i}: {exc}", line_number=i) from exc
    years: dict[str, None] = {}
    subjects: dict[str, None] = {}
    for f in facts:
        years.setdefault(f.time)
        subjects.setdefault(f.subject)
    return GoldSet(
        facts=tuple(facts),
        n_entities=len(subjects),
        years=tuple(years),
        seed=-1,
        dataset_id=dataset_id or (facts[0].dataset_id if facts else "dataset"),
    )
