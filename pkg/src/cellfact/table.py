"""CSV parsing into an immutable table model plus column-level feature extraction.

Cells are kept as raw text; nothing is coerced to numbers at parse time.
The feature extractor only ever looks at a bounded prefix of the table
(first 25 rows), which keeps classification O(columns) for arbitrarily
long files.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CsvParseError

# Standalone calendar year 1900-2099, or a fiscal span like "2022-23" / "2022/23".
FISCAL_RE = re.compile(r"(?<![\w])((?:19|20)\d{2})[-/](\d{2})(?![\w])")
YEAR_RE = re.compile(r"(?<![\w])((?:19|20)\d{2})(?![\w])")

# Optional sign, optional thousands grouping, optional decimals/exponent.
# Any other leading symbol (e.g. "=1") makes the cell text, which is what
# statistical-portal exports that store ranks as formulas look like.
NUMBER_RE = re.compile(
    r"^[+-]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?(?:[eE][+-]?\d+)?$"
)

FEATURE_SCAN_ROWS = 25
YEAR_IN_BODY_ROWS = 6
NUMERIC_COLUMN_MIN_FRACTION = 0.6


@dataclass(frozen=True)
class CsvTable:
    """Rectangular table: every row has exactly ``n_cols`` cells."""

    source_path: str
    header: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.header)

    def column(self, index: int) -> list[str]:
        return [row[index] for row in self.rows]

    def column_by_label(self, label: str) -> int:
        try:
            return self.header.index(label)
        except ValueError:
            raise KeyError(f"no column labelled {label!r}") from None


@dataclass(frozen=True)
class ColumnFeatures:
    time_cols: frozenset[int]
    key_cols: frozenset[int]
    n_numeric: int
    fiscal: bool
    transposed: bool
    year_in_body: bool

    def as_dict(self) -> dict:
        return {
            "time_cols": sorted(self.time_cols),
            "key_cols": sorted(self.key_cols),
            "n_time_cols": len(self.time_cols),
            "n_key_cols": len(self.key_cols),
            "n_numeric": self.n_numeric,
            "fiscal": self.fiscal,
            "transposed": self.transposed,
            "year_in_body": self.year_in_body,
        }


def parse_number(text: str) -> float | None:
    """Parse a cell as a number under the strict numeric grammar, else None."""
    stripped = text.strip()
    if not stripped or not NUMBER_RE.match(stripped):
        return None
    return float(stripped.replace(",", ""))


def is_year_token(text: str) -> bool:
    """True when the whole (stripped) cell is a year or fiscal-year token."""
    stripped = text.strip()
    return bool(
        re.fullmatch(r"(?:19|20)\d{2}", stripped)
        or re.fullmatch(r"(?:19|20)\d{2}[-/]\d{2}", stripped)
    )


def parse_csv(path: str | Path, *, delimiter: str = ",", encoding: str = "utf-8") -> CsvTable:
    """Parse an RFC-4180-style CSV file into a rectangular :class:`CsvTable`.

    Short rows are padded with empty cells; rows longer than the header are
    rejected with the offending row index (they indicate delimiter
    corruption rather than trailing blanks).
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding=encoding)
    except OSError as exc:
        raise CsvParseError(f"cannot read {path}: {exc}") from exc
    if not raw.strip():
        raise CsvParseError(f"{path} is empty")
    return parse_csv_text(raw, source_path=str(path), delimiter=delimiter)


def parse_csv_text(text: str, *, source_path: str = "<memory>", delimiter: str = ",") -> CsvTable:
    reader = csv.reader(io.StringIO(text, newline=""), delimiter=delimiter)
    try:
        records = list(reader)
    except csv.Error as exc:
        raise CsvParseError(f"malformed CSV near line {reader.line_num}: {exc}") from exc
    records = [rec for rec in records if rec != []]
    if not records:
        raise CsvParseError(f"{source_path} has no rows")
    header = tuple(records[0])
    n_cols = len(header)
    rows = []
    for i, rec in enumerate(records[1:]):
        if len(rec) > n_cols:
            raise CsvParseError(
                f"row {i} has {len(rec)} cells but header has {n_cols}", row_index=i
            )
        if len(rec) < n_cols:
            rec = rec + [""] * (n_cols - len(rec))
        rows.append(tuple(rec))
    return CsvTable(source_path=source_path, header=header, rows=tuple(rows))


def to_csv_text(table: CsvTable, *, delimiter: str = ",") -> str:
    """Serialize back to CSV text (quoting-normalized, LF line endings)."""
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    writer.writerow(table.header)
    writer.writerows(table.rows)
    return buf.getvalue()


def numeric_fraction(column: list[str]) -> float:
    """Fraction of non-empty cells that parse as numbers; empty column -> 0."""
    non_empty = [cell for cell in column if cell.strip()]
    if not non_empty:
        return 0.0
    numeric = sum(1 for cell in non_empty if parse_number(cell) is not None)
    return numeric / len(non_empty)


def extract_features(table: CsvTable) -> ColumnFeatures:
    """Compute the six column-level features the topology classifier consumes.

    Deterministic and total: equal tables yield equal features. Scans at
    most the first 25 data rows.
    """
    if table.n_cols < 1:
        raise CsvParseError("feature extraction needs at least one column")
    window = table.rows[:FEATURE_SCAN_ROWS]

    time_cols = frozenset(
        i for i, label in enumerate(table.header) if YEAR_RE.search(label) or FISCAL_RE.search(label)
    )
    fiscal = any(FISCAL_RE.search(table.header[i]) for i in time_cols)

    fractions = [
        numeric_fraction([row[i] for row in window]) for i in range(table.n_cols)
    ]
    n_numeric = sum(1 for f in fractions if f >= NUMERIC_COLUMN_MIN_FRACTION)

    key_cols: set[int] = set()
    for i in range(table.n_cols):
        if i in time_cols or fractions[i] >= NUMERIC_COLUMN_MIN_FRACTION:
            break
        key_cols.add(i)

    first_col = [row[0] for row in window] if table.n_cols else []
    transposed = sum(1 for cell in first_col if is_year_token(cell)) >= 2

    body = table.rows[:YEAR_IN_BODY_ROWS]
    year_in_body = (
        sum(1 for row in body for cell in row if is_year_token(cell)) >= 3
    )

    return ColumnFeatures(
        time_cols=time_cols,
        key_cols=frozenset(key_cols),
        n_numeric=n_numeric,
        fiscal=fiscal,
        transposed=transposed,
        year_in_body=year_in_body,
    )
