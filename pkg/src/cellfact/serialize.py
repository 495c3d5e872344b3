"""Table serialization into chunked text under five format regimes, plus M0-M6 token ablations.

Row-preserving formats (sge, markdown, json-records, row-local) never split
a row across chunks and cover every data row exactly once. The naive format
is the raw CSV text cut at token-budget boundaries, so rows may be split --
that fragmentation is the point of the regime.

Token counts everywhere use the internal tokenizer (maximal alphanumeric
runs; underscores and all punctuation separate), not any model tokenizer.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, field, replace

from .errors import BudgetError, CellfactError
from .table import CsvTable
from .topology import Topology
from .schema import normalize_label

FORMATS = ("sge", "markdown", "json-records", "row-local", "naive")
ABLATION_TAGS = ("M0", "M1", "M2", "M3", "M4", "M5", "M6")
DEFAULT_BUDGET = 600

TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)
NUMERIC_TOKEN_RE = re.compile(
    r"(?<![\w.])[-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?(?:[eE][-+]?\d+)?(?![\w.])"
)
DELIMITER_CHARS = "|:,="


def tokenize(text: str) -> list[str]:
    return TOKEN_RE.findall(text)


def count_tokens(text: str) -> int:
    """Deterministic whitespace-and-punctuation token count (shared with TTF)."""
    return len(tokenize(text))


@dataclass(frozen=True)
class Chunk:
    id: str
    text: str
    row_span: tuple[int, int] | None  # [start, end) in data-row indices; None for naive

    def as_dict(self, fmt: str) -> dict:
        return {
            "id": self.id,
            "format": fmt,
            "text": self.text,
            "row_span": list(self.row_span) if self.row_span else None,
        }


@dataclass(frozen=True)
class ChunkSet:
    format: str
    chunks: tuple[Chunk, ...]
    chunk_token_budget: int = DEFAULT_BUDGET

    def texts(self) -> list[str]:
        return [c.text for c in self.chunks]

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(c.as_dict(self.format), ensure_ascii=False) for c in self.chunks) + "\n"


def chunkset_from_jsonl(text: str) -> ChunkSet:
    chunks = []
    fmt = "naive"
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CellfactError(f"malformed chunk record on line {i + 1}: {exc}") from exc
        fmt = rec.get("format", fmt)
        span = rec.get("row_span")
        chunks.append(Chunk(rec["id"], rec["text"], tuple(span) if span else None))
    return ChunkSet(format=fmt, chunks=tuple(chunks))


@dataclass(frozen=True)
class AblationCondition:
    tag: str
    seed: int = 0

    def __post_init__(self):
        if self.tag not in ABLATION_TAGS:
            raise CellfactError(f"unknown ablation tag {self.tag!r}")


# ---------------------------------------------------------------------------
# Row renderers


def sge_row(table: CsvTable, row: tuple[str, ...]) -> str:
    fields = [
        f"{normalize_label(label)}: {cell}"
        for label, cell in zip(table.header, row)
        if cell.strip()
    ]
    return " | ".join(fields)


def prose_row(table: CsvTable, row: tuple[str, ...], subject_idx: int, stem: str) -> str:
    """Prose sub-style: values fused into key=value words, no field anchors."""
    parts = [f"{normalize_label(table.header[subject_idx])}={row[subject_idx]}"]
    for i, (label, cell) in enumerate(zip(table.header, row)):
        if i == subject_idx or not cell.strip():
            continue
        parts.append(f"{stem}_year{normalize_label(label)}={cell}")
    return " ".join(parts)


def markdown_header(table: CsvTable) -> list[str]:
    head = "| " + " | ".join(c.replace("|", "\\|") for c in table.header) + " |"
    sep = "| " + " | ".join("---" for _ in table.header) + " |"
    return [head, sep]


def markdown_row(row: tuple[str, ...]) -> str:
    return "| " + " | ".join(c.replace("|", "\\|") for c in row) + " |"


def json_record_row(table: CsvTable, row: tuple[str, ...]) -> str:
    return json.dumps(dict(zip(table.header, row)), ensure_ascii=False)


def row_local_chunk(table: CsvTable, row: tuple[str, ...], index: int) -> str:
    return (
        "Headers: " + ", ".join(table.header) + "\n"
        f"Row {index}: " + ", ".join(row)
    )


# ---------------------------------------------------------------------------
# Serialization


def serialize(
    table: CsvTable,
    topology: Topology | None,
    format: str,
    budget: int = DEFAULT_BUDGET,
    *,
    one_row_per_chunk: bool = False,
    prose_style: bool = False,
    prose_subject_col: int = 0,
    prose_value_stem: str = "value",
) -> ChunkSet:
    """Serialize a table into chunks of at most ``budget`` tokens."""
    if format not in FORMATS:
        raise CellfactError(f"unknown serialization format {format!r}")
    if budget < 1:
        raise BudgetError("chunk token budget must be >= 1")

    if format == "naive":
        from .table import to_csv_text

        return ChunkSet("naive", _split_raw(to_csv_text(table), budget), budget)

    if format == "row-local":
        chunks = tuple(
            Chunk(f"row-local-{i:04d}", row_local_chunk(table, row, i), (i, i + 1))
            for i, row in enumerate(table.rows)
        )
        _check_row_budget(chunks, budget, format)
        return ChunkSet("row-local", chunks, budget)

    if format == "sge":
        if prose_style:
            lines = [
                prose_row(table, row, prose_subject_col, prose_value_stem)
                for row in table.rows
            ]
        else:
            lines = [sge_row(table, row) for row in table.rows]
        preamble: list[str] = []
    elif format == "markdown":
        lines = [markdown_row(row) for row in table.rows]
        preamble = markdown_header(table)
    else:  # json-records
        lines = [json_record_row(table, row) for row in table.rows]
        preamble = []

    preamble_tokens = count_tokens("\n".join(preamble)) if preamble else 0
    chunks: list[Chunk] = []
    current: list[str] = []
    current_tokens = 0
    start_row = 0

    def flush(end_row: int) -> None:
        nonlocal current, current_tokens, start_row
        if not current:
            return
        text = "\n".join(preamble + current)
        chunks.append(Chunk(f"{format}-{len(chunks):04d}", text, (start_row, end_row)))
        current = []
        current_tokens = 0
        start_row = end_row

    for i, line in enumerate(lines):
        line_tokens = count_tokens(line)
        if line_tokens + preamble_tokens > budget:
            raise BudgetError(
                f"row {i} needs {line_tokens + preamble_tokens} tokens, "
                f"over the {budget}-token budget for format {format!r}"
            )
        if one_row_per_chunk:
            current.append(line)
            current_tokens += line_tokens
            flush(i + 1)
            continue
        if current and current_tokens + line_tokens + preamble_tokens > budget:
            flush(i)
        current.append(line)
        current_tokens += line_tokens
    flush(len(lines))
    return ChunkSet(format, tuple(chunks), budget)


def _check_row_budget(chunks: tuple[Chunk, ...], budget: int, fmt: str) -> None:
    for c in chunks:
        if count_tokens(c.text) > budget:
            raise BudgetError(
                f"chunk {c.id} needs {count_tokens(c.text)} tokens, over the "
                f"{budget}-token budget for format {fmt!r}"
            )


def _split_raw(text: str, budget: int) -> tuple[Chunk, ...]:
    """Cut raw text at token boundaries so the chunks concatenate to the input."""
    spans = [m.span() for m in TOKEN_RE.finditer(text)]
    chunks: list[Chunk] = []
    cut = 0
    count = 0
    for i, (_, end) in enumerate(spans):
        count += 1
        if count == budget:
            boundary = spans[i + 1][0] if i + 1 < len(spans) else len(text)
            chunks.append(Chunk(f"naive-{len(chunks):04d}", text[cut:boundary], None))
            cut = boundary
            count = 0
    if cut < len(text) or not chunks:
        chunks.append(Chunk(f"naive-{len(chunks):04d}", text[cut:], None))
    return tuple(chunks)


# ---------------------------------------------------------------------------
# Token ablations


def ablate(
    chunks: ChunkSet,
    condition: AblationCondition,
    column_labels: tuple[str, ...] = (),
    entity_names: tuple[str, ...] = (),
) -> ChunkSet:
    """Apply one input-token ablation; M0 is the identity control.

    ``column_labels`` drive the M1 masking and protect year-header tokens
    from the M4 numeric masking; ``entity_names`` drive M3.
    """
    tag = condition.tag
    if tag == "M0":
        return replace(chunks)
    if tag == "M1":
        return _map_text(chunks, lambda t: _mask_labels(t, column_labels, "COLX"))
    if tag == "M2":
        table = str.maketrans({ch: " " for ch in DELIMITER_CHARS})
        return _map_text(chunks, lambda t: t.translate(table))
    if tag == "M3":
        return _map_text(chunks, lambda t: _mask_labels(t, entity_names, "XXX"))
    if tag == "M4":
        protected = set()
        for label in column_labels:
            protected.update(tokenize(label))
            protected.add(label)
        return _map_text(chunks, lambda t: _mask_numbers(t, protected))
    if tag == "M5":
        return _per_chunk(chunks, lambda c: _shuffle_fields(c, chunks.format, condition.seed))
    if tag == "M6":
        return _per_chunk(chunks, lambda c: _shuffle_rows(c, chunks.format, condition.seed))
    raise CellfactError(f"unknown ablation tag {tag!r}")


def _map_text(chunks: ChunkSet, fn) -> ChunkSet:
    return replace(
        chunks,
        chunks=tuple(replace(c, text=fn(c.text)) for c in chunks.chunks),
    )


def _per_chunk(chunks: ChunkSet, fn) -> ChunkSet:
    return replace(chunks, chunks=tuple(fn(c) for c in chunks.chunks))


def _mask_labels(text: str, labels: tuple[str, ...], mask: str) -> str:
    expanded: set[str] = set()
    for label in labels:
        if label:
            expanded.add(label)
            expanded.add(normalize_label(label))
    for label in sorted(expanded, key=len, reverse=True):
        pattern = re.compile(rf"(?<![^\W_]){re.escape(label)}(?![^\W_])")
        text = pattern.sub(mask, text)
    return text


def _mask_numbers(text: str, protected: set[str]) -> str:
    def repl(m: re.Match) -> str:
        return m.group(0) if m.group(0) in protected else "NNN"

    return NUMERIC_TOKEN_RE.sub(repl, text)


def _rng_for(seed: int, *parts: object) -> random.Random:
    material = ":".join([str(seed), *map(str, parts)]).encode()
    return random.Random(int.from_bytes(hashlib.sha256(material).digest()[:8], "big"))


def _split_fields(line: str, fmt: str) -> tuple[str, list[str], str] | None:
    """Return (prefix, fields, joiner) for a shuffleable line, else None."""
    if fmt == "sge":
        return "", line.split(" | "), " | "
    if fmt == "markdown":
        if set(line.replace("|", "").strip()) <= {"-", " "}:
            return None  # separator line stays put
        cells = [c for c in line.strip().strip("|").split(" | ")]
        return "|prefix|", [c.strip() for c in cells], " | "
    if fmt == "json-records":
        try:
            record = json.loads(line)
        except json.JSONDecodeError:
            return None
        return "json", [json.dumps({k: v}, ensure_ascii=False)[1:-1] for k, v in record.items()], ", "
    if fmt == "row-local":
        if ":" in line:
            prefix, rest = line.split(":", 1)
            return prefix + ": ", [f.strip() for f in rest.strip().split(", ")], ", "
        return None
    return "", line.split(","), ","  # naive: comma fields per line


def _shuffle_fields(chunk: Chunk, fmt: str, seed: int) -> Chunk:
    out_lines = []
    for i, line in enumerate(chunk.text.split("\n")):
        parsed = _split_fields(line, fmt)
        if parsed is None or not line.strip():
            out_lines.append(line)
            continue
        prefix, fields, joiner = parsed
        _rng_for(seed, chunk.id, i).shuffle(fields)
        if prefix == "json":
            out_lines.append("{" + joiner.join(fields) + "}")
        elif prefix == "|prefix|":
            out_lines.append("| " + joiner.join(fields) + " |")
        else:
            out_lines.append(prefix + joiner.join(fields))
    return replace(chunk, text="\n".join(out_lines))


def _shuffle_rows(chunk: Chunk, fmt: str, seed: int) -> Chunk:
    lines = chunk.text.split("\n")
    fixed = 0
    if fmt == "markdown" and len(lines) >= 2:
        fixed = 2  # header + separator stay put
    body = lines[fixed:]
    _rng_for(seed, chunk.id).shuffle(body)
    return replace(chunk, text="\n".join(lines[:fixed] + body))
