"""Extraction-backend boundary: a deterministic anchoring surrogate for
offline end-to-end testing, and a file-exchange adapter for real hosts.

The surrogate models surface-form anchoring: a schema can bind values only
where its subject column reference lexically matches the serialized input.
Label-per-row formats (sge, json-records) anchor row by row; header-bearing
row-preserving formats (markdown, row-local) anchor positionally through
the in-chunk header; naive chunks never anchor, because fragmented raw rows
give the reference nothing to match. What happens on unanchored chunks is
the configured mismatch mode (emit nothing, proliferate numeric cells,
refuse, or drop relations). None of this claims to predict any particular
model; it is a fixture generator with the documented qualitative behaviours.

No network access anywhere: real-model integration is strictly
export-prompts / import-responses file exchange.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import CellfactError
from .graph import KnowledgeGraph, Node, Edge, structural_metrics, degradation_guard
from .schema import (
    MetaSchema,
    normalize_label,
    render_schema_prompt,
    default_prompt,
    DIALECTS,
)
from .serialize import ChunkSet, serialize, NUMERIC_TOKEN_RE
from .table import CsvTable, is_year_token
from .topology import Topology, TYPE_III

SURROGATE_MODES = ("faithful", "proliferate", "refuse", "relation_drop")
FACTORIAL_CONDITIONS = ("baseline", "serial_only", "schema_only", "full")

WORD_RE = re.compile(r"[A-Za-z][A-Za-z_]+")


@dataclass(frozen=True)
class SurrogateConfig:
    mode: str = "faithful"
    anchor_match: str = "exact_token"  # "exact_token" | "none"
    baseline_value_limit: int = 3  # weak-extractor binding depth per row

    def __post_init__(self):
        if self.mode not in SURROGATE_MODES:
            raise CellfactError(f"unknown surrogate mode {self.mode!r}")
        if self.anchor_match not in ("exact_token", "none"):
            raise CellfactError(f"unknown anchor_match {self.anchor_match!r}")


@dataclass
class ExtractionJob:
    chunks: ChunkSet
    prompt: str
    dialect: str = "lightrag-style"
    condition_label: str = "full"


@dataclass
class SurrogateResult:
    graph: KnowledgeGraph
    refusals: int = 0
    anchored_chunks: int = 0
    notes: list[str] = field(default_factory=list)


def _add_entity(graph: KnowledgeGraph, name: str, type_name: str, description: str = "") -> str:
    node_id = f"ent:{name}"
    if node_id not in graph.nodes:
        graph.add_node(Node(node_id, name, type_name, description))
    return node_id


def _bind_value(
    graph: KnowledgeGraph, subj_id: str, label: str, value: str, uid: str
) -> None:
    val_id = f"val:{uid}"
    if val_id in graph.nodes:
        return
    name = f"{graph.nodes[subj_id].name} {label}"
    graph.add_node(Node(val_id, name, "StatValue", f"{label}: {value}"))
    graph.add_edge(Edge(subj_id, val_id, f"{label}: {value}"))


def _sge_fields(line: str) -> list[tuple[str, str]]:
    fields = []
    for part in line.split(" | "):
        if ": " in part:
            label, value = part.split(": ", 1)
            fields.append((label.strip(), value.strip()))
    return fields


def _header_positions(header_cells: list[str], anchor: str | None) -> tuple[int | None, dict[int, str]]:
    """Index of the anchor column plus {index: label} for year columns."""
    anchor_idx = None
    years: dict[int, str] = {}
    for i, cell in enumerate(header_cells):
        label = cell.strip()
        if anchor is not None and normalize_label(label) == anchor:
            anchor_idx = i
        if is_year_token(label):
            years[i] = label
    return anchor_idx, years


def surrogate_extract(
    job: ExtractionJob, schema: MetaSchema, config: SurrogateConfig
) -> SurrogateResult:
    """Deterministic schema-anchored extraction over a chunk set."""
    anchor_label = schema.subject_entity().column_ref
    anchor = (
        normalize_label(anchor_label)
        if anchor_label and config.anchor_match == "exact_token"
        else None
    )
    subject_type = schema.subject_entity().type_name
    result = SurrogateResult(graph=KnowledgeGraph())
    for chunk in job.chunks.chunks:
        extracted = False
        if anchor is not None:
            extracted = _extract_anchored(
                result.graph, chunk.id, chunk.text, job.chunks.format,
                anchor, subject_type, relations=config.mode != "relation_drop",
            )
        if extracted:
            result.anchored_chunks += 1
            continue
        _apply_mismatch_mode(result, chunk.id, chunk.text, config.mode)
    return result


def _extract_anchored(
    graph: KnowledgeGraph,
    chunk_id: str,
    text: str,
    fmt: str,
    anchor: str,
    subject_type: str,
    *,
    relations: bool,
) -> bool:
    matched = False
    lines = text.split("\n")
    if fmt == "sge":
        for li, line in enumerate(lines):
            fields = _sge_fields(line)
            labels = [normalize_label(lbl) for lbl, _ in fields]
            if anchor not in labels:
                continue
            matched = True
            subject = fields[labels.index(anchor)][1]
            subj_id = _add_entity(graph, subject, subject_type)
            if relations:
                for lbl, value in fields:
                    if normalize_label(lbl) == anchor or not value:
                        continue
                    _bind_value(graph, subj_id, lbl, value, f"{chunk_id}:{li}:{lbl}")
    elif fmt == "json-records":
        for li, line in enumerate(lines):
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                continue
            by_norm = {normalize_label(k): (k, str(v)) for k, v in record.items()}
            if anchor not in by_norm:
                continue
            matched = True
            subject = by_norm[anchor][1]
            subj_id = _add_entity(graph, subject, subject_type)
            if relations:
                for key, value in record.items():
                    if normalize_label(key) == anchor or not str(value).strip():
                        continue
                    _bind_value(graph, subj_id, key, str(value), f"{chunk_id}:{li}:{key}")
    elif fmt in ("markdown", "row-local"):
        header_cells, data_rows = _tabular_rows(fmt, lines)
        if header_cells is None:
            return False
        anchor_idx, years = _header_positions(header_cells, anchor)
        if anchor_idx is None:
            return False
        matched = True
        for li, cells in data_rows:
            if anchor_idx >= len(cells) or not cells[anchor_idx].strip():
                continue
            subj_id = _add_entity(graph, cells[anchor_idx].strip(), subject_type)
            if relations:
                for i, label in years.items():
                    if i < len(cells) and cells[i].strip():
                        _bind_value(
                            graph, subj_id, label, cells[i].strip(), f"{chunk_id}:{li}:{label}"
                        )
    # naive chunks never anchor: fragmented raw rows carry no row-addressable labels
    return matched


def _tabular_rows(fmt: str, lines: list[str]):
    if fmt == "markdown":
        if len(lines) < 2:
            return None, []
        header = [c.strip() for c in lines[0].strip().strip("|").split("|")]
        rows = []
        for li, line in enumerate(lines[2:], start=2):
            if line.strip():
                rows.append((li, [c.strip() for c in line.strip().strip("|").split("|")]))
        return header, rows
    # row-local: "Headers: a, b, c" then "Row N: v1, v2, v3"
    if not lines or not lines[0].startswith("Headers:"):
        return None, []
    header = [c.strip() for c in lines[0].split(":", 1)[1].split(",")]
    rows = []
    for li, line in enumerate(lines[1:], start=1):
        if ":" in line:
            rows.append((li, [c.strip() for c in line.split(":", 1)[1].split(",")]))
    return header, rows


def _apply_mismatch_mode(result: SurrogateResult, chunk_id: str, text: str, mode: str) -> None:
    graph = result.graph
    if mode == "faithful":
        return
    if mode == "refuse":
        result.refusals += 1
        return
    if mode == "proliferate":
        for i, m in enumerate(NUMERIC_TOKEN_RE.finditer(text)):
            node_id = f"{chunk_id}:v{i}"
            graph.add_node(
                Node(node_id, m.group(0), "StatValue",
                     f"Standalone numeric value {m.group(0)}."),
                on_duplicate="skip",
            )
        return
    if mode == "relation_drop":
        seen: set[str] = set()
        for m in WORD_RE.finditer(text):
            token = m.group(0)
            if token in seen:
                continue
            seen.add(token)
            _add_entity(graph, token, "Entity")
        return
    raise CellfactError(f"unknown surrogate mode {mode!r}")


# ---------------------------------------------------------------------------
# Schema-less weak extractor (baseline / serial-only conditions)


def baseline_extract(job: ExtractionJob, value_limit: int = 3) -> SurrogateResult:
    """Weak schema-less extractor.

    Models an unguided reader: the first textual field of a line becomes an
    entity; values are bound only when a year is lexically adjacent (labelled
    formats) or recoverable from an in-chunk header (first naive chunk), and
    only for the first ``value_limit`` bindings per row. Everything else is
    swallowed into prose-like descriptions. A model of weak extraction, not
    a claim about any particular system.
    """
    result = SurrogateResult(graph=KnowledgeGraph())
    fmt = job.chunks.format
    graph = result.graph
    for chunk_index, chunk in enumerate(job.chunks.chunks):
        lines = chunk.text.split("\n")
        if fmt == "sge":
            for li, line in enumerate(lines):
                fields = _sge_fields(line)
                if not fields:
                    continue
                subject = fields[0][1]
                if not subject:
                    continue
                subj_id = _add_entity(graph, subject, "Entity")
                bound = 0
                for lbl, value in fields[1:]:
                    if bound >= value_limit:
                        break
                    if value:
                        _bind_value(graph, subj_id, lbl, value, f"{chunk.id}:{li}:{lbl}")
                        bound += 1
        elif fmt in ("markdown", "row-local"):
            header_cells, data_rows = _tabular_rows(fmt, lines)
            if header_cells is None:
                continue
            _, years = _header_positions(header_cells, None)
            for li, cells in data_rows:
                subject = next((c for c in cells if WORD_RE.search(c)), "")
                if not subject:
                    continue
                subj_id = _add_entity(graph, subject, "Entity")
                bound = 0
                for i, label in years.items():
                    if bound >= value_limit:
                        break
                    if i < len(cells) and cells[i].strip():
                        _bind_value(graph, subj_id, label, cells[i].strip(),
                                    f"{chunk.id}:{li}:{label}")
                        bound += 1
        elif fmt == "json-records":
            for li, line in enumerate(lines):
                try:
                    record = json.loads(line)
                except json.JSONDecodeError:
                    continue
                items = list(record.items())
                if not items:
                    continue
                subject = str(items[0][1])
                subj_id = _add_entity(graph, subject, "Entity")
                bound = 0
                for key, value in items[1:]:
                    if bound >= value_limit:
                        break
                    if is_year_token(key) and str(value).strip():
                        _bind_value(graph, subj_id, key, str(value), f"{chunk.id}:{li}:{key}")
                        bound += 1
        else:  # naive raw text
            year_positions: dict[int, str] = {}
            start_line = 0
            if chunk_index == 0 and lines:
                _, year_positions = _header_positions(lines[0].split(","), None)
                start_line = 1
            for li, line in enumerate(lines[start_line:], start=start_line):
                if not line.strip():
                    continue
                cells = line.split(",")
                subject = next((c.strip() for c in cells if WORD_RE.search(c)), "")
                if not subject:
                    continue
                subj_id = _add_entity(graph, subject, "Entity", description=line.strip())
                bound = 0
                for i, label in year_positions.items():
                    if bound >= value_limit:
                        break
                    if i < len(cells) and cells[i].strip():
                        _bind_value(graph, subj_id, label, cells[i].strip(),
                                    f"{chunk.id}:{li}:{label}")
                        bound += 1
    return result


# ---------------------------------------------------------------------------
# File-exchange adapter


def export_job(job: ExtractionJob, out_dir: str | Path) -> dict:
    """Write one prompt file per chunk plus a manifest of expected responses."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for chunk in job.chunks.chunks:
        prompt_path = out / f"{chunk.id}.prompt.txt"
        prompt_path.write_text(
            job.prompt.replace("{input_text}", chunk.text), encoding="utf-8"
        )
        entries.append(
            {
                "chunk_id": chunk.id,
                "prompt_path": prompt_path.name,
                "response_path": f"{chunk.id}.response.txt",
            }
        )
    manifest = {
        "dialect": job.dialect,
        "condition_label": job.condition_label,
        "entries": entries,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    return manifest


@dataclass
class ImportResult:
    graph: KnowledgeGraph
    refusals: int = 0
    malformed: int = 0
    dangling: int = 0


def import_responses(manifest_path: str | Path, responses_dir: str | Path) -> ImportResult:
    """Parse delimiter-separated host tuples back into a knowledge graph.

    Missing or empty response files count as refusals; tuples with the wrong
    field count (hosts are known to truncate 4-field tuples) are skipped and
    counted, as are relations whose endpoints never materialized.
    """
    manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    delimiter = DIALECTS[manifest.get("dialect", "lightrag-style")]["tuple"]
    responses = Path(responses_dir)
    result = ImportResult(graph=KnowledgeGraph())
    pending: list[tuple[str, str, str]] = []
    for entry in manifest["entries"]:
        path = responses / entry["response_path"]
        if not path.exists() or not path.read_text(encoding="utf-8").strip():
            result.refusals += 1
            continue
        text = path.read_text(encoding="utf-8")
        for record in re.split(r"##|\n", text):
            record = record.strip().strip("()").strip()
            if not record or record == "<|COMPLETE|>":
                continue
            fields = [f.strip().strip('"') for f in record.split(delimiter)]
            kind = fields[0].casefold()
            if kind == "entity" and len(fields) == 4:
                _, name, type_name, description = fields
                node_id = f"ent:{name}"
                if node_id not in result.graph.nodes:
                    result.graph.add_node(Node(node_id, name, type_name, description))
            elif kind == "relation" and len(fields) in (4, 5):
                src, dst, description = fields[1], fields[2], fields[3]
                pending.append((src, dst, description))
            else:
                result.malformed += 1
    for src, dst, description in pending:
        src_id, dst_id = f"ent:{src}", f"ent:{dst}"
        if src_id in result.graph.nodes and dst_id in result.graph.nodes:
            result.graph.add_edge(Edge(src_id, dst_id, description))
        else:
            result.dangling += 1
    return result


# ---------------------------------------------------------------------------
# Pipeline composition


@dataclass(frozen=True)
class PipelineConfig:
    condition: str = "full"
    format: str = "sge"
    budget: int = 600
    theta: float = 0.90
    dialect: str = "lightrag-style"
    matched_mode: str = "faithful"  # no-anchor behaviour under matched serialization
    mismatch_mode: str = "proliferate"  # no-anchor behaviour on naive chunks
    baseline_value_limit: int = 3
    skip_small_type3: bool = True
    apply_fallback: bool = True  # factorial cells record the guard but keep raw output

    def __post_init__(self):
        if self.condition not in FACTORIAL_CONDITIONS:
            raise CellfactError(f"unknown factorial condition {self.condition!r}")


@dataclass
class PipelineResult:
    graph: KnowledgeGraph
    guard: object
    metrics: object
    provenance: dict


def run_pipeline(
    table: CsvTable,
    topology: Topology,
    schema: MetaSchema | None,
    config: PipelineConfig,
) -> PipelineResult:
    """serialize -> extract -> structural metrics -> degradation guard.

    Small Type-III inputs skip schema injection up front; a post-extraction
    edge/node ratio under theta reverts to the baseline condition. Both
    downgrades are recorded in provenance.
    """
    condition = config.condition
    provenance: dict = {"requested_condition": condition, "skip_schema": False,
                        "fallback_applied": False, "refusals": 0}

    uses_schema = condition in ("full", "schema_only")
    if (
        config.skip_small_type3
        and uses_schema
        and topology.tag == TYPE_III
        and table.n_rows < 20
    ):
        condition = "serial_only" if condition == "full" else "baseline"
        provenance["skip_schema"] = True
        uses_schema = False

    result = _run_condition(table, topology, schema, condition, config)
    provenance["condition_run"] = condition
    provenance["refusals"] = result.refusals
    provenance["anchored_chunks"] = result.anchored_chunks

    metrics = structural_metrics(result.graph)
    guard = degradation_guard(
        metrics,
        theta=config.theta,
        n_rows=table.n_rows,
        is_type_iii=topology.tag == TYPE_III,
        skip_small_type3=False,  # the pre-extraction path already ran above
    )
    provenance["edge_node_ratio"] = metrics.edge_node_ratio
    graph = result.graph
    if guard.decision == "fallback" and condition != "baseline" and config.apply_fallback:
        fallback = _run_condition(table, topology, schema, "baseline", config)
        graph = fallback.graph
        metrics = structural_metrics(graph)
        provenance["fallback_applied"] = True
        provenance["condition_run"] = "baseline"
    return PipelineResult(graph=graph, guard=guard, metrics=metrics, provenance=provenance)


def _run_condition(
    table: CsvTable,
    topology: Topology,
    schema: MetaSchema | None,
    condition: str,
    config: PipelineConfig,
) -> SurrogateResult:
    structured = condition in ("full", "serial_only")
    fmt = config.format if structured else "naive"
    chunks = serialize(table, topology, fmt, config.budget)
    uses_schema = condition in ("full", "schema_only")
    if uses_schema:
        if schema is None:
            raise CellfactError(f"condition {condition!r} needs an induced schema")
        prompt = render_schema_prompt(schema, config.dialect)
        mode = config.matched_mode if structured else config.mismatch_mode
        job = ExtractionJob(chunks, prompt, config.dialect, condition)
        return surrogate_extract(job, schema, SurrogateConfig(mode=mode))
    job = ExtractionJob(chunks, default_prompt(config.dialect), config.dialect, condition)
    return baseline_extract(job, config.baseline_value_limit)
