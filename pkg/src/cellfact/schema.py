"""Rule-based extraction-schema induction, completeness scoring, and probing perturbations.

The inducer is deterministic: entity types come from the leading key
columns, temporal roles from year-header columns, and value roles from the
remaining numeric columns. The extraction-rule wording is a documented
reconstruction (no canonical rule text exists); rules always reference
column labels verbatim because the label tokens are what downstream
extraction anchors on.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, asdict

from .errors import PerturbationError, UnsupportedTopologyError
from .table import CsvTable, ColumnFeatures, extract_features
from .topology import Topology, TYPE_I, TYPE_II, TYPE_III

STAT_VALUE_TYPE = "StatValue"
YEAR_CELL_ROLE = "year_cell"
POSITIONAL_REF_TEXT = "the first text column"

PERTURBATION_CONDITIONS = (
    "AX", "BX-1", "BX-2", "BX-3",
    "AY-1", "AY-2", "AY-3", "AY-3d", "AY-3e", "AY-3f",
    "BY", "C1", "D1", "D2", "D3",
)
# D1 (column-order shuffle) and D3 (row-delimiter removal) manipulate the
# serialized input, not the schema; perturb_schema treats them as identity.
INPUT_SIDE_CONDITIONS = ("D1", "D3")


def normalize_label(label: str) -> str:
    """Column label as it appears in serialized rows: whitespace -> '_'."""
    return "_".join(label.split())


@dataclass
class EntityType:
    type_name: str
    column_ref: str | None
    semantic_description: str
    mismatched: bool = False
    placeholder: bool = False


@dataclass
class RelationTemplate:
    name: str
    subject_type: str
    time_role: tuple[str, ...]
    value_role: str


@dataclass
class SchemaPerturbation:
    condition: str
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.condition not in PERTURBATION_CONDITIONS:
            raise PerturbationError(f"unknown perturbation condition {self.condition!r}")


@dataclass
class MetaSchema:
    entity_types: list[EntityType]
    relation_templates: list[RelationTemplate]
    extraction_rules: list[str]
    topology: Topology
    type_validity: str  # "valid" | "degraded"
    source_columns: tuple[str, ...]
    perturbation: str = "AX"

    def subject_entity(self) -> EntityType:
        """The entity type the relation templates bind values to."""
        if self.relation_templates:
            wanted = self.relation_templates[0].subject_type
            for et in self.entity_types:
                if et.type_name == wanted:
                    return et
        for et in self.entity_types:
            if not et.placeholder:
                return et
        raise PerturbationError("schema has no subject entity type")

    def as_dict(self) -> dict:
        return {
            "entity_types": [asdict(et) for et in self.entity_types],
            "relation_templates": [
                {
                    "name": rt.name,
                    "subject_type": rt.subject_type,
                    "time_role": list(rt.time_role),
                    "value_role": rt.value_role,
                }
                for rt in self.relation_templates
            ],
            "extraction_rules": list(self.extraction_rules),
            "topology": self.topology.as_dict(),
            "type_validity": self.type_validity,
            "source_columns": list(self.source_columns),
            "perturbation": self.perturbation,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, ensure_ascii=False)


def schema_from_dict(data: dict) -> MetaSchema:
    from .topology import Override

    topo = data["topology"]
    override = None
    if "override" in topo:
        override = Override(topo["override"]["original"], topo["override"]["reason"])
    topology = Topology(
        tag=topo["tag"],
        rule_fired=topo.get("rule_fired", ""),
        guard_trace=topo.get("guard_trace", {}),
        override=override,
    )
    return MetaSchema(
        entity_types=[EntityType(**et) for et in data["entity_types"]],
        relation_templates=[
            RelationTemplate(
                name=rt["name"],
                subject_type=rt["subject_type"],
                time_role=tuple(rt["time_role"]),
                value_role=rt["value_role"],
            )
            for rt in data["relation_templates"]
        ],
        extraction_rules=list(data["extraction_rules"]),
        topology=topology,
        type_validity=data["type_validity"],
        source_columns=tuple(data["source_columns"]),
        perturbation=data.get("perturbation", "AX"),
    )


def induce_schema(
    table: CsvTable, topology: Topology, features: ColumnFeatures | None = None
) -> MetaSchema:
    """Induce the extraction schema from column metadata (Type-II / Type-III only)."""
    if topology.tag == TYPE_I:
        raise UnsupportedTopologyError("schema induction is undefined for Type-I tables")
    features = features or extract_features(table)

    header = table.header
    key_labels = [header[i] for i in sorted(features.key_cols)]
    if not key_labels:
        # Transposed or keyless matrices: fall back to the first non-time column.
        non_time = [i for i in range(table.n_cols) if i not in features.time_cols]
        fallback = header[non_time[0]] if non_time else header[0]
        key_labels = [fallback]
    year_labels = tuple(header[i] for i in sorted(features.time_cols))
    value_labels = [
        header[i]
        for i in range(table.n_cols)
        if i not in features.time_cols and header[i] not in key_labels
    ]

    entity_types = [
        EntityType(
            type_name=normalize_label(label),
            column_ref=label,
            semantic_description=f"Row subject identified by the '{label}' column.",
        )
        for label in key_labels
    ]
    subject_label = key_labels[-1]
    subject_type = normalize_label(subject_label)

    relation_templates: list[RelationTemplate] = []
    if topology.tag == TYPE_III:
        entity_types.append(
            EntityType(
                type_name=STAT_VALUE_TYPE,
                column_ref=None,
                semantic_description="Numeric statistical value taken from a data cell.",
                placeholder=True,
            )
        )
        for label in value_labels:
            relation_templates.append(
                RelationTemplate(
                    name=f"has_{normalize_label(label).lower()}",
                    subject_type=subject_type,
                    time_role=year_labels,
                    value_role=label,
                )
            )
    if not relation_templates:
        relation_templates.append(
            RelationTemplate(
                name="has_value_for_year",
                subject_type=subject_type,
                time_role=year_labels,
                value_role=YEAR_CELL_ROLE,
            )
        )

    rules = [
        f"Extract one {subject_type} entity for every distinct value in the "
        f"'{subject_label}' column.",
    ]
    if year_labels:
        rules.append(
            "Treat the year columns ("
            + ", ".join(year_labels)
            + ") as temporal attributes of the subject, not as entities."
        )
    rules.append(
        f"For each data row, bind every numeric cell to the row's {subject_type} "
        "entity as a (subject, time, value) relation."
    )
    rules.append("Never promote a bare numeric value to a standalone entity.")
    if topology.tag == TYPE_III and len(key_labels) > 1:
        rules.insert(
            1,
            "Rows are grouped hierarchically by ("
            + ", ".join(key_labels)
            + f"); use the innermost level '{subject_label}' as the relation subject.",
        )

    # Placeholder value types never reference a column; only a key-level type
    # without a column reference degrades type validity.
    degraded = any(et.column_ref is None for et in entity_types if not et.placeholder)
    return MetaSchema(
        entity_types=entity_types,
        relation_templates=relation_templates,
        extraction_rules=rules,
        topology=topology,
        type_validity="degraded" if degraded else "valid",
        source_columns=tuple(header),
    )


def compute_scs(schema: MetaSchema, table: CsvTable) -> float:
    """Schema completeness: (mapped columns / total columns) x type-validity factor."""
    if table.n_cols == 0:
        return 0.0
    mapped: set[str] = set()
    for et in schema.entity_types:
        if et.column_ref in table.header:
            mapped.add(et.column_ref)
    for rt in schema.relation_templates:
        mapped.update(label for label in rt.time_role if label in table.header)
        if rt.value_role in table.header:
            mapped.add(rt.value_role)
        if rt.value_role == YEAR_CELL_ROLE:
            mapped.update(label for label in rt.time_role if label in table.header)
    f_type = 1.0 if schema.type_validity == "valid" else 0.7
    return (len(mapped) / table.n_cols) * f_type


def perturb_schema(schema: MetaSchema, perturbation: SchemaPerturbation) -> MetaSchema:
    """Apply exactly one probing manipulation to a copy of the schema.

    Only the component declared for the condition changes; everything else
    remains equal to the input (checked by the field-wise diff tests).
    """
    cond = perturbation.condition
    params = perturbation.parameters
    out = copy.deepcopy(schema)
    out.perturbation = cond
    if cond == "AX" or cond in INPUT_SIDE_CONDITIONS:
        return out

    target = out.subject_entity()
    if cond in ("BX-1", "BX-2", "BX-3"):
        new_name = _require(params, "new_name", cond)
        _rename_entity_type(out, target, new_name)
    elif cond in ("AY-1", "AY-2"):
        target.semantic_description = _require(params, "description", cond)
    elif cond == "AY-3":
        column = _require(params, "column", cond)
        if column not in out.source_columns:
            raise PerturbationError(
                f"AY-3 needs an existing column; {column!r} is absent "
                "(that would silently become AY-3f)"
            )
        if column == target.column_ref:
            raise PerturbationError("AY-3 must redirect to a *different* column")
        target.column_ref = column
    elif cond == "AY-3d":
        target.column_ref = None
    elif cond == "AY-3e":
        target.column_ref = POSITIONAL_REF_TEXT
        target.mismatched = True
    elif cond == "AY-3f":
        column = _require(params, "column", cond)
        if column in out.source_columns:
            raise PerturbationError(
                f"AY-3f needs a non-existent column; {column!r} exists (use AY-3)"
            )
        target.column_ref = column
        target.mismatched = True
    elif cond == "BY":
        new_name = _require(params, "new_name", cond)
        _rename_entity_type(out, target, new_name)
        target.semantic_description = _require(params, "description", cond)
    elif cond == "C1":
        new_name = _require(params, "new_name", cond)
        if not out.relation_templates:
            raise PerturbationError("C1 needs at least one relation template")
        out.relation_templates[0].name = new_name
    elif cond == "D2":
        if not target.column_ref:
            raise PerturbationError("D2 needs a column reference to truncate")
        target.column_ref = target.column_ref[:3]
        target.mismatched = True
    return out


def _require(params: dict, key: str, cond: str) -> str:
    if key not in params or not str(params[key]):
        raise PerturbationError(f"condition {cond} requires parameter {key!r}")
    return str(params[key])


def _rename_entity_type(schema: MetaSchema, target: EntityType, new_name: str) -> None:
    old = target.type_name
    target.type_name = new_name
    for rt in schema.relation_templates:
        if rt.subject_type == old:
            rt.subject_type = new_name


# ---------------------------------------------------------------------------
# Prompt rendering

DIALECTS = {
    "lightrag-style": {"tuple": "<|#|>", "record": "##", "complete": "<|COMPLETE|>"},
    "graphrag-style": {"tuple": "<|>", "record": "##", "complete": "<|COMPLETE|>"},
}

DEFAULT_ENTITY_TYPES = "organization, person, geo, event"
DEFAULT_RULES = (
    "Identify all entities mentioned in the text and the relationships "
    "between them."
)

_PROMPT_TEMPLATE = """-Goal-
Given a text document, identify all entities of the requested types and all
relationships among the identified entities.

-Entity types-
{entity_types}

-Extraction rules-
{rules}

-Output format-
Return each entity as ("entity"{td}<entity_name>{td}<entity_type>{td}<entity_description>)
Return each relationship as ("relation"{td}<source_entity>{td}<target_entity>{td}<relationship_description>)
Separate records with "{rd}" and finish the output with {cd}.

-Real data-
Text: {{input_text}}
"""


def default_prompt(host_dialect: str) -> str:
    """The host's stock extraction prompt (documented reconstruction)."""
    return _render(DEFAULT_ENTITY_TYPES, DEFAULT_RULES, host_dialect)


def render_schema_prompt(schema: MetaSchema, host_dialect: str) -> str:
    """Prompt where only the entity-type list and extraction rules differ
    from the host's default template; tuple delimiters follow the dialect."""
    lines = []
    for et in schema.entity_types:
        ref = f" (source column: {et.column_ref})" if et.column_ref else ""
        lines.append(f"- {et.type_name}: {et.semantic_description}{ref}")
    entity_block = "\n".join(lines) if lines else DEFAULT_ENTITY_TYPES
    if schema.extraction_rules:
        rules_block = "\n".join(
            f"{i}. {rule}" for i, rule in enumerate(schema.extraction_rules, start=1)
        )
    else:
        rules_block = DEFAULT_RULES
    return _render(entity_block, rules_block, host_dialect)


def _render(entity_block: str, rules_block: str, host_dialect: str) -> str:
    if host_dialect not in DIALECTS:
        raise PerturbationError(f"unknown host dialect {host_dialect!r}")
    d = DIALECTS[host_dialect]
    return _PROMPT_TEMPLATE.format(
        entity_types=entity_block,
        rules=rules_block,
        td=d["tuple"],
        rd=d["record"],
        cd=d["complete"],
    )
