"""Graph-fidelity evaluation: entity coverage, 2-hop fact coverage with an
error taxonomy, a value-first de-biased protocol, canonical triple F1, and a
deterministic graph-native probe.

Coverage is existential over the undirected 2-hop neighbourhood of every
subject-matched anchor node; the neighbourhood text pool contains the names
and descriptions of all pooled nodes plus the descriptions of every edge
incident to a pooled node. Uncovered facts are assigned exactly one error
class by a fixed cascade.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .gold import GoldFact, GoldSet
from .graph import KnowledgeGraph, Node, Edge
from .table import parse_number

ERROR_CLASSES = (
    "none",
    "entity_missing",
    "entity_isolated",
    "value_missing",
    "year_missing",
    "value_wrong_binding",
)

PROBE_KINDS = ("ranking", "filtering", "trend", "aggregation")
AGGREGATION_TOLERANCE = 0.02

# Year token, optional separator (:, =, or "in"), then a numeric token.
YEAR_VALUE_RE = re.compile(
    r"(?<![\w])((?:19|20)\d{2})(?:\s*[:=]\s*|\s+in\s+|\s+)"
    r"([-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?(?:[eE][-+]?\d+)?)(?![\w.])"
)
NUMBER_TOKEN_RE = re.compile(
    r"(?<![\w.])[-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?(?:[eE][-+]?\d+)?(?![\w.])"
)


@dataclass(frozen=True)
class MatchOptions:
    numeric_rel_tol: float = 1e-9
    accept_floor2: bool = False
    require_colocation: bool = False


@dataclass
class FactOutcome:
    fact: GoldFact
    covered: bool
    anchor_nodes: list[str]
    error_class: str

    def as_dict(self) -> dict:
        return {
            "fact": self.fact.as_dict(),
            "covered": self.covered,
            "anchor_nodes": list(self.anchor_nodes),
            "error_class": self.error_class,
        }


@dataclass
class FidelityReport:
    ec: float
    fc: float
    fc_value_first: float
    triple_precision: float
    triple_recall: float
    triple_f1: float
    outcomes: list[FactOutcome]
    taxonomy_counts: dict[str, int]
    rescued: list[dict] = field(default_factory=list)
    lost: list[dict] = field(default_factory=list)

    def as_dict(self, *, include_outcomes: bool = True) -> dict:
        out = {
            "ec": self.ec,
            "fc": self.fc,
            "fc_value_first": self.fc_value_first,
            "triple_precision": self.triple_precision,
            "triple_recall": self.triple_recall,
            "triple_f1": self.triple_f1,
            "taxonomy_counts": dict(self.taxonomy_counts),
            "rescued": self.rescued,
            "lost": self.lost,
        }
        if include_outcomes:
            out["outcomes"] = [o.as_dict() for o in self.outcomes]
        return out


@dataclass
class ProbeQuery:
    kind: str
    params: dict
    expected: object

    def __post_init__(self):
        if self.kind not in PROBE_KINDS:
            raise ValueError(f"unknown probe kind {self.kind!r}")


# ---------------------------------------------------------------------------
# Matching primitives


def normalize_text(text: str) -> str:
    return " ".join(text.casefold().split())


def canonical_number(text: str) -> str | None:
    value = parse_number(text)
    if value is None:
        return None
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def bidirectional_substring(a: str, b: str) -> bool:
    na, nb = normalize_text(a), normalize_text(b)
    if not na or not nb:
        return False
    return na in nb or nb in na


def _boundary_pattern(token: str) -> re.Pattern:
    return re.compile(rf"(?<![\w.]){re.escape(token)}(?![\w.])", re.IGNORECASE)


def value_in_text(value: str, text: str, opts: MatchOptions) -> bool:
    """Exact normalized token match, or numeric equality within tolerance
    (optionally accepting floor-to-2-decimals truncation)."""
    stripped = value.strip()
    if not stripped:
        return False
    if _boundary_pattern(stripped).search(text):
        return True
    target = parse_number(stripped)
    if target is None:
        return normalize_text(stripped) in normalize_text(text)
    for m in NUMBER_TOKEN_RE.finditer(text):
        candidate = parse_number(m.group(0))
        if candidate is None:
            continue
        if _numbers_match(target, candidate, opts):
            return True
    return False


def _numbers_match(target: float, candidate: float, opts: MatchOptions) -> bool:
    if target == candidate:
        return True
    if abs(target - candidate) <= opts.numeric_rel_tol * max(abs(target), abs(candidate)):
        return True
    if opts.accept_floor2:
        from .gold import round_value_for_display

        return round_value_for_display(repr(candidate), "floor2") == round_value_for_display(
            repr(target), "floor2"
        )
    return False


def time_in_text(time_token: str, text: str) -> bool:
    stripped = time_token.strip()
    return bool(stripped) and bool(_boundary_pattern(stripped).search(text))


# ---------------------------------------------------------------------------
# Pools


def node_text(node: Node) -> str:
    return f"{node.name}\n{node.description}"


def edge_text(edge: Edge) -> str:
    return "\n".join([edge.description, *edge.keywords])


def anchor_nodes(graph: KnowledgeGraph, subject: str) -> list[str]:
    """Bidirectional case-insensitive substring match on node names."""
    return [
        node.id for node in graph.nodes.values() if bidirectional_substring(subject, node.name)
    ]


def neighborhood_units(graph: KnowledgeGraph, anchors: list[str], hops: int = 2) -> list[str]:
    """Text units of the k-hop pool: pooled node texts + incident edge texts."""
    pool = graph.k_hop_nodes(set(anchors), hops)
    units = [node_text(graph.nodes[n]) for n in sorted(pool)]
    seen_edges = set()
    for n in sorted(pool):
        for edge in graph.incident_edges(n):
            key = id(edge)
            if key not in seen_edges:
                seen_edges.add(key)
                units.append(edge_text(edge))
    return units


def whole_graph_text(graph: KnowledgeGraph) -> str:
    parts = [node_text(n) for n in graph.nodes.values()]
    parts += [edge_text(e) for e in graph.edges]
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# Entity and fact coverage


def entity_coverage(graph: KnowledgeGraph, gold: GoldSet) -> tuple[float, dict[str, bool]]:
    hits = {subject: bool(anchor_nodes(graph, subject)) for subject in gold.subjects}
    if not hits:
        return 0.0, {}
    return sum(hits.values()) / len(hits), hits


def fact_coverage(
    graph: KnowledgeGraph, gold: GoldSet, opts: MatchOptions | None = None
) -> tuple[float, list[FactOutcome]]:
    """Per-fact 2-hop coverage with the fixed error-class cascade."""
    opts = opts or MatchOptions()
    graph_text: str | None = None
    outcomes: list[FactOutcome] = []
    pool_cache: dict[tuple[str, ...], list[str]] = {}

    for fact in gold.facts:
        anchors = anchor_nodes(graph, fact.subject)
        if not anchors:
            outcomes.append(FactOutcome(fact, False, [], "entity_missing"))
            continue
        if all(graph.degree(a) == 0 for a in anchors):
            # Isolated anchors still expose their own node text.
            units = [node_text(graph.nodes[a]) for a in anchors]
            if _covered(fact, units, opts):
                outcomes.append(FactOutcome(fact, True, anchors, "none"))
            else:
                outcomes.append(FactOutcome(fact, False, anchors, "entity_isolated"))
            continue
        key = tuple(sorted(anchors))
        if key not in pool_cache:
            pool_cache[key] = neighborhood_units(graph, anchors)
        units = pool_cache[key]
        if _covered(fact, units, opts):
            outcomes.append(FactOutcome(fact, True, anchors, "none"))
            continue
        if graph_text is None:
            graph_text = whole_graph_text(graph)
        if not value_in_text(fact.value, graph_text, opts):
            error = "value_missing"
        elif value_in_text(fact.value, "\n".join(units), opts) and not time_in_text(
            fact.time, "\n".join(units)
        ):
            error = "year_missing"
        else:
            error = "value_wrong_binding"
        outcomes.append(FactOutcome(fact, False, anchors, error))

    fc = sum(o.covered for o in outcomes) / len(outcomes) if outcomes else 0.0
    return fc, outcomes


def _covered(fact: GoldFact, units: list[str], opts: MatchOptions) -> bool:
    if opts.require_colocation:
        return any(
            value_in_text(fact.value, unit, opts) and time_in_text(fact.time, unit)
            for unit in units
        )
    pool = "\n".join(units)
    return value_in_text(fact.value, pool, opts) and time_in_text(fact.time, pool)


def taxonomy_counts(outcomes: list[FactOutcome]) -> dict[str, int]:
    counts = {name: 0 for name in ERROR_CLASSES if name != "none"}
    for o in outcomes:
        if not o.covered:
            counts[o.error_class] += 1
    return counts


# ---------------------------------------------------------------------------
# Value-first de-biased coverage


def value_first_fc(
    graph: KnowledgeGraph, gold: GoldSet, opts: MatchOptions | None = None
) -> tuple[float, list[dict], list[dict]]:
    """Reverse lookup: find the value anywhere, then require subject and year
    within the 1-hop context of that location. Reports facts rescued by (and
    lost to) this protocol relative to entity-first coverage."""
    opts = opts or MatchOptions()
    _, outcomes = fact_coverage(graph, gold, opts)

    covered_flags: list[bool] = []
    rescued: list[dict] = []
    lost: list[dict] = []
    for fact, ef_outcome in zip(gold.facts, outcomes):
        covered = _value_first_covered(graph, fact, opts)
        covered_flags.append(covered)
        if covered and not ef_outcome.covered:
            rescued.append(fact.as_dict())
        elif ef_outcome.covered and not covered:
            lost.append(fact.as_dict())
    fc = sum(covered_flags) / len(covered_flags) if covered_flags else 0.0
    return fc, rescued, lost


def _value_first_covered(graph: KnowledgeGraph, fact: GoldFact, opts: MatchOptions) -> bool:
    for node in graph.nodes.values():
        if value_in_text(fact.value, node_text(node), opts):
            context = [node_text(node)]
            names = [node.name]
            for edge in graph.incident_edges(node.id):
                context.append(edge_text(edge))
                other = edge.dst if edge.src == node.id else edge.src
                context.append(node_text(graph.nodes[other]))
                names.append(graph.nodes[other].name)
            if _subject_in_context(fact.subject, names, context) and time_in_text(
                fact.time, "\n".join(context)
            ):
                return True
    for edge in graph.edges:
        if value_in_text(fact.value, edge_text(edge), opts):
            endpoints = [graph.nodes[edge.src], graph.nodes[edge.dst]]
            context = [edge_text(edge), *(node_text(n) for n in endpoints)]
            names = [n.name for n in endpoints]
            if _subject_in_context(fact.subject, names, context) and time_in_text(
                fact.time, "\n".join(context)
            ):
                return True
    return False


def _subject_in_context(subject: str, names: list[str], context: list[str]) -> bool:
    if any(bidirectional_substring(subject, name) for name in names):
        return True
    return normalize_text(subject) in normalize_text("\n".join(context))


# ---------------------------------------------------------------------------
# Canonical triple F1


def extract_year_value_pairs(text: str) -> list[tuple[str, str]]:
    return [(m.group(1), m.group(2)) for m in YEAR_VALUE_RE.finditer(text)]


def harvest_system_triples(graph: KnowledgeGraph) -> set[tuple[str, str, str]]:
    """(entity name, year, value) triples from outgoing-edge descriptions, plus
    own descriptions of nodes with no incoming edges (root/standalone nodes --
    prevents value-carrier nodes from minting spurious subjects)."""
    triples: set[tuple[str, str, str]] = set()
    for node in graph.nodes.values():
        sources = [edge_text(e) for e in graph.outgoing_edges(node.id)]
        if not graph.has_incoming(node.id):
            sources.append(node.description)
        for text in sources:
            for year, value in extract_year_value_pairs(text):
                canon = canonical_number(value) or normalize_text(value)
                triples.add((normalize_text(node.name), year, canon))
    return triples


def gold_triples(gold: GoldSet) -> set[tuple[str, str, str]]:
    out = set()
    for f in gold.facts:
        canon = canonical_number(f.value) or normalize_text(f.value)
        out.add((normalize_text(f.subject), f.time.strip(), canon))
    return out


def triple_prf(
    system: set[tuple[str, str, str]], gold: set[tuple[str, str, str]]
) -> tuple[float, float, float]:
    """Set-intersection precision/recall/F1; empty sides score 0 by convention."""
    hit = len(system & gold)
    precision = hit / len(system) if system else 0.0
    recall = hit / len(gold) if gold else 0.0
    f1 = (
        2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    )
    return precision, recall, f1


def canonical_triple_f1(graph: KnowledgeGraph, gold: GoldSet) -> tuple[float, float, float]:
    return triple_prf(harvest_system_triples(graph), gold_triples(gold))


# ---------------------------------------------------------------------------
# Full report


def evaluate(
    graph: KnowledgeGraph, gold: GoldSet, opts: MatchOptions | None = None
) -> FidelityReport:
    opts = opts or MatchOptions()
    ec, _ = entity_coverage(graph, gold)
    fc, outcomes = fact_coverage(graph, gold, opts)
    vf_fc, rescued, lost = value_first_fc(graph, gold, opts)
    precision, recall, f1 = canonical_triple_f1(graph, gold)
    return FidelityReport(
        ec=ec,
        fc=fc,
        fc_value_first=vf_fc,
        triple_precision=precision,
        triple_recall=recall,
        triple_f1=f1,
        outcomes=outcomes,
        taxonomy_counts=taxonomy_counts(outcomes),
        rescued=rescued,
        lost=lost,
    )


# ---------------------------------------------------------------------------
# Graph-native probe


def _lookup_year_value(
    graph: KnowledgeGraph, entity: str, year: str
) -> float | None:
    """Resolve an entity's value for a year from its 2-hop neighbourhood,
    preferring pairs found closer to the anchor."""
    anchors = anchor_nodes(graph, entity)
    if not anchors:
        return None
    ordered_units: list[tuple[int, int, str]] = []
    level = set(anchors)
    seen = set(anchors)
    for hop in range(3):
        for order, node_id in enumerate(sorted(level)):
            ordered_units.append((hop, order, node_text(graph.nodes[node_id])))
            for edge in graph.incident_edges(node_id):
                ordered_units.append((hop, order, edge_text(edge)))
        level = {n for node in level for n in graph.neighbors(node)} - seen
        seen |= level
        if not level:
            break
    for _, _, text in sorted(ordered_units, key=lambda u: (u[0], u[1])):
        for pair_year, pair_value in extract_year_value_pairs(text):
            if pair_year == year:
                value = parse_number(pair_value)
                if value is not None:
                    return value
    return None


def run_probe(graph: KnowledgeGraph, query: ProbeQuery) -> dict:
    """Deterministic rule-based computation over the graph; no model calls."""
    kind = query.kind
    params = query.params
    if kind == "trend":
        entity = params["entity"]
        v_from = _lookup_year_value(graph, entity, str(params["year_from"]))
        v_to = _lookup_year_value(graph, entity, str(params["year_to"]))
        if v_from is None or v_to is None:
            return {"answer": "unreachable", "correct": False}
        delta = v_to - v_from
        direction = "increase" if delta > 0 else "decrease" if delta < 0 else "stable"
        expected = query.expected
        correct = direction == expected.get("direction")
        if correct and "delta" in expected:
            correct = _within_tolerance(delta, float(expected["delta"]))
        return {"answer": {"direction": direction, "delta": delta}, "correct": correct}

    values: dict[str, float] = {}
    for entity in params["entities"]:
        value = _lookup_year_value(graph, entity, str(params["year"]))
        if value is None:
            return {"answer": "unreachable", "correct": False}
        values[entity] = value

    if kind == "ranking":
        k = int(params["k"])
        reverse = params.get("order", "desc") == "desc"
        ranked = sorted(values, key=lambda e: (values[e], e), reverse=reverse)
        answer = ranked[:k]
        correct = set(answer) == set(query.expected)  # order-insensitive
        return {"answer": answer, "correct": correct}
    if kind == "filtering":
        op = params["predicate"]["op"]
        threshold = float(params["predicate"]["threshold"])
        ops = {
            ">": lambda v: v > threshold,
            ">=": lambda v: v >= threshold,
            "<": lambda v: v < threshold,
            "<=": lambda v: v <= threshold,
            "==": lambda v: v == threshold,
        }
        answer = sorted(e for e, v in values.items() if ops[op](v))
        correct = set(answer) == set(query.expected)  # precision = recall = 1.0
        return {"answer": answer, "correct": correct}
    if kind == "aggregation":
        func = params["func"]
        series = list(values.values())
        result = {
            "mean": lambda: sum(series) / len(series),
            "sum": lambda: sum(series),
            "min": lambda: min(series),
            "max": lambda: max(series),
            "range": lambda: max(series) - min(series),
        }[func]()
        correct = _within_tolerance(result, float(query.expected))
        return {"answer": result, "correct": correct}
    raise ValueError(f"unknown probe kind {kind!r}")


def _within_tolerance(answer: float, expected: float) -> bool:
    if expected == 0:
        return answer == 0
    return abs(answer - expected) / abs(expected) <= AGGREGATION_TOLERANCE
