"""Knowledge-graph model, host-export ingestion, structural metrics, and the
adaptive-degradation guard.

The graph is immutable-by-convention after construction: evaluation and
probing only traverse it. Value bindings produced by the deterministic
parser are edges whose descriptions carry "year: value" pairs, the one
searchable convention every producer in this toolkit follows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import GraphError
from .table import CsvTable
from .schema import normalize_label

DIALECTS = ("native-jsonl", "lightrag-export", "graphrag-export")

SMALL_TYPE3_ROWS = 20
DEFAULT_THETA = 0.90


@dataclass(frozen=True)
class Node:
    id: str
    name: str
    type: str
    description: str = ""


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    description: str = ""
    keywords: tuple[str, ...] = ()


class KnowledgeGraph:
    def __init__(self):
        self.nodes: dict[str, Node] = {}
        self.edges: list[Edge] = []
        self._adjacency: dict[str, set[str]] = {}
        self._incident: dict[str, list[int]] = {}

    def add_node(self, node: Node, *, on_duplicate: str = "error") -> None:
        if node.id in self.nodes:
            if on_duplicate == "skip":
                return
            raise GraphError(f"duplicate node id {node.id!r}")
        self.nodes[node.id] = node
        self._adjacency[node.id] = set()
        self._incident[node.id] = []

    def add_edge(self, edge: Edge) -> None:
        for endpoint in (edge.src, edge.dst):
            if endpoint not in self.nodes:
                raise GraphError(f"edge endpoint {endpoint!r} does not exist")
        index = len(self.edges)
        self.edges.append(edge)
        self._adjacency[edge.src].add(edge.dst)
        self._adjacency[edge.dst].add(edge.src)
        self._incident[edge.src].append(index)
        if edge.dst != edge.src:
            self._incident[edge.dst].append(index)

    def neighbors(self, node_id: str) -> set[str]:
        return self._adjacency[node_id]

    def incident_edges(self, node_id: str) -> list[Edge]:
        return [self.edges[i] for i in self._incident[node_id]]

    def outgoing_edges(self, node_id: str) -> list[Edge]:
        return [self.edges[i] for i in self._incident[node_id] if self.edges[i].src == node_id]

    def has_incoming(self, node_id: str) -> bool:
        return any(self.edges[i].dst == node_id for i in self._incident[node_id])

    def degree(self, node_id: str) -> int:
        return len(self._incident[node_id])

    def k_hop_nodes(self, seeds: set[str], k: int) -> set[str]:
        """BFS over the undirected graph: all nodes within k hops of the seeds."""
        frontier = set(seeds)
        seen = set(seeds)
        for _ in range(k):
            frontier = {n for node in frontier for n in self._adjacency[node]} - seen
            if not frontier:
                break
            seen |= frontier
        return seen

    def to_jsonl(self) -> str:
        lines = [
            json.dumps({"node": {"id": n.id, "name": n.name, "type": n.type,
                                 "description": n.description}}, ensure_ascii=False)
            for n in sorted(self.nodes.values(), key=lambda n: n.id)
        ]
        lines += [
            json.dumps({"edge": {"src": e.src, "dst": e.dst, "description": e.description,
                                 "keywords": list(e.keywords)}}, ensure_ascii=False)
            for e in self.edges
        ]
        return "\n".join(lines) + ("\n" if lines else "")


@dataclass(frozen=True)
class StructuralMetrics:
    n_nodes: int
    n_edges: int
    edge_node_ratio: float
    isolated_node_ratio: float

    def as_dict(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "n_edges": self.n_edges,
            "edge_node_ratio": self.edge_node_ratio,
            "isolated_node_ratio": self.isolated_node_ratio,
        }


@dataclass(frozen=True)
class GuardDecision:
    decision: str  # "proceed" | "fallback" | "skip_schema"
    edge_node_ratio: float
    theta: float

    def as_dict(self) -> dict:
        return {
            "decision": self.decision,
            "edge_node_ratio": self.edge_node_ratio,
            "theta": self.theta,
        }


def structural_metrics(graph: KnowledgeGraph) -> StructuralMetrics:
    n = len(graph.nodes)
    e = len(graph.edges)
    if n == 0:
        return StructuralMetrics(0, 0, 0.0, 0.0)
    isolated = sum(1 for node_id in graph.nodes if graph.degree(node_id) == 0)
    return StructuralMetrics(n, e, e / n, isolated / n)


def degradation_guard(
    metrics: StructuralMetrics,
    theta: float = DEFAULT_THETA,
    n_rows: int | None = None,
    *,
    is_type_iii: bool = False,
    skip_small_type3: bool = True,
) -> GuardDecision:
    """Three-way decision: skip schema injection up front for small Type-III
    tables, fall back to baseline when the edge/node ratio drops below theta,
    otherwise proceed."""
    if not 0 < theta < 2:
        raise GraphError(f"theta must be in (0, 2), got {theta}")
    if skip_small_type3 and is_type_iii and n_rows is not None and n_rows < SMALL_TYPE3_ROWS:
        return GuardDecision("skip_schema", metrics.edge_node_ratio, theta)
    if metrics.edge_node_ratio < theta:
        return GuardDecision("fallback", metrics.edge_node_ratio, theta)
    return GuardDecision("proceed", metrics.edge_node_ratio, theta)


# ---------------------------------------------------------------------------
# Ingestion


def ingest_graph(path: str | Path, dialect: str = "native-jsonl") -> KnowledgeGraph:
    if dialect not in DIALECTS:
        raise GraphError(f"unknown graph dialect {dialect!r}")
    text = Path(path).read_text(encoding="utf-8")
    if dialect == "native-jsonl":
        return graph_from_jsonl(text)
    data = json.loads(text)
    if dialect == "lightrag-export":
        return _ingest_entity_export(
            data, name_key="entity_name", type_key="entity_type",
            src_key="src_id", dst_key="tgt_id",
        )
    return _ingest_entity_export(
        data, name_key="title", type_key="type", src_key="source", dst_key="target",
    )


def graph_from_jsonl(text: str) -> KnowledgeGraph:
    graph = KnowledgeGraph()
    pending_edges: list[Edge] = []
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise GraphError(f"malformed graph record on line {i}: {exc}") from exc
        if "node" in rec:
            n = rec["node"]
            graph.add_node(Node(n["id"], n.get("name", n["id"]), n.get("type", ""),
                                n.get("description", "")))
        elif "edge" in rec:
            e = rec["edge"]
            pending_edges.append(
                Edge(e["src"], e["dst"], e.get("description", ""),
                     tuple(e.get("keywords", [])))
            )
        else:
            raise GraphError(f"line {i} is neither a node nor an edge record")
    for edge in pending_edges:
        graph.add_edge(edge)
    return graph


def _ingest_entity_export(data: dict, *, name_key: str, type_key: str,
                          src_key: str, dst_key: str) -> KnowledgeGraph:
    graph = KnowledgeGraph()
    known = {name_key, type_key, "description"}
    for ent in data.get("entities", []):
        name = ent.get(name_key) or ent.get("name")
        if name is None:
            raise GraphError(f"entity record without a {name_key!r} field: {ent}")
        description = str(ent.get("description", ""))
        extras = {k: v for k, v in ent.items() if k not in known and k != "name"}
        if extras:
            # Unknown fields are preserved as opaque description text.
            description += "".join(f" [{k}={v}]" for k, v in sorted(extras.items()))
        graph.add_node(Node(str(name), str(name), str(ent.get(type_key, "")), description))
    for rel in data.get("relationships", []):
        src, dst = str(rel.get(src_key, "")), str(rel.get(dst_key, ""))
        keywords = rel.get("keywords", "")
        if isinstance(keywords, str):
            keywords = tuple(k.strip() for k in keywords.split(",") if k.strip())
        else:
            keywords = tuple(map(str, keywords))
        graph.add_edge(Edge(src, dst, str(rel.get("description", "")), keywords))
    return graph


def write_graph(graph: KnowledgeGraph, path: str | Path) -> None:
    Path(path).write_text(graph.to_jsonl(), encoding="utf-8")


# ---------------------------------------------------------------------------
# Deterministic parser baseline


def deterministic_parse(
    table: CsvTable, subject_col: str, time_cols: list[str]
) -> KnowledgeGraph:
    """Enumerate all row x year-column pairs into subject nodes and value bindings.

    Empty cells are skipped: no binding is fabricated at missing positions.
    """
    subj_idx = table.column_by_label(subject_col)
    year_idx = [(label, table.column_by_label(label)) for label in time_cols]
    subject_type = normalize_label(subject_col)

    graph = KnowledgeGraph()
    for r, row in enumerate(table.rows):
        subject = row[subj_idx].strip()
        if not subject:
            continue
        subj_id = f"subj:{subject}"
        if subj_id not in graph.nodes:
            graph.add_node(Node(subj_id, subject, subject_type,
                                f"Subject from column '{subject_col}'."))
        for label, c in year_idx:
            value = row[c].strip()
            if not value:
                continue
            val_id = f"val:r{r}:{label}"
            graph.add_node(Node(val_id, f"{subject} {label}", "StatValue",
                                f"{label}: {value}"))
            graph.add_edge(Edge(subj_id, val_id, f"{label}: {value}"))
    return graph
