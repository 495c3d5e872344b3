from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

from cellfact.errors import GraphError
from cellfact.graph import (
    KnowledgeGraph,
    Node,
    Edge,
    structural_metrics,
    degradation_guard,
    deterministic_parse,
    ingest_graph,
    graph_from_jsonl,
    write_graph,
    StructuralMetrics,
)
from cellfact.gold import generate_gold
from cellfact.fidelity import evaluate


def small_graph() -> KnowledgeGraph:
    g = KnowledgeGraph()
    g.add_node(Node("a", "Alpha", "Entity", "2020: 5.5"))
    g.add_node(Node("b", "Beta", "Entity", ""))
    g.add_edge(Edge("a", "b", "2020: 5.5"))
    return g


def test_two_node_one_edge_ratio():
    m = structural_metrics(small_graph())
    assert m.n_nodes == 2 and m.n_edges == 1
    assert m.edge_node_ratio == 0.5
    assert m.isolated_node_ratio == 0.0


def test_duplicate_node_id_errors():
    g = KnowledgeGraph()
    g.add_node(Node("x", "X", "Entity"))
    with pytest.raises(GraphError) as err:
        g.add_node(Node("x", "X2", "Entity"))
    assert "x" in str(err.value)


def test_dangling_edge_errors(tmp_path):
    text = json.dumps({"node": {"id": "a", "name": "A", "type": "t"}}) + "\n"
    text += json.dumps({"edge": {"src": "a", "dst": "ghost"}}) + "\n"
    path = tmp_path / "g.jsonl"
    path.write_text(text)
    with pytest.raises(GraphError):
        ingest_graph(path, "native-jsonl")


def test_ingest_export_identity(tmp_path):
    g = small_graph()
    path = tmp_path / "g.jsonl"
    write_graph(g, path)
    again = ingest_graph(path, "native-jsonl")
    assert again.to_jsonl() == g.to_jsonl()


def test_edges_before_nodes_tolerated():
    text = json.dumps({"edge": {"src": "a", "dst": "b"}}) + "\n"
    text += json.dumps({"node": {"id": "a", "name": "A", "type": "t"}}) + "\n"
    text += json.dumps({"node": {"id": "b", "name": "B", "type": "t"}}) + "\n"
    g = graph_from_jsonl(text)
    assert len(g.edges) == 1


def test_lightrag_export_dialect(tmp_path):
    data = {
        "entities": [
            {"entity_name": "CHN", "entity_type": "Country", "description": "d1",
             "source_id": "chunk-1"},
            {"entity_name": "CHN 2020", "entity_type": "StatValue", "description": "2020: 77.4"},
        ],
        "relationships": [
            {"src_id": "CHN", "tgt_id": "CHN 2020", "description": "2020: 77.4",
             "keywords": "life expectancy, 2020", "weight": 1.0},
        ],
    }
    path = tmp_path / "lr.json"
    path.write_text(json.dumps(data))
    g = ingest_graph(path, "lightrag-export")
    assert len(g.nodes) == 2 and len(g.edges) == 1
    assert "[source_id=chunk-1]" in g.nodes["CHN"].description  # unknown field preserved
    assert g.edges[0].keywords == ("life expectancy", "2020")


def test_graphrag_export_dialect(tmp_path):
    data = {
        "entities": [{"title": "CHN", "type": "Country", "description": ""}],
        "relationships": [],
    }
    path = tmp_path / "gr.json"
    path.write_text(json.dumps(data))
    g = ingest_graph(path, "graphrag-export")
    assert g.nodes["CHN"].type == "Country"


def test_downscaled_export_fixture_counts(tmp_path, dense_table):
    """Authored fixture with exact counts: 10 subjects x 6 years -> 70 nodes,
    60 edges (verified by construction)."""
    g = deterministic_parse(dense_table, "Area Code", [str(y) for y in range(2000, 2006)])
    assert len(g.nodes) == 10 + 60
    assert len(g.edges) == 60
    path = tmp_path / "export.jsonl"
    write_graph(g, path)
    assert structural_metrics(ingest_graph(path)).n_nodes == 70


def test_structural_metrics_paper_values():
    m = StructuralMetrics(97, 146, 146 / 97, 0.0)
    assert m.edge_node_ratio == pytest.approx(1.505, abs=5e-4)
    g = KnowledgeGraph()
    for i in range(25):
        g.add_node(Node(f"n{i}", f"N{i}", "t"))
    m = structural_metrics(g)
    assert m.edge_node_ratio == 0.0
    assert m.isolated_node_ratio == 1.0


def test_empty_graph_ratios_zero():
    m = structural_metrics(KnowledgeGraph())
    assert m.edge_node_ratio == 0.0 and m.isolated_node_ratio == 0.0


def test_guard_thresholds():
    assert degradation_guard(StructuralMetrics(100, 79, 0.793, 0.0)).decision == "fallback"
    assert degradation_guard(StructuralMetrics(100, 94, 0.943, 0.0)).decision == "proceed"
    d = degradation_guard(
        StructuralMetrics(10, 10, 1.0, 0.0), n_rows=19, is_type_iii=True
    )
    assert d.decision == "skip_schema"
    d = degradation_guard(
        StructuralMetrics(10, 10, 1.0, 0.0), n_rows=20, is_type_iii=True
    )
    assert d.decision == "proceed"


def test_guard_theta_validation():
    with pytest.raises(GraphError):
        degradation_guard(StructuralMetrics(1, 1, 1.0, 0.0), theta=2.5)


@given(st.floats(0.0, 1.9), st.floats(0.0, 1.9))
def test_guard_monotone(ratio_low, ratio_high):
    lo, hi = sorted((ratio_low, ratio_high))
    d_lo = degradation_guard(StructuralMetrics(10, 0, lo, 0.0))
    d_hi = degradation_guard(StructuralMetrics(10, 0, hi, 0.0))
    if d_hi.decision == "fallback":
        assert d_lo.decision == "fallback"


def test_detparse_dense_fc_1(dense_table):
    years = [str(y) for y in range(2000, 2006)]
    g = deterministic_parse(dense_table, "Area Code", years)
    gold = generate_gold(dense_table, "Area Code", 10, years, seed=42)
    report = evaluate(g, gold)
    assert report.fc == 1.0 and report.ec == 1.0


def test_detparse_skips_missing_cells():
    from cellfact.table import parse_csv_text

    table = parse_csv_text("Code,2001,2002\nAA,1,\nBB,,4\n")
    g = deterministic_parse(table, "Code", ["2001", "2002"])
    descriptions = [e.description for e in g.edges]
    assert descriptions == ["2001: 1", "2002: 4"]  # nothing fabricated at gaps


def test_detparse_fortune_layout(fortune_table):
    years = [str(y) for y in range(2018, 2023)]
    g = deterministic_parse(fortune_table, "Company", years)
    gold = generate_gold(fortune_table, "Company", 25, years, seed=42)
    report = evaluate(g, gold)
    assert report.fc == 1.0
