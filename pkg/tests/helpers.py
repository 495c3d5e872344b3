"""Test-side builders and independent oracles.

The oracles here deliberately re-derive results through different machinery
than the library (brute-force path enumeration instead of BFS, loop-based
resampling instead of vectorized numpy) so that agreement is evidence, not
tautology.
"""

from __future__ import annotations

import random

from cellfact.gold import GoldFact, GoldSet
from cellfact.graph import KnowledgeGraph, Node, Edge
from cellfact.fidelity import value_in_text, time_in_text, MatchOptions


def gold_from_facts(triples: list[tuple[str, str, str]], dataset_id: str = "t") -> GoldSet:
    facts = tuple(
        GoldFact(dataset_id, s, t, v, row=i, col=1) for i, (s, t, v) in enumerate(triples)
    )
    years: dict[str, None] = {}
    subjects: dict[str, None] = {}
    for f in facts:
        years.setdefault(f.time)
        subjects.setdefault(f.subject)
    return GoldSet(facts, len(subjects), tuple(years), seed=0, dataset_id=dataset_id)


def graph_from_outcomes(gold: GoldSet, covered: list[bool]) -> KnowledgeGraph:
    """Author a graph that covers exactly the flagged facts.

    Covered facts get the subject node plus a bound value node; uncovered
    facts get nothing at all (their subjects stay absent unless another
    covered fact shares the subject).
    """
    graph = KnowledgeGraph()
    for fact, hit in zip(gold.facts, covered):
        if not hit:
            continue
        subj_id = f"subj:{fact.subject}"
        if subj_id not in graph.nodes:
            graph.add_node(Node(subj_id, fact.subject, "Entity", ""))
        val_id = f"val:{fact.row}:{fact.time}"
        graph.add_node(Node(val_id, f"{fact.subject} {fact.time}", "StatValue",
                            f"{fact.time}: {fact.value}"))
        graph.add_edge(Edge(subj_id, val_id, f"{fact.time}: {fact.value}"))
    return graph


# ---------------------------------------------------------------------------
# Exhaustive fact-coverage oracle (no BFS: all-pairs path tests)


def brute_force_fc(graph: KnowledgeGraph, gold: GoldSet, opts: MatchOptions | None = None) -> float:
    opts = opts or MatchOptions()
    node_ids = list(graph.nodes)
    adjacent: dict[str, set[str]] = {n: set() for n in node_ids}
    for e in graph.edges:
        adjacent[e.src].add(e.dst)
        adjacent[e.dst].add(e.src)

    def within_two_hops(a: str, b: str) -> bool:
        if a == b or b in adjacent[a]:
            return True
        return any(b in adjacent[mid] for mid in adjacent[a])

    covered = 0
    for fact in gold.facts:
        subject = fact.subject.casefold()
        anchors = [
            n for n in node_ids
            if subject and graph.nodes[n].name
            and (subject in graph.nodes[n].name.casefold()
                 or graph.nodes[n].name.casefold() in subject)
        ]
        if not anchors:
            continue
        pool = {b for a in anchors for b in node_ids if within_two_hops(a, b)}
        texts = [f"{graph.nodes[n].name}\n{graph.nodes[n].description}" for n in sorted(pool)]
        for e in graph.edges:
            if e.src in pool or e.dst in pool:
                texts.append("\n".join([e.description, *e.keywords]))
        blob = "\n".join(texts)
        if value_in_text(fact.value, blob, opts) and time_in_text(fact.time, blob):
            covered += 1
    return covered / len(gold.facts) if gold.facts else 0.0


def random_graph_and_gold(seed: int) -> tuple[KnowledgeGraph, GoldSet]:
    """Random graph (<= 50 nodes) and random gold set for oracle equivalence."""
    rng = random.Random(seed)
    n_nodes = rng.randint(1, 50)
    subjects = [f"SUBJ{chr(ord('A') + i % 26)}{i}" for i in range(12)]
    years = [str(y) for y in range(2015, 2023)]
    values = [f"{rng.randint(10, 400)}.{rng.randint(0, 9)}" for _ in range(25)]

    graph = KnowledgeGraph()
    for i in range(n_nodes):
        style = rng.random()
        if style < 0.45:
            name = rng.choice(subjects)
        elif style < 0.7:
            name = f"{rng.choice(subjects)} {rng.choice(years)}"
        else:
            name = f"node-{i}"
        parts = []
        for _ in range(rng.randint(0, 3)):
            parts.append(f"{rng.choice(years)}: {rng.choice(values)}")
        graph.add_node(Node(f"n{i}", name, "Entity", "; ".join(parts)))
    node_ids = list(graph.nodes)
    for _ in range(rng.randint(0, n_nodes * 2)):
        a, b = rng.choice(node_ids), rng.choice(node_ids)
        description = (
            f"{rng.choice(years)}: {rng.choice(values)}" if rng.random() < 0.6 else "related"
        )
        graph.add_edge(Edge(a, b, description))

    triples = []
    for i in range(rng.randint(1, 15)):
        triples.append((rng.choice(subjects), rng.choice(years), rng.choice(values)))
    return graph, gold_from_facts(triples)


# ---------------------------------------------------------------------------
# Loop-based resampling oracles


def oracle_bootstrap_interaction(per_fact: dict[str, list[int]], n: int, seed: int):
    rng = random.Random(seed)
    size = len(per_fact["baseline"])
    stats = []
    for _ in range(n):
        idx = [rng.randrange(size) for _ in range(size)]
        means = {
            cond: sum(vec[i] for i in idx) / size for cond, vec in per_fact.items()
        }
        stats.append(
            means["full"] - means["serial_only"] - means["schema_only"] + means["baseline"]
        )
    stats.sort()

    def percentile(q: float) -> float:
        # linear interpolation, same convention as numpy default
        pos = q * (len(stats) - 1)
        lo = int(pos)
        hi = min(lo + 1, len(stats) - 1)
        frac = pos - lo
        return stats[lo] * (1 - frac) + stats[hi] * frac

    return percentile(0.025), percentile(0.975)


def oracle_exact_permutation(diffs: list[float]) -> float:
    n = len(diffs)
    observed = abs(sum(diffs) / n)
    extreme = 0
    for mask in range(2**n):
        total = 0.0
        for i, d in enumerate(diffs):
            total += d if (mask >> i) & 1 else -d
        if abs(total / n) >= observed - 1e-12:
            extreme += 1
    return extreme / 2**n
