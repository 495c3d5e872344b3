"""Single entry point exposing every pipeline stage with stable flags.

JSON goes to stdout (or --out); a one-line human summary goes to stderr.
Usage errors exit 2 (argparse), data errors exit 1 with a structured
message. Defaults follow the documented experiment values: theta=0.90,
seed=42, n-perm=10000, n-boot=1000, budget=600. All randomness flows from
the --seed flags; nothing is ever seeded from the clock.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .errors import CellfactError
from .table import parse_csv, extract_features
from .topology import classify, apply_override, ClassifierConfig
from .schema import (
    induce_schema,
    schema_from_dict,
    perturb_schema,
    SchemaPerturbation,
    compute_scs,
    render_schema_prompt,
)
from .serialize import serialize, ablate, AblationCondition, chunkset_from_jsonl, count_tokens
from .gold import generate_gold, gold_to_jsonl, read_gold
from .graph import (
    ingest_graph,
    graph_from_jsonl,
    structural_metrics,
    degradation_guard,
    deterministic_parse,
    StructuralMetrics,
)
from .fidelity import evaluate, MatchOptions, ProbeQuery, run_probe
from .host import (
    ExtractionJob,
    SurrogateConfig,
    surrogate_extract,
    baseline_extract,
    export_job,
    import_responses,
)
from .runner import load_manifest, run_factorial, render_report
from . import stats


def _emit(args, payload: dict | list, summary: str) -> None:
    text = json.dumps(payload, indent=2, ensure_ascii=False) + "\n"
    if getattr(args, "out", None):
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    print(summary, file=sys.stderr)


def _emit_text(args, text: str, summary: str) -> None:
    if getattr(args, "out", None):
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    print(summary, file=sys.stderr)


def _read_table(args):
    return parse_csv(args.csv, delimiter=args.delimiter, encoding=args.encoding)


def _add_csv_options(p):
    p.add_argument("csv")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--encoding", default="utf-8")
    p.add_argument("--out")


# ---------------------------------------------------------------------------
# Subcommand handlers


def cmd_classify(args) -> int:
    table = _read_table(args)
    features = extract_features(table)
    config = ClassifierConfig(
        few_time_cols_max=args.few_time_cols_max,
        deep_hierarchy_min=args.deep_hierarchy_min,
        key_cols_min=args.key_cols_min,
        guards_enabled=not args.legacy,
    )
    topology = classify(features, config)
    if args.override:
        topology = apply_override(topology, args.override, args.reason or "")
    payload = topology.as_dict()
    payload["features"] = features.as_dict()
    _emit(args, payload, f"{args.csv}: {topology.tag} ({topology.rule_fired})")
    return 0


def cmd_induce(args) -> int:
    table = _read_table(args)
    features = extract_features(table)
    topology = classify(features, ClassifierConfig(guards_enabled=not args.legacy))
    if args.override:
        topology = apply_override(topology, args.override, args.reason or "")
    schema = induce_schema(table, topology, features)
    payload = schema.as_dict()
    payload["scs"] = compute_scs(schema, table)
    if args.render_dialect:
        payload["prompt"] = render_schema_prompt(schema, args.render_dialect)
    _emit(args, payload, f"induced {len(schema.entity_types)} entity types ({topology.tag})")
    return 0


def cmd_perturb_schema(args) -> int:
    schema = schema_from_dict(json.loads(Path(args.schema).read_text(encoding="utf-8")))
    params = {}
    if args.column:
        params["column"] = args.column
    if args.new_name:
        params["new_name"] = args.new_name
    if args.description:
        params["description"] = args.description
    perturbed = perturb_schema(schema, SchemaPerturbation(args.condition, params))
    _emit(args, perturbed.as_dict(), f"applied {args.condition}")
    return 0


def cmd_serialize(args) -> int:
    table = _read_table(args)
    chunks = serialize(
        table,
        None,
        args.format,
        args.budget,
        one_row_per_chunk=args.one_row_per_chunk,
        prose_style=args.prose,
    )
    _emit_text(args, chunks.to_jsonl(), f"{len(chunks.chunks)} chunks ({args.format})")
    return 0


def cmd_ablate(args) -> int:
    chunks = chunkset_from_jsonl(Path(args.chunks).read_text(encoding="utf-8"))
    if args.condition in ("M5", "M6") and args.seed is None:
        raise CellfactError(f"--seed is required for the stochastic condition {args.condition}")
    condition = AblationCondition(args.condition, args.seed if args.seed is not None else 0)
    labels = tuple(args.labels.split(",")) if args.labels else ()
    entities = tuple(args.entities.split(",")) if args.entities else ()
    out = ablate(chunks, condition, labels, entities)
    _emit_text(args, out.to_jsonl(), f"{args.condition} over {len(out.chunks)} chunks")
    return 0


def cmd_gold(args) -> int:
    table = _read_table(args)
    gold = generate_gold(
        table,
        args.subject_col,
        args.n_entities,
        [y.strip() for y in args.years.split(",")],
        args.seed,
        dataset_id=args.dataset_id,
    )
    _emit_text(args, gold_to_jsonl(gold), f"{len(gold.facts)} facts (seed={args.seed})")
    return 0


def cmd_detparse(args) -> int:
    table = _read_table(args)
    if args.time_cols:
        time_cols = [c.strip() for c in args.time_cols.split(",")]
    else:
        features = extract_features(table)
        time_cols = [table.header[i] for i in sorted(features.time_cols)]
    graph = deterministic_parse(table, args.subject_col, time_cols)
    _emit_text(
        args, graph.to_jsonl(),
        f"{len(graph.nodes)} nodes, {len(graph.edges)} edges from {table.n_rows} rows",
    )
    return 0


def cmd_extract(args) -> int:
    chunks = chunkset_from_jsonl(Path(args.chunks).read_text(encoding="utf-8"))
    schema = None
    if args.schema:
        schema = schema_from_dict(json.loads(Path(args.schema).read_text(encoding="utf-8")))
    if args.host == "files":
        if args.import_dir:
            result = import_responses(Path(args.import_dir) / "manifest.json", args.import_dir)
            _emit_text(
                args, result.graph.to_jsonl(),
                f"imported {len(result.graph.nodes)} nodes "
                f"({result.refusals} refusals, {result.malformed} malformed)",
            )
            return 0
        if not args.export_dir:
            raise CellfactError("--host files needs --export-dir or --import-dir")
        if schema is None:
            prompt = render_schema_prompt_default(args.dialect)
        else:
            prompt = render_schema_prompt(schema, args.dialect)
        job = ExtractionJob(chunks, prompt, args.dialect, args.condition)
        manifest = export_job(job, args.export_dir)
        _emit(args, manifest, f"exported {len(manifest['entries'])} prompts to {args.export_dir}")
        return 0
    prompt = (
        render_schema_prompt(schema, args.dialect)
        if schema is not None
        else render_schema_prompt_default(args.dialect)
    )
    job = ExtractionJob(chunks, prompt, args.dialect, args.condition)
    if schema is None:
        result = baseline_extract(job, args.baseline_value_limit)
    else:
        result = surrogate_extract(job, schema, SurrogateConfig(mode=args.mode))
    _emit_text(
        args, result.graph.to_jsonl(),
        f"{len(result.graph.nodes)} nodes, {len(result.graph.edges)} edges, "
        f"{result.refusals} refusals",
    )
    return 0


def render_schema_prompt_default(dialect: str) -> str:
    from .schema import default_prompt

    return default_prompt(dialect)


def cmd_guard(args) -> int:
    if args.graph:
        graph = graph_from_jsonl(Path(args.graph).read_text(encoding="utf-8"))
        metrics = structural_metrics(graph)
    elif args.edge_node_ratio is not None:
        metrics = StructuralMetrics(0, 0, args.edge_node_ratio, 0.0)
    else:
        raise CellfactError("guard needs --graph or --edge-node-ratio")
    decision = degradation_guard(
        metrics,
        theta=args.theta,
        n_rows=args.n_rows,
        is_type_iii=args.type3,
        skip_small_type3=not args.no_skip_small_type3,
    )
    _emit(args, decision.as_dict(), decision.decision)
    return 0


def cmd_ingest_graph(args) -> int:
    graph = ingest_graph(args.path, args.dialect)
    _emit_text(args, graph.to_jsonl(), f"{len(graph.nodes)} nodes, {len(graph.edges)} edges")
    return 0


def cmd_eval(args) -> int:
    graph = graph_from_jsonl(Path(args.graph).read_text(encoding="utf-8"))
    gold = read_gold(args.gold)
    opts = MatchOptions(accept_floor2=args.accept_floor2, require_colocation=args.colocate)
    report = evaluate(graph, gold, opts)
    payload = report.as_dict(include_outcomes=not args.no_outcomes)
    _emit(args, payload, f"EC={report.ec:.3f} FC={report.fc:.3f} F1={report.triple_f1:.3f}")
    return 0


def cmd_probe(args) -> int:
    graph = graph_from_jsonl(Path(args.graph).read_text(encoding="utf-8"))
    results = []
    correct = 0
    for line in Path(args.queries).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        query = ProbeQuery(rec["kind"], rec["params"], rec["expected"])
        outcome = run_probe(graph, query)
        results.append({"kind": query.kind, **outcome})
        correct += outcome["correct"]
    _emit(args, results, f"{correct}/{len(results)} probe queries correct")
    return 0


def cmd_metrics(args) -> int:
    if args.metric == "cds":
        table = parse_csv(args.path, delimiter=args.delimiter)
        result = stats.compute_cds(table, [c.strip() for c in args.subject_cols.split(",")])
        _emit(args, result.as_dict(), f"CDS={result.cds:.3f}")
        return 0
    if args.metric == "ttf":
        chunks = chunkset_from_jsonl(Path(args.path).read_text(encoding="utf-8"))
        ttf = stats.compute_ttf(chunks, args.presence_threshold)
        _emit(args, {"ttf": ttf, "n_chunks": len(chunks.chunks)}, f"TTF={ttf:.3f}")
        return 0
    if args.metric == "structural":
        graph = graph_from_jsonl(Path(args.path).read_text(encoding="utf-8"))
        metrics = structural_metrics(graph)
        _emit(args, metrics.as_dict(), f"e/n={metrics.edge_node_ratio:.3f}")
        return 0
    if args.metric == "tokens":
        text = Path(args.path).read_text(encoding="utf-8")
        _emit(args, {"tokens": count_tokens(text)}, "token count")
        return 0
    raise CellfactError(f"unknown metric {args.metric!r}")


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_stats(args) -> int:
    method = args.method
    if method == "mcnemar":
        chi = stats.mcnemar(args.b, args.c, continuity=args.continuity)
        payload = {"chi_square": chi, "b": args.b, "c": args.c,
                   "continuity": args.continuity, "p": stats.chi2_sf(chi, 1)}
        _emit(args, payload, f"chi^2 = {chi:.2f}")
        return 0
    if method == "fisher":
        result = stats.fisher_combined(_float_list(args.p), clamp_zero=args.clamp_zero)
        _emit(args, result, f"chi^2 = {result['chi_square']:.2f}, df = {result['df']}")
        return 0
    if method == "interaction":
        delta = stats.interaction_point(args.base, args.serial, args.schema, args.full)
        _emit(args, {"delta_int": delta}, f"delta_int = {delta:+.3f}")
        return 0
    if method == "permutation":
        result = stats.permutation_test(_float_list(args.diffs), args.n_perm, args.seed)
        _emit(args, result.as_dict(), f"p = {result.p:.4g} ({result.mode})")
        return 0
    if method == "wilcoxon":
        result = stats.wilcoxon_signed_rank(
            _float_list(args.x), _float_list(args.y) if args.y else None, args.bonferroni_k
        )
        _emit(args, result.as_dict(), f"p = {result.p_two_sided:.4g}")
        return 0
    if method == "bootstrap":
        vectors = json.loads(Path(args.cells).read_text(encoding="utf-8"))
        result = stats.bootstrap_ci(
            {k: tuple(v) for k, v in vectors.items()}, args.n_boot, args.seed
        )
        _emit(args, result.as_dict(),
              f"delta_int = {result.delta_int:+.3f} [{result.ci_low:.3f}, {result.ci_high:.3f}]")
        return 0
    raise CellfactError(f"unknown stats method {method!r}")


def cmd_factorial(args) -> int:
    manifest = load_manifest(args.manifest)
    outcome = run_factorial(manifest, jobs=args.jobs)
    markdown, _ = render_report(outcome)
    if args.report_out:
        Path(args.report_out).write_text(markdown, encoding="utf-8")
    _emit(args, outcome.as_dict(),
          f"{len(outcome.records)} runs, {len(outcome.errors)} failed datasets")
    return 1 if outcome.errors else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cellfact",
        description="CSV topology, schema induction, serialization, and "
        "knowledge-graph fidelity evaluation toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="classify CSV topology")
    _add_csv_options(p)
    p.add_argument("--legacy", action="store_true", help="disable the guard thresholds")
    p.add_argument("--few-time-cols-max", type=int, default=6)
    p.add_argument("--deep-hierarchy-min", type=int, default=3)
    p.add_argument("--key-cols-min", type=int, default=2)
    p.add_argument("--override", help="manual topology tag")
    p.add_argument("--reason", help="override reason (required with --override)")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("induce", help="induce an extraction schema")
    _add_csv_options(p)
    p.add_argument("--legacy", action="store_true")
    p.add_argument("--override")
    p.add_argument("--reason")
    p.add_argument("--render-dialect", choices=["lightrag-style", "graphrag-style"])
    p.set_defaults(func=cmd_induce)

    p = sub.add_parser("perturb-schema", help="apply a schema probing condition")
    p.add_argument("schema")
    p.add_argument("--condition", required=True)
    p.add_argument("--column")
    p.add_argument("--new-name")
    p.add_argument("--description")
    p.add_argument("--out")
    p.set_defaults(func=cmd_perturb_schema)

    p = sub.add_parser("serialize", help="serialize a table into chunks")
    _add_csv_options(p)
    p.add_argument("--format", default="sge",
                   choices=["sge", "markdown", "json-records", "row-local", "naive"])
    p.add_argument("--budget", type=int, default=600)
    p.add_argument("--one-row-per-chunk", action="store_true")
    p.add_argument("--prose", action="store_true", help="sge prose sub-style")
    p.set_defaults(func=cmd_serialize)

    p = sub.add_parser("ablate", help="apply an input-token ablation M0-M6")
    p.add_argument("chunks")
    p.add_argument("--condition", required=True,
                   choices=["M0", "M1", "M2", "M3", "M4", "M5", "M6"])
    p.add_argument("--seed", type=int, help="required for M5/M6")
    p.add_argument("--labels", help="comma-separated column labels")
    p.add_argument("--entities", help="comma-separated entity names")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gold", help="deterministic gold-fact generation")
    gold_sub = p.add_subparsers(dest="gold_command", required=True)
    g = gold_sub.add_parser("gen", help="sample gold facts from a CSV")
    _add_csv_options(g)
    g.add_argument("--subject-col", required=True)
    g.add_argument("--n-entities", type=int, required=True)
    g.add_argument("--years", required=True, help="comma-separated year column labels")
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--dataset-id", default="dataset")
    g.set_defaults(func=cmd_gold)

    p = sub.add_parser("detparse", help="deterministic parser baseline")
    _add_csv_options(p)
    p.add_argument("--subject-col", required=True)
    p.add_argument("--time-cols", help="comma-separated year labels (default: detected)")
    p.set_defaults(func=cmd_detparse)

    p = sub.add_parser("extract", help="run the surrogate extractor or file exchange")
    p.add_argument("--chunks", required=True)
    p.add_argument("--schema")
    p.add_argument("--host", default="surrogate", choices=["surrogate", "files"])
    p.add_argument("--mode", default="faithful",
                   choices=["faithful", "proliferate", "refuse", "relation_drop"])
    p.add_argument("--dialect", default="lightrag-style",
                   choices=["lightrag-style", "graphrag-style"])
    p.add_argument("--condition", default="full")
    p.add_argument("--baseline-value-limit", type=int, default=3)
    p.add_argument("--export-dir")
    p.add_argument("--import-dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("guard", help="adaptive degradation decision")
    p.add_argument("--graph")
    p.add_argument("--edge-node-ratio", type=float)
    p.add_argument("--theta", type=float, default=0.90)
    p.add_argument("--n-rows", type=int)
    p.add_argument("--type3", action="store_true")
    p.add_argument("--no-skip-small-type3", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_guard)

    p = sub.add_parser("ingest-graph", help="ingest a host export into native JSONL")
    p.add_argument("path")
    p.add_argument("--dialect", default="native-jsonl",
                   choices=["native-jsonl", "lightrag-export", "graphrag-export"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_ingest_graph)

    p = sub.add_parser("eval", help="fidelity evaluation of a graph against gold facts")
    p.add_argument("graph")
    p.add_argument("gold")
    p.add_argument("--accept-floor2", action="store_true")
    p.add_argument("--colocate", action="store_true",
                   help="require value and year in the same text unit")
    p.add_argument("--no-outcomes", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe", help="graph-native probe queries")
    p.add_argument("graph")
    p.add_argument("queries")
    p.add_argument("--out")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("metrics", help="CDS / TTF / structural metrics")
    p.add_argument("metric", choices=["cds", "ttf", "structural", "tokens"])
    p.add_argument("path")
    p.add_argument("--subject-cols", help="for cds: comma-separated subject columns")
    p.add_argument("--presence-threshold", type=float, default=0.8)
    p.add_argument("--delimiter", default=",")
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("stats", help="statistics battery")
    stats_sub = p.add_subparsers(dest="method", required=True)
    s = stats_sub.add_parser("mcnemar")
    s.add_argument("--b", type=int, required=True)
    s.add_argument("--c", type=int, required=True)
    s.add_argument("--continuity", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)
    s = stats_sub.add_parser("fisher")
    s.add_argument("--p", required=True, help="comma-separated p-values")
    s.add_argument("--clamp-zero", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)
    s = stats_sub.add_parser("interaction")
    s.add_argument("--base", type=float, required=True)
    s.add_argument("--serial", type=float, required=True)
    s.add_argument("--schema", type=float, required=True)
    s.add_argument("--full", type=float, required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)
    s = stats_sub.add_parser("permutation")
    s.add_argument("--diffs", required=True, help="comma-separated paired differences")
    s.add_argument("--n-perm", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)
    s = stats_sub.add_parser("wilcoxon")
    s.add_argument("--x", required=True)
    s.add_argument("--y")
    s.add_argument("--bonferroni-k", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)
    s = stats_sub.add_parser("bootstrap")
    s.add_argument("--cells", required=True,
                   help="JSON file: condition -> per-fact 0/1 vector")
    s.add_argument("--n-boot", type=int, default=1_000)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    p = sub.add_parser("factorial", help="run a dataset manifest end to end")
    p.add_argument("manifest")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--report-out", help="write the markdown report here")
    p.add_argument("--out")
    p.set_defaults(func=cmd_factorial)

    p = sub.add_parser("report", help="render a markdown report from factorial JSON")
    p.add_argument("records", help="JSON emitted by the factorial subcommand")
    p.add_argument("--out")
    p.set_defaults(func=cmd_render_report)

    return parser


def cmd_render_report(args) -> int:
    data = json.loads(Path(args.records).read_text(encoding="utf-8"))
    markdown = _markdown_from_summary(data)
    _emit_text(args, markdown, "report rendered")
    return 0


def _markdown_from_summary(data: dict) -> str:
    lines = ["# Fidelity report", "", "| Dataset | Condition | EC | FC | Ratio |",
             "| --- | --- | --- | --- | --- |"]
    by_dataset: dict[str, dict[str, dict]] = {}
    for rec in data.get("records", []):
        by_dataset.setdefault(rec["dataset_id"], {})[rec["condition"]] = rec
    for dataset_id, conditions in by_dataset.items():
        base = conditions.get("baseline", {}).get("fidelity", {}).get("fc")
        for condition, rec in conditions.items():
            fid = rec["fidelity"]
            ratio = ""
            if condition == "full":
                if rec.get("provenance", {}).get("fallback_applied"):
                    ratio = "degraded"
                elif not base:
                    ratio = "N/A"
                else:
                    ratio = f"{fid['fc'] / base:.2f}x"
            lines.append(
                f"| {dataset_id} | {condition} | {fid['ec']:.3f} | {fid['fc']:.3f} | {ratio} |"
            )
    interactions = data.get("interactions", {})
    if interactions:
        lines += ["", "| Dataset | Delta_int | 95% CI |", "| --- | --- | --- |"]
        for dataset_id, inter in interactions.items():
            ci = "n/a"
            if inter.get("ci_low") is not None:
                ci = f"[{inter['ci_low']:+.3f}, {inter['ci_high']:+.3f}]"
            lines.append(f"| {dataset_id} | {inter['delta_int']:+.3f} | {ci} |")
    fisher = data.get("fisher")
    if fisher:
        lines += ["", f"Fisher combined: chi^2 = {fisher['chi_square']:.2f}, "
                      f"df = {fisher['df']}, p = {fisher['p']:.3g}"]
    return "\n".join(lines) + "\n"


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CellfactError as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
