"""Dataset manifests, 2x2 factorial orchestration, and report rendering.

A manifest names datasets (CSV path, subject column, gold parameters or a
gold file) plus global seeds and pipeline parameters. Every dataset runs
the four factorial conditions through the surrogate host, is evaluated
against its gold set, and contributes an interaction term with a bootstrap
CI and a paired permutation p; the permutation p-values feed one Fisher
combined test. Datasets fail in isolation. Reports never average across
datasets.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ManifestError, CellfactError
from .table import parse_csv, extract_features
from .topology import classify, apply_override, ClassifierConfig, TYPE_I
from .schema import induce_schema
from .gold import GoldSet, generate_gold, read_gold
from .fidelity import evaluate, MatchOptions, FidelityReport
from .graph import structural_metrics
from .host import PipelineConfig, run_pipeline
from . import stats

CONDITIONS = ("baseline", "serial_only", "schema_only", "full")


@dataclass(frozen=True)
class GoldGenParams:
    n_entities: int
    years: tuple[str, ...]
    seed: int


@dataclass(frozen=True)
class DatasetSpec:
    dataset_id: str
    csv_path: str
    subject_col: str
    gold_path: str | None = None
    gold_gen: GoldGenParams | None = None
    topology_override: tuple[str, str] | None = None  # (tag, reason)
    conditions: tuple[str, ...] = CONDITIONS


@dataclass(frozen=True)
class ManifestParams:
    budget: int = 600
    theta: float = 0.90
    n_boot: int = 1_000
    n_perm: int = 10_000
    bootstrap_seed: int = 42
    permutation_seed: int = 42
    dialect: str = "lightrag-style"
    accept_floor2: bool = False


@dataclass(frozen=True)
class Manifest:
    datasets: tuple[DatasetSpec, ...]
    params: ManifestParams


@dataclass
class RunRecord:
    dataset_id: str
    condition: str
    fidelity: FidelityReport
    structural: dict
    guard: dict
    provenance: dict
    config_hash: str
    timestamp: float

    def as_dict(self, *, include_timestamp: bool = False, include_outcomes: bool = False) -> dict:
        out = {
            "dataset_id": self.dataset_id,
            "condition": self.condition,
            "fidelity": self.fidelity.as_dict(include_outcomes=include_outcomes),
            "structural": self.structural,
            "guard": self.guard,
            "provenance": self.provenance,
            "config_hash": self.config_hash,
        }
        if include_timestamp:
            out["timestamp"] = self.timestamp
        return out


@dataclass
class DatasetResult:
    dataset_id: str
    records: list[RunRecord]
    interaction: stats.InteractionResult | None
    permutation: stats.PermutationResult | None


@dataclass
class FactorialOutcome:
    records: list[RunRecord]
    interactions: dict[str, stats.InteractionResult]
    fisher: dict | None
    errors: dict[str, str]

    def as_dict(self) -> dict:
        return {
            "records": [r.as_dict() for r in self.records],
            "interactions": {k: v.as_dict() for k, v in self.interactions.items()},
            "fisher": self.fisher,
            "errors": dict(self.errors),
        }


def load_manifest(path: str | Path) -> Manifest:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot load manifest {path}: {exc}") from exc
    base = Path(path).parent
    datasets = []
    seen_ids = set()
    for ds in data.get("datasets", []):
        dataset_id = ds["dataset_id"]
        if dataset_id in seen_ids:
            raise ManifestError(f"duplicate dataset_id {dataset_id!r}")
        seen_ids.add(dataset_id)
        gold = ds.get("gold", {})
        gold_gen = None
        gold_path = gold.get("path")
        if gold_path is not None:
            gold_path = str((base / gold_path).resolve())
        if "n_entities" in gold:
            gold_gen = GoldGenParams(
                n_entities=int(gold["n_entities"]),
                years=tuple(str(y) for y in gold["years"]),
                seed=int(gold["seed"]),
            )
        if gold_gen is None and gold_path is None:
            raise ManifestError(f"dataset {dataset_id!r} has neither gold path nor gen params")
        override = None
        if "topology_override" in ds:
            override = (ds["topology_override"]["tag"], ds["topology_override"]["reason"])
        datasets.append(
            DatasetSpec(
                dataset_id=dataset_id,
                csv_path=str((base / ds["csv_path"]).resolve()),
                subject_col=ds["subject_col"],
                gold_path=gold_path,
                gold_gen=gold_gen,
                topology_override=override,
                conditions=tuple(ds.get("conditions", CONDITIONS)),
            )
        )
    params = ManifestParams(**data.get("params", {}))
    return Manifest(datasets=tuple(datasets), params=params)


def config_hash(spec: DatasetSpec, params: ManifestParams) -> str:
    payload = json.dumps(
        {
            "dataset": {
                "dataset_id": spec.dataset_id,
                "csv_path": spec.csv_path,
                "subject_col": spec.subject_col,
                "gold_path": spec.gold_path,
                "gold_gen": None
                if spec.gold_gen is None
                else [spec.gold_gen.n_entities, list(spec.gold_gen.years), spec.gold_gen.seed],
                "topology_override": spec.topology_override,
                "conditions": list(spec.conditions),
            },
            "params": {
                "budget": params.budget,
                "theta": params.theta,
                "n_boot": params.n_boot,
                "n_perm": params.n_perm,
                "bootstrap_seed": params.bootstrap_seed,
                "permutation_seed": params.permutation_seed,
                "dialect": params.dialect,
                "accept_floor2": params.accept_floor2,
            },
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _load_gold(spec: DatasetSpec, table) -> GoldSet:
    if spec.gold_path is not None:
        return read_gold(spec.gold_path, dataset_id=spec.dataset_id)
    gen = spec.gold_gen
    return generate_gold(
        table, spec.subject_col, gen.n_entities, list(gen.years), gen.seed, spec.dataset_id
    )


def run_dataset(spec: DatasetSpec, params: ManifestParams) -> DatasetResult:
    table = parse_csv(spec.csv_path)
    features = extract_features(table)
    topology = classify(features, ClassifierConfig())
    if spec.topology_override is not None:
        topology = apply_override(topology, *spec.topology_override)
    schema = None
    if topology.tag != TYPE_I:
        schema = induce_schema(table, topology, features)
    gold = _load_gold(spec, table)
    opts = MatchOptions(accept_floor2=params.accept_floor2)
    digest = config_hash(spec, params)

    records: list[RunRecord] = []
    per_fact: dict[str, tuple[int, ...]] = {}
    per_entity: dict[str, list[float]] = {}
    for condition in spec.conditions:
        # Factorial cells keep their raw output; the guard decision is
        # recorded in provenance rather than rewriting the cell.
        config = PipelineConfig(
            condition=condition,
            budget=params.budget,
            theta=params.theta,
            dialect=params.dialect,
            apply_fallback=False,
        )
        result = run_pipeline(table, topology, schema, config)
        report = evaluate(result.graph, gold, opts)
        records.append(
            RunRecord(
                dataset_id=spec.dataset_id,
                condition=condition,
                fidelity=report,
                structural=result.metrics.as_dict(),
                guard=result.guard.as_dict(),
                provenance=result.provenance,
                config_hash=digest,
                timestamp=time.time(),
            )
        )
        per_fact[condition] = tuple(int(o.covered) for o in report.outcomes)
        by_subject: dict[str, list[int]] = {}
        for o in report.outcomes:
            by_subject.setdefault(o.fact.subject, []).append(int(o.covered))
        per_entity[condition] = [sum(v) / len(v) for v in by_subject.values()]

    interaction = None
    permutation = None
    if set(CONDITIONS) <= set(spec.conditions):
        interaction = stats.bootstrap_ci(
            per_fact, n_resamples=params.n_boot, seed=params.bootstrap_seed
        )
        diffs = [
            full - base
            for full, base in zip(per_entity["full"], per_entity["baseline"])
        ]
        permutation = stats.permutation_test(
            diffs, n_perm=params.n_perm, seed=params.permutation_seed
        )
    return DatasetResult(spec.dataset_id, records, interaction, permutation)


def run_factorial(manifest: Manifest, jobs: int = 1) -> FactorialOutcome:
    """Run every dataset's factorial; dataset failures are isolated."""
    results: dict[str, DatasetResult] = {}
    errors: dict[str, str] = {}

    def worker(spec: DatasetSpec):
        return spec.dataset_id, run_dataset(spec, manifest.params)

    if jobs <= 1:
        outcomes = []
        for spec in manifest.datasets:
            try:
                outcomes.append(worker(spec))
            except Exception as exc:  # isolate the failing dataset
                errors[spec.dataset_id] = str(exc)
    else:
        outcomes = []
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(worker, spec): spec for spec in manifest.datasets}
            for future, spec in futures.items():
                try:
                    outcomes.append(future.result())
                except Exception as exc:  # isolate the failing dataset
                    errors[spec.dataset_id] = str(exc)
    for dataset_id, result in outcomes:
        results[dataset_id] = result

    ordered = [results[ds.dataset_id] for ds in manifest.datasets if ds.dataset_id in results]
    records = [rec for res in ordered for rec in res.records]
    interactions = {
        res.dataset_id: res.interaction for res in ordered if res.interaction is not None
    }
    fisher = None
    with_p = [res for res in ordered if res.permutation is not None]
    if with_p:
        fisher = stats.fisher_combined([res.permutation.p for res in with_p])
        fisher["n_datasets"] = len(with_p)
        fisher["permutation_p"] = {res.dataset_id: res.permutation.p for res in with_p}
    return FactorialOutcome(records=records, interactions=interactions,
                            fisher=fisher, errors=errors)


# ---------------------------------------------------------------------------
# Reports


def render_report(outcome: FactorialOutcome) -> tuple[str, dict]:
    """Markdown plus machine-readable summary; timestamps excluded so that
    re-runs are byte-identical."""
    if not outcome.records:
        raise ManifestError("no records to report")
    by_dataset: dict[str, dict[str, RunRecord]] = {}
    for rec in outcome.records:
        by_dataset.setdefault(rec.dataset_id, {})[rec.condition] = rec

    lines = ["# Fidelity report", "", "## Fact coverage", ""]
    lines.append("| Dataset | Condition | EC | FC | Ratio |")
    lines.append("| --- | --- | --- | --- | --- |")
    summary: dict = {"datasets": {}, "fisher": outcome.fisher, "errors": outcome.errors}
    for dataset_id, conditions in by_dataset.items():
        base_fc = conditions.get("baseline").fidelity.fc if "baseline" in conditions else None
        for condition, rec in conditions.items():
            ratio = ""
            if condition == "full":
                degraded = (
                    rec.provenance.get("fallback_applied")
                    or rec.guard.get("decision") == "fallback"
                )
                if degraded:
                    ratio = "degraded"
                elif base_fc is None or base_fc == 0:
                    ratio = "N/A"
                else:
                    ratio = f"{rec.fidelity.fc / base_fc:.2f}x"
            lines.append(
                f"| {dataset_id} | {condition} | {rec.fidelity.ec:.3f} "
                f"| {rec.fidelity.fc:.3f} | {ratio} |"
            )
        summary["datasets"][dataset_id] = {
            cond: rec.as_dict() for cond, rec in conditions.items()
        }

    lines += ["", "## Factorial interaction", ""]
    lines.append("| Dataset | Base | Serial | Schema | Full | Delta_int | 95% CI |")
    lines.append("| --- | --- | --- | --- | --- | --- | --- |")
    for dataset_id, inter in outcome.interactions.items():
        conditions = by_dataset[dataset_id]
        cells = {c: conditions[c].fidelity.fc if c in conditions else float("nan")
                 for c in CONDITIONS}
        ci = (
            f"[{inter.ci_low:+.3f}, {inter.ci_high:+.3f}]"
            if inter.ci_low is not None
            else "n/a"
        )
        lines.append(
            f"| {dataset_id} | {cells['baseline']:.3f} | {cells['serial_only']:.3f} "
            f"| {cells['schema_only']:.3f} | {cells['full']:.3f} "
            f"| {inter.delta_int:+.3f} | {ci} |"
        )
        summary["datasets"][dataset_id]["interaction"] = inter.as_dict()

    lines += ["", "## Error taxonomy", ""]
    lines.append(
        "| Dataset | Condition | entity_missing | entity_isolated | value_missing "
        "| year_missing | value_wrong_binding |"
    )
    lines.append("| --- | --- | --- | --- | --- | --- | --- |")
    for dataset_id, conditions in by_dataset.items():
        for condition, rec in conditions.items():
            t = rec.fidelity.taxonomy_counts
            lines.append(
                f"| {dataset_id} | {condition} | {t['entity_missing']} "
                f"| {t['entity_isolated']} | {t['value_missing']} | {t['year_missing']} "
                f"| {t['value_wrong_binding']} |"
            )

    if outcome.fisher:
        lines += [
            "",
            f"Fisher combined over {outcome.fisher['n_datasets']} datasets: "
            f"chi^2 = {outcome.fisher['chi_square']:.2f}, df = {outcome.fisher['df']}, "
            f"p = {outcome.fisher['p']:.3g}",
        ]
    if outcome.errors:
        lines += ["", "## Failed datasets", ""]
        for dataset_id, message in outcome.errors.items():
            lines.append(f"- {dataset_id}: {message}")
    return "\n".join(lines) + "\n", summary
