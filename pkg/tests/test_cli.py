from __future__ import annotations

import json

import pytest

from cellfact.cli import main
from cellfact.table import to_csv_text


def run_cli(capsys, *argv) -> tuple[int, str, str]:
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def who_csv(tmp_path, who_table):
    path = tmp_path / "who.csv"
    path.write_text(to_csv_text(who_table), encoding="utf-8")
    return str(path)


def test_classify_emits_tag(capsys, who_csv):
    code, out, err = run_cli(capsys, "classify", who_csv)
    assert code == 0
    payload = json.loads(out)
    assert payload["tag"] == "TypeII"
    assert "guard_trace" in payload and "features" in payload
    assert "TypeII" in err


def test_classify_with_override(capsys, who_csv):
    code, out, _ = run_cli(
        capsys, "classify", who_csv, "--override", "TypeIII", "--reason", "testing"
    )
    payload = json.loads(out)
    assert payload["tag"] == "TypeIII"
    assert payload["override"]["original"] == "TypeII"


def test_induce_and_perturb(capsys, tmp_path, who_csv):
    schema_path = tmp_path / "schema.json"
    code, out, _ = run_cli(capsys, "induce", who_csv, "--out", str(schema_path))
    assert code == 0
    schema = json.loads(schema_path.read_text())
    assert schema["scs"] == 1.0
    # the scs/prompt extras are CLI decoration; strip before round-tripping
    schema.pop("scs")
    schema_path.write_text(json.dumps(schema))
    code, out, _ = run_cli(
        capsys, "perturb-schema", str(schema_path), "--condition", "AY-3",
        "--column", "2000",
    )
    assert code == 0
    perturbed = json.loads(out)
    assert perturbed["entity_types"][0]["column_ref"] == "2000"


def test_serialize_ablate_roundtrip(capsys, tmp_path, who_csv):
    chunks_path = tmp_path / "chunks.jsonl"
    code, out, _ = run_cli(
        capsys, "serialize", who_csv, "--format", "sge", "--out", str(chunks_path)
    )
    assert code == 0
    code, out, _ = run_cli(
        capsys, "ablate", str(chunks_path), "--condition", "M3",
        "--entities", "CHN", "--seed", "0",
    )
    assert code == 0
    assert "XXX" in out and "CHN" not in out


def test_ablate_m5_requires_seed(capsys, tmp_path, who_csv):
    chunks_path = tmp_path / "chunks.jsonl"
    run_cli(capsys, "serialize", who_csv, "--out", str(chunks_path))
    code, out, err = run_cli(capsys, "ablate", str(chunks_path), "--condition", "M5")
    assert code == 1
    assert "seed" in err


def test_gold_gen_detparse_eval_pipeline(capsys, tmp_path, who_csv):
    gold_path = tmp_path / "gold.jsonl"
    code, _, _ = run_cli(
        capsys, "gold", "gen", who_csv, "--subject-col", "Country Code",
        "--n-entities", "50", "--years", "2000,2005,2010,2015,2019,2021",
        "--seed", "42", "--out", str(gold_path),
    )
    assert code == 0
    assert gold_path.read_text().count("\n") == 300

    graph_path = tmp_path / "graph.jsonl"
    code, _, _ = run_cli(
        capsys, "detparse", who_csv, "--subject-col", "Country Code",
        "--out", str(graph_path),
    )
    assert code == 0

    code, out, err = run_cli(
        capsys, "eval", str(graph_path), str(gold_path), "--no-outcomes"
    )
    assert code == 0
    report = json.loads(out)
    assert report["fc"] == 1.0 and report["ec"] == 1.0
    assert "FC=1.000" in err


def test_stats_mcnemar_cli(capsys):
    code, out, err = run_cli(capsys, "stats", "mcnemar", "--b", "35", "--c", "1")
    assert code == 0
    payload = json.loads(out)
    assert payload["chi_square"] == pytest.approx(32.11, abs=0.01)
    assert "32.11" in err


def test_stats_interaction_cli(capsys):
    code, out, _ = run_cli(
        capsys, "stats", "interaction", "--base", "0.187", "--serial", "0.000",
        "--schema", "0.007", "--full", "1.000",
    )
    payload = json.loads(out)
    assert payload["delta_int"] == pytest.approx(1.180, abs=1e-9)


def test_stats_fisher_cli(capsys):
    code, out, _ = run_cli(capsys, "stats", "fisher", "--p", "0.01,0.01,0.01,0.01")
    payload = json.loads(out)
    assert payload["df"] == 8
    assert payload["chi_square"] == pytest.approx(36.84, abs=0.01)


def test_guard_cli(capsys):
    code, out, _ = run_cli(capsys, "guard", "--edge-node-ratio", "0.793")
    assert json.loads(out)["decision"] == "fallback"
    code, out, _ = run_cli(capsys, "guard", "--edge-node-ratio", "0.943")
    assert json.loads(out)["decision"] == "proceed"
    code, out, _ = run_cli(
        capsys, "guard", "--edge-node-ratio", "1.2", "--type3", "--n-rows", "19"
    )
    assert json.loads(out)["decision"] == "skip_schema"


def test_extract_surrogate_cli(capsys, tmp_path, who_csv):
    chunks_path = tmp_path / "chunks.jsonl"
    schema_path = tmp_path / "schema.json"
    run_cli(capsys, "serialize", who_csv, "--out", str(chunks_path))
    run_cli(capsys, "induce", who_csv, "--out", str(schema_path))
    schema = json.loads(schema_path.read_text())
    schema.pop("scs")
    schema_path.write_text(json.dumps(schema))
    graph_path = tmp_path / "graph.jsonl"
    code, _, err = run_cli(
        capsys, "extract", "--chunks", str(chunks_path), "--schema", str(schema_path),
        "--out", str(graph_path),
    )
    assert code == 0
    assert "nodes" in err
    assert graph_path.read_text().count('"node"') > 0


def test_ingest_graph_cli(capsys, tmp_path):
    data = {
        "entities": [{"entity_name": "CHN", "entity_type": "Country", "description": ""}],
        "relationships": [],
    }
    path = tmp_path / "export.json"
    path.write_text(json.dumps(data))
    code, out, _ = run_cli(capsys, "ingest-graph", str(path), "--dialect", "lightrag-export")
    assert code == 0
    assert '"name": "CHN"' in out


def test_metrics_cds_cli(capsys, who_csv):
    code, out, _ = run_cli(
        capsys, "metrics", "cds", who_csv, "--subject-cols", "Country Code"
    )
    payload = json.loads(out)
    assert 0 <= payload["cds"] <= 1


def test_metrics_ttf_cli(capsys, tmp_path, who_csv):
    chunks_path = tmp_path / "chunks.jsonl"
    run_cli(capsys, "serialize", who_csv, "--out", str(chunks_path))
    code, out, _ = run_cli(capsys, "metrics", "ttf", str(chunks_path))
    payload = json.loads(out)
    assert 0 <= payload["ttf"] <= 1


def test_probe_cli(capsys, tmp_path, who_csv):
    graph_path = tmp_path / "graph.jsonl"
    run_cli(capsys, "detparse", who_csv, "--subject-col", "Country Code",
            "--out", str(graph_path))
    queries = [
        {"kind": "trend",
         "params": {"entity": "CHN", "year_from": "2020", "year_to": "2021"},
         "expected": {"direction": "increase"}},
    ]
    queries_path = tmp_path / "queries.jsonl"
    queries_path.write_text("\n".join(json.dumps(q) for q in queries))
    code, out, err = run_cli(capsys, "probe", str(graph_path), str(queries_path))
    assert code == 0
    assert json.loads(out)[0]["correct"] is True
    assert "1/1" in err


def test_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as err:
        main(["no-such-command"])
    assert err.value.code == 2


def test_data_error_exit_1(capsys, tmp_path):
    missing = str(tmp_path / "missing.csv")
    code, out, err = run_cli(capsys, "classify", missing)
    assert code == 1
    payload = json.loads(err.splitlines()[-1])
    assert payload["type"] == "CsvParseError"


def test_factorial_cli_and_report(capsys, tmp_path, wide_matrix_table):
    (tmp_path / "wide.csv").write_text(to_csv_text(wide_matrix_table), encoding="utf-8")
    manifest = {
        "datasets": [
            {"dataset_id": "wide", "csv_path": "wide.csv", "subject_col": "Region Code",
             "gold": {"n_entities": 8, "years": ["2000", "2003", "2007", "2011"],
                      "seed": 42}},
        ],
        "params": {"n_boot": 100, "n_perm": 200},
    }
    manifest_path = tmp_path / "manifest.json"
    manifest_path.write_text(json.dumps(manifest))
    out_path = tmp_path / "outcome.json"
    report_path = tmp_path / "report.md"
    code, _, _ = run_cli(
        capsys, "factorial", str(manifest_path), "--out", str(out_path),
        "--report-out", str(report_path),
    )
    assert code == 0
    outcome = json.loads(out_path.read_text())
    assert len(outcome["records"]) == 4
    assert "Delta_int" in report_path.read_text()

    code, out, _ = run_cli(capsys, "report", str(out_path))
    assert code == 0
    assert "| wide | full |" in out


def test_seeded_subcommands_byte_identical(capsys, tmp_path, who_csv):
    args = ["gold", "gen", who_csv, "--subject-col", "Country Code",
            "--n-entities", "10", "--years", "2000,2001", "--seed", "42"]
    _, out1, _ = run_cli(capsys, *args)
    _, out2, _ = run_cli(capsys, *args)
    assert out1 == out2
    _, perm1, _ = run_cli(capsys, "stats", "permutation", "--diffs", "0.1,0.4,-0.2,0.5",
                          "--seed", "42")
    _, perm2, _ = run_cli(capsys, "stats", "permutation", "--diffs", "0.1,0.4,-0.2,0.5",
                          "--seed", "42")
    assert perm1 == perm2
