import json
import re
from pathlib import Path

import pytest
import yaml
from click.testing import CliRunner

from cvadjudicator.cli import main
from cvadjudicator.config import RunConfig, resolve_config
from cvadjudicator.gateway import BackendDescriptor

from .conftest import synthetic_overrides

# (file layer value, flag layer value) per config field; backends get dicts
_LAYER_VALUES = {
    "corpus_path": ("file/corpus.jsonl", "flag/corpus.jsonl"),
    "gold_events_path": ("file/ge.jsonl", "flag/ge.jsonl"),
    "gold_adjudication_path": ("file/ga.jsonl", "flag/ga.jsonl"),
    "verbalizer_path": ("file/v.yaml", "flag/v.yaml"),
    "extraction_template_path": ("file/e.txt", "flag/e.txt"),
    "tree_path": ("file/t.yaml", "flag/t.yaml"),
    "guideline_path": ("file/g.txt", "flag/g.txt"),
    "rubric_path": ("file/r.yaml", "flag/r.yaml"),
    "abbreviations_path": ("file/a.txt", "flag/a.txt"),
    "summarize_template_path": ("file/s.txt", "flag/s.txt"),
    "baseline_template_path": ("file/b.txt", "flag/b.txt"),
    "cleart_template_path": ("file/c.txt", "flag/c.txt"),
    "adjudication_backend": (
        {"kind": "scripted", "script_path": "file/adj.jsonl"},
        {"kind": "scripted", "script_path": "flag/adj.jsonl"},
    ),
    "evaluator_backend": (
        {"kind": "scripted", "script_path": "file/eval.jsonl"},
        {"kind": "scripted", "script_path": "flag/eval.jsonl"},
    ),
    "method": ("summarizer_adjudicator", "both"),
    "out_dir": ("file/out", "flag/out"),
    "max_in_flight": (7, 9),
    "truncation_events": (12, 34),
    "retry_count": (1, 2),
    "record_fixtures_path": ("file/rec.jsonl", "flag/rec.jsonl"),
}


def _observed(cfg, field):
    value = getattr(cfg, field)
    if isinstance(value, BackendDescriptor):
        return {"kind": value.kind.value, "script_path": value.script_path}
    return value


@pytest.mark.parametrize("field", sorted(_LAYER_VALUES))
def test_flag_beats_file_beats_default_for_every_field(field):
    file_value, flag_value = _LAYER_VALUES[field]

    defaults = resolve_config({}, {})
    assert getattr(defaults, field) == RunConfig.__dataclass_fields__[field].default

    from_file = resolve_config({field: file_value}, {})
    assert _observed(from_file, field) == file_value

    from_flag = resolve_config({field: file_value}, {field: flag_value})
    assert _observed(from_flag, field) == flag_value


def test_backend_layers_merge_key_by_key():
    cfg = resolve_config(
        {"adjudication_backend": {"kind": "scripted", "script_path": "file/adj.jsonl",
                                  "context_window_tokens": 4000}},
        {"adjudication_backend": {"kind": "scripted"}},
    )
    assert cfg.adjudication_backend.script_path == "file/adj.jsonl"
    assert cfg.adjudication_backend.context_window_tokens == 4000


def test_run_level_retry_count_flows_into_backends():
    cfg = resolve_config(
        {"retry_count": 7, "adjudication_backend": {"kind": "scripted", "script_path": "x.jsonl"}},
        {},
    )
    assert cfg.adjudication_backend.max_retries == 7
    explicit = resolve_config(
        {"retry_count": 7,
         "adjudication_backend": {"kind": "scripted", "script_path": "x.jsonl", "max_retries": 1}},
        {},
    )
    assert explicit.adjudication_backend.max_retries == 1


def test_unknown_config_field_rejected():
    from cvadjudicator.config import ConfigError

    with pytest.raises(ConfigError):
        resolve_config({"warp_speed": True}, {})


def _run(args):
    return CliRunner().invoke(main, args)


def _pipeline_artifacts(out_dir: Path) -> dict[str, bytes]:
    """Deterministic artifact set: everything except manifest and audit log."""
    artifacts = {}
    for path in sorted(out_dir.rglob("*")):
        if path.is_dir() or path.name in ("manifest.json", "audit.jsonl"):
            continue
        content = path.read_bytes()
        if path.name in ("report.json", "report.txt"):
            content = re.sub(rb'generated[_ ]at[^\n,]*[,\n]', b"", content)
        artifacts[str(path.relative_to(out_dir))] = content
    return artifacts


def test_pipeline_produces_all_artifacts(tmp_path, synthetic_dir):
    out = tmp_path / "run"
    result = _run(["pipeline", *synthetic_overrides(synthetic_dir, out)])
    assert result.exit_code == 0, result.output
    names = {p.name for p in out.iterdir()}
    assert {
        "events.jsonl",
        "results_tree_of_thoughts.jsonl",
        "results_summarizer_adjudicator.jsonl",
        "cleart_scores_tree_of_thoughts.jsonl",
        "cleart_scores_summarizer_adjudicator.jsonl",
        "report.json",
        "report.txt",
        "manifest.json",
        "audit.jsonl",
        "traces",
    } <= names
    assert len(list((out / "traces").glob("*.json"))) == 24  # 12 patients x 2 methods


def test_pipeline_is_byte_deterministic(tmp_path, synthetic_dir):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert _run(["pipeline", *synthetic_overrides(synthetic_dir, out_a)]).exit_code == 0
    assert _run(["pipeline", *synthetic_overrides(synthetic_dir, out_b)]).exit_code == 0
    assert _pipeline_artifacts(out_a) == _pipeline_artifacts(out_b)


def test_pipeline_matches_manual_stage_sequence(tmp_path, synthetic_dir):
    out_a, out_b = tmp_path / "pipe", tmp_path / "manual"
    assert _run(["pipeline", *synthetic_overrides(synthetic_dir, out_a)]).exit_code == 0
    for stage in ("extract", "adjudicate", "score-cleart", "evaluate"):
        result = _run([stage, *synthetic_overrides(synthetic_dir, out_b)])
        assert result.exit_code == 0, (stage, result.output)
    assert _pipeline_artifacts(out_a) == _pipeline_artifacts(out_b)


def test_method_both_writes_one_file_per_method_with_same_patients(tmp_path, synthetic_dir):
    out = tmp_path / "run"
    assert _run(["pipeline", *synthetic_overrides(synthetic_dir, out)]).exit_code == 0

    def patients(path):
        return {json.loads(line)["patient_id"] for line in path.read_text().splitlines()}

    tot = patients(out / "results_tree_of_thoughts.jsonl")
    base = patients(out / "results_summarizer_adjudicator.jsonl")
    assert tot == base and len(tot) == 12


def test_method_flag_overrides_config_file(tmp_path, synthetic_dir):
    out = tmp_path / "run"
    config_path = tmp_path / "config.yaml"
    config_path.write_text(
        yaml.safe_dump(
            {
                "corpus_path": str(synthetic_dir / "corpus.jsonl"),
                "method": "both",
                "adjudication_backend": {
                    "kind": "scripted",
                    "script_path": str(synthetic_dir / "fixtures_adjudication.jsonl"),
                },
            }
        )
    )
    result = _run(["adjudicate", "--config", str(config_path), "--method", "tree_of_thoughts",
                   "--out-dir", str(out)])
    # adjudicate needs events first; run extract, then adjudicate
    assert result.exit_code == 1 and "events" in result.output
    assert _run(["extract", "--config", str(config_path), "--out-dir", str(out)]).exit_code == 0
    result = _run(["adjudicate", "--config", str(config_path), "--method", "tree_of_thoughts",
                   "--out-dir", str(out)])
    assert result.exit_code == 0, result.output
    assert (out / "results_tree_of_thoughts.jsonl").exists()
    assert not (out / "results_summarizer_adjudicator.jsonl").exists()


def test_evaluate_without_gold_names_the_missing_field(tmp_path, synthetic_dir):
    out = tmp_path / "run"
    overrides = [
        "--set", f"corpus_path={synthetic_dir / 'corpus.jsonl'}",
        "--set", f"gold_events_path={synthetic_dir / 'gold_events.jsonl'}",
        "--out-dir", str(out),
    ]
    result = _run(["evaluate", *overrides])
    assert result.exit_code == 1
    assert "gold_adjudication_path" in result.output
    assert "--set gold_adjudication_path" in result.output


def test_missing_corpus_is_a_validation_error(tmp_path):
    result = _run(["extract", "--out-dir", str(tmp_path / "run")])
    assert result.exit_code == 1
    assert "corpus_path" in result.output


def test_fixture_gap_is_a_runtime_failure(tmp_path, synthetic_dir):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    out = tmp_path / "run"
    result = _run([
        "extract",
        "--set", f"corpus_path={synthetic_dir / 'corpus.jsonl'}",
        "--set", "adjudication_backend.kind=scripted",
        "--set", f"adjudication_backend.script_path={empty}",
        "--out-dir", str(out),
    ])
    assert result.exit_code == 2
    assert "no scripted response" in result.output


def test_corpus_problems_reported_with_exit_one(tmp_path):
    bad = tmp_path / "corpus.jsonl"
    bad.write_text('{"doc_id": "d1", "patient_id": "p1"}\n')
    result = _run([
        "extract",
        "--set", f"corpus_path={bad}",
        "--set", "adjudication_backend.kind=scripted",
        "--set", f"adjudication_backend.script_path={bad}",
        "--out-dir", str(tmp_path / "run"),
    ])
    assert result.exit_code == 1
    assert "line 1" in result.output and "text" in result.output


def test_record_fixtures_roundtrip(tmp_path, synthetic_dir):
    recorded = tmp_path / "recorded.jsonl"
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    result = _run([
        "extract",
        *synthetic_overrides(synthetic_dir, out_a),
        "--record-fixtures", str(recorded),
    ])
    assert result.exit_code == 0, result.output
    assert recorded.exists() and recorded.stat().st_size > 0
    replay = [
        "extract",
        "--set", f"corpus_path={synthetic_dir / 'corpus.jsonl'}",
        "--set", "adjudication_backend.kind=scripted",
        "--set", f"adjudication_backend.script_path={recorded}",
        "--out-dir", str(out_b),
    ]
    assert _run(replay).exit_code == 0
    assert (out_a / "events.jsonl").read_bytes() == (out_b / "events.jsonl").read_bytes()


def test_no_credential_value_in_any_artifact(tmp_path, synthetic_dir, monkeypatch):
    secret = "super-secret-value-xyz-0192"
    monkeypatch.setenv("CVADJ_TEST_CREDENTIAL", secret)
    out = tmp_path / "run"
    result = _run([
        "pipeline",
        *synthetic_overrides(synthetic_dir, out),
        "--set", "adjudication_backend.credential_env_var=CVADJ_TEST_CREDENTIAL",
    ])
    assert result.exit_code == 0, result.output
    for path in out.rglob("*"):
        if path.is_file():
            assert secret.encode() not in path.read_bytes(), path
    manifest = json.loads((out / "manifest.json").read_text())
    backend_cfg = manifest["config"]["adjudication_backend"]
    assert backend_cfg["credential_env_var"] == "CVADJ_TEST_CREDENTIAL"


def test_manifest_records_run_facts(tmp_path, synthetic_dir):
    out = tmp_path / "run"
    assert _run(["pipeline", *synthetic_overrides(synthetic_dir, out)]).exit_code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == "pipeline"
    assert re.fullmatch(r"[0-9a-f]{16}", manifest["config_hash"])
    assert manifest["backends"] == {
        "adjudication": "scripted:fixtures_adjudication.jsonl",
        "evaluator": "scripted:fixtures_evaluator.jsonl",
    }
    assert manifest["counts"]["extract"]["documents"] == 27
    assert manifest["counts"]["extract"]["patients"] == 12


def test_bad_set_syntax_is_a_usage_error(tmp_path):
    result = _run(["extract", "--set", "not-a-pair", "--out-dir", str(tmp_path)])
    assert result.exit_code == 1
    assert "KEY=VALUE" in result.output


def test_backend_kind_flag_overrides_both_backends(tmp_path, synthetic_dir):
    out = tmp_path / "run"
    config_path = tmp_path / "config.yaml"
    config_path.write_text(
        yaml.safe_dump(
            {
                "corpus_path": str(synthetic_dir / "corpus.jsonl"),
                "adjudication_backend": {
                    "kind": "http_endpoint",
                    "endpoint_url": "https://example.invalid/v1",
                    "model_name": "m",
                    "credential_env_var": "NOPE",
                    "script_path": str(synthetic_dir / "fixtures_adjudication.jsonl"),
                },
            }
        )
    )
    result = _run(["extract", "--config", str(config_path), "--backend-kind", "scripted",
                   "--out-dir", str(out)])
    assert result.exit_code == 0, result.output
    assert (out / "events.jsonl").exists()


def test_artifacts_identical_across_pool_sizes(tmp_path, synthetic_dir):
    out_serial, out_parallel = tmp_path / "serial", tmp_path / "parallel"
    serial = _run(["pipeline", *synthetic_overrides(synthetic_dir, out_serial),
                   "--max-in-flight", "1"])
    parallel = _run(["pipeline", *synthetic_overrides(synthetic_dir, out_parallel),
                     "--max-in-flight", "8"])
    assert serial.exit_code == 0 and parallel.exit_code == 0
    a, b = _pipeline_artifacts(out_serial), _pipeline_artifacts(out_parallel)
    # reports embed max_in_flight via the config hash; data artifacts must match
    for name in a:
        if not name.startswith("report."):
            assert a[name] == b[name], name
