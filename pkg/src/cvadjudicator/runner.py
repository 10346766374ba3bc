"""Stage orchestration for the command-line pipeline.

Stages communicate through files in the output directory, so each stage can
be re-run and audited independently: extract writes events.jsonl, adjudicate
writes per-method result files plus a trace file per patient, score-cleart
writes per-method score files, and evaluate writes the metrics report. Every
invocation also writes a manifest and the gateway audit log.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import adjudication as adj
from .cleart import CleartCriterion, CleartScore, aggregate_cleart, load_rubric, score_reasoning
from .config import RunConfig
from .corpus import (
    CorpusLoadResult,
    PatientRecord,
    attach_gold_adjudications,
    load_corpus,
    load_gold_annotations,
    validate_corpus,
)
from .extraction import (
    ClinicalEvent,
    PromptTemplate,
    dedupe_events,
    extract_events,
    load_template,
)
from .gateway import GatewayError, RecordingBackend, ScriptedFixtures, build_backend
from .metrics import adjudication_accuracy, emit_report, extraction_metrics, match_events
from .preprocess import load_abbreviations
from .verbalizer import Verbalizer, VerbalizerError, build_verbalizer

logger = logging.getLogger(__name__)

EVENTS_FILE = "events.jsonl"
AUDIT_FILE = "audit.jsonl"
MANIFEST_FILE = "manifest.json"
REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"


class ValidationFailure(Exception):
    """A precondition problem the caller can fix; maps to exit status 1."""


def _require(value: str | None, field_name: str) -> Path:
    if not value:
        raise ValidationFailure(
            f"{field_name} is required; set {field_name} in the config file "
            f"or pass --set {field_name}=PATH"
        )
    path = Path(value)
    if not path.exists():
        raise ValidationFailure(f"{field_name} does not exist: {value}")
    return path


def configured_backends(cfg: RunConfig) -> dict[str, str]:
    ids = {}
    for role in ("adjudication", "evaluator"):
        descriptor = getattr(cfg, f"{role}_backend")
        if descriptor is not None:
            ids[role] = descriptor.backend_id
    return ids


def config_hash(cfg: RunConfig) -> str:
    """Hash of the resolved config, excluding where outputs land."""
    values = {
        k: v for k, v in cfg.to_dict().items() if k not in ("out_dir", "record_fixtures_path")
    }
    canonical = json.dumps(values, ensure_ascii=False, sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass
class RunContext:
    cfg: RunConfig
    out_dir: Path
    verbalizer: Verbalizer
    extraction_template: PromptTemplate
    tree: adj.ThoughtTree
    guidelines: adj.GuidelineSet
    rubric: list[CleartCriterion]
    abbreviations: frozenset[str]
    summarize_template: PromptTemplate
    baseline_template: PromptTemplate
    cleart_template: PromptTemplate
    counts: dict = field(default_factory=dict)
    _backends: dict = field(default_factory=dict)
    _record_sink: ScriptedFixtures | None = None

    def _backend(self, role: str):
        if role not in self._backends:
            descriptor = getattr(self.cfg, f"{role}_backend")
            if descriptor is None:
                raise ValidationFailure(
                    f"{role}_backend is required; set {role}_backend in the config "
                    f"file (or pass --backend-kind / --set {role}_backend.*)"
                )
            try:
                backend = build_backend(descriptor)
            except (GatewayError, OSError, ValueError) as exc:
                raise ValidationFailure(f"cannot build {role}_backend: {exc}") from exc
            if self.cfg.record_fixtures_path:
                if self._record_sink is None:
                    self._record_sink = ScriptedFixtures()
                backend = RecordingBackend(backend, self._record_sink)
            self._backends[role] = backend
        return self._backends[role]

    @property
    def adjudication_backend(self):
        return self._backend("adjudication")

    @property
    def evaluator_backend(self):
        return self._backend("evaluator")

    def methods(self) -> list[adj.Method]:
        if self.cfg.method == "both":
            return [adj.Method.TREE_OF_THOUGHTS, adj.Method.SUMMARIZER_ADJUDICATOR]
        return [adj.Method(self.cfg.method)]

    def finish(self, subcommand: str) -> None:
        """Write manifest, audit log, and any recorded fixtures."""
        manifest = {
            "subcommand": subcommand,
            "generated_at": datetime.now(timezone.utc).isoformat(),
            "config_hash": config_hash(self.cfg),
            "config": self.cfg.to_dict(),
            "backends": configured_backends(self.cfg),
            "counts": self.counts,
        }
        _write_json(self.out_dir / MANIFEST_FILE, manifest)
        entries = []
        for role in sorted(self._backends):
            for entry in self._backends[role].audit.entries():
                entries.append(
                    {
                        "backend": role,
                        "tag": entry.tag,
                        "fingerprint": entry.fingerprint,
                        "input_tokens": entry.input_tokens,
                        "output_tokens": entry.output_tokens,
                        "latency_s": entry.latency_s,
                        "retries": entry.retries,
                        "ok": entry.ok,
                        "error": entry.error,
                    }
                )
        _write_jsonl(self.out_dir / AUDIT_FILE, entries)
        if self.cfg.record_fixtures_path and self._record_sink is not None:
            self._record_sink.save(self.cfg.record_fixtures_path)


def prepare_context(cfg: RunConfig) -> RunContext:
    """Resolve shared inputs and create the output directory."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        verbalizer = build_verbalizer(_require(cfg.verbalizer_path, "verbalizer_path"))
    except VerbalizerError as exc:
        raise ValidationFailure(str(exc)) from exc
    extraction_template = load_template(
        _require(cfg.extraction_template_path, "extraction_template_path"),
        {"document", "labels"},
    )
    tree = adj.load_tree(_require(cfg.tree_path, "tree_path"))
    guidelines = adj.load_guidelines(_require(cfg.guideline_path, "guideline_path"))
    rubric = load_rubric(_require(cfg.rubric_path, "rubric_path"))
    abbreviations = load_abbreviations(_require(cfg.abbreviations_path, "abbreviations_path"))
    summarize_template = load_template(
        _require(cfg.summarize_template_path, "summarize_template_path"), {"document"}
    )
    baseline_template = load_template(
        _require(cfg.baseline_template_path, "baseline_template_path"),
        {"guideline", "summaries"},
    )
    cleart_template = load_template(
        _require(cfg.cleart_template_path, "cleart_template_path"), {"reasoning", "rubric"}
    )
    return RunContext(
        cfg=cfg,
        out_dir=out_dir,
        verbalizer=verbalizer,
        extraction_template=extraction_template,
        tree=tree,
        guidelines=guidelines,
        rubric=rubric,
        abbreviations=abbreviations,
        summarize_template=summarize_template,
        baseline_template=baseline_template,
        cleart_template=cleart_template,
    )


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _load_corpus_checked(ctx: RunContext) -> list[PatientRecord]:
    path = _require(ctx.cfg.corpus_path, "corpus_path")
    result: CorpusLoadResult = load_corpus(path)
    if result.problems:
        details = "; ".join(str(p) for p in result.problems[:20])
        raise ValidationFailure(f"corpus_path has {len(result.problems)} bad line(s): {details}")
    report = validate_corpus(result.records)
    if not report.ok:
        details = "; ".join(v.message for v in report.violations[:20])
        raise ValidationFailure(
            f"corpus_path fails validation with {len(report.violations)} violation(s): {details}"
        )
    return result.records


def run_extract(ctx: RunContext) -> dict:
    """Extract and dedupe events for every patient; write events.jsonl."""
    records = _load_corpus_checked(ctx)
    backend = ctx.adjudication_backend

    def per_patient(record: PatientRecord) -> tuple[str, list[ClinicalEvent]]:
        events: list[ClinicalEvent] = []
        for doc in record.documents:
            events.extend(
                extract_events(
                    doc,
                    ctx.extraction_template,
                    ctx.verbalizer,
                    backend,
                    abbreviations=ctx.abbreviations,
                )
            )
        return record.patient_id, dedupe_events(events)

    with ThreadPoolExecutor(max_workers=ctx.cfg.max_in_flight) as pool:
        per_patient_events = dict(pool.map(per_patient, records))

    rows = []
    for patient_id in sorted(per_patient_events):
        for event in per_patient_events[patient_id]:
            rows.append({"patient_id": patient_id, **event.to_dict()})
    _write_jsonl(ctx.out_dir / EVENTS_FILE, rows)
    counts = {
        "patients": len(records),
        "documents": sum(len(r.documents) for r in records),
        "events": len(rows),
    }
    ctx.counts["extract"] = counts
    return counts


def load_events_file(path: Path) -> dict[str, list[ClinicalEvent]]:
    by_patient: dict[str, list[ClinicalEvent]] = {}
    for row in _read_jsonl(path):
        by_patient.setdefault(row["patient_id"], []).append(ClinicalEvent.from_dict(row))
    return by_patient


def results_file(out_dir: Path, method: adj.Method) -> Path:
    return out_dir / f"results_{method.value}.jsonl"


def scores_file(out_dir: Path, method: adj.Method) -> Path:
    return out_dir / f"cleart_scores_{method.value}.jsonl"


def _trace_payload(result: adj.AdjudicationResult) -> dict:
    trace = result.trace
    return {
        "patient_id": result.patient_id,
        "method": result.method.value,
        "verdicts": [
            {
                "node_id": v.node_id,
                "verdict": v.verdict.value,
                "rationale": v.rationale,
                "raw_response": v.raw_response,
            }
            for v in trace.verdicts
        ],
        "prompts": dict(sorted(trace.prompts.items())),
        "consolidation": (
            {
                "prompt": trace.consolidation.prompt,
                "response_text": trace.consolidation.response_text,
                "fallback": trace.consolidation.fallback,
            }
            if trace.consolidation
            else None
        ),
    }


def run_adjudicate(ctx: RunContext) -> dict:
    """Adjudicate every patient with the configured method(s)."""
    records = _load_corpus_checked(ctx)
    events_path = ctx.out_dir / EVENTS_FILE
    if not events_path.exists():
        raise ValidationFailure(
            f"events file {events_path} not found; run the extract stage first "
            "(or use the pipeline subcommand)"
        )
    events_by_patient = load_events_file(events_path)
    backend = ctx.adjudication_backend
    traces_dir = ctx.out_dir / "traces"
    traces_dir.mkdir(exist_ok=True)
    n_results = 0
    for method in ctx.methods():

        def per_patient(record: PatientRecord) -> adj.AdjudicationResult:
            if method is adj.Method.TREE_OF_THOUGHTS:
                return adj.adjudicate_tot(
                    record,
                    events_by_patient.get(record.patient_id, []),
                    ctx.tree,
                    ctx.guidelines,
                    backend,
                    truncation_limit=ctx.cfg.truncation_events,
                )
            return adj.adjudicate_baseline(
                record,
                ctx.guidelines,
                backend,
                ctx.summarize_template,
                ctx.baseline_template,
                abbreviations=ctx.abbreviations,
            )

        with ThreadPoolExecutor(max_workers=ctx.cfg.max_in_flight) as pool:
            results = sorted(pool.map(per_patient, records), key=lambda r: r.patient_id)
        rows = [
            {
                "patient_id": r.patient_id,
                "decision": r.decision.value,
                "cause_node_id": r.cause_node_id,
                "reasoning": r.reasoning,
                "method": r.method.value,
            }
            for r in results
        ]
        _write_jsonl(results_file(ctx.out_dir, method), rows)
        for result in results:
            _write_json(
                traces_dir / f"{result.patient_id}.{method.value}.json",
                _trace_payload(result),
            )
        n_results += len(results)
    counts = {
        "patients": len(records),
        "methods": [m.value for m in ctx.methods()],
        "results": n_results,
    }
    ctx.counts["adjudicate"] = counts
    return counts


def load_results_file(path: Path) -> list[adj.AdjudicationResult]:
    results = []
    for row in _read_jsonl(path):
        results.append(
            adj.AdjudicationResult(
                patient_id=row["patient_id"],
                decision=adj.Decision(row["decision"]),
                cause_node_id=row.get("cause_node_id"),
                reasoning=row["reasoning"],
                trace=adj.ThoughtTrace(),
                method=adj.Method(row["method"]),
            )
        )
    return results


def run_score_cleart(ctx: RunContext) -> dict:
    """Grade the reasoning of every adjudication result; skip on gateway failure."""
    backend = ctx.evaluator_backend
    scored = skipped = 0
    for method in ctx.methods():
        path = results_file(ctx.out_dir, method)
        if not path.exists():
            raise ValidationFailure(
                f"results file {path} not found; run the adjudicate stage first "
                "(or use the pipeline subcommand)"
            )
        results = load_results_file(path)

        def per_result(result: adj.AdjudicationResult) -> CleartScore | None:
            try:
                return score_reasoning(
                    result.patient_id,
                    result.reasoning,
                    ctx.rubric,
                    backend,
                    ctx.cleart_template,
                )
            except GatewayError as exc:
                logger.warning("scoring skipped for %s: %s", result.patient_id, exc)
                return None

        with ThreadPoolExecutor(max_workers=ctx.cfg.max_in_flight) as pool:
            scores = [s for s in pool.map(per_result, results) if s is not None]
        scores.sort(key=lambda s: s.patient_id)
        _write_jsonl(scores_file(ctx.out_dir, method), [s.to_dict() for s in scores])
        scored += len(scores)
        skipped += len(results) - len(scores)
    counts = {"scored": scored, "skipped": skipped}
    ctx.counts["score_cleart"] = counts
    return counts


def run_evaluate(ctx: RunContext) -> dict:
    """Compute all metrics against the gold files and write both reports."""
    records = _load_corpus_checked(ctx)
    gold_adjudication_path = _require(ctx.cfg.gold_adjudication_path, "gold_adjudication_path")
    gold_events_path = _require(ctx.cfg.gold_events_path, "gold_events_path")
    gold_events, gold_adjudications, problems = load_gold_annotations(
        gold_events_path, gold_adjudication_path, ctx.verbalizer
    )
    if problems:
        details = "; ".join(str(p) for p in problems[:20])
        raise ValidationFailure(f"gold files have {len(problems)} bad line(s): {details}")
    attach_gold_adjudications(records, gold_adjudications)

    events_path = ctx.out_dir / EVENTS_FILE
    if not events_path.exists():
        raise ValidationFailure(
            f"events file {events_path} not found; run the extract stage first "
            "(or use the pipeline subcommand)"
        )
    predicted = [e for events in load_events_file(events_path).values() for e in events]
    gold_flat = [g for doc_events in gold_events.values() for g in doc_events]
    matching = match_events(predicted, gold_flat)
    extraction = extraction_metrics(matching, records)

    all_results: list[adj.AdjudicationResult] = []
    cleart_by_method = {}
    for method in ctx.methods():
        path = results_file(ctx.out_dir, method)
        if not path.exists():
            raise ValidationFailure(
                f"results file {path} not found; run the adjudicate stage first "
                "(or use the pipeline subcommand)"
            )
        results = load_results_file(path)
        all_results.extend(results)
        s_path = scores_file(ctx.out_dir, method)
        if s_path.exists():
            scores = [CleartScore.from_dict(row) for row in _read_jsonl(s_path)]
            scored_ids = {s.patient_id for s in scores}
            missing = sorted(r.patient_id for r in results if r.patient_id not in scored_ids)
            cleart_by_method[method.value] = aggregate_cleart(scores, skipped=missing)
    adjudication_blocks = adjudication_accuracy(all_results, gold_adjudications)

    manifest = {
        "config_hash": config_hash(ctx.cfg),
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "backends": configured_backends(ctx.cfg),
        "counts": {
            "patients": len(records),
            "predicted_events": len(predicted),
            "gold_events": len(gold_flat),
            "results": len(all_results),
        },
        "matching_rule": "greedy one-to-one on (doc_id, canonical name); "
        "ties by nearest event date then evidence order",
    }
    emit_report(
        extraction,
        adjudication_blocks,
        cleart_by_method,
        ctx.out_dir / REPORT_JSON,
        fmt="structured",
        manifest=manifest,
    )
    emit_report(
        extraction,
        adjudication_blocks,
        cleart_by_method,
        ctx.out_dir / REPORT_TEXT,
        fmt="human_readable",
        manifest=manifest,
    )
    counts = {
        "predicted_events": len(predicted),
        "gold_events": len(gold_flat),
        "methods": [m.value for m in ctx.methods()],
    }
    ctx.counts["evaluate"] = counts
    return counts


def run_pipeline(ctx: RunContext) -> dict:
    """Chain extract, adjudicate, score-cleart, and evaluate."""
    run_extract(ctx)
    run_adjudicate(ctx)
    run_score_cleart(ctx)
    run_evaluate(ctx)
    return dict(ctx.counts)
