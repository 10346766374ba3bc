"""Evaluation arithmetic and report emission.

Predicted events match gold events greedily, one-to-one, within the same
document and on equal canonical names only; negation and date are scored as
attributes over the matched pairs so attribute errors never double-count as
extraction errors. Undefined ratios stay absent (never zero), and rounding
happens only at render time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .adjudication import AdjudicationResult, Method
from .cleart import CRITERION_KEYS, CleartAggregate
from .corpus import Decision, GoldAdjudication, GoldEvent, Negation, PatientRecord
from .extraction import ClinicalEvent

_UNDATED = 10**9  # date-distance sentinel: undated golds match after dated ones


@dataclass
class EventMatching:
    pairs: list[tuple[ClinicalEvent, GoldEvent]]
    unmatched_predicted: list[ClinicalEvent]
    unmatched_gold: list[GoldEvent]


def event_doc_id(event: ClinicalEvent) -> str:
    return event.evidence[0].doc_id


def match_events(predicted: list[ClinicalEvent], gold: list[GoldEvent]) -> EventMatching:
    """Greedy one-to-one matching on (doc_id, canonical name).

    Predictions are visited in (evidence position, name, date) order; each
    takes the unmatched gold with the nearest event date (undated golds last,
    ties by gold input order).
    """
    gold_open: dict[tuple[str, str], list[tuple[int, GoldEvent]]] = {}
    for position, gold_event in enumerate(gold):
        gold_open.setdefault((gold_event.doc_id, gold_event.event_name), []).append(
            (position, gold_event)
        )

    def pred_order(event: ClinicalEvent) -> tuple:
        return (
            event_doc_id(event),
            event.evidence[0].sent_index,
            event.event_name,
            event.event_date.isoformat() if event.event_date else "9999-99-99",
        )

    def distance(event: ClinicalEvent, gold_event: GoldEvent) -> int:
        if event.event_date is None or gold_event.event_date is None:
            return _UNDATED
        return abs((event.event_date - gold_event.event_date).days)

    pairs: list[tuple[ClinicalEvent, GoldEvent]] = []
    unmatched_predicted: list[ClinicalEvent] = []
    for event in sorted(predicted, key=pred_order):
        candidates = gold_open.get((event_doc_id(event), event.event_name), [])
        if not candidates:
            unmatched_predicted.append(event)
            continue
        best = min(candidates, key=lambda item: (distance(event, item[1]), item[0]))
        candidates.remove(best)
        pairs.append((event, best[1]))
    unmatched_gold = [g for bucket in gold_open.values() for _, g in bucket]
    unmatched_gold.sort(key=lambda g: (g.doc_id, g.event_name, str(g.event_date or "")))
    return EventMatching(pairs, unmatched_predicted, unmatched_gold)


@dataclass
class ExtractionMetrics:
    tp: int
    fp: int
    fn: int
    precision: float | None
    recall: float | None
    f1: float | None
    negation_accuracy: float | None
    date_accuracy: float | None
    events_per_patient: float | None

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "negation_accuracy": self.negation_accuracy,
            "date_accuracy": self.date_accuracy,
            "events_per_patient": self.events_per_patient,
        }


def f1_from_precision_recall(precision: float | None, recall: float | None) -> float | None:
    if precision is None or recall is None or precision + recall == 0:
        return None
    return 2 * precision * recall / (precision + recall)


def extraction_metrics(matching: EventMatching, records: list[PatientRecord]) -> ExtractionMetrics:
    tp = len(matching.pairs)
    fp = len(matching.unmatched_predicted)
    fn = len(matching.unmatched_gold)
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    negation_hits = sum(
        1
        for event, gold_event in matching.pairs
        if event.negation is not Negation.UNKNOWN and event.negation is gold_event.negation
    )
    date_hits = sum(
        1 for event, gold_event in matching.pairs if event.event_date == gold_event.event_date
    )
    n_predicted = tp + fp
    return ExtractionMetrics(
        tp=tp,
        fp=fp,
        fn=fn,
        precision=precision,
        recall=recall,
        f1=f1_from_precision_recall(precision, recall),
        negation_accuracy=negation_hits / tp if tp else None,
        date_accuracy=date_hits / tp if tp else None,
        events_per_patient=n_predicted / len(records) if records else None,
    )


_DECISIONS = tuple(d.value for d in Decision)


@dataclass
class AdjudicationMetrics:
    method: Method
    n_total: int
    n_correct: int
    accuracy: float | None
    confusion: dict[str, dict[str, int]]  # confusion[predicted][gold] = count
    excluded: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "n_total": self.n_total,
            "n_correct": self.n_correct,
            "accuracy": self.accuracy,
            "confusion": self.confusion,
            "excluded": list(self.excluded),
        }


def _empty_confusion() -> dict[str, dict[str, int]]:
    return {p: {g: 0 for g in _DECISIONS} for p in _DECISIONS}


def adjudication_accuracy(
    results: list[AdjudicationResult], gold: dict[str, GoldAdjudication]
) -> list[AdjudicationMetrics]:
    """Exact four-way decision accuracy, one metrics block per method present."""
    by_method: dict[Method, list[AdjudicationResult]] = {}
    for result in results:
        by_method.setdefault(result.method, []).append(result)
    metrics = []
    for method in sorted(by_method, key=lambda m: m.value):
        confusion = _empty_confusion()
        n_total = n_correct = 0
        excluded = []
        for result in by_method[method]:
            gold_label = gold.get(result.patient_id)
            if gold_label is None:
                excluded.append(result.patient_id)
                continue
            n_total += 1
            confusion[result.decision.value][gold_label.decision.value] += 1
            if result.decision is gold_label.decision:
                n_correct += 1
        metrics.append(
            AdjudicationMetrics(
                method=method,
                n_total=n_total,
                n_correct=n_correct,
                accuracy=n_correct / n_total if n_total else None,
                confusion=confusion,
                excluded=sorted(excluded),
            )
        )
    return metrics


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.2f}"


def render_human_report(
    extraction: ExtractionMetrics | None,
    adjudication: list[AdjudicationMetrics],
    cleart_by_method: dict[str, CleartAggregate],
    manifest: dict | None = None,
) -> str:
    lines: list[str] = []
    lines.append("=" * 58)
    lines.append("EVALUATION REPORT")
    lines.append("=" * 58)
    if manifest:
        lines.append(f"config hash : {manifest.get('config_hash', 'n/a')}")
        for role, backend_id in sorted(manifest.get("backends", {}).items()):
            lines.append(f"{role:<12}: {backend_id}")
        lines.append(f"generated at: {manifest.get('generated_at', 'n/a')}")
    lines.append("")
    if extraction is not None:
        lines.append("EVENT EXTRACTION")
        lines.append(f"  {'true positives':<24}{extraction.tp}")
        lines.append(f"  {'false positives':<24}{extraction.fp}")
        lines.append(f"  {'false negatives':<24}{extraction.fn}")
        lines.append(f"  {'precision':<24}{_fmt(extraction.precision)}")
        lines.append(f"  {'recall':<24}{_fmt(extraction.recall)}")
        lines.append(f"  {'f1':<24}{_fmt(extraction.f1)}")
        lines.append(f"  {'negation accuracy':<24}{_fmt(extraction.negation_accuracy)}")
        lines.append(f"  {'date accuracy':<24}{_fmt(extraction.date_accuracy)}")
        lines.append(f"  {'events per patient':<24}{_fmt(extraction.events_per_patient)}")
        lines.append("")
    if adjudication:
        lines.append("ADJUDICATION ACCURACY BY METHOD")
        lines.append(f"  {'method':<28}{'accuracy':<12}{'n'}")
        for block in adjudication:
            lines.append(
                f"  {block.method.value:<28}{_fmt(block.accuracy):<12}{block.n_total}"
            )
            if block.excluded:
                lines.append(f"    excluded (no gold label): {', '.join(block.excluded)}")
        lines.append("")
    for method, aggregate in sorted(cleart_by_method.items()):
        lines.append(f"REASONING QUALITY ({method}, n={aggregate.count})")
        for key in CRITERION_KEYS:
            mean = aggregate.per_criterion_mean.get(key)
            lines.append(f"  {key:<24}{_fmt(float(mean) if mean is not None else None)}")
        overall = aggregate.overall_mean
        lines.append(f"  {'overall':<24}{_fmt(float(overall) if overall is not None else None)}")
        if aggregate.skipped:
            lines.append(f"  skipped patients: {', '.join(aggregate.skipped)}")
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def emit_report(
    extraction: ExtractionMetrics | None,
    adjudication: list[AdjudicationMetrics],
    cleart_by_method: dict[str, CleartAggregate],
    out_path: str | Path,
    fmt: str = "structured",
    manifest: dict | None = None,
) -> Path:
    """Write the metrics report; structured keeps full precision, human rounds to 2dp."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "structured":
        payload = {
            "manifest": manifest or {},
            "extraction": extraction.to_dict() if extraction else None,
            "adjudication": [block.to_dict() for block in adjudication],
            "cleart": {method: agg.to_dict() for method, agg in sorted(cleart_by_method.items())},
        }
        text = json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n"
    elif fmt == "human_readable":
        text = render_human_report(extraction, adjudication, cleart_by_method, manifest)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    with open(out_path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(text)
    return out_path
