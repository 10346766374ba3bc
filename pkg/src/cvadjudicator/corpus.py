"""Patient corpus, gold annotations, and validation.

Input is UTF-8 JSON Lines, one clinical document per line with fields doc_id,
patient_id, doc_type, doc_date (ISO YYYY-MM-DD or absent), and text. Loading
is lenient: malformed lines are rejected and reported with their line number
rather than aborting the load, so corpus problems surface in one pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path

from .verbalizer import Verbalizer, canonicalize


class DocType(Enum):
    PHYSICIAN_NOTE = "physician_note"
    DISCHARGE_SUMMARY = "discharge_summary"
    IMAGING_REPORT = "imaging_report"
    LAB_REPORT = "lab_report"
    OTHER = "other"


class Decision(Enum):
    CARDIOVASCULAR_DEATH = "cardiovascular_death"
    NON_CARDIOVASCULAR_DEATH = "non_cardiovascular_death"
    UNDETERMINED_DEATH = "undetermined_death"
    NOT_DECEASED = "not_deceased"


class Negation(Enum):
    AFFIRMED = "affirmed"
    NEGATED = "negated"
    UNKNOWN = "unknown"


@dataclass
class ClinicalDocument:
    doc_id: str
    patient_id: str
    text: str
    doc_type: DocType = DocType.OTHER
    # Kept as the raw ISO string so validation can flag impossible dates;
    # valid ISO strings sort correctly as text.
    doc_date: str | None = None


@dataclass
class PatientRecord:
    patient_id: str
    documents: list[ClinicalDocument]
    gold_adjudication: GoldAdjudication | None = None


@dataclass(frozen=True)
class GoldAdjudication:
    patient_id: str
    decision: Decision


@dataclass(frozen=True)
class GoldEvent:
    doc_id: str
    event_name: str
    negation: Negation
    event_date: date | None = None


@dataclass(frozen=True)
class LineProblem:
    line_no: int
    message: str
    field: str | None = None

    def __str__(self) -> str:
        where = f"line {self.line_no}"
        if self.field:
            where += f", field {self.field!r}"
        return f"{where}: {self.message}"


@dataclass
class CorpusLoadResult:
    records: list[PatientRecord]
    problems: list[LineProblem]
    n_lines: int

    @property
    def ok(self) -> bool:
        return not self.problems


def _document_sort_key(doc: ClinicalDocument) -> tuple:
    # Dated documents first (ascending), undated last, ties broken by doc_id.
    if doc.doc_date is None:
        return (1, "", doc.doc_id)
    return (0, doc.doc_date, doc.doc_id)


def _parse_iso_date(value: str) -> date:
    return date.fromisoformat(value)


def load_corpus(path: str | Path) -> CorpusLoadResult:
    """Load and group documents per patient; report every rejected line."""
    problems: list[LineProblem] = []
    docs: list[ClinicalDocument] = []
    seen_doc_ids: dict[str, int] = {}
    n_lines = 0
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            n_lines += 1
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(LineProblem(line_no, f"invalid record: {exc}"))
                continue
            if not isinstance(row, dict):
                problems.append(LineProblem(line_no, "record is not an object"))
                continue
            bad = False
            for name in ("doc_id", "patient_id", "text"):
                value = row.get(name)
                if not isinstance(value, str) or not value:
                    problems.append(LineProblem(line_no, "missing or empty", field=name))
                    bad = True
            if bad:
                continue
            doc_date = row.get("doc_date")
            if doc_date is not None:
                try:
                    _parse_iso_date(doc_date)
                except (TypeError, ValueError):
                    problems.append(
                        LineProblem(line_no, f"not an ISO date: {doc_date!r}", field="doc_date")
                    )
                    continue
            doc_id = row["doc_id"]
            if doc_id in seen_doc_ids:
                problems.append(
                    LineProblem(
                        line_no,
                        f"duplicate doc_id {doc_id!r} (first seen on line {seen_doc_ids[doc_id]})",
                        field="doc_id",
                    )
                )
                continue
            seen_doc_ids[doc_id] = line_no
            raw_type = row.get("doc_type", "other")
            try:
                doc_type = DocType(raw_type)
            except ValueError:
                doc_type = DocType.OTHER  # unknown taxonomies collapse to other
            docs.append(
                ClinicalDocument(
                    doc_id=doc_id,
                    patient_id=row["patient_id"],
                    text=row["text"],
                    doc_type=doc_type,
                    doc_date=doc_date,
                )
            )
    grouped: dict[str, list[ClinicalDocument]] = {}
    for doc in docs:
        grouped.setdefault(doc.patient_id, []).append(doc)
    records = [
        PatientRecord(patient_id, sorted(grouped[patient_id], key=_document_sort_key))
        for patient_id in sorted(grouped)
    ]
    return CorpusLoadResult(records, problems, n_lines)


def save_corpus(records: list[PatientRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            for doc in record.documents:
                row = {
                    "doc_id": doc.doc_id,
                    "patient_id": doc.patient_id,
                    "doc_type": doc.doc_type.value,
                    "text": doc.text,
                }
                if doc.doc_date is not None:
                    row["doc_date"] = doc.doc_date
                handle.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


@dataclass
class GoldEventsResult:
    events_by_doc: dict[str, list[GoldEvent]]
    problems: list[LineProblem]


@dataclass
class GoldAdjudicationsResult:
    by_patient: dict[str, GoldAdjudication]
    problems: list[LineProblem]


def load_gold_events(path: str | Path, verbalizer: Verbalizer) -> GoldEventsResult:
    """Load gold events; every event name must canonicalize under the verbalizer."""
    events_by_doc: dict[str, list[GoldEvent]] = {}
    problems: list[LineProblem] = []
    seen: set[tuple] = set()
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(LineProblem(line_no, f"invalid record: {exc}"))
                continue
            doc_id = row.get("doc_id")
            if not isinstance(doc_id, str) or not doc_id:
                problems.append(LineProblem(line_no, "missing or empty", field="doc_id"))
                continue
            name = row.get("event_name", "")
            canonical = canonicalize(str(name), verbalizer)
            if canonical is None:
                problems.append(
                    LineProblem(line_no, f"unknown canonical label {name!r}", field="event_name")
                )
                continue
            raw_negation = row.get("negation")
            if raw_negation not in ("affirmed", "negated"):
                problems.append(
                    LineProblem(line_no, f"unknown negation {raw_negation!r}", field="negation")
                )
                continue
            raw_date = row.get("event_date")
            event_date = None
            if raw_date is not None:
                try:
                    event_date = _parse_iso_date(raw_date)
                except (TypeError, ValueError):
                    problems.append(
                        LineProblem(line_no, f"not an ISO date: {raw_date!r}", field="event_date")
                    )
                    continue
            key = (doc_id, canonical, event_date)
            if key in seen:
                problems.append(
                    LineProblem(line_no, f"duplicate gold row for {key!r}", field="event_name")
                )
                continue
            seen.add(key)
            events_by_doc.setdefault(doc_id, []).append(
                GoldEvent(doc_id, canonical, Negation(raw_negation), event_date)
            )
    return GoldEventsResult(events_by_doc, problems)


def load_gold_adjudications(path: str | Path) -> GoldAdjudicationsResult:
    by_patient: dict[str, GoldAdjudication] = {}
    problems: list[LineProblem] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(LineProblem(line_no, f"invalid record: {exc}"))
                continue
            patient_id = row.get("patient_id")
            if not isinstance(patient_id, str) or not patient_id:
                problems.append(LineProblem(line_no, "missing or empty", field="patient_id"))
                continue
            try:
                decision = Decision(row.get("decision"))
            except ValueError:
                problems.append(
                    LineProblem(
                        line_no, f"unknown decision {row.get('decision')!r}", field="decision"
                    )
                )
                continue
            if patient_id in by_patient:
                problems.append(
                    LineProblem(line_no, f"duplicate patient_id {patient_id!r}", field="patient_id")
                )
                continue
            by_patient[patient_id] = GoldAdjudication(patient_id, decision)
    return GoldAdjudicationsResult(by_patient, problems)


def load_gold_annotations(
    events_path: str | Path | None,
    adjudications_path: str | Path | None,
    verbalizer: Verbalizer,
) -> tuple[dict[str, list[GoldEvent]], dict[str, GoldAdjudication], list[LineProblem]]:
    """Load both gold files (either may be absent) into their lookup maps."""
    events: dict[str, list[GoldEvent]] = {}
    adjudications: dict[str, GoldAdjudication] = {}
    problems: list[LineProblem] = []
    if events_path is not None:
        result = load_gold_events(events_path, verbalizer)
        events = result.events_by_doc
        problems.extend(result.problems)
    if adjudications_path is not None:
        result = load_gold_adjudications(adjudications_path)
        adjudications = result.by_patient
        problems.extend(result.problems)
    return events, adjudications, problems


def attach_gold_adjudications(
    records: list[PatientRecord], by_patient: dict[str, GoldAdjudication]
) -> list[PatientRecord]:
    """Fill each record's gold_adjudication from the loaded gold map, in place."""
    for record in records:
        record.gold_adjudication = by_patient.get(record.patient_id)
    return records


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    patient_id: str | None = None
    doc_id: str | None = None


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_corpus(records: list[PatientRecord]) -> ValidationReport:
    """Collect every invariant violation; never raises."""
    report = ValidationReport()
    doc_owners: dict[str, list[str]] = {}
    for record in records:
        if not record.documents:
            report.violations.append(
                Violation("no_documents", "patient record has no documents", record.patient_id)
            )
        ordered = sorted(record.documents, key=_document_sort_key)
        if [d.doc_id for d in ordered] != [d.doc_id for d in record.documents]:
            report.violations.append(
                Violation(
                    "unordered_documents",
                    "documents are not in (doc_date, doc_id) order with undated last",
                    record.patient_id,
                )
            )
        for doc in record.documents:
            doc_owners.setdefault(doc.doc_id, []).append(record.patient_id)
            if doc.patient_id != record.patient_id:
                report.violations.append(
                    Violation(
                        "patient_mismatch",
                        f"document carries patient_id {doc.patient_id!r}",
                        record.patient_id,
                        doc.doc_id,
                    )
                )
            if not doc.text.strip():
                report.violations.append(
                    Violation("empty_text", "document text is empty", record.patient_id, doc.doc_id)
                )
            if doc.doc_date is not None:
                try:
                    _parse_iso_date(doc.doc_date)
                except (TypeError, ValueError):
                    report.violations.append(
                        Violation(
                            "bad_date",
                            f"doc_date {doc.doc_date!r} is not a valid calendar date",
                            record.patient_id,
                            doc.doc_id,
                        )
                    )
    for doc_id, owners in sorted(doc_owners.items()):
        if len(owners) > 1:
            report.violations.append(
                Violation(
                    "duplicate_doc_id",
                    f"doc_id {doc_id!r} appears under patients {sorted(set(owners))}",
                    doc_id=doc_id,
                )
            )
    return report
