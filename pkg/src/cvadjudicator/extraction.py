"""Prompt-driven clinical event extraction.

Each document is segmented, packed into sentence chunks that fit the backend
context window, and rendered through a few-shot prompt template together with
the verbalizer's label list. The model answers with a JSON array of event
records (name, quoted sentence, negated flag, date string); names are
canonicalized through the verbalizer, quoted sentences are matched back to
segmented sentence coordinates, and dates are normalized.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

from .corpus import ClinicalDocument, Negation
from .gateway import LlmRequest, Message, estimate_tokens, simple_request
from .preprocess import Sentence, segment_sentences
from .verbalizer import Category, Verbalizer, canonicalize

logger = logging.getLogger(__name__)

# Share of the context window that sentence content may fill; the rest is
# reserved for template text, few-shot examples, and the model's output.
CHUNK_WINDOW_SHARE = 0.6
EXTRACT_MAX_OUTPUT_TOKENS = 1200
EXTRACT_TAG = "extract"

_REPAIR_INSTRUCTION = (
    "The previous response could not be parsed. Respond again with only a JSON "
    "array of event objects, each with keys name, sentence, negated, and date."
)


class TemplateError(Exception):
    pass


@dataclass
class PromptTemplate:
    """Text template with {{name}} placeholders, each required one occurring once."""

    template_id: str
    text: str
    required_placeholders: frozenset[str]

    def __post_init__(self):
        for name in self.required_placeholders:
            count = self.text.count("{{" + name + "}}")
            if count != 1:
                raise TemplateError(
                    f"template {self.template_id!r}: placeholder {{{{{name}}}}} "
                    f"occurs {count} times, expected exactly once"
                )

    def render(self, **values: str) -> str:
        missing = self.required_placeholders - set(values)
        if missing:
            raise TemplateError(
                f"template {self.template_id!r}: missing values for {sorted(missing)}"
            )
        rendered = self.text
        for name, value in values.items():
            rendered = rendered.replace("{{" + name + "}}", value)
        if re.search(r"\{\{\w+\}\}", rendered):
            leftover = sorted(set(re.findall(r"\{\{(\w+)\}\}", rendered)))
            raise TemplateError(
                f"template {self.template_id!r}: unfilled placeholders {leftover}"
            )
        return rendered


def load_template(path: str | Path, required_placeholders: set[str]) -> PromptTemplate:
    path = Path(path)
    return PromptTemplate(path.stem, path.read_text("utf-8"), frozenset(required_placeholders))


@dataclass(frozen=True)
class EvidenceSpan:
    doc_id: str
    sent_index: int  # -1 when the quoted text could not be located
    sentence: str


@dataclass
class ClinicalEvent:
    event_name: str
    category: Category
    evidence: list[EvidenceSpan]
    negation: Negation = Negation.UNKNOWN
    event_date: date | None = None
    date_raw: str | None = None

    def to_dict(self) -> dict:
        return {
            "event_name": self.event_name,
            "category": self.category.value,
            "negation": self.negation.value,
            "event_date": self.event_date.isoformat() if self.event_date else None,
            "date_raw": self.date_raw,
            "evidence": [
                {"doc_id": e.doc_id, "sent_index": e.sent_index, "sentence": e.sentence}
                for e in self.evidence
            ],
        }

    @classmethod
    def from_dict(cls, row: dict) -> ClinicalEvent:
        return cls(
            event_name=row["event_name"],
            category=Category(row["category"]),
            evidence=[
                EvidenceSpan(e["doc_id"], e["sent_index"], e["sentence"])
                for e in row["evidence"]
            ],
            negation=Negation(row["negation"]),
            event_date=date.fromisoformat(row["event_date"]) if row.get("event_date") else None,
            date_raw=row.get("date_raw"),
        )


_MONTHS = {
    name: i + 1
    for i, name in enumerate(
        (
            "january", "february", "march", "april", "may", "june",
            "july", "august", "september", "october", "november", "december",
        )
    )
}
_MONTHS.update({name[:3]: num for name, num in _MONTHS.items()})
_MONTHS["sept"] = 9

_NUMBER_WORDS = {
    "a": 1, "an": 1, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10,
}

_ISO = re.compile(r"^(\d{4})-(\d{2})-(\d{2})$")
_ISO_MONTH = re.compile(r"^(\d{4})-(\d{2})$")
_ISO_YEAR = re.compile(r"^(\d{4})$")
_US = re.compile(r"^(\d{1,2})/(\d{1,2})/(\d{4})$")
_VERBOSE = re.compile(r"^([A-Za-z]+)\.?\s+(\d{1,2})(?:st|nd|rd|th)?,?\s+(\d{4})$")
_RELATIVE = re.compile(
    r"^(?:(\d+)|([a-z]+))\s+(day|week|month|year)s?\s+(?:prior|ago|before|earlier)$",
    re.IGNORECASE,
)


def _shift_months(reference: date, months_back: int) -> date:
    month_index = reference.year * 12 + (reference.month - 1) - months_back
    year, month = divmod(month_index, 12)
    month += 1
    # clamp to the target month's length
    for day in (reference.day, 30, 29, 28):
        try:
            return date(year, month, day)
        except ValueError:
            continue
    raise AssertionError("unreachable")


def normalize_date(raw: str | None, reference: date | None = None) -> date | None:
    """Normalize a date string to a calendar date; absence, never failure.

    Accepts ISO YYYY-MM-DD, MM/DD/YYYY, "Month D, YYYY", and YYYY-MM / YYYY
    (completed to the first day of the period). Relative phrases resolve
    against the reference date when one is given.
    """
    if not raw:
        return None
    text = raw.strip()
    if not text:
        return None
    m = _ISO.match(text)
    if m:
        try:
            return date(int(m.group(1)), int(m.group(2)), int(m.group(3)))
        except ValueError:
            return None
    m = _ISO_MONTH.match(text)
    if m:
        try:
            return date(int(m.group(1)), int(m.group(2)), 1)
        except ValueError:
            return None
    m = _ISO_YEAR.match(text)
    if m:
        try:
            return date(int(m.group(1)), 1, 1)
        except ValueError:
            return None
    m = _US.match(text)
    if m:
        try:
            return date(int(m.group(3)), int(m.group(1)), int(m.group(2)))
        except ValueError:
            return None
    m = _VERBOSE.match(text)
    if m:
        month = _MONTHS.get(m.group(1).lower())
        if month is None:
            return None
        try:
            return date(int(m.group(3)), month, int(m.group(2)))
        except ValueError:
            return None
    m = _RELATIVE.match(text)
    if m:
        if reference is None:
            return None
        if m.group(1):
            count = int(m.group(1))
        else:
            count = _NUMBER_WORDS.get(m.group(2).lower(), -1)
            if count < 0:
                return None
        unit = m.group(3).lower()
        if unit == "day":
            return reference - timedelta(days=count)
        if unit == "week":
            return reference - timedelta(weeks=count)
        if unit == "month":
            return _shift_months(reference, count)
        return _shift_months(reference, count * 12)
    return None


def render_labels(verbalizer: Verbalizer) -> str:
    """Deterministic label listing rendered into extraction prompts."""
    lines = []
    for entry in verbalizer.entries:
        others = sorted(
            s for s in entry.synonyms if s.lower() != entry.canonical_label.lower()
        )
        line = f"- {entry.canonical_label} [{entry.category.value}]"
        if others:
            line += ": " + ", ".join(others)
        lines.append(line)
    return "\n".join(lines)


def plan_chunks(sentences: list[Sentence], chunk_budget_tokens: int) -> list[list[Sentence]]:
    """Pack whole sentences into chunks; no sentence is skipped or repeated.

    A sentence that alone exceeds the budget gets its own chunk; the window
    check in the gateway is what ultimately rejects it.
    """
    chunks: list[list[Sentence]] = []
    current: list[Sentence] = []
    used = 0
    for sentence in sentences:
        cost = estimate_tokens(sentence.text) + 1  # joining newline
        if current and used + cost > chunk_budget_tokens:
            chunks.append(current)
            current = []
            used = 0
        current.append(sentence)
        used += cost
    if current:
        chunks.append(current)
    return chunks


def build_extraction_requests(
    doc: ClinicalDocument,
    template: PromptTemplate,
    verbalizer: Verbalizer,
    context_window_tokens: int,
    *,
    abbreviations: frozenset[str] | None = None,
    max_output_tokens: int = EXTRACT_MAX_OUTPUT_TOKENS,
) -> tuple[list[Sentence], list[list[Sentence]], list[LlmRequest]]:
    """Plan the chunked extraction requests for one document."""
    sentences = segment_sentences(doc, abbreviations)
    labels_text = render_labels(verbalizer)
    overhead = estimate_tokens(template.render(document="", labels=labels_text))
    budget = int(context_window_tokens * CHUNK_WINDOW_SHARE)
    budget = max(1, min(budget, context_window_tokens - overhead - max_output_tokens - 64))
    chunks = plan_chunks(sentences, budget)
    requests = []
    for chunk in chunks:
        chunk_text = "\n".join(s.text for s in chunk)
        prompt = template.render(document=chunk_text, labels=labels_text)
        requests.append(simple_request(prompt, tag=EXTRACT_TAG, max_output_tokens=max_output_tokens))
    return sentences, chunks, requests


def _parse_event_rows(text: str) -> list[dict] | None:
    candidates = [text]
    start, end = text.find("["), text.rfind("]")
    if start >= 0 and end > start:
        candidates.append(text[start : end + 1])
    for candidate in candidates:
        try:
            data = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(data, list) and all(
            isinstance(row, dict)
            and isinstance(row.get("name"), str)
            and isinstance(row.get("sentence"), str)
            for row in data
        ):
            return data
    return None


def _locate_evidence(quoted: str, sentences: list[Sentence], doc_id: str) -> EvidenceSpan:
    quoted = quoted.strip()
    for sentence in sentences:
        if sentence.text == quoted:
            return EvidenceSpan(doc_id, sentence.sent_index, sentence.text)
    for sentence in sentences:
        if quoted and quoted in sentence.text:
            return EvidenceSpan(doc_id, sentence.sent_index, sentence.text)
    return EvidenceSpan(doc_id, -1, quoted)  # flagged: keep for recall


def _parse_negation(value) -> Negation:
    if value is True:
        return Negation.NEGATED
    if value is False:
        return Negation.AFFIRMED
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered == "true":
            return Negation.NEGATED
        if lowered == "false":
            return Negation.AFFIRMED
    return Negation.UNKNOWN


def extract_events(
    doc: ClinicalDocument,
    template: PromptTemplate,
    verbalizer: Verbalizer,
    backend,
    *,
    abbreviations: frozenset[str] | None = None,
    max_output_tokens: int = EXTRACT_MAX_OUTPUT_TOKENS,
) -> list[ClinicalEvent]:
    """Extract events from one document through the backend."""
    sentences, _, requests = build_extraction_requests(
        doc,
        template,
        verbalizer,
        backend.context_window_tokens,
        abbreviations=abbreviations,
        max_output_tokens=max_output_tokens,
    )
    reference = None
    if doc.doc_date:
        try:
            reference = date.fromisoformat(doc.doc_date)
        except ValueError:
            reference = None
    events: list[ClinicalEvent] = []
    for request in requests:
        response = backend.complete(request)
        rows = _parse_event_rows(response.text)
        if rows is None:
            repair = LlmRequest(
                messages=[
                    *request.messages,
                    Message("assistant", response.text),
                    Message("user", _REPAIR_INSTRUCTION),
                ],
                max_output_tokens=request.max_output_tokens,
                tag=request.tag,
            )
            rows = _parse_event_rows(backend.complete(repair).text)
        if rows is None:
            logger.warning("unparseable extraction response for %s; chunk skipped", doc.doc_id)
            continue
        for row in rows:
            label = canonicalize(row["name"], verbalizer)
            if label is None:
                logger.warning(
                    "dropped event %r from %s: name does not canonicalize",
                    row["name"],
                    doc.doc_id,
                )
                continue
            raw_date = row.get("date")
            raw_date = raw_date if isinstance(raw_date, str) and raw_date.strip() else None
            events.append(
                ClinicalEvent(
                    event_name=label,
                    category=verbalizer.category_of(label),
                    evidence=[_locate_evidence(row["sentence"], sentences, doc.doc_id)],
                    negation=_parse_negation(row.get("negated")),
                    event_date=normalize_date(raw_date, reference),
                    date_raw=raw_date,
                )
            )
    events.sort(key=lambda e: (e.evidence[0].sent_index, e.event_name))
    return events


def dedupe_events(events: list[ClinicalEvent]) -> list[ClinicalEvent]:
    """Merge events identical in (name, negation, date), unioning evidence."""
    merged: dict[tuple, ClinicalEvent] = {}
    for event in events:
        key = (event.event_name, event.negation, event.event_date)
        existing = merged.get(key)
        if existing is None:
            merged[key] = ClinicalEvent(
                event_name=event.event_name,
                category=event.category,
                evidence=list(event.evidence),
                negation=event.negation,
                event_date=event.event_date,
                date_raw=event.date_raw,
            )
        else:
            seen = {(e.doc_id, e.sent_index, e.sentence) for e in existing.evidence}
            for span in event.evidence:
                if (span.doc_id, span.sent_index, span.sentence) not in seen:
                    existing.evidence.append(span)
                    seen.add((span.doc_id, span.sent_index, span.sentence))
    return list(merged.values())
