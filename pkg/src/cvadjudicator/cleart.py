"""Automated reasoning-quality scoring against a six-criterion binary rubric.

An evaluator model grades a reasoning narrative on all six criteria in one
call; each criterion receives a 0/1 score plus a one-line justification, and
the overall score is the exact mean of the six. Parse failures default to 0
(never to a granted point), and gateway failures leave the patient unscored
rather than fabricating a score.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import yaml

from .gateway import LlmRequest, Message, simple_request
from .extraction import PromptTemplate

CLEART_TAG = "cleart"
CLEART_MAX_OUTPUT_TOKENS = 600
PARSE_FAILURE_JUSTIFICATION = "evaluator parse failure"

CRITERION_KEYS = (
    "clarity",
    "logical_consistency",
    "evaluation_details",
    "adherence_to_guidelines",
    "relevance",
    "timeline_accuracy",
)


class CleartError(Exception):
    pass


@dataclass(frozen=True)
class CleartCriterion:
    key: str
    rubric_text: str

    def __post_init__(self):
        if self.key not in CRITERION_KEYS:
            raise CleartError(f"unknown criterion key {self.key!r}")


def load_rubric(path: str | Path) -> list[CleartCriterion]:
    """Load the rubric file; all six criteria must appear exactly once."""
    with open(path, encoding="utf-8") as handle:
        data = yaml.safe_load(handle)
    criteria = [CleartCriterion(str(c["key"]), str(c["rubric"])) for c in data["criteria"]]
    keys = [c.key for c in criteria]
    if sorted(keys) != sorted(CRITERION_KEYS):
        raise CleartError(f"rubric must contain each of {CRITERION_KEYS} exactly once, got {keys}")
    ordered = {c.key: c for c in criteria}
    return [ordered[key] for key in CRITERION_KEYS]


@dataclass(frozen=True)
class CriterionScore:
    key: str
    score: int
    justification: str

    def __post_init__(self):
        if self.score not in (0, 1):
            raise CleartError(f"criterion score must be 0 or 1, got {self.score!r}")


@dataclass
class CleartScore:
    patient_id: str
    criteria: list[CriterionScore]

    def __post_init__(self):
        keys = [c.key for c in self.criteria]
        if sorted(keys) != sorted(CRITERION_KEYS):
            raise CleartError(f"a score needs all six criteria exactly once, got {keys}")

    @property
    def overall(self) -> Fraction:
        return Fraction(sum(c.score for c in self.criteria), len(self.criteria))

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "criteria": [
                {"key": c.key, "score": c.score, "justification": c.justification}
                for c in self.criteria
            ],
            "overall": float(self.overall),
        }

    @classmethod
    def from_dict(cls, row: dict) -> CleartScore:
        return cls(
            patient_id=row["patient_id"],
            criteria=[
                CriterionScore(c["key"], int(c["score"]), c["justification"])
                for c in row["criteria"]
            ],
        )


def render_rubric_block(rubric: list[CleartCriterion]) -> str:
    return "\n".join(f"- {c.key}: {c.rubric_text}" for c in rubric)


def build_evaluator_request(
    reasoning: str,
    rubric: list[CleartCriterion],
    template: PromptTemplate,
    *,
    max_output_tokens: int = CLEART_MAX_OUTPUT_TOKENS,
) -> LlmRequest:
    prompt = template.render(reasoning=reasoning, rubric=render_rubric_block(rubric))
    return simple_request(prompt, tag=CLEART_TAG, max_output_tokens=max_output_tokens)


_SCORE_LINE = re.compile(
    r"^\s*[-*]?\s*([A-Za-z_ ]+?)\s*[:\-]\s*([01])(?![\d.])\s*[-:–—]?\s*(.*)$"
)


def parse_score_lines(text: str) -> dict[str, tuple[int, str]]:
    """Pull per-criterion rows out of the evaluator response; binary scores only."""
    rows: dict[str, tuple[int, str]] = {}
    for line in text.splitlines():
        match = _SCORE_LINE.match(line)
        if not match:
            continue
        key = match.group(1).strip().lower().replace(" ", "_")
        if key not in CRITERION_KEYS or key in rows:
            continue
        rows[key] = (int(match.group(2)), match.group(3).strip())
    return rows


def build_repair_request(
    request: LlmRequest, response_text: str, missing: list[str]
) -> LlmRequest:
    return LlmRequest(
        messages=[
            *request.messages,
            Message("assistant", response_text),
            Message(
                "user",
                "Your response is missing rows for: "
                + ", ".join(missing)
                + ". Respond again with one line per criterion in the form "
                "'<key>: <0 or 1> - <justification>'.",
            ),
        ],
        max_output_tokens=request.max_output_tokens,
        tag=request.tag,
    )


def score_reasoning(
    patient_id: str,
    reasoning: str,
    rubric: list[CleartCriterion],
    backend,
    template: PromptTemplate,
) -> CleartScore:
    """Grade one reasoning narrative; gateway errors propagate (caller skips)."""
    if not reasoning.strip():
        raise CleartError("reasoning must be non-empty")
    if [c.key for c in rubric] != list(CRITERION_KEYS):
        raise CleartError("rubric must be complete and in canonical order")
    request = build_evaluator_request(reasoning, rubric, template)
    response = backend.complete(request)
    rows = parse_score_lines(response.text)
    missing = [key for key in CRITERION_KEYS if key not in rows]
    if missing:
        repair = build_repair_request(request, response.text, missing)
        for key, row in parse_score_lines(backend.complete(repair).text).items():
            rows.setdefault(key, row)
    criteria = []
    for key in CRITERION_KEYS:
        if key in rows:
            score, justification = rows[key]
            criteria.append(CriterionScore(key, score, justification))
        else:
            criteria.append(CriterionScore(key, 0, PARSE_FAILURE_JUSTIFICATION))
    return CleartScore(patient_id=patient_id, criteria=criteria)


@dataclass
class CleartAggregate:
    count: int
    per_criterion_mean: dict[str, Fraction | None]
    overall_mean: Fraction | None
    skipped: list[str]

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "per_criterion_mean": {
                key: (float(value) if value is not None else None)
                for key, value in self.per_criterion_mean.items()
            },
            "overall_mean": float(self.overall_mean) if self.overall_mean is not None else None,
            "skipped": list(self.skipped),
        }


def aggregate_cleart(scores: list[CleartScore], skipped: list[str] | None = None) -> CleartAggregate:
    """Per-criterion and overall means; empty input reports absent means."""
    skipped = sorted(skipped or [])
    if not scores:
        return CleartAggregate(0, {key: None for key in CRITERION_KEYS}, None, skipped)
    n = len(scores)
    per_criterion: dict[str, Fraction | None] = {}
    for key in CRITERION_KEYS:
        total = sum(c.score for s in scores for c in s.criteria if c.key == key)
        per_criterion[key] = Fraction(total, n)
    overall = sum((s.overall for s in scores), Fraction(0)) / n
    return CleartAggregate(n, per_criterion, overall, skipped)
