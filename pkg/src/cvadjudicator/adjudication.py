"""Thought-tree cause-of-death adjudication.

The tree is configuration: an ordered list of nodes, each carrying its own
guideline-bearing prompt template. The gate node (is the patient deceased)
runs first and short-circuits the tree on a NO. Otherwise every cause node is
evaluated, a consolidation prompt turns the verdict table into the final
reasoning narrative, and a deterministic precedence rule resolves the
structured decision. A simpler summarize-then-adjudicate baseline shares the
same result type.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import yaml

from .corpus import ClinicalDocument, Decision, PatientRecord
from .extraction import ClinicalEvent, PromptTemplate, load_template, plan_chunks
from .gateway import GatewayError, LlmRequest, Message, estimate_tokens, simple_request
from .preprocess import segment_sentences

logger = logging.getLogger(__name__)

NO_EVENTS_MARKER = "NO EVENTS EXTRACTED"
FALLBACK_PREFIX = "[FALLBACK]"
NODE_MAX_OUTPUT_TOKENS = 400
CONSOLIDATION_MAX_OUTPUT_TOKENS = 800
SUMMARY_MAX_OUTPUT_TOKENS = 500
BASELINE_DECISION_MAX_OUTPUT_TOKENS = 700
DEFAULT_TRUNCATION_LIMIT = 50

_VERDICT_REPAIR_INSTRUCTION = (
    "Answer again. The first line must be exactly one of YES, NO, or "
    "INSUFFICIENT, followed by your rationale."
)


class AdjudicationError(Exception):
    pass


class Verdict(Enum):
    YES = "yes"
    NO = "no"
    INSUFFICIENT = "insufficient"


class DecisionClass(Enum):
    GATE = "gate"
    CARDIOVASCULAR_CAUSE = "cardiovascular_cause"
    NON_CARDIOVASCULAR_CAUSE = "non_cardiovascular_cause"
    UNDETERMINED_CAUSE = "undetermined_cause"


class Method(Enum):
    TREE_OF_THOUGHTS = "tree_of_thoughts"
    SUMMARIZER_ADJUDICATOR = "summarizer_adjudicator"


_CLASS_TO_DECISION = {
    DecisionClass.CARDIOVASCULAR_CAUSE: Decision.CARDIOVASCULAR_DEATH,
    DecisionClass.NON_CARDIOVASCULAR_CAUSE: Decision.NON_CARDIOVASCULAR_DEATH,
    DecisionClass.UNDETERMINED_CAUSE: Decision.UNDETERMINED_DEATH,
}


@dataclass(frozen=True)
class GuidelineSet:
    full_text: str
    per_node: dict[str, str]

    def excerpt_for(self, node_id: str) -> str:
        excerpt = self.per_node.get(node_id, self.full_text)
        if not excerpt.strip():
            raise AdjudicationError(f"no guideline excerpt available for node {node_id!r}")
        return excerpt


_SECTION_HEADER = re.compile(r"^##\s*node:\s*(\S+)\s*$", re.MULTILINE)


def load_guidelines(path: str | Path) -> GuidelineSet:
    """Parse the guideline file: free preamble plus '## node: <id>' sections."""
    full_text = Path(path).read_text("utf-8")
    per_node: dict[str, str] = {}
    matches = list(_SECTION_HEADER.finditer(full_text))
    for i, match in enumerate(matches):
        start = match.end()
        end = matches[i + 1].start() if i + 1 < len(matches) else len(full_text)
        per_node[match.group(1)] = full_text[start:end].strip()
    return GuidelineSet(full_text=full_text, per_node=per_node)


@dataclass(frozen=True)
class ThoughtNode:
    node_id: str
    display_name: str
    template: PromptTemplate
    decision_class: DecisionClass
    precedence: int


@dataclass
class ThoughtTree:
    nodes: list[ThoughtNode]
    gate_node_id: str
    consolidation_template: PromptTemplate

    def __post_init__(self):
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise AdjudicationError("node ids must be unique")
        if not self.nodes or self.nodes[0].node_id != self.gate_node_id:
            raise AdjudicationError("the gate node must be first in the tree")
        if self.nodes[0].decision_class is not DecisionClass.GATE:
            raise AdjudicationError("the first node must have decision_class gate")
        if not self.cause_nodes:
            raise AdjudicationError("the tree needs at least one cause node")
        if any(n.decision_class is DecisionClass.GATE for n in self.nodes[1:]):
            raise AdjudicationError("only the first node may be the gate")
        precedences = [n.precedence for n in self.nodes]
        if len(set(precedences)) != len(precedences):
            raise AdjudicationError("node precedence values must be unique")

    @property
    def gate_node(self) -> ThoughtNode:
        return self.nodes[0]

    @property
    def cause_nodes(self) -> list[ThoughtNode]:
        return self.nodes[1:]


def load_tree(path: str | Path) -> ThoughtTree:
    """Load the tree config; template paths resolve relative to the config file."""
    path = Path(path)
    with open(path, encoding="utf-8") as handle:
        data = yaml.safe_load(handle)
    base = path.parent
    nodes = []
    for raw in data["nodes"]:
        nodes.append(
            ThoughtNode(
                node_id=str(raw["id"]),
                display_name=str(raw["display_name"]),
                template=load_template(base / raw["template"], {"guideline", "events"}),
                decision_class=DecisionClass(raw["decision_class"]),
                precedence=int(raw["precedence"]),
            )
        )
    consolidation = load_template(base / data["consolidation_template"], {"verdicts"})
    return ThoughtTree(nodes=nodes, gate_node_id=str(data["gate_node"]), consolidation_template=consolidation)


@dataclass(frozen=True)
class NodeVerdict:
    node_id: str
    verdict: Verdict
    rationale: str
    raw_response: str

    def __post_init__(self):
        if self.verdict is Verdict.YES and not self.rationale:
            raise ValueError("a yes verdict requires a rationale")


@dataclass(frozen=True)
class ConsolidationRecord:
    prompt: str
    response_text: str
    fallback: bool


@dataclass
class ThoughtTrace:
    verdicts: list[NodeVerdict] = field(default_factory=list)
    prompts: dict[str, str] = field(default_factory=dict)
    consolidation: ConsolidationRecord | None = None

    def __len__(self) -> int:
        return len(self.verdicts) + (1 if self.consolidation else 0)


@dataclass
class AdjudicationResult:
    patient_id: str
    decision: Decision
    cause_node_id: str | None
    reasoning: str
    trace: ThoughtTrace
    method: Method


def render_events_block(
    events: list[ClinicalEvent],
    *,
    token_budget: int | None = None,
    truncation_limit: int = DEFAULT_TRUNCATION_LIMIT,
) -> str:
    """Compact event serialization: name, negation, date, one evidence sentence.

    When the block would exceed the token budget it is truncated to the most
    recent dated events and the truncation is noted in the block itself.
    """
    if not events:
        return NO_EVENTS_MARKER

    def line(event: ClinicalEvent) -> str:
        when = event.event_date.isoformat() if event.event_date else "no date"
        quote = event.evidence[0].sentence if event.evidence else ""
        return f'- {event.event_name} | {event.negation.value} | {when} | "{quote}"'

    block = "\n".join(line(e) for e in events)
    if token_budget is not None and estimate_tokens(block) > token_budget:
        dated = [e for e in events if e.event_date is not None]
        dated.sort(key=lambda e: e.event_date, reverse=True)
        kept = dated[:truncation_limit]
        notice = (
            f"[EVENTS TRUNCATED: showing the {len(kept)} most recent dated "
            f"events of {len(events)} extracted]"
        )
        block = "\n".join([notice, *map(line, kept)])
    return block


def render_node_prompt(
    node: ThoughtNode,
    events: list[ClinicalEvent],
    guidelines: GuidelineSet,
    *,
    token_budget: int | None = None,
    truncation_limit: int = DEFAULT_TRUNCATION_LIMIT,
) -> str:
    excerpt = guidelines.excerpt_for(node.node_id)
    block = render_events_block(events, token_budget=token_budget, truncation_limit=truncation_limit)
    return node.template.render(guideline=excerpt, events=block)


def build_node_request(
    node: ThoughtNode,
    events: list[ClinicalEvent],
    guidelines: GuidelineSet,
    context_window_tokens: int,
    *,
    truncation_limit: int = DEFAULT_TRUNCATION_LIMIT,
    max_output_tokens: int = NODE_MAX_OUTPUT_TOKENS,
) -> LlmRequest:
    shell = render_node_prompt(node, [], guidelines)  # events block is the marker
    events_budget = context_window_tokens - max_output_tokens - estimate_tokens(shell) - 64
    prompt = render_node_prompt(
        node,
        events,
        guidelines,
        token_budget=max(1, events_budget),
        truncation_limit=truncation_limit,
    )
    return simple_request(prompt, tag=f"tot:{node.node_id}", max_output_tokens=max_output_tokens)


_VERDICT_HEAD = re.compile(r"^\s*(yes|no|insufficient)\b[\s:,.\-–—]*", re.IGNORECASE)


def parse_verdict(text: str) -> tuple[Verdict, str] | None:
    """Parse the leading YES/NO/INSUFFICIENT token; the remainder is the rationale."""
    match = _VERDICT_HEAD.match(text)
    if not match:
        return None
    return Verdict(match.group(1).lower()), text[match.end() :].strip()


def _evaluate(
    node: ThoughtNode,
    events: list[ClinicalEvent],
    guidelines: GuidelineSet,
    backend,
    *,
    truncation_limit: int = DEFAULT_TRUNCATION_LIMIT,
) -> tuple[NodeVerdict, str]:
    request = build_node_request(
        node, events, guidelines, backend.context_window_tokens, truncation_limit=truncation_limit
    )
    prompt = request.messages[0].content
    response = backend.complete(request)
    parsed = parse_verdict(response.text)
    raw = response.text
    if parsed is None:
        repair = LlmRequest(
            messages=[
                *request.messages,
                Message("assistant", response.text),
                Message("user", _VERDICT_REPAIR_INSTRUCTION),
            ],
            max_output_tokens=request.max_output_tokens,
            tag=request.tag,
        )
        second = backend.complete(repair)
        parsed = parse_verdict(second.text)
        raw = f"{response.text}\n--- repair ---\n{second.text}"
    if parsed is None:
        return NodeVerdict(node.node_id, Verdict.INSUFFICIENT, "", raw), prompt
    verdict, rationale = parsed
    if verdict is Verdict.YES and not rationale:
        rationale = "(no rationale given)"
    return NodeVerdict(node.node_id, verdict, rationale, raw), prompt


def evaluate_node(
    node: ThoughtNode,
    events: list[ClinicalEvent],
    guidelines: GuidelineSet,
    backend,
    *,
    truncation_limit: int = DEFAULT_TRUNCATION_LIMIT,
) -> NodeVerdict:
    verdict, _ = _evaluate(node, events, guidelines, backend, truncation_limit=truncation_limit)
    return verdict


def render_consolidation_prompt(verdicts: list[NodeVerdict], tree: ThoughtTree) -> str:
    by_id = {v.node_id: v for v in verdicts}
    lines = []
    for node in tree.nodes:
        verdict = by_id.get(node.node_id)
        if verdict is None:
            continue
        rationale = verdict.rationale or "no rationale"
        lines.append(f"- {node.display_name} [{node.node_id}]: {verdict.verdict.value.upper()}: {rationale}")
    return tree.consolidation_template.render(verdicts="\n".join(lines))


def build_consolidation_request(
    verdicts: list[NodeVerdict],
    tree: ThoughtTree,
    *,
    max_output_tokens: int = CONSOLIDATION_MAX_OUTPUT_TOKENS,
) -> LlmRequest:
    prompt = render_consolidation_prompt(verdicts, tree)
    return simple_request(prompt, tag="tot:consolidation", max_output_tokens=max_output_tokens)


def _fallback_reasoning(verdicts: list[NodeVerdict], tree: ThoughtTree) -> str:
    by_id = {v.node_id: v for v in verdicts}
    parts = []
    for node in tree.nodes:
        verdict = by_id.get(node.node_id)
        if verdict is not None:
            parts.append(f"{node.display_name}: {verdict.verdict.value}")
    return f"{FALLBACK_PREFIX} consolidation unavailable; verdict table: " + "; ".join(parts)


def _consolidate(
    verdicts: list[NodeVerdict], tree: ThoughtTree, backend
) -> ConsolidationRecord:
    request = build_consolidation_request(verdicts, tree)
    prompt = request.messages[0].content
    try:
        response = backend.complete(request)
    except GatewayError as exc:
        logger.warning("consolidation failed, using fallback reasoning: %s", exc)
        return ConsolidationRecord(prompt, _fallback_reasoning(verdicts, tree), True)
    return ConsolidationRecord(prompt, response.text, False)


def consolidate(trace: ThoughtTrace, tree: ThoughtTree, backend) -> str:
    """Synthesize the final reasoning narrative from a complete verdict table."""
    have = {v.node_id for v in trace.verdicts}
    need = {n.node_id for n in tree.nodes}
    if have != need:
        raise AdjudicationError(f"trace is missing verdicts for {sorted(need - have)}")
    return _consolidate(trace.verdicts, tree, backend).response_text


def resolve_decision(
    verdict_table: dict[str, Verdict], tree: ThoughtTree
) -> tuple[Decision, str | None, list[str]]:
    """Pure resolution of the final decision from the cause-verdict table.

    Among yes-verdict cause nodes the lowest precedence number wins; no yes
    verdict at all resolves to undetermined. Returns the decision, the chosen
    cause node id, and any conflicting yes-nodes that lost.
    """
    yes_nodes = [
        node for node in tree.cause_nodes if verdict_table.get(node.node_id) is Verdict.YES
    ]
    if not yes_nodes:
        return Decision.UNDETERMINED_DEATH, None, []
    chosen = min(yes_nodes, key=lambda n: n.precedence)
    losers = [n.node_id for n in yes_nodes if n.node_id != chosen.node_id]
    return _CLASS_TO_DECISION[chosen.decision_class], chosen.node_id, losers


def adjudicate_tot(
    patient: PatientRecord,
    events: list[ClinicalEvent],
    tree: ThoughtTree,
    guidelines: GuidelineSet,
    backend,
    *,
    truncation_limit: int = DEFAULT_TRUNCATION_LIMIT,
) -> AdjudicationResult:
    """Run the full thought tree for one patient."""
    trace = ThoughtTrace()

    def degraded(note: str) -> AdjudicationResult:
        return AdjudicationResult(
            patient_id=patient.patient_id,
            decision=Decision.UNDETERMINED_DEATH,
            cause_node_id=None,
            reasoning=note,
            trace=trace,
            method=Method.TREE_OF_THOUGHTS,
        )

    try:
        gate, prompt = _evaluate(
            tree.gate_node, events, guidelines, backend, truncation_limit=truncation_limit
        )
    except GatewayError as exc:
        return degraded(f"[ERROR] adjudication aborted at the gate node: {exc}")
    trace.verdicts.append(gate)
    trace.prompts[tree.gate_node_id] = prompt

    if gate.verdict is Verdict.NO:
        return AdjudicationResult(
            patient_id=patient.patient_id,
            decision=Decision.NOT_DECEASED,
            cause_node_id=None,
            reasoning=gate.rationale or "No evidence that the patient is deceased.",
            trace=trace,
            method=Method.TREE_OF_THOUGHTS,
        )
    if gate.verdict is Verdict.INSUFFICIENT:
        return degraded(
            "Death could not be established from the extracted events; "
            "cause-of-death review was not performed."
        )

    for node in tree.cause_nodes:
        try:
            verdict, prompt = _evaluate(
                node, events, guidelines, backend, truncation_limit=truncation_limit
            )
        except GatewayError as exc:
            return degraded(
                f"[ERROR] adjudication aborted after {len(trace.verdicts)} node "
                f"evaluations at {node.node_id!r}: {exc}"
            )
        trace.verdicts.append(verdict)
        trace.prompts[node.node_id] = prompt

    trace.consolidation = _consolidate(trace.verdicts, tree, backend)
    table = {v.node_id: v.verdict for v in trace.verdicts}
    decision, cause_node_id, conflicts = resolve_decision(table, tree)
    reasoning = trace.consolidation.response_text
    if conflicts:
        reasoning += (
            f"\n\n[CONFLICT] affirmed causes besides {cause_node_id}: "
            f"{', '.join(conflicts)}; resolved by precedence."
        )
    return AdjudicationResult(
        patient_id=patient.patient_id,
        decision=decision,
        cause_node_id=cause_node_id,
        reasoning=reasoning,
        trace=trace,
        method=Method.TREE_OF_THOUGHTS,
    )


# --- Summarizer + Adjudicator baseline ---

_DECISION_LINE = re.compile(
    r"DECISION:\s*(NON_CARDIOVASCULAR_DEATH|CARDIOVASCULAR_DEATH|UNDETERMINED_DEATH|NOT_DECEASED)",
    re.IGNORECASE,
)
_DECISION_BARE = re.compile(
    r"\b(NON_CARDIOVASCULAR_DEATH|CARDIOVASCULAR_DEATH|UNDETERMINED_DEATH|NOT_DECEASED)\b",
    re.IGNORECASE,
)


def parse_decision_line(text: str) -> Decision | None:
    match = _DECISION_LINE.search(text) or _DECISION_BARE.search(text)
    if not match:
        return None
    return Decision(match.group(1).lower())


def build_summary_requests(
    doc: ClinicalDocument,
    template: PromptTemplate,
    context_window_tokens: int,
    *,
    abbreviations: frozenset[str] | None = None,
    max_output_tokens: int = SUMMARY_MAX_OUTPUT_TOKENS,
) -> list[LlmRequest]:
    """Chunked map-step requests for one document."""
    sentences = segment_sentences(doc, abbreviations)
    overhead = estimate_tokens(template.render(document=""))
    budget = int(context_window_tokens * 0.6)
    budget = max(1, min(budget, context_window_tokens - overhead - max_output_tokens - 64))
    requests = []
    for chunk in plan_chunks(sentences, budget):
        prompt = template.render(document="\n".join(s.text for s in chunk))
        requests.append(
            simple_request(prompt, tag="baseline:summarize", max_output_tokens=max_output_tokens)
        )
    return requests


def combine_summaries(labeled_summaries: list[tuple[str, str]]) -> str:
    return "\n\n".join(f"[{label}]\n{text}" for label, text in labeled_summaries)


def build_baseline_decision_request(
    combined_summaries: str,
    guidelines: GuidelineSet,
    template: PromptTemplate,
    *,
    max_output_tokens: int = BASELINE_DECISION_MAX_OUTPUT_TOKENS,
) -> LlmRequest:
    prompt = template.render(guideline=guidelines.full_text, summaries=combined_summaries)
    return simple_request(prompt, tag="baseline:adjudicate", max_output_tokens=max_output_tokens)


def adjudicate_baseline(
    patient: PatientRecord,
    guidelines: GuidelineSet,
    backend,
    summarize_template: PromptTemplate,
    decision_template: PromptTemplate,
    *,
    abbreviations: frozenset[str] | None = None,
) -> AdjudicationResult:
    """Map-reduce baseline: summarize each document, adjudicate once over the summaries."""
    trace = ThoughtTrace()

    def degraded(note: str) -> AdjudicationResult:
        return AdjudicationResult(
            patient_id=patient.patient_id,
            decision=Decision.UNDETERMINED_DEATH,
            cause_node_id=None,
            reasoning=note,
            trace=trace,
            method=Method.SUMMARIZER_ADJUDICATOR,
        )

    window = backend.context_window_tokens
    try:
        labeled: list[tuple[str, str]] = []
        for doc in patient.documents:
            requests = build_summary_requests(
                doc, summarize_template, window, abbreviations=abbreviations
            )
            for i, request in enumerate(requests):
                label = doc.doc_id if len(requests) == 1 else f"{doc.doc_id} part {i + 1}"
                trace.prompts[f"summarize:{label}"] = request.messages[0].content
                labeled.append((label, backend.complete(request).text))
        combined = combine_summaries(labeled)

        shell = decision_template.render(guideline=guidelines.full_text, summaries="")
        reduce_budget = window - estimate_tokens(shell) - BASELINE_DECISION_MAX_OUTPUT_TOKENS - 64
        passes = 0
        while estimate_tokens(combined) > reduce_budget and passes < 3:
            passes += 1
            pseudo = ClinicalDocument(
                doc_id=f"{patient.patient_id}-summary-pass{passes}",
                patient_id=patient.patient_id,
                text=combined,
            )
            requests = build_summary_requests(
                pseudo, summarize_template, window, abbreviations=abbreviations
            )
            labeled = []
            for i, request in enumerate(requests):
                label = f"pass{passes} part {i + 1}"
                trace.prompts[f"summarize:{label}"] = request.messages[0].content
                labeled.append((label, backend.complete(request).text))
            combined = combine_summaries(labeled)

        request = build_baseline_decision_request(combined, guidelines, decision_template)
        trace.consolidation = ConsolidationRecord(
            request.messages[0].content, "", fallback=False
        )
        response = backend.complete(request)
        trace.consolidation = ConsolidationRecord(
            request.messages[0].content, response.text, fallback=False
        )
    except GatewayError as exc:
        return degraded(f"[ERROR] baseline adjudication aborted: {exc}")

    decision = parse_decision_line(response.text)
    reasoning = response.text
    if decision is None:
        decision = Decision.UNDETERMINED_DEATH
        reasoning += "\n\n[PARSE FAILURE] no decision line found; defaulted to undetermined."
    return AdjudicationResult(
        patient_id=patient.patient_id,
        decision=decision,
        cause_node_id=None,
        reasoning=reasoning,
        trace=trace,
        method=Method.SUMMARIZER_ADJUDICATOR,
    )
