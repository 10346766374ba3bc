from datetime import date

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvadjudicator.adjudication import (
    NO_EVENTS_MARKER,
    AdjudicationError,
    AdjudicationResult,
    DecisionClass,
    GuidelineSet,
    Method,
    NodeVerdict,
    ThoughtNode,
    ThoughtTree,
    Verdict,
    adjudicate_baseline,
    adjudicate_tot,
    build_baseline_decision_request,
    build_consolidation_request,
    build_node_request,
    build_summary_requests,
    combine_summaries,
    evaluate_node,
    load_tree,
    parse_decision_line,
    parse_verdict,
    render_consolidation_prompt,
    render_events_block,
    render_node_prompt,
)
from cvadjudicator.corpus import ClinicalDocument, Decision, Negation, PatientRecord
from cvadjudicator.extraction import ClinicalEvent, EvidenceSpan, PromptTemplate
from cvadjudicator.gateway import (
    LlmRequest,
    Message,
    ScriptedBackend,
    ScriptedFixtures,
    estimate_tokens,
)
from cvadjudicator.verbalizer import Category

WINDOW = 8000


def _event(name, when=None, negation=Negation.AFFIRMED, sent_index=0, doc_id="d1"):
    return ClinicalEvent(
        name,
        Category.CV_EVENT,
        [EvidenceSpan(doc_id, sent_index, f"Sentence about {name.lower()}.")],
        negation,
        when,
        when.isoformat() if when else None,
    )


def _patient():
    return PatientRecord("p1", [ClinicalDocument("d1", "p1", "Patient expired. MI verified.")])


def _events():
    return [
        _event("Myocardial Infarction", date(2023, 4, 1)),
        _event("Death", date(2023, 4, 3), sent_index=1),
    ]


def _seed_full_run(tree, guidelines, yes_nodes=("acute_mi",), gate_text=None, consolidation="Final narrative."):
    """Fixtures for a gate-YES run with the given cause nodes answering YES."""
    fixtures = ScriptedFixtures()
    events = _events()
    fixtures.add(
        build_node_request(tree.gate_node, events, guidelines, WINDOW),
        gate_text or "YES - the record documents death on 2023-04-03.",
    )
    verdicts = [
        NodeVerdict(
            tree.gate_node_id, Verdict.YES, "the record documents death on 2023-04-03.",
            "YES - the record documents death on 2023-04-03.",
        )
    ]
    for node in tree.cause_nodes:
        if node.node_id in yes_nodes:
            text = f"YES - criteria satisfied for {node.node_id}."
            verdicts.append(
                NodeVerdict(node.node_id, Verdict.YES, f"criteria satisfied for {node.node_id}.", text)
            )
        else:
            text = "NO - not supported."
            verdicts.append(NodeVerdict(node.node_id, Verdict.NO, "not supported.", text))
        fixtures.add(build_node_request(node, events, guidelines, WINDOW), text)
    fixtures.add(build_consolidation_request(verdicts, tree), consolidation)
    return fixtures, events


# --- tree config ---


def test_shipped_tree_shape(shipped_tree):
    assert len(shipped_tree.nodes) == 10
    assert len(shipped_tree.cause_nodes) == 9
    assert shipped_tree.nodes[0].node_id == "is_deceased"
    assert shipped_tree.nodes[0].decision_class is DecisionClass.GATE
    cause_ids = [n.node_id for n in shipped_tree.cause_nodes]
    assert cause_ids == [
        "acute_mi", "sudden_cardiac_death", "heart_failure", "stroke",
        "cv_procedure", "cv_hemorrhage", "other_cv_causes", "non_cv_causes", "undetermined",
    ]


def _node(node_id, decision_class, precedence):
    template = PromptTemplate(node_id, "{{guideline}}\n{{events}}", frozenset({"guideline", "events"}))
    return ThoughtNode(node_id, node_id, template, decision_class, precedence)


def _mini_tree():
    consolidation = PromptTemplate("c", "{{verdicts}}", frozenset({"verdicts"}))
    return ThoughtTree(
        nodes=[
            _node("gate", DecisionClass.GATE, 0),
            _node("cv_a", DecisionClass.CARDIOVASCULAR_CAUSE, 1),
            _node("cv_b", DecisionClass.CARDIOVASCULAR_CAUSE, 2),
            _node("non_cv", DecisionClass.NON_CARDIOVASCULAR_CAUSE, 3),
            _node("undet", DecisionClass.UNDETERMINED_CAUSE, 4),
        ],
        gate_node_id="gate",
        consolidation_template=consolidation,
    )


def test_tree_invariants_rejected():
    consolidation = PromptTemplate("c", "{{verdicts}}", frozenset({"verdicts"}))
    with pytest.raises(AdjudicationError):
        ThoughtTree([_node("gate", DecisionClass.GATE, 0)], "gate", consolidation)
    with pytest.raises(AdjudicationError):
        ThoughtTree(
            [_node("cv", DecisionClass.CARDIOVASCULAR_CAUSE, 0), _node("gate", DecisionClass.GATE, 1)],
            "gate",
            consolidation,
        )
    with pytest.raises(AdjudicationError):
        ThoughtTree(
            [_node("gate", DecisionClass.GATE, 0), _node("cv", DecisionClass.CARDIOVASCULAR_CAUSE, 0)],
            "gate",
            consolidation,
        )
    with pytest.raises(AdjudicationError):
        ThoughtTree(
            [_node("gate", DecisionClass.GATE, 0), _node("gate", DecisionClass.GATE, 1)],
            "gate",
            consolidation,
        )


def test_adding_a_node_needs_no_engine_change(tmp_path, shipped_tree, shipped_guidelines):
    # clone the shipped config with one extra cause node
    import shutil

    import yaml

    from cvadjudicator.config import asset_path

    config_dir = tmp_path / "tree"
    shutil.copytree(asset_path("templates"), config_dir / "templates")
    with open(asset_path("tree.yaml"), encoding="utf-8") as handle:
        data = yaml.safe_load(handle)
    (config_dir / "templates" / "node_trauma.txt").write_text(
        "Was the death caused by trauma?\n{{guideline}}\n{{events}}\n"
        "First line: YES, NO, or INSUFFICIENT.\n",
        encoding="utf-8",
    )
    data["nodes"].append(
        {"id": "trauma", "display_name": "Trauma", "template": "templates/node_trauma.txt",
         "decision_class": "non_cardiovascular_cause", "precedence": 10}
    )
    config_path = config_dir / "tree.yaml"
    with open(config_path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(data, handle)
    extended = load_tree(config_path)
    assert len(extended.nodes) == len(shipped_tree.nodes) + 1

    fixtures, events = _seed_full_run(extended, shipped_guidelines, yes_nodes=("acute_mi",))
    result = adjudicate_tot(_patient(), events, extended, shipped_guidelines, ScriptedBackend(fixtures))
    baseline_fixtures, _ = _seed_full_run(shipped_tree, shipped_guidelines, yes_nodes=("acute_mi",))
    baseline = adjudicate_tot(
        _patient(), _events(), shipped_tree, shipped_guidelines, ScriptedBackend(baseline_fixtures)
    )
    assert len(result.trace) == len(baseline.trace) + 1


# --- guidelines ---


def test_guidelines_fall_back_to_full_text(shipped_guidelines):
    assert shipped_guidelines.excerpt_for("acute_mi") == shipped_guidelines.per_node["acute_mi"]
    assert shipped_guidelines.excerpt_for("not_a_node") == shipped_guidelines.full_text


def test_guidelines_empty_excerpt_is_an_error():
    with pytest.raises(AdjudicationError):
        GuidelineSet("", {}).excerpt_for("acute_mi")


# --- prompt rendering ---


def test_node_prompt_contains_excerpt_and_events(shipped_tree, shipped_guidelines):
    node = shipped_tree.cause_nodes[0]
    prompt = render_node_prompt(node, _events(), shipped_guidelines)
    assert shipped_guidelines.per_node["acute_mi"] in prompt
    assert "Myocardial Infarction" in prompt and "Death" in prompt
    assert "2023-04-01" in prompt


def test_node_prompt_empty_events_marker(shipped_tree, shipped_guidelines):
    prompt = render_node_prompt(shipped_tree.cause_nodes[0], [], shipped_guidelines)
    assert NO_EVENTS_MARKER in prompt


def test_events_block_truncates_to_most_recent_dated():
    events = [_event(f"Stroke", date(2020, 1, 1) + (date(2020, 1, 2) - date(2020, 1, 1)) * i)
              for i in range(500)]
    events.append(_event("Sepsis", None))
    full_block = render_events_block(events)
    budget = estimate_tokens(full_block) // 4
    block = render_events_block(events, token_budget=budget, truncation_limit=50)
    assert "[EVENTS TRUNCATED: showing the 50 most recent dated events of 501 extracted]" in block
    lines = block.splitlines()
    assert len(lines) == 51  # notice + 50 events
    assert "2021-05-14" in lines[1]  # day 500 of the ramp is the most recent
    assert "Sepsis" not in block  # undated events are dropped by truncation


def test_events_block_within_budget_is_untouched():
    events = [_event("Stroke", date(2023, 1, 1))]
    assert render_events_block(events, token_budget=10_000) == render_events_block(events)


# --- verdict parsing ---


@pytest.mark.parametrize(
    "text,expected",
    [
        ("YES - death within 14 days of verified MI", (Verdict.YES, "death within 14 days of verified MI")),
        ("no", (Verdict.NO, "")),
        ("Insufficient: record too sparse", (Verdict.INSUFFICIENT, "record too sparse")),
        ("NO, the criteria are unmet", (Verdict.NO, "the criteria are unmet")),
        ("  yes — autopsy verified", (Verdict.YES, "autopsy verified")),
        ("definitely maybe", None),
        ("", None),
    ],
)
def test_parse_verdict(text, expected):
    assert parse_verdict(text) == expected


def test_yes_verdict_requires_rationale():
    with pytest.raises(ValueError):
        NodeVerdict("n", Verdict.YES, "", "YES")


def test_evaluate_node_parses_and_degrades(shipped_tree, shipped_guidelines):
    node = shipped_tree.cause_nodes[0]
    events = _events()
    request = build_node_request(node, events, shipped_guidelines, WINDOW)

    fixtures = ScriptedFixtures()
    fixtures.add(request, "YES — death within 14 days of verified MI")
    verdict = evaluate_node(node, events, shipped_guidelines, ScriptedBackend(fixtures))
    assert verdict.verdict is Verdict.YES
    assert verdict.rationale == "death within 14 days of verified MI"

    fixtures = ScriptedFixtures()
    fixtures.add(request, "no")
    verdict = evaluate_node(node, events, shipped_guidelines, ScriptedBackend(fixtures))
    assert verdict.verdict is Verdict.NO and verdict.rationale == ""


def test_evaluate_node_gibberish_twice_becomes_insufficient(shipped_tree, shipped_guidelines):
    node = shipped_tree.cause_nodes[0]
    events = _events()
    request = build_node_request(node, events, shipped_guidelines, WINDOW)
    fixtures = ScriptedFixtures()
    fixtures.add(request, "beep boop")
    repair = LlmRequest(
        messages=[
            *request.messages,
            Message("assistant", "beep boop"),
            Message(
                "user",
                "Answer again. The first line must be exactly one of YES, NO, or "
                "INSUFFICIENT, followed by your rationale.",
            ),
        ],
        max_output_tokens=request.max_output_tokens,
        tag=request.tag,
    )
    fixtures.add(repair, "boop beep")
    backend = ScriptedBackend(fixtures)
    verdict = evaluate_node(node, events, shipped_guidelines, backend)
    assert verdict.verdict is Verdict.INSUFFICIENT
    assert "beep boop" in verdict.raw_response and "boop beep" in verdict.raw_response
    assert len(backend.audit) == 2


def test_yes_without_rationale_gets_placeholder(shipped_tree, shipped_guidelines):
    node = shipped_tree.cause_nodes[0]
    events = _events()
    fixtures = ScriptedFixtures()
    fixtures.add(build_node_request(node, events, shipped_guidelines, WINDOW), "YES")
    verdict = evaluate_node(node, events, shipped_guidelines, ScriptedBackend(fixtures))
    assert verdict.verdict is Verdict.YES and verdict.rationale == "(no rationale given)"


# --- the tree engine ---


def test_gate_no_short_circuits_with_one_call(shipped_tree, shipped_guidelines):
    events = _events()
    fixtures = ScriptedFixtures()
    fixtures.add(
        build_node_request(shipped_tree.gate_node, events, shipped_guidelines, WINDOW),
        "NO - routine outpatient care only.",
    )
    backend = ScriptedBackend(fixtures)
    result = adjudicate_tot(_patient(), events, shipped_tree, shipped_guidelines, backend)
    assert result.decision is Decision.NOT_DECEASED
    assert result.cause_node_id is None
    assert len(result.trace) == 1 and result.trace.consolidation is None
    assert len(backend.audit) == 1
    assert result.method is Method.TREE_OF_THOUGHTS


def test_gate_insufficient_degrades_to_undetermined(shipped_tree, shipped_guidelines):
    events = _events()
    fixtures = ScriptedFixtures()
    fixtures.add(
        build_node_request(shipped_tree.gate_node, events, shipped_guidelines, WINDOW),
        "INSUFFICIENT - vital status is not documented.",
    )
    backend = ScriptedBackend(fixtures)
    result = adjudicate_tot(_patient(), events, shipped_tree, shipped_guidelines, backend)
    assert result.decision is Decision.UNDETERMINED_DEATH
    assert len(result.trace) == 1 and len(backend.audit) == 1


def test_full_run_trace_in_tree_order(shipped_tree, shipped_guidelines):
    fixtures, events = _seed_full_run(shipped_tree, shipped_guidelines, yes_nodes=("acute_mi",))
    backend = ScriptedBackend(fixtures)
    result = adjudicate_tot(_patient(), events, shipped_tree, shipped_guidelines, backend)
    assert result.decision is Decision.CARDIOVASCULAR_DEATH
    assert result.cause_node_id == "acute_mi"
    assert [v.node_id for v in result.trace.verdicts] == [n.node_id for n in shipped_tree.nodes]
    assert result.trace.consolidation is not None
    assert len(result.trace) == len(shipped_tree.nodes) + 1
    assert len(backend.audit) == len(shipped_tree.nodes) + 1
    assert result.reasoning == "Final narrative."
    assert set(result.trace.prompts) == {n.node_id for n in shipped_tree.nodes}


def test_conflicting_yes_verdicts_resolved_by_precedence(shipped_tree, shipped_guidelines):
    fixtures, events = _seed_full_run(
        shipped_tree, shipped_guidelines, yes_nodes=("acute_mi", "non_cv_causes")
    )
    result = adjudicate_tot(
        _patient(), events, shipped_tree, shipped_guidelines, ScriptedBackend(fixtures)
    )
    assert result.decision is Decision.CARDIOVASCULAR_DEATH
    assert result.cause_node_id == "acute_mi"
    assert "[CONFLICT]" in result.reasoning and "non_cv_causes" in result.reasoning


def test_gateway_failure_mid_tree_degrades_with_partial_trace(shipped_tree, shipped_guidelines):
    events = _events()
    fixtures = ScriptedFixtures()
    fixtures.add(
        build_node_request(shipped_tree.gate_node, events, shipped_guidelines, WINDOW),
        "YES - death documented.",
    )
    fixtures.add(
        build_node_request(shipped_tree.cause_nodes[0], events, shipped_guidelines, WINDOW),
        "NO - unsupported.",
    )
    # second cause node has no fixture: the gateway fails there
    result = adjudicate_tot(
        _patient(), events, shipped_tree, shipped_guidelines, ScriptedBackend(fixtures)
    )
    assert result.decision is Decision.UNDETERMINED_DEATH
    assert [v.node_id for v in result.trace.verdicts] == ["is_deceased", "acute_mi"]
    assert result.reasoning.startswith("[ERROR]")


def test_consolidation_failure_uses_fallback(shipped_tree, shipped_guidelines):
    fixtures, events = _seed_full_run(shipped_tree, shipped_guidelines, yes_nodes=("stroke",))
    # remove only the consolidation fixture
    verdict_fps = {
        fp for fp in fixtures.responses if fp.startswith("tot:") and not fp.startswith("tot:consolidation")
    }
    fixtures.responses = {fp: fixtures.responses[fp] for fp in verdict_fps}
    result = adjudicate_tot(
        _patient(), events, shipped_tree, shipped_guidelines, ScriptedBackend(fixtures)
    )
    assert result.decision is Decision.CARDIOVASCULAR_DEATH  # resolution does not need the narrative
    assert result.reasoning.startswith("[FALLBACK]")
    assert result.trace.consolidation.fallback


def test_consolidation_prompt_lists_every_verdict(shipped_tree):
    verdicts = [NodeVerdict(n.node_id, Verdict.NO, "not supported", "NO") for n in shipped_tree.nodes]
    prompt = render_consolidation_prompt(verdicts, shipped_tree)
    for node in shipped_tree.nodes:
        assert f"{node.display_name} [{node.node_id}]: NO" in prompt


def test_consolidate_requires_complete_trace(shipped_tree):
    from cvadjudicator.adjudication import ThoughtTrace, consolidate

    trace = ThoughtTrace(verdicts=[NodeVerdict("is_deceased", Verdict.YES, "r", "YES r")])
    with pytest.raises(AdjudicationError):
        consolidate(trace, shipped_tree, ScriptedBackend(ScriptedFixtures()))


# --- resolution rule ---


def test_resolution_examples(shipped_tree):
    from cvadjudicator.adjudication import resolve_decision

    all_no = {n.node_id: Verdict.NO for n in shipped_tree.cause_nodes}
    assert resolve_decision(all_no, shipped_tree) == (Decision.UNDETERMINED_DEATH, None, [])

    one_yes = dict(all_no, stroke=Verdict.YES)
    assert resolve_decision(one_yes, shipped_tree) == (Decision.CARDIOVASCULAR_DEATH, "stroke", [])

    non_cv_only = dict(all_no, non_cv_causes=Verdict.YES)
    decision, cause, losers = resolve_decision(non_cv_only, shipped_tree)
    assert decision is Decision.NON_CARDIOVASCULAR_DEATH and cause == "non_cv_causes"

    undetermined_only = dict(all_no, undetermined=Verdict.YES)
    assert resolve_decision(undetermined_only, shipped_tree)[0] is Decision.UNDETERMINED_DEATH


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(list(Verdict)), min_size=9, max_size=9))
def test_resolution_is_pure_and_class_consistent(verdicts):
    from cvadjudicator.adjudication import resolve_decision

    tree = _mini_tree()
    # reuse the 9-long list over the 4 cause nodes deterministically
    table = {node.node_id: verdicts[i] for i, node in enumerate(tree.cause_nodes)}
    first = resolve_decision(table, tree)
    assert first == resolve_decision(table, tree)
    decision, cause, losers = first
    yes_nodes = [n for n in tree.cause_nodes if table[n.node_id] is Verdict.YES]
    if not yes_nodes:
        assert decision is Decision.UNDETERMINED_DEATH and cause is None
    else:
        chosen = min(yes_nodes, key=lambda n: n.precedence)
        assert cause == chosen.node_id
        assert sorted(losers) == sorted(n.node_id for n in yes_nodes if n is not chosen)
        if decision is Decision.CARDIOVASCULAR_DEATH:
            assert chosen.decision_class is DecisionClass.CARDIOVASCULAR_CAUSE


@settings(max_examples=30, deadline=None)
@given(
    st.dictionaries(
        st.sampled_from(["cv_a", "cv_b", "non_cv", "undet"]),
        st.sampled_from(["YES - because.", "NO - nope.", "INSUFFICIENT - sparse."]),
        min_size=4,
        max_size=4,
    )
)
def test_engine_outputs_satisfy_result_invariants(responses):
    tree = _mini_tree()
    guidelines = GuidelineSet("full guidance text", {})
    events = _events()
    fixtures = ScriptedFixtures()
    fixtures.add(build_node_request(tree.gate_node, events, guidelines, WINDOW), "YES - dead.")
    verdicts = [NodeVerdict("gate", Verdict.YES, "dead.", "YES - dead.")]
    for node in tree.cause_nodes:
        text = responses[node.node_id]
        fixtures.add(build_node_request(node, events, guidelines, WINDOW), text)
        parsed, rationale = parse_verdict(text)
        verdicts.append(NodeVerdict(node.node_id, parsed, rationale, text))
    fixtures.add(build_consolidation_request(verdicts, tree), "Narrative.")
    result = adjudicate_tot(_patient(), events, tree, guidelines, ScriptedBackend(fixtures))
    assert [v.node_id for v in result.trace.verdicts] == [n.node_id for n in tree.nodes]
    if result.decision is Decision.CARDIOVASCULAR_DEATH:
        node = next(n for n in tree.nodes if n.node_id == result.cause_node_id)
        assert node.decision_class is DecisionClass.CARDIOVASCULAR_CAUSE
    if result.decision is Decision.NOT_DECEASED:
        assert len(result.trace.verdicts) == 1


# --- baseline ---


def _baseline_patient(n_docs):
    docs = [
        ClinicalDocument(f"d{i}", "p9", f"Document number {i}. It has two sentences.")
        for i in range(1, n_docs + 1)
    ]
    return PatientRecord("p9", docs)


def _seed_baseline(patient, guidelines, summarize_template, baseline_template, decision_text):
    fixtures = ScriptedFixtures()
    labeled = []
    for doc in patient.documents:
        (request,) = build_summary_requests(doc, summarize_template, WINDOW)
        summary = f"Summary of {doc.doc_id}."
        fixtures.add(request, summary)
        labeled.append((doc.doc_id, summary))
    fixtures.add(
        build_baseline_decision_request(combine_summaries(labeled), guidelines, baseline_template),
        decision_text,
    )
    return fixtures


def test_baseline_one_document_two_calls(
    shipped_guidelines, summarize_template, baseline_template
):
    patient = _baseline_patient(1)
    fixtures = _seed_baseline(
        patient, shipped_guidelines, summarize_template, baseline_template,
        "DECISION: CARDIOVASCULAR_DEATH\nBecause the summary says so.",
    )
    backend = ScriptedBackend(fixtures)
    result = adjudicate_baseline(
        patient, shipped_guidelines, backend, summarize_template, baseline_template
    )
    assert result.decision is Decision.CARDIOVASCULAR_DEATH
    assert result.method is Method.SUMMARIZER_ADJUDICATOR
    assert len(backend.audit) == 2


def test_baseline_three_documents_four_calls(
    shipped_guidelines, summarize_template, baseline_template
):
    patient = _baseline_patient(3)
    fixtures = _seed_baseline(
        patient, shipped_guidelines, summarize_template, baseline_template,
        "DECISION: NOT_DECEASED\nNo death anywhere.",
    )
    backend = ScriptedBackend(fixtures)
    result = adjudicate_baseline(
        patient, shipped_guidelines, backend, summarize_template, baseline_template
    )
    assert result.decision is Decision.NOT_DECEASED
    assert len(backend.audit) >= 4


def test_baseline_missing_decision_line_degrades(
    shipped_guidelines, summarize_template, baseline_template
):
    patient = _baseline_patient(1)
    fixtures = _seed_baseline(
        patient, shipped_guidelines, summarize_template, baseline_template,
        "I find this case fascinating but cannot commit.",
    )
    result = adjudicate_baseline(
        patient, shipped_guidelines, ScriptedBackend(fixtures), summarize_template, baseline_template
    )
    assert result.decision is Decision.UNDETERMINED_DEATH
    assert "[PARSE FAILURE]" in result.reasoning


def test_baseline_gateway_failure_degrades(
    shipped_guidelines, summarize_template, baseline_template
):
    patient = _baseline_patient(2)
    result = adjudicate_baseline(
        patient, shipped_guidelines, ScriptedBackend(ScriptedFixtures()),
        summarize_template, baseline_template,
    )
    assert result.decision is Decision.UNDETERMINED_DEATH
    assert result.reasoning.startswith("[ERROR]")


@pytest.mark.parametrize(
    "text,expected",
    [
        ("DECISION: CARDIOVASCULAR_DEATH\nrest", Decision.CARDIOVASCULAR_DEATH),
        ("decision: non_cardiovascular_death", Decision.NON_CARDIOVASCULAR_DEATH),
        ("NOT_DECEASED", Decision.NOT_DECEASED),
        ("After review: UNDETERMINED_DEATH seems right", Decision.UNDETERMINED_DEATH),
        ("no decision token here", None),
    ],
)
def test_parse_decision_line(text, expected):
    assert parse_decision_line(text) == expected
