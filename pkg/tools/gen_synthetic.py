#!/usr/bin/env python3
"""Regenerate the bundled synthetic corpus, gold files, and scripted fixtures.

The scripted backend resolves requests by prompt fingerprint, so the fixture
files must be rebuilt with this script whenever a packaged template, the
verbalizer, the tree config, or the guideline text changes:

    python3 tools/gen_synthetic.py

The script drives the real pipeline code (request builders, extraction,
adjudication, scoring) while crafting each model response, then verifies that
the pipeline reproduces every expected decision before writing anything.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

from cvadjudicator.adjudication import (
    Method,
    adjudicate_baseline,
    adjudicate_tot,
    build_baseline_decision_request,
    build_consolidation_request,
    build_node_request,
    build_summary_requests,
    combine_summaries,
    evaluate_node,
    load_guidelines,
    load_tree,
)
from cvadjudicator.cleart import (
    CRITERION_KEYS,
    build_evaluator_request,
    build_repair_request,
    load_rubric,
    score_reasoning,
)
from cvadjudicator.config import asset_path
from cvadjudicator.corpus import load_corpus
from cvadjudicator.extraction import (
    build_extraction_requests,
    dedupe_events,
    extract_events,
    load_template,
)
from cvadjudicator.gateway import ScriptedBackend, ScriptedFixtures
from cvadjudicator.preprocess import load_abbreviations, segment_sentences

WINDOW = 8000
OUT_DIR = Path(__file__).resolve().parents[1] / "tests" / "data" / "synthetic"

# Each extraction row is (sentence_ref, reported_name, negated, date_string).
# sentence_ref: int = quote that sentence exactly; ("contain", int, str) =
# quote a substring of that sentence; ("miss", str) = quote text absent from
# the document (kept with a flagged evidence index).
SCENARIOS = [
    {
        "patient_id": "p001",
        "gold_decision": "cardiovascular_death",
        "expected_tot": ("cardiovascular_death", "acute_mi"),
        "expected_baseline": "cardiovascular_death",
        "documents": [
            {
                "doc_id": "d-p001-1",
                "doc_type": "physician_note",
                "doc_date": "2023-03-30",
                "text": (
                    "Admitted with crushing substernal chest pain. "
                    "ECG showed STEMI and troponin was elevated. "
                    "STEMI was confirmed by the interventional team. "
                    "Emergent cardiac catheterization was performed on 2023-03-30."
                ),
                "rows": [
                    (1, "STEMI", False, "2023-03-30"),
                    (2, "STEMI", False, "2023-03-30"),
                    (3, "Cardiac Catheterization", False, "03/30/2023"),
                ],
                "gold": [
                    ("Myocardial Infarction", "affirmed", "2023-03-30"),
                    ("Cardiac Catheterization", "affirmed", "2023-03-30"),
                ],
                "summary": (
                    "STEMI verified by ECG and troponin on 2023-03-30; emergent "
                    "cardiac catheterization performed the same day."
                ),
            },
            {
                "doc_id": "d-p001-2",
                "doc_type": "discharge_summary",
                "doc_date": "2023-04-03",
                "text": (
                    "Patient suffered an acute myocardial infarction earlier this admission. "
                    "Patient expired on 2023-04-03. "
                    "No evidence of stroke was found on imaging."
                ),
                "rows": [
                    (0, "Acute Myocardial Infarction", False, None),
                    (1, "Expired", False, "2023-04-03"),
                    (2, "Stroke", True, None),
                ],
                "gold": [
                    ("Myocardial Infarction", "affirmed", None),
                    ("Death", "affirmed", "2023-04-03"),
                    ("Stroke", "negated", None),
                ],
                "summary": (
                    "Death on 2023-04-03 four days after a verified acute MI; "
                    "stroke excluded on imaging."
                ),
            },
        ],
        "tot": {
            "is_deceased": "YES - the record states the patient expired on 2023-04-03.",
            "acute_mi": (
                "YES - death occurred on 2023-04-03, four days after a STEMI verified "
                "by ECG and biomarkers on 2023-03-30."
            ),
            "non_cv_causes": "NO - no non-cardiovascular cause is documented.",
        },
        "consolidation": (
            "The participant died on 2023-04-03, four days after an acute myocardial "
            "infarction verified by ECG changes and biomarker elevation on 2023-03-30. "
            "Death within 14 days of a verified infarction meets the acute MI criterion; "
            "stroke was explicitly excluded and no competing cause is documented. "
            "The death is classified as cardiovascular, due to acute myocardial infarction."
        ),
        "baseline_response": (
            "DECISION: CARDIOVASCULAR_DEATH\n"
            "Death followed a verified acute MI by four days with no competing cause."
        ),
        "cleart": {
            "tree_of_thoughts": {"scores": [1, 1, 1, 1, 1, 1]},
            "summarizer_adjudicator": {"scores": [1, 1, 0, 1, 0, 0]},
        },
    },
    {
        "patient_id": "p002",
        "gold_decision": "not_deceased",
        "expected_tot": ("not_deceased", None),
        "expected_baseline": "not_deceased",
        "documents": [
            {
                "doc_id": "d-p002-1",
                "doc_type": "physician_note",
                "doc_date": "2023-01-15",
                "text": (
                    "Routine follow-up visit. "
                    "Chronic stable heart failure managed with medication. "
                    "Continues aspirin daily."
                ),
                "rows": [
                    (1, "Heart Failure", False, None),
                    (2, "Aspirin", False, None),
                ],
                "gold": [
                    ("Heart Failure", "affirmed", None),
                    ("Antiplatelet Therapy", "affirmed", None),
                ],
                "summary": "Routine visit; chronic stable heart failure on medication, alive.",
            },
            {
                "doc_id": "d-p002-2",
                "doc_type": "lab_report",
                "doc_date": "2023-02-20",
                "text": (
                    "Laboratory results reviewed. "
                    "Renal function within normal limits. "
                    "No acute findings reported."
                ),
                "rows": [],
                "gold": [],
                "summary": "Laboratory follow-up with normal renal function; no acute findings.",
            },
        ],
        "tot": {
            "is_deceased": (
                "NO - the record documents routine outpatient care and normal "
                "laboratory follow-up with no mention of death."
            ),
        },
        "consolidation": None,
        "baseline_response": (
            "DECISION: NOT_DECEASED\n"
            "Both documents describe routine outpatient care with no death documentation."
        ),
        "cleart": {
            "tree_of_thoughts": {"scores": [1, 1, 0, 1, 1, 0]},
            "summarizer_adjudicator": {"scores": [1, 1, 0, 1, 0, 1]},
        },
    },
    {
        "patient_id": "p003",
        "gold_decision": "non_cardiovascular_death",
        "expected_tot": ("non_cardiovascular_death", "non_cv_causes"),
        "expected_baseline": "non_cardiovascular_death",
        "documents": [
            {
                "doc_id": "d-p003-1",
                "doc_type": "physician_note",
                "doc_date": "2023-05-01",
                "text": (
                    "Admitted from a nursing facility with fever and hypotension. "
                    "Blood cultures grew gram-negative rods consistent with septicemia. "
                    "Chest imaging showed no pneumonia."
                ),
                # negation error on purpose: gold marks pneumonia negated
                "rows": [
                    (1, "Septicemia", False, "2023-05-01"),
                    (2, "Pneumonia", False, None),
                ],
                "gold": [
                    ("Sepsis", "affirmed", "2023-05-01"),
                    ("Pneumonia", "negated", None),
                ],
                "summary": "Septicemia from blood cultures on 2023-05-01; pneumonia excluded.",
            },
            {
                "doc_id": "d-p003-2",
                "doc_type": "physician_note",
                "doc_date": "2023-05-03",
                "text": (
                    "Despite broad antibiotics the patient progressed to septic shock. "
                    "Vasopressors were initiated in the intensive care unit."
                ),
                "rows": [(0, "Septic Shock", False, "2023-05-03")],
                "gold": [("Sepsis", "affirmed", "2023-05-03")],
                "summary": "Progression to septic shock on 2023-05-03 requiring vasopressors.",
            },
            {
                "doc_id": "d-p003-3",
                "doc_type": "discharge_summary",
                "doc_date": "2023-05-05",
                "text": (
                    "The patient died on 2023-05-05 from overwhelming sepsis. "
                    "Family declined autopsy."
                ),
                "rows": [
                    (0, "Died", False, "2023-05-05"),
                    (0, "Sepsis", False, "2023-05-05"),
                ],
                "gold": [
                    ("Death", "affirmed", "2023-05-05"),
                    ("Sepsis", "affirmed", "2023-05-05"),
                ],
                "summary": "Death on 2023-05-05 attributed to overwhelming sepsis; no autopsy.",
            },
        ],
        "tot": {
            "is_deceased": "YES - the discharge summary records death on 2023-05-05.",
            "non_cv_causes": (
                "YES - overwhelming sepsis is documented as the proximate cause, with "
                "septic shock progression from 2023-05-01 to 2023-05-05."
            ),
        },
        "consolidation": (
            "The participant died on 2023-05-05 after a documented progression from "
            "septicemia to septic shock over four days. Sepsis is the documented "
            "proximate cause and no cardiovascular mechanism is supported. The death "
            "is classified as non-cardiovascular."
        ),
        "baseline_response": (
            "DECISION: NON_CARDIOVASCULAR_DEATH\n"
            "Documented sepsis progression ending in death on 2023-05-05."
        ),
        "cleart": {
            "tree_of_thoughts": {"scores": [1, 1, 1, 1, 1, 1]},
            "summarizer_adjudicator": {"scores": [1, 1, 1, 1, 0, 0]},
        },
    },
    {
        "patient_id": "p004",
        "gold_decision": "cardiovascular_death",
        "expected_tot": ("cardiovascular_death", "sudden_cardiac_death"),
        "expected_baseline": "cardiovascular_death",
        "documents": [
            {
                "doc_id": "d-p004-1",
                "doc_type": "physician_note",
                "doc_date": "2022-08-10",
                "text": (
                    "Seen in clinic and reported feeling well. "
                    "Examination was unremarkable. "
                    "Continues clopidogrel after last year's stent placement."
                ),
                # the antiplatelet extraction is a planned false positive
                "rows": [
                    (2, "Clopidogrel", False, None),
                    (2, "Stent Placement", False, None),
                ],
                "gold": [("Percutaneous Coronary Intervention", "affirmed", None)],
                "summary": "Well at clinic on 2022-08-10; on clopidogrel after prior stenting.",
            },
            {
                "doc_id": "d-p004-2",
                "doc_type": "other",
                "doc_date": "2022-08-12",
                "text": (
                    "Found unresponsive at home on 2022-08-12 within hours of being seen well. "
                    "Resuscitation was unsuccessful and the patient was pronounced dead. "
                    "Telemetry from emergency services recorded ventricular fibrillation."
                ),
                "rows": [
                    (1, "Pronounced Dead", False, "2022-08-12"),
                    (2, "Ventricular Fibrillation", False, "2022-08-12"),
                ],
                "gold": [
                    ("Death", "affirmed", "2022-08-12"),
                    ("Ventricular Arrhythmia", "affirmed", "2022-08-12"),
                ],
                "summary": (
                    "Unexpected death on 2022-08-12 within hours of being seen well; "
                    "ventricular fibrillation recorded during resuscitation."
                ),
            },
        ],
        "tot": {
            "is_deceased": "YES - pronounced dead on 2022-08-12 after failed resuscitation.",
            "sudden_cardiac_death": (
                "YES - unexpected death within hours of stable observation with "
                "documented ventricular fibrillation meets the sudden cardiac death criterion."
            ),
        },
        "consolidation": (
            "The participant was well at clinic on 2022-08-10 and was found unresponsive "
            "two days later, dying within hours of last stable observation with "
            "ventricular fibrillation documented during resuscitation. This pattern "
            "meets the sudden cardiac death criterion; the death is cardiovascular."
        ),
        "baseline_response": (
            "DECISION: CARDIOVASCULAR_DEATH\n"
            "Sudden unexpected death with documented ventricular fibrillation."
        ),
        "cleart": {
            "tree_of_thoughts": {"scores": [1, 1, 1, 1, 0, 1]},
            "summarizer_adjudicator": {"scores": [0, 1, 0, 1, 0, 0]},
        },
    },
    {
        "patient_id": "p005",
        "gold_decision": "cardiovascular_death",
        "expected_tot": ("cardiovascular_death", "stroke"),
        "expected_baseline": "undetermined_death",
        "documents": [
            {
                "doc_id": "d-p005-1",
                "doc_type": "imaging_report",
                "doc_date": "2022-04-01",
                "text": (
                    "CT of the head demonstrates a large ischemic stroke in the left "
                    "middle cerebral artery territory. "
                    "Midline shift is present."
                ),
                "rows": [(0, "Ischemic Stroke", False, "04/01/2022")],
                "gold": [("Stroke", "affirmed", "2022-04-01")],
                "summary": "Large ischemic stroke with midline shift on CT, 2022-04-01.",
            },
            {
                "doc_id": "d-p005-2",
                "doc_type": "discharge_summary",
                "doc_date": "2022-04-02",
                "text": (
                    "The patient deteriorated from cerebral edema and expired on April 2, 2022. "
                    "Comfort measures were in place."
                ),
                "rows": [(0, "Expired", False, "April 2, 2022")],
                "gold": [("Death", "affirmed", "2022-04-02")],
                "summary": "Death on 2022-04-02 from cerebral edema; comfort care.",
            },
        ],
        "tot": {
            "is_deceased": "YES - expired on 2022-04-02 per the discharge summary.",
            "stroke": (
                "YES - death one day after an imaging-confirmed ischemic stroke, from "
                "cerebral edema, a direct stroke complication."
            ),
        },
        "consolidation": (
            "An imaging-confirmed ischemic stroke on 2022-04-01 was followed by death "
            "from cerebral edema on 2022-04-02, a direct stroke complication within the "
            "30-day window. The death is classified as cardiovascular, due to stroke."
        ),
        "baseline_response": (
            "DECISION: UNDETERMINED_DEATH\n"
            "The summaries mention a stroke and a death but the causal chain is unclear."
        ),
        "cleart": {
            "tree_of_thoughts": {"scores": [0, 1, 1, 1, 1, 1]},
            "summarizer_adjudicator": {"scores": [0, 0, 0, 1, 0, 0]},
        },
    },
    {
        "patient_id": "p006",
        "gold_decision": "cardiovascular_death",
        "expected_tot": ("cardiovascular_death", "heart_failure"),
        "expected_baseline": "cardiovascular_death",
        "documents": [
            {
                "doc_id": "d-p006-1",
                "doc_type": "physician_note",
                "doc_date": "2023-01-20",
                "text": (
                    "Admitted with decompensated heart failure and volume overload. "
                    "Diuretics were escalated without improvement."
                ),
                "rows": [(0, "Decompensated Heart Failure", False, "2023-01-20")],
                "gold": [("Heart Failure", "affirmed", "2023-01-20")],
                "summary": "Decompensated heart failure admission 2023-01-20; refractory to diuretics.",
            },
            {
                "doc_id": "d-p006-2",
                "doc_type": "lab_report",
                "doc_date": "2023-02-10",
                "text": (
                    "Laboratory studies show worsening renal failure attributed to poor "
                    "cardiac output. "
                    "Natriuretic peptide remains markedly elevated. "
                    "Repeat testing two days prior showed the same pattern of cardiac strain."
                ),
                # renal failure is a planned miss (gold-only); the date is relative
                "rows": [(2, "Cardiac Failure", False, "two days prior")],
                "gold": [
                    ("Renal Failure", "affirmed", None),
                    ("Heart Failure", "affirmed", "2023-02-08"),
                ],
                "summary": "Worsening renal function from poor cardiac output; peptides elevated.",
            },
            {
                "doc_id": "d-p006-3",
                "doc_type": "discharge_summary",
                "doc_date": "2023-02-15",
                "text": (
                    "The patient was transitioned to comfort care for refractory heart failure. "
                    "Death occurred on 2023-02-15. "
                    "Autopsy was not performed."
                ),
                "rows": [
                    (0, "Heart Failure", False, None),
                    (1, "Death", False, "2023-02-15"),
                ],
                "gold": [
                    ("Heart Failure", "affirmed", None),
                    ("Death", "affirmed", "2023-02-15"),
                ],
                "summary": "Comfort care for refractory heart failure; death on 2023-02-15.",
            },
        ],
        "tot": {
            "is_deceased": "YES - death occurred on 2023-02-15.",
            "heart_failure": (
                "YES - progressive decompensation from 2023-01-20 despite escalating "
                "therapy, ending in comfort care for refractory heart failure."
            ),
        },
        "consolidation": (
            "The record documents progressive decompensated heart failure from "
            "2023-01-20, refractory to escalating therapy, with death under comfort "
            "care on 2023-02-15. The death is classified as cardiovascular, due to "
            "heart failure."
        ),
        "baseline_response": (
            "DECISION: CARDIOVASCULAR_DEATH\n"
            "Refractory heart failure with death under comfort care."
        ),
        "cleart": {
            "tree_of_thoughts": {"scores": [1, 1, 1, 1, 0, 0]},
            "summarizer_adjudicator": {"scores": [1, 1, 0, 1, 1, 0]},
        },
    },
    {
        "patient_id": "p007",
        "gold_decision": "cardiovascular_death",
        "expected_tot": ("undetermined_death", "undetermined"),
        "expected_baseline": "undetermined_death",
        "documents": [
            {
                "doc_id": "d-p007-1",
                "doc_type": "physician_note",
                "doc_date": "2021-06-20",
                "text": (
                    "Telephone note from the participant's family. "
                    "They report the participant died at home in June 2021. "
                    "No clinical details were available."
                ),
                "rows": [(1, "Died", False, "2021-06")],
                "gold": [("Death", "affirmed", "2021-06-01")],
                "summary": "Family-reported death at home in June 2021; no clinical details.",
            },
            {
                "doc_id": "d-p007-2",
                "doc_type": "other",
                "doc_date": "2021-07-15",
                "text": (
                    "Records were requested from the outside facility. "
                    "No additional documentation was received."
                ),
                "rows": [],
                "gold": [],
                "summary": "Outside records requested but never received.",
            },
        ],
        "tot": {
            "is_deceased": "YES - the family reported the participant died at home in June 2021.",
            "undetermined": (
                "YES - death is established only second-hand with no clinical findings, "
                "so no specific mechanism can be supported."
            ),
        },
        "consolidation": (
            "Death in June 2021 is established by family report, but no clinical "
            "documentation of the terminal event was ever received. No specific "
            "mechanism can be supported, so the cause of death is undetermined."
        ),
        "baseline_response": (
            "DECISION: UNDETERMINED_DEATH\n"
            "A death is reported but the record contains no adjudicable detail."
        ),
        "cleart": {
            "tree_of_thoughts": {"scores": [0, 1, 0, 1, 0, 0]},
            "summarizer_adjudicator": {"scores": [0, 1, 0, 0, 0, 0]},
        },
    },
    {
        "patient_id": "p008",
        "gold_decision": "non_cardiovascular_death",
        "expected_tot": ("cardiovascular_death", "acute_mi"),
        "expected_baseline": "cardiovascular_death",
        "documents": [
            {
                "doc_id": "d-p008-1",
                "doc_type": "physician_note",
                "doc_date": "2023-07-10",
                "text": (
                    "Admitted with pneumonia that progressed to septic shock. "
                    "Troponin rose and ECG changes met criteria for NSTEMI on 2023-07-11. "
                    "The team treated both processes aggressively."
                ),
                "rows": [
                    (0, "Pneumonia", False, "2023-07-10"),
                    (0, "Septic Shock", False, "2023-07-10"),
                    (1, "NSTEMI", False, "2023-07-11"),
                ],
                "gold": [
                    ("Pneumonia", "affirmed", "2023-07-10"),
                    ("Sepsis", "affirmed", "2023-07-10"),
                    ("Myocardial Infarction", "affirmed", "2023-07-11"),
                ],
                "summary": (
                    "Pneumonia with septic shock from 2023-07-10 and a concurrent NSTEMI "
                    "on 2023-07-11."
                ),
            },
            {
                "doc_id": "d-p008-2",
                "doc_type": "discharge_summary",
                "doc_date": "2023-07-14",
                "text": (
                    "The patient expired on 2023-07-14 with multiorgan failure. "
                    "The primary team attributed death to sepsis with a contributing "
                    "myocardial infarction."
                ),
                "rows": [
                    (0, "Expired", False, "2023-07-14"),
                    (1, "Myocardial Infarction", False, None),
                    (1, "Sepsis", False, None),
                ],
                "gold": [
                    ("Death", "affirmed", "2023-07-14"),
                    ("Myocardial Infarction", "affirmed", None),
                    ("Sepsis", "affirmed", None),
                ],
                "summary": (
                    "Death on 2023-07-14 with multiorgan failure; primary team favored "
                    "sepsis with contributing MI."
                ),
            },
        ],
        "tot": {
            "is_deceased": "YES - expired on 2023-07-14.",
            "acute_mi": (
                "YES - death on 2023-07-14 occurred three days after an NSTEMI verified "
                "by biomarkers and ECG on 2023-07-11."
            ),
            "non_cv_causes": (
                "YES - the primary team documented sepsis as the leading cause of the "
                "multiorgan failure that preceded death."
            ),
        },
        "consolidation": (
            "Death on 2023-07-14 followed both a verified NSTEMI on 2023-07-11 and "
            "progressive septic shock. Both mechanisms are supported by the record; "
            "under the committee hierarchy a verified infarction within 14 days takes "
            "precedence, so the death is classified as cardiovascular."
        ),
        "baseline_response": (
            "DECISION: CARDIOVASCULAR_DEATH\n"
            "A verified NSTEMI preceded death by three days."
        ),
        "cleart": {
            "tree_of_thoughts": {"scores": [1, 1, 1, 0, 1, 1]},
            "summarizer_adjudicator": {"scores": [1, 0, 0, 0, 0, 1]},
        },
    },
    {
        "patient_id": "p009",
        "gold_decision": "non_cardiovascular_death",
        "expected_tot": ("non_cardiovascular_death", "non_cv_causes"),
        "expected_baseline": "cardiovascular_death",
        "documents": [
            {
                "doc_id": "d-p009-1",
                "doc_type": "physician_note",
                "doc_date": "2022-11-05",
                "text": (
                    "Oncology follow-up for metastatic disease with progression on therapy. "
                    "Goals of care were discussed at length."
                ),
                # date omitted by the model on purpose: gold carries 2022-11-05
                "rows": [(0, "Metastatic Disease", False, None)],
                "gold": [("Cancer", "affirmed", "2022-11-05")],
                "summary": "Metastatic cancer progressing on therapy; goals of care discussed.",
            },
            {
                "doc_id": "d-p009-2",
                "doc_type": "discharge_summary",
                "doc_date": "2022-12-01",
                "text": (
                    "The patient died on 2022-12-01 under hospice care from progressive "
                    "malignancy. "
                    "No cardiac symptoms were documented."
                ),
                "rows": [
                    (0, "Died", False, "2022-12-01"),
                    (0, "Malignancy", False, "2022-12-01"),
                ],
                "gold": [
                    ("Death", "affirmed", "2022-12-01"),
                    ("Cancer", "affirmed", "2022-12-01"),
                ],
                "summary": "Death under hospice on 2022-12-01 from progressive malignancy.",
            },
        ],
        "tot": {
            "is_deceased": "YES - died on 2022-12-01 under hospice care.",
            "non_cv_causes": (
                "YES - progressive metastatic malignancy is documented as the proximate "
                "cause, with no cardiac symptoms recorded."
            ),
        },
        "consolidation": (
            "The participant died under hospice care on 2022-12-01 from documented "
            "progressive metastatic malignancy, with no cardiac findings in the terminal "
            "admission. The death is classified as non-cardiovascular."
        ),
        "baseline_response": (
            "DECISION: CARDIOVASCULAR_DEATH\n"
            "The terminal decline is most consistent with a cardiac mechanism."
        ),
        "cleart": {
            "tree_of_thoughts": {"scores": [1, 1, 1, 1, 0, 1]},
            "summarizer_adjudicator": None,  # deliberately unscripted: scoring is skipped
        },
    },
    {
        "patient_id": "p010",
        "gold_decision": "cardiovascular_death",
        "expected_tot": ("cardiovascular_death", "cv_hemorrhage"),
        "expected_baseline": "cardiovascular_death",
        "documents": [
            {
                "doc_id": "d-p010-1",
                "doc_type": "imaging_report",
                "doc_date": "2023-09-02",
                "text": (
                    "Noncontrast head CT shows extensive subarachnoid hemorrhage with "
                    "intraventricular extension, completed at 0400 on 2023-09-02. "
                    "Severe cerebral edema is present."
                ),
                # containment case: the quote is a fragment of sentence 0
                "rows": [
                    (
                        ("contain", 0, "extensive subarachnoid hemorrhage with intraventricular extension"),
                        "Subarachnoid Hemorrhage",
                        False,
                        "2023-09-02",
                    )
                ],
                "gold": [("Intracranial Hemorrhage", "affirmed", "2023-09-02")],
                "summary": "Extensive subarachnoid hemorrhage with edema on CT, 2023-09-02.",
            },
            {
                "doc_id": "d-p010-2",
                "doc_type": "discharge_summary",
                "doc_date": "2023-09-03",
                "text": (
                    "Brain death was declared and the patient was pronounced dead on 2023-09-03. "
                    "The family consented to organ donation."
                ),
                "rows": [(0, "Pronounced Dead", False, "2023-09-03")],
                "gold": [("Death", "affirmed", "2023-09-03")],
                "summary": "Brain death declared; pronounced dead on 2023-09-03.",
            },
        ],
        "tot": {
            "is_deceased": "YES - pronounced dead on 2023-09-03 after brain death declaration.",
            "cv_hemorrhage": (
                "YES - an extensive subarachnoid hemorrhage documented on 2023-09-02 "
                "was the fatal event, with death the following day."
            ),
        },
        "consolidation": (
            "An extensive subarachnoid hemorrhage on 2023-09-02 led to brain death and "
            "death on 2023-09-03. The fatal event is an intracranial vascular rupture, "
            "so the death is classified as cardiovascular hemorrhage."
        ),
        "baseline_response": (
            "DECISION: CARDIOVASCULAR_DEATH\n"
            "Fatal subarachnoid hemorrhage documented the day before death."
        ),
        "cleart": {
            "tree_of_thoughts": {"scores": [1, 1, 1, 1, 1, 0]},
            "summarizer_adjudicator": {"scores": [1, 1, 0, 1, 0, 0]},
        },
    },
    {
        "patient_id": "p011",
        "gold_decision": "cardiovascular_death",
        "expected_tot": ("cardiovascular_death", "cv_procedure"),
        "expected_baseline": "cardiovascular_death",
        "documents": [
            {
                "doc_id": "d-p011-1",
                "doc_type": "physician_note",
                "doc_date": "2023-03-01",
                "text": (
                    "Elective coronary artery bypass graft surgery was performed on 2023-03-01. "
                    "The operation was uncomplicated initially."
                ),
                "rows": [(0, "CABG", False, "2023-03-01")],
                "gold": [("Coronary Artery Bypass Graft", "affirmed", "2023-03-01")],
                "summary": "Elective CABG on 2023-03-01, initially uncomplicated.",
            },
            {
                "doc_id": "d-p011-2",
                "doc_type": "physician_note",
                "doc_date": "2023-03-04",
                "text": (
                    "Postoperative course was complicated by mediastinal bleeding and tamponade. "
                    "The patient returned to the operating room emergently."
                ),
                # one unknown label (dropped) and one fabricated quote (flagged evidence)
                "rows": [
                    (0, "Mediastinal Bleeding", False, None),
                    (
                        ("miss", "The patient suffered a perioperative myocardial infarction."),
                        "MI",
                        False,
                        None,
                    ),
                ],
                "gold": [],
                "summary": "Postoperative tamponade requiring emergent reoperation on 2023-03-04.",
            },
            {
                "doc_id": "d-p011-3",
                "doc_type": "discharge_summary",
                "doc_date": "2023-03-06",
                "text": (
                    "The patient died on 2023-03-06 from complications of the bypass operation. "
                    "The committee was notified."
                ),
                "rows": [
                    (0, "Died", False, "2023-03-06"),
                    (0, "Bypass Surgery", False, "2023-03-06"),
                ],
                "gold": [
                    ("Death", "affirmed", "2023-03-06"),
                    ("Coronary Artery Bypass Graft", "affirmed", "2023-03-06"),
                ],
                "summary": "Death on 2023-03-06 from complications of the bypass operation.",
            },
        ],
        "tot": {
            "is_deceased": "YES - died on 2023-03-06.",
            "cv_procedure": (
                "YES - death five days after CABG from a documented complication chain "
                "of mediastinal bleeding and tamponade."
            ),
        },
        "consolidation": (
            "Death on 2023-03-06 occurred five days after coronary bypass surgery, with "
            "a documented complication chain of mediastinal bleeding and tamponade "
            "requiring reoperation. The death is classified as cardiovascular, due to "
            "a cardiovascular procedure."
        ),
        "baseline_response": (
            "DECISION: CARDIOVASCULAR_DEATH\n"
            "Perioperative death from documented bypass complications."
        ),
        "cleart": {
            "tree_of_thoughts": {"scores": [1, 1, 1, 1, 1, 1]},
            "summarizer_adjudicator": {"scores": [0, 1, 1, 1, 0, 0]},
        },
    },
    {
        "patient_id": "p012",
        "gold_decision": "non_cardiovascular_death",
        "expected_tot": ("non_cardiovascular_death", "non_cv_causes"),
        "expected_baseline": "non_cardiovascular_death",
        "documents": [
            {
                "doc_id": "d-p012-1",
                "doc_type": "physician_note",
                "doc_date": "2022-02-14",
                "text": (
                    "Admitted with an exacerbation of advanced chronic obstructive "
                    "pulmonary disease. "
                    "Intubation was required for hypoxic respiratory failure on 2022-02-14."
                ),
                "rows": [(1, "Hypoxic Respiratory Failure", False, "2022-02-14")],
                "gold": [("Respiratory Failure", "affirmed", "2022-02-14")],
                "summary": "COPD exacerbation with intubation for respiratory failure, 2022-02-14.",
            },
            {
                "doc_id": "d-p012-2",
                "doc_type": "discharge_summary",
                "doc_date": "2022-02-20",
                "text": (
                    "Support was withdrawn and the patient expired on 2022-02-20. "
                    "There was no evidence of myocardial infarction during the admission."
                ),
                "rows": [
                    (0, "Expired", False, "2022-02-20"),
                    (1, "Myocardial Infarction", True, None),
                ],
                "gold": [
                    ("Death", "affirmed", "2022-02-20"),
                    ("Myocardial Infarction", "negated", None),
                ],
                "summary": "Support withdrawn; death on 2022-02-20; MI explicitly excluded.",
            },
        ],
        "tot": {
            "is_deceased": "YES - expired on 2022-02-20 after withdrawal of support.",
            "non_cv_causes": (
                "YES - primary hypoxic respiratory failure from advanced pulmonary "
                "disease is the documented cause; infarction was excluded."
            ),
        },
        "consolidation": (
            "The participant died on 2022-02-20 after withdrawal of support for hypoxic "
            "respiratory failure from advanced pulmonary disease; myocardial infarction "
            "was explicitly excluded. The death is classified as non-cardiovascular."
        ),
        "baseline_response": (
            "DECISION: NON_CARDIOVASCULAR_DEATH\n"
            "Primary respiratory failure with infarction excluded."
        ),
        "cleart": {
            # the first response omits the relevance row; so does the repair,
            # which exercises the parse-failure default
            "tree_of_thoughts": {"scores": [1, 1, 0, 1, 1, 1], "omit": ["relevance"]},
            "summarizer_adjudicator": {"scores": [1, 1, 0, 1, 0, 0]},
        },
    },
]

_JUSTIFICATIONS = {
    1: {
        "clarity": "the narrative is unambiguous",
        "logical_consistency": "no internal contradictions",
        "evaluation_details": "cites the decisive clinical findings",
        "adherence_to_guidelines": "applies the committee criteria as written",
        "relevance": "diagnostic findings are used correctly",
        "timeline_accuracy": "the event sequence and intervals are correct",
    },
    0: {
        "clarity": "the narrative is vague in places",
        "logical_consistency": "conclusions do not all follow",
        "evaluation_details": "key clinical details are missing",
        "adherence_to_guidelines": "the stated criteria are not applied",
        "relevance": "diagnostic findings are used loosely",
        "timeline_accuracy": "intervals between events are wrong or absent",
    },
}


def render_cleart_response(scores: list[int], omit: list[str] | None = None) -> str:
    lines = []
    for key, score in zip(CRITERION_KEYS, scores):
        if omit and key in omit:
            continue
        lines.append(f"{key}: {score} - {_JUSTIFICATIONS[score][key]}")
    return "\n".join(lines)


def craft_extraction_response(doc, rows, abbreviations) -> str:
    sentences = segment_sentences(doc, abbreviations)
    payload = []
    for ref, name, negated, date_str in rows:
        if isinstance(ref, int):
            sentence = sentences[ref].text
        elif ref[0] == "contain":
            _, idx, fragment = ref
            assert fragment in sentences[idx].text, (doc.doc_id, fragment)
            sentence = fragment
        elif ref[0] == "miss":
            sentence = ref[1]
            assert all(sentence not in s.text for s in sentences), (doc.doc_id, sentence)
        else:
            raise ValueError(ref)
        payload.append({"name": name, "sentence": sentence, "negated": negated, "date": date_str})
    return json.dumps(payload, ensure_ascii=False, indent=1)


def main() -> int:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    verbalizer = __import__("cvadjudicator.verbalizer", fromlist=["build_verbalizer"]).build_verbalizer(
        asset_path("verbalizer.yaml")
    )
    extraction_tpl = load_template(asset_path("templates", "extraction.txt"), {"document", "labels"})
    tree = load_tree(asset_path("tree.yaml"))
    guidelines = load_guidelines(asset_path("guidelines.txt"))
    rubric = load_rubric(asset_path("rubric.yaml"))
    abbreviations = load_abbreviations(asset_path("abbreviations.txt"))
    summarize_tpl = load_template(asset_path("templates", "baseline_summarize.txt"), {"document"})
    baseline_tpl = load_template(
        asset_path("templates", "baseline_adjudicate.txt"), {"guideline", "summaries"}
    )
    cleart_tpl = load_template(asset_path("templates", "cleart.txt"), {"reasoning", "rubric"})

    corpus_rows, gold_event_rows, gold_adj_rows = [], [], []
    for scenario in SCENARIOS:
        pid = scenario["patient_id"]
        gold_adj_rows.append({"patient_id": pid, "decision": scenario["gold_decision"]})
        for doc in scenario["documents"]:
            row = {
                "doc_id": doc["doc_id"],
                "patient_id": pid,
                "doc_type": doc["doc_type"],
                "doc_date": doc["doc_date"],
                "text": doc["text"],
            }
            corpus_rows.append(row)
            for name, negation, event_date in doc["gold"]:
                gold_event_rows.append(
                    {
                        "doc_id": doc["doc_id"],
                        "event_name": name,
                        "negation": negation,
                        "event_date": event_date,
                    }
                )

    def write_jsonl(path, rows):
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            for row in rows:
                handle.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")

    write_jsonl(OUT_DIR / "corpus.jsonl", corpus_rows)
    write_jsonl(OUT_DIR / "gold_events.jsonl", gold_event_rows)
    write_jsonl(OUT_DIR / "gold_adjudications.jsonl", gold_adj_rows)

    loaded = load_corpus(OUT_DIR / "corpus.jsonl")
    assert not loaded.problems, loaded.problems
    records = {record.patient_id: record for record in loaded.records}

    adjudication_fx = ScriptedFixtures()
    evaluator_fx = ScriptedFixtures()
    backend = ScriptedBackend(adjudication_fx, WINDOW, backend_id="scripted:gen")
    evaluator = ScriptedBackend(evaluator_fx, WINDOW, backend_id="scripted:gen-eval")

    for scenario in SCENARIOS:
        pid = scenario["patient_id"]
        record = records[pid]
        doc_specs = {d["doc_id"]: d for d in scenario["documents"]}

        patient_events = []
        for doc in record.documents:
            spec = doc_specs[doc.doc_id]
            _, _, requests = build_extraction_requests(
                doc, extraction_tpl, verbalizer, WINDOW, abbreviations=abbreviations
            )
            assert len(requests) == 1, (doc.doc_id, len(requests))
            adjudication_fx.add(
                requests[0], craft_extraction_response(doc, spec["rows"], abbreviations)
            )
            patient_events.extend(
                extract_events(doc, extraction_tpl, verbalizer, backend, abbreviations=abbreviations)
            )
        patient_events = dedupe_events(patient_events)

        adjudication_fx.add(
            build_node_request(tree.gate_node, patient_events, guidelines, WINDOW),
            scenario["tot"]["is_deceased"],
        )
        gate = evaluate_node(tree.gate_node, patient_events, guidelines, backend)
        if gate.verdict.value == "yes":
            for node in tree.cause_nodes:
                response = scenario["tot"].get(
                    node.node_id, f"NO - the {node.display_name.lower()} criteria are not met."
                )
                adjudication_fx.add(
                    build_node_request(node, patient_events, guidelines, WINDOW), response
                )
            verdicts = [gate] + [
                evaluate_node(node, patient_events, guidelines, backend)
                for node in tree.cause_nodes
            ]
            adjudication_fx.add(
                build_consolidation_request(verdicts, tree), scenario["consolidation"]
            )
        result_tot = adjudicate_tot(record, patient_events, tree, guidelines, backend)
        expected_decision, expected_cause = scenario["expected_tot"]
        assert result_tot.decision.value == expected_decision, (pid, result_tot.decision)
        assert result_tot.cause_node_id == expected_cause, (pid, result_tot.cause_node_id)

        labeled = []
        for doc in record.documents:
            requests = build_summary_requests(
                doc, summarize_tpl, WINDOW, abbreviations=abbreviations
            )
            assert len(requests) == 1, (doc.doc_id, len(requests))
            summary = doc_specs[doc.doc_id]["summary"]
            adjudication_fx.add(requests[0], summary)
            labeled.append((doc.doc_id, summary))
        adjudication_fx.add(
            build_baseline_decision_request(combine_summaries(labeled), guidelines, baseline_tpl),
            scenario["baseline_response"],
        )
        result_base = adjudicate_baseline(
            record, guidelines, backend, summarize_tpl, baseline_tpl, abbreviations=abbreviations
        )
        assert result_base.decision.value == scenario["expected_baseline"], (
            pid,
            result_base.decision,
        )

        for method, result in (
            (Method.TREE_OF_THOUGHTS, result_tot),
            (Method.SUMMARIZER_ADJUDICATOR, result_base),
        ):
            spec = scenario["cleart"][method.value]
            if spec is None:
                continue
            request = build_evaluator_request(result.reasoning, rubric, cleart_tpl)
            omit = spec.get("omit")
            first = render_cleart_response(spec["scores"], omit)
            evaluator_fx.add(request, first)
            if omit:
                evaluator_fx.add(
                    build_repair_request(request, first, list(omit)),
                    render_cleart_response(spec["scores"], omit),
                )
            score = score_reasoning(pid, result.reasoning, rubric, evaluator, cleart_tpl)
            for criterion in score.criteria:
                index = CRITERION_KEYS.index(criterion.key)
                expected = 0 if (omit and criterion.key in omit) else spec["scores"][index]
                assert criterion.score == expected, (pid, method.value, criterion)

    adjudication_fx.save(OUT_DIR / "fixtures_adjudication.jsonl")
    evaluator_fx.save(OUT_DIR / "fixtures_evaluator.jsonl")

    config_text = """\
# Run configuration for the bundled synthetic corpus (paths are relative to
# this directory; run the CLI from here or rewrite them).
corpus_path: corpus.jsonl
gold_events_path: gold_events.jsonl
gold_adjudication_path: gold_adjudications.jsonl
method: both
adjudication_backend:
  kind: scripted
  script_path: fixtures_adjudication.jsonl
  context_window_tokens: 8000
evaluator_backend:
  kind: scripted
  script_path: fixtures_evaluator.jsonl
  context_window_tokens: 8000
"""
    (OUT_DIR / "config.yaml").write_text(config_text, encoding="utf-8")

    print(f"wrote {len(corpus_rows)} documents, {len(gold_event_rows)} gold events,")
    print(f"{len(adjudication_fx)} adjudication fixtures, {len(evaluator_fx)} evaluator fixtures")
    print(f"into {OUT_DIR}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
