import json
from pathlib import Path

import pytest

from cvadjudicator.adjudication import load_guidelines, load_tree
from cvadjudicator.cleart import load_rubric
from cvadjudicator.config import asset_path
from cvadjudicator.extraction import load_template
from cvadjudicator.preprocess import load_abbreviations
from cvadjudicator.verbalizer import build_verbalizer

SYNTHETIC_DIR = Path(__file__).parent / "data" / "synthetic"


@pytest.fixture(scope="session")
def synthetic_dir():
    return SYNTHETIC_DIR


@pytest.fixture(scope="session")
def shipped_verbalizer():
    return build_verbalizer(asset_path("verbalizer.yaml"))


@pytest.fixture(scope="session")
def shipped_tree():
    return load_tree(asset_path("tree.yaml"))


@pytest.fixture(scope="session")
def shipped_guidelines():
    return load_guidelines(asset_path("guidelines.txt"))


@pytest.fixture(scope="session")
def shipped_rubric():
    return load_rubric(asset_path("rubric.yaml"))


@pytest.fixture(scope="session")
def shipped_abbreviations():
    return load_abbreviations(asset_path("abbreviations.txt"))


@pytest.fixture(scope="session")
def extraction_template():
    return load_template(asset_path("templates", "extraction.txt"), {"document", "labels"})


@pytest.fixture(scope="session")
def cleart_template():
    return load_template(asset_path("templates", "cleart.txt"), {"reasoning", "rubric"})


@pytest.fixture(scope="session")
def summarize_template():
    return load_template(asset_path("templates", "baseline_summarize.txt"), {"document"})


@pytest.fixture(scope="session")
def baseline_template():
    return load_template(
        asset_path("templates", "baseline_adjudicate.txt"), {"guideline", "summaries"}
    )


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def synthetic_overrides(synthetic_dir: Path, out_dir: Path, method: str = "both") -> list[str]:
    """CLI flags wiring a run to the bundled synthetic corpus and fixtures."""
    return [
        "--set", f"corpus_path={synthetic_dir / 'corpus.jsonl'}",
        "--set", f"gold_events_path={synthetic_dir / 'gold_events.jsonl'}",
        "--set", f"gold_adjudication_path={synthetic_dir / 'gold_adjudications.jsonl'}",
        "--set", f"method={method}",
        "--set", "adjudication_backend.kind=scripted",
        "--set", f"adjudication_backend.script_path={synthetic_dir / 'fixtures_adjudication.jsonl'}",
        "--set", "evaluator_backend.kind=scripted",
        "--set", f"evaluator_backend.script_path={synthetic_dir / 'fixtures_evaluator.jsonl'}",
        "--out-dir", str(out_dir),
    ]
