"""Deterministic sentence segmentation and tokenization with character offsets.

Extracted events cite evidence by (doc_id, sentence index), so segmentation
must be byte-stable across runs and platforms. A small rule set does the job:
sentences break after terminal punctuation followed by whitespace and an
uppercase letter or digit, and at blank lines; known abbreviations never
break. Offsets are code-point indices into the source text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .corpus import ClinicalDocument

_TERMINAL_RUN = re.compile(r"[.!?]+")
_BLANK_LINE = re.compile(r"\n[ \t]*\n")
# Maximal alphanumeric runs (internal hyphen/apostrophe allowed) or a single
# non-space character.
_TOKEN = re.compile(r"[^\W_]+(?:['\-][^\W_]+)*|\S", re.UNICODE)


@dataclass(frozen=True)
class Sentence:
    doc_id: str
    sent_index: int
    span: tuple[int, int]  # half-open offsets into the document text
    text: str


@dataclass(frozen=True)
class Token:
    sent_index: int
    span: tuple[int, int]  # half-open offsets into the sentence text
    text: str


def load_abbreviations(path: str | Path) -> frozenset[str]:
    """One abbreviation per line; blank lines and # comments ignored."""
    entries = set()
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line and not line.startswith("#"):
                entries.add(line.lower())
    return frozenset(entries)


@lru_cache(maxsize=1)
def default_abbreviations() -> frozenset[str]:
    text = resources.files("cvadjudicator").joinpath("assets", "abbreviations.txt").read_text("utf-8")
    return frozenset(
        line.strip().lower()
        for line in text.splitlines()
        if line.strip() and not line.strip().startswith("#")
    )


def _boundaries(text: str, abbreviations: frozenset[str]) -> list[int]:
    cuts = set()
    for match in _BLANK_LINE.finditer(text):
        cuts.add(match.start())
    for match in _TERMINAL_RUN.finditer(text):
        after = match.end()
        j = after
        while j < len(text) and text[j].isspace():
            j += 1
        if j == after or j >= len(text):
            continue  # needs whitespace then a following character
        nxt = text[j]
        if not (nxt.isupper() or nxt.isdigit()):
            continue
        if match.group() == ".":
            k = match.start()
            while k > 0 and not text[k - 1].isspace():
                k -= 1
            if text[k : match.end()].lower() in abbreviations:
                continue
        cuts.add(match.end())
    return sorted(cuts)


def segment_sentences(
    doc: "ClinicalDocument", abbreviations: frozenset[str] | None = None
) -> list[Sentence]:
    """Split a document into sentences with exact source spans.

    Every non-whitespace character lands in exactly one sentence span; in the
    worst case the whole document is a single sentence.
    """
    text = doc.text
    if not text:
        raise ValueError("document text must be non-empty")
    if abbreviations is None:
        abbreviations = default_abbreviations()
    cuts = _boundaries(text, abbreviations)
    edges = [0, *cuts, len(text)]
    sentences: list[Sentence] = []
    for a, b in zip(edges, edges[1:]):
        start, end = a, b
        while start < end and text[start].isspace():
            start += 1
        while end > start and text[end - 1].isspace():
            end -= 1
        if start < end:
            sentences.append(
                Sentence(doc.doc_id, len(sentences), (start, end), text[start:end])
            )
    return sentences


def tokenize(sentence: Sentence) -> list[Token]:
    """Split a sentence into word and punctuation tokens with exact spans."""
    if not sentence.text:
        raise ValueError("sentence text must be non-empty")
    return [
        Token(sentence.sent_index, (m.start(), m.end()), m.group())
        for m in _TOKEN.finditer(sentence.text)
    ]
