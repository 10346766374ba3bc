"""Canonical label dictionary for clinical event normalization.

Each entry maps one canonical label to a set of surface-form synonyms (the
label itself is always a member of its own set). Lookup is case-insensitive
after trimming and collapsing internal whitespace, and no synonym may belong
to two labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import yaml


class Category(Enum):
    CV_EVENT = "cv_event"
    DEATH_INDICATOR = "death_indicator"
    PROCEDURE = "procedure"
    MEDICATION = "medication"
    OTHER = "other"


class VerbalizerError(Exception):
    pass


def normalize_term(term: str) -> str:
    """Trim, collapse internal whitespace, lowercase."""
    return " ".join(term.split()).lower()


@dataclass(frozen=True)
class VerbalizerEntry:
    canonical_label: str
    category: Category
    synonyms: frozenset[str]  # includes the canonical label itself


class Verbalizer:
    def __init__(self, entries: list[VerbalizerEntry]):
        self.entries = entries
        self._index: dict[str, str] = {}
        self._by_label: dict[str, VerbalizerEntry] = {}
        for entry in entries:
            if entry.canonical_label in self._by_label:
                raise VerbalizerError(f"duplicate canonical label {entry.canonical_label!r}")
            self._by_label[entry.canonical_label] = entry
            for synonym in entry.synonyms:
                key = normalize_term(synonym)
                owner = self._index.get(key)
                if owner is not None and owner != entry.canonical_label:
                    raise VerbalizerError(
                        f"synonym {synonym!r} is claimed by both "
                        f"{owner!r} and {entry.canonical_label!r}"
                    )
                self._index[key] = entry.canonical_label

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def labels(self) -> list[str]:
        return [entry.canonical_label for entry in self.entries]

    def entry_for(self, label: str) -> VerbalizerEntry:
        return self._by_label[label]

    def category_of(self, label: str) -> Category:
        return self._by_label[label].category

    def lookup(self, term: str) -> str | None:
        return self._index.get(normalize_term(term))


def canonicalize(term: str, verbalizer: Verbalizer) -> str | None:
    """Map a surface form to its canonical label, or None when unknown."""
    return verbalizer.lookup(term)


def build_verbalizer_from_entries(raw_entries: list[dict]) -> Verbalizer:
    entries = []
    for raw in raw_entries:
        label = str(raw["canonical_label"])
        category = Category(raw.get("category", "other"))
        synonyms = frozenset({label, *map(str, raw.get("synonyms", []))})
        entries.append(VerbalizerEntry(label, category, synonyms))
    return Verbalizer(entries)


def build_verbalizer(config_path: str | Path) -> Verbalizer:
    """Load a verbalizer from its YAML config, enforcing all invariants."""
    with open(config_path, encoding="utf-8") as handle:
        data = yaml.safe_load(handle) or {}
    raw_entries = data.get("entries", [])
    try:
        return build_verbalizer_from_entries(raw_entries)
    except (KeyError, ValueError) as exc:
        raise VerbalizerError(f"bad verbalizer config {config_path}: {exc}") from exc
