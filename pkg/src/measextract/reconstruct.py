"""Rebuild stand-off annotations from parsed quantity blocks.

The model only returns strings. Offsets are recovered by searching the
paragraph (first occurrence wins), ids are assigned in emission order and
relations are wired the way the gold data structures them: units live in
the quantity's ``other`` payload, properties point at their quantity, and
entities point at their property when there is one.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .corpus import Annotation, AnnotationType, Other, Paragraph
from .promptkit import QuantityBlock


class MatchMode(str, enum.Enum):
    EXACT = "exact"
    CASE_INSENSITIVE = "case_insensitive"
    WHITESPACE_NORMALIZED = "whitespace_normalized"


@dataclass(frozen=True)
class SpanMatch:
    start: int
    end: int
    occurrence_count: int
    match_mode: MatchMode


def _block_key(block: QuantityBlock) -> tuple:
    return (block.quantity, block.unit, block.property, block.entity)


def dedup_blocks(blocks: Sequence[QuantityBlock]) -> tuple[list[QuantityBlock], int]:
    seen = set()
    kept = []
    for block in blocks:
        key = _block_key(block)
        if key in seen:
            continue
        seen.add(key)
        kept.append(block)
    return kept, len(blocks) - len(kept)


def _fold(ch: str) -> str:
    # keep one code point per character so folded offsets equal original ones
    lowered = ch.lower()
    return lowered if len(lowered) == 1 else ch


def _find_all(haystack: str, needle: str) -> list[int]:
    positions = []
    pos = haystack.find(needle)
    while pos != -1:
        positions.append(pos)
        pos = haystack.find(needle, pos + 1)
    return positions


def _normalize_whitespace(text: str) -> tuple[str, list[int]]:
    """Collapse whitespace runs to one space, folding case.

    Returns the normalized string and, for each of its characters, the
    index of the original character it came from.
    """
    chars, origin = [], []
    in_space = False
    for i, ch in enumerate(text):
        if ch.isspace():
            if not in_space:
                chars.append(" ")
                origin.append(i)
            in_space = True
        else:
            chars.append(_fold(ch))
            origin.append(i)
            in_space = False
    return "".join(chars), origin


def locate_span(paragraph: Paragraph | str, needle: str) -> SpanMatch | None:
    """Find the first occurrence of ``needle`` in the paragraph.

    Tries an exact match, then a case-insensitive one, then one that also
    ignores differences in whitespace. Returns None when all three fail.
    """
    text = paragraph.text if isinstance(paragraph, Paragraph) else paragraph
    needle = needle.strip()
    if not needle:
        raise ValueError("cannot locate an empty string")

    hits = _find_all(text, needle)
    if hits:
        return SpanMatch(hits[0], hits[0] + len(needle), len(hits), MatchMode.EXACT)

    folded_needle = "".join(_fold(c) for c in needle)
    hits = _find_all("".join(_fold(c) for c in text), folded_needle)
    if hits:
        return SpanMatch(hits[0], hits[0] + len(needle), len(hits), MatchMode.CASE_INSENSITIVE)

    norm_text, origin = _normalize_whitespace(text)
    norm_needle, _ = _normalize_whitespace(needle)
    hits = _find_all(norm_text, norm_needle)
    if hits:
        first = hits[0]
        start = origin[first]
        end = origin[first + len(norm_needle) - 1] + 1
        return SpanMatch(start, end, len(hits), MatchMode.WHITESPACE_NORMALIZED)
    return None


class DropReason(str, enum.Enum):
    NOT_FOUND = "NotFound"
    QUANTITY_DROPPED = "QuantityDropped"
    UNENCODABLE = "Unencodable"


@dataclass(frozen=True)
class DroppedSpan:
    doc_id: str
    label: str
    text: str
    reason: DropReason
    annot_set: int


@dataclass(frozen=True)
class AmbiguousSpan:
    doc_id: str
    label: str
    text: str
    occurrence_count: int
    annot_set: int


@dataclass
class ReconstructionReport:
    doc_id: str
    annotations: list[Annotation] = field(default_factory=list)
    dropped: list[DroppedSpan] = field(default_factory=list)
    ambiguous: list[AmbiguousSpan] = field(default_factory=list)
    dedup_removed: int = 0
    # ids of entities whose property was dropped, so they point at the quantity
    entity_fallbacks: list[int] = field(default_factory=list)

    def diagnostics(self) -> list[dict]:
        records = []
        if self.dedup_removed:
            records.append({"doc_id": self.doc_id, "kind": "dedup", "removed": self.dedup_removed})
        for d in self.dropped:
            records.append({"kind": "dropped", **asdict(d), "reason": d.reason.value})
        for a in self.ambiguous:
            records.append({"kind": "ambiguous", **asdict(a)})
        for annot_id in self.entity_fallbacks:
            records.append({"doc_id": self.doc_id, "kind": "entity_fallback", "annot_id": annot_id})
        return records


def diagnostics_jsonl(records: Sequence[dict]) -> str:
    return "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in records)


def reconstruct(paragraph: Paragraph, blocks: Sequence[QuantityBlock]) -> ReconstructionReport:
    report = ReconstructionReport(paragraph.doc_id)
    next_id = 1

    def place(label, value, annot_set):
        """Locate ``value``; record the outcome and return the match or None."""
        found = locate_span(paragraph, value)
        if found is None:
            report.dropped.append(
                DroppedSpan(paragraph.doc_id, label, value, DropReason.NOT_FOUND, annot_set)
            )
            return None
        if any(ch in paragraph.text[found.start : found.end] for ch in "\t\r\n"):
            report.dropped.append(
                DroppedSpan(paragraph.doc_id, label, value, DropReason.UNENCODABLE, annot_set)
            )
            return None
        if found.occurrence_count >= 2:
            report.ambiguous.append(
                AmbiguousSpan(paragraph.doc_id, label, value, found.occurrence_count, annot_set)
            )
        return found

    def emit(annot_type, found, annot_set, other):
        nonlocal next_id
        annotation = Annotation(
            doc_id=paragraph.doc_id,
            annot_set=annot_set,
            annot_type=annot_type,
            start_offset=found.start,
            end_offset=found.end,
            annot_id=next_id,
            text=paragraph.text[found.start : found.end],
            other=other,
        )
        next_id += 1
        report.annotations.append(annotation)
        return annotation

    for annot_set, block in enumerate(blocks, start=1):
        quantity_span = place("Quantity", block.quantity, annot_set)
        if quantity_span is None:
            for label, value in (("Unit", block.unit), ("Property", block.property), ("Entity", block.entity)):
                if value is not None:
                    report.dropped.append(
                        DroppedSpan(paragraph.doc_id, label, value, DropReason.QUANTITY_DROPPED, annot_set)
                    )
            continue
        quantity = emit(AnnotationType.QUANTITY, quantity_span, annot_set, Other(unit=block.unit))

        prop = None
        if block.property is not None:
            found = place("Property", block.property, annot_set)
            if found is not None:
                prop = emit(
                    AnnotationType.MEASURED_PROPERTY, found, annot_set, Other(HasQuantity=quantity.annot_id)
                )
        if block.entity is not None:
            found = place("Entity", block.entity, annot_set)
            if found is not None:
                if prop is not None:
                    other = Other(HasProperty=prop.annot_id)
                else:
                    other = Other(HasQuantity=quantity.annot_id)
                entity = emit(AnnotationType.MEASURED_ENTITY, found, annot_set, other)
                if prop is None and block.property is not None:
                    report.entity_fallbacks.append(entity.annot_id)
    return report


def reconstruct_completion(paragraph: Paragraph, blocks: Sequence[QuantityBlock]) -> ReconstructionReport:
    """Dedup then reconstruct, keeping the dedup count in the report."""
    kept, removed = dedup_blocks(blocks)
    report = reconstruct(paragraph, kept)
    report.dedup_removed = removed
    return report
