import pytest
from hypothesis import given
from hypothesis import strategies as st

from measextract.corpus import AnnotationType, Corpus, Other, Paragraph, validate
from measextract.promptkit import QuantityBlock
from measextract.reconstruct import (
    DropReason,
    MatchMode,
    SpanMatch,
    dedup_blocks,
    locate_span,
    reconstruct,
    reconstruct_completion,
)

from .conftest import FIG2_TEXT

FIG2 = Paragraph("fig2", FIG2_TEXT)
B1 = QuantityBlock("one", entity="cycle")
B2 = QuantityBlock("22%", unit="%", property="averaged power extracted", entity="one cycle")


def test_dedup_examples():
    assert dedup_blocks([B1, B1, B1]) == ([B1], 2)
    assert dedup_blocks([B1, B2, B1]) == ([B1, B2], 1)
    assert dedup_blocks([]) == ([], 0)


def test_dedup_compares_trimmed_fields():
    assert dedup_blocks([QuantityBlock("5 m "), QuantityBlock(" 5 m")]) == ([QuantityBlock("5 m")], 1)
    # a missing field is not equal to a present one
    assert dedup_blocks([QuantityBlock("5 m"), QuantityBlock("5 m", unit="m")])[1] == 0


_small_blocks = st.builds(
    QuantityBlock,
    quantity=st.sampled_from(["1", "2"]),
    unit=st.none() | st.just("m"),
    property=st.none(),
    entity=st.none() | st.just("rod"),
)


@given(st.lists(_small_blocks, max_size=12))
def test_dedup_idempotent_and_order_preserving(blocks):
    kept, removed = dedup_blocks(blocks)
    assert dedup_blocks(kept) == (kept, 0)
    assert removed == len(blocks) - len(kept)
    assert kept == sorted(set(blocks), key=blocks.index)


def test_locate_fig2_offsets():
    assert locate_span(FIG2, "22%") == SpanMatch(59, 62, 1, MatchMode.EXACT)
    found = locate_span(FIG2, "one")
    assert (found.start, found.end, found.match_mode) == (36, 39, MatchMode.EXACT)
    assert found.occurrence_count >= 1


def test_locate_not_found_and_empty():
    assert locate_span("abc", "xyz") is None
    with pytest.raises(ValueError):
        locate_span("abc", "  ")


def test_locate_case_insensitive_stage():
    found = locate_span("The Teratoma formed.", "teratoma")
    assert found == SpanMatch(4, 12, 1, MatchMode.CASE_INSENSITIVE)


def test_locate_whitespace_stage_maps_back_to_original_offsets():
    text = "cells were transferred\tto   a\nmembrane for 2 h"
    found = locate_span(text, "Transferred  to a membrane")
    assert found.match_mode is MatchMode.WHITESPACE_NORMALIZED
    assert text[found.start : found.end] == "transferred\tto   a\nmembrane"


def test_locate_counts_overlapping_occurrences():
    assert locate_span("aaaa", "aa").occurrence_count == 3


def test_locate_case_fold_keeps_offsets_with_expanding_characters():
    # "İ" lowercases to two code points; offsets must not shift after it
    text = "İstanbul had 30 °C"
    assert locate_span(text, "30 °c") == SpanMatch(13, 18, 1, MatchMode.CASE_INSENSITIVE)


def _brute_first(text, needle):
    for i in range(len(text) - len(needle) + 1):
        if text[i : i + len(needle)] == needle:
            return i
    return None


@given(st.text(alphabet="ab c\n", min_size=1, max_size=40), st.data())
def test_locate_exact_matches_brute_force(text, data):
    i = data.draw(st.integers(0, len(text) - 1))
    j = data.draw(st.integers(i + 1, len(text)))
    needle = text[i:j]
    if not needle.strip():
        return
    needle = needle.strip()
    found = locate_span(text, needle)
    assert found.match_mode is MatchMode.EXACT
    assert text[found.start : found.end] == needle
    assert found.start == _brute_first(text, needle)
    assert found.occurrence_count == sum(
        text[k : k + len(needle)] == needle for k in range(len(text) - len(needle) + 1)
    )


def test_reconstruct_fig2_first_block():
    report = reconstruct(FIG2, [B1])
    quantity, entity = report.annotations
    assert (quantity.span, quantity.annot_id, quantity.annot_type) == ((36, 39), 1, AnnotationType.QUANTITY)
    assert (entity.span, entity.annot_id, entity.other) == ((40, 45), 2, Other(HasQuantity=1))
    assert entity.annot_type is AnnotationType.MEASURED_ENTITY


def test_reconstruct_full_block_relations():
    report = reconstruct(FIG2, [B1, B2])
    quantity, prop, entity = report.annotations[2:]
    assert quantity.other == Other(unit="%") and quantity.annot_set == 2
    assert prop.annot_type is AnnotationType.MEASURED_PROPERTY and prop.other == Other(HasQuantity=quantity.annot_id)
    assert entity.other == Other(HasProperty=prop.annot_id) and entity.span == (36, 45)
    assert [a.annot_id for a in report.annotations] == [1, 2, 3, 4, 5]
    assert report.dropped == [] and report.entity_fallbacks == []


def test_reconstruct_hallucinated_block_dropped_whole():
    paragraph = Paragraph("inj", "Carrier lifetimes were measured on float-zone wafers.")
    report = reconstruct(paragraph, [QuantityBlock("1016 cm-3", unit="cm-3", entity="injection level range")])
    assert report.annotations == []
    assert [(d.label, d.reason) for d in report.dropped] == [
        ("Quantity", DropReason.NOT_FOUND),
        ("Unit", DropReason.QUANTITY_DROPPED),
        ("Entity", DropReason.QUANTITY_DROPPED),
    ]


def test_reconstruct_entity_falls_back_when_property_missing():
    report = reconstruct(FIG2, [QuantityBlock("22%", property="peak efficiency", entity="one cycle")])
    quantity, entity = report.annotations
    assert entity.other == Other(HasQuantity=quantity.annot_id)
    assert report.entity_fallbacks == [entity.annot_id]
    assert [(d.label, d.reason) for d in report.dropped] == [("Property", DropReason.NOT_FOUND)]


def test_reconstruct_uses_paragraph_casing_and_flags_ambiguity():
    paragraph = Paragraph("t", "Cell counts rose. The cell count was 5.")
    report = reconstruct(paragraph, [QuantityBlock("5", entity="CELL COUNT")])
    entity = report.annotations[1]
    assert entity.text == "Cell count"
    assert [(a.label, a.occurrence_count) for a in report.ambiguous] == [("Entity", 2)]


def test_reconstruct_span_crossing_line_break_dropped():
    paragraph = Paragraph("t", "heated to 5\nK then")
    report = reconstruct(paragraph, [QuantityBlock("5 K")])
    assert report.annotations == []
    assert report.dropped[0].reason is DropReason.UNENCODABLE


def test_reconstruct_completion_records_dedup():
    report = reconstruct_completion(FIG2, [B1, B1, B2, B1])
    assert report.dedup_removed == 2 and len(report.annotations) == 5
    kinds = [d["kind"] for d in report.diagnostics()]
    assert kinds[0] == "dedup"


_words = st.sampled_from(["rod", "5 m", "Rod", "the", "x", "beam", "ROD", "12 K"])
_paragraph_text = st.lists(_words, min_size=1, max_size=10).map(" ".join)
_candidate = st.sampled_from(["rod", "5 m", "beam", "12 K", "missing", "the rod", "THE"])
_blocks = st.builds(
    QuantityBlock,
    quantity=_candidate,
    unit=st.none() | _candidate,
    property=st.none() | _candidate,
    entity=st.none() | _candidate,
)


@given(_paragraph_text, st.lists(_blocks, max_size=6))
def test_reconstruct_validity_and_conservation(text, blocks):
    paragraph = Paragraph("d", text)
    report = reconstruct(paragraph, blocks)
    assert validate(Corpus.from_annotations(report.annotations, {"d": paragraph})) == []
    # units are carried on the quantity, not emitted as spans
    units_kept = sum(1 for a in report.annotations if a.other.unit is not None)
    candidates = sum(1 + (b.unit is not None) + (b.property is not None) + (b.entity is not None) for b in blocks)
    assert len(report.annotations) + units_kept + len(report.dropped) == candidates
    assert all(a.occurrence_count >= 2 for a in report.ambiguous)
    assert reconstruct(paragraph, blocks) == report
