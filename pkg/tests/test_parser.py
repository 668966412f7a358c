import re

from hypothesis import given
from hypothesis import strategies as st

from measextract.backend import FinishReason
from measextract.parser import WarningKind, data_section, parse_completion
from measextract.promptkit import FewShotExample, QuantityBlock, load_examples, serialize_example

LOOP_BLOCK = "Quantity: 10 keV electron energy flux\nUnit: keV\nEntity: simulations R1-R18\n\n"


def kinds(outcome):
    return [w.kind for w in outcome.warnings]


def test_four_field_block():
    outcome = parse_completion(
        "Quantity: 3 months\nUnit: months\nProperty: after transplantation\nEntity: Teratoma formation"
    )
    assert outcome.blocks == [
        QuantityBlock("3 months", unit="months", property="after transplantation", entity="Teratoma formation")
    ]
    assert outcome.warnings == [] and not outcome.truncated


def test_long_label_names_and_any_field_order():
    outcome = parse_completion(
        "Quantity: one\nMeasuredEntity: cycle\n\n"
        "Quantity: 22%\nMeasuredEntity: one cycle\nMeasuredProperty: averaged power extracted\nUnit: %"
    )
    assert outcome.blocks == [
        QuantityBlock("one", entity="cycle"),
        QuantityBlock("22%", unit="%", property="averaged power extracted", entity="one cycle"),
    ]


def test_empty_output():
    outcome = parse_completion("", FinishReason.STOP)
    assert outcome.blocks == [] and kinds(outcome) == [WarningKind.EMPTY_OUTPUT]


def test_repetition_loop_is_kept_for_dedup():
    outcome = parse_completion(LOOP_BLOCK * 6, "length")
    assert len(outcome.blocks) == 6 and len(set(outcome.blocks)) == 1
    assert outcome.truncated
    assert WarningKind.TRUNCATED_FINAL_BLOCK in kinds(outcome)
    # a cutoff that falls on a block boundary leaves every block complete
    assert outcome.complete_blocks() == outcome.blocks


def test_cut_final_block_is_set_aside():
    outcome = parse_completion(LOOP_BLOCK * 2 + "Quantity: 10 keV electron en", "length")
    assert outcome.blocks[-1].quantity == "10 keV electron en"
    assert outcome.final_block_open
    assert outcome.complete_blocks() == outcome.blocks[:2]
    # without a length cutoff the same text is taken at face value
    assert parse_completion(LOOP_BLOCK + "Quantity: 5 K").complete_blocks()[-1].quantity == "5 K"


def test_quantity_line_starts_new_block_without_blank_line():
    outcome = parse_completion("Quantity: 50 µg\nUnit: µg\nEntity: cell lysate\nQuantity: 2 h\nUnit: h")
    assert [b.quantity for b in outcome.blocks] == ["50 µg", "2 h"]


def test_stops_at_separator_and_invented_example():
    text = "Quantity: 4 K\n<|endoftext|>\nQuantity: 9 K\n"
    assert [b.quantity for b in parse_completion(text).blocks] == ["4 K"]
    text = "Quantity: 4 K\n\nText:\nSomething else.\n\nData:\nQuantity: 9 K\n"
    assert [b.quantity for b in parse_completion(text).blocks] == ["4 K"]
    text = "Quantity: 4 K\n</endoftext|>Quantity: 9 K"
    assert [b.quantity for b in parse_completion(text).blocks] == ["4 K"]


def test_leading_data_line_ignored():
    outcome = parse_completion("Data:\nQuantity: 2 h\nUnit: h\n")
    assert outcome.blocks == [QuantityBlock("2 h", unit="h")] and outcome.warnings == []


def test_duplicate_label_keeps_first():
    outcome = parse_completion("Quantity: 5 m\nUnit: m\nUnit: cm\n")
    assert outcome.blocks == [QuantityBlock("5 m", unit="m")]
    assert outcome.warnings[0].kind is WarningKind.DUPLICATE_LABEL
    assert outcome.warnings[0].line == "Unit: cm"


def test_orphan_fields_are_stray():
    outcome = parse_completion("Unit: m\nEntity: rod\n\nQuantity: 5 m\n")
    assert outcome.blocks == [QuantityBlock("5 m")]
    assert kinds(outcome) == [WarningKind.STRAY_TEXT, WarningKind.STRAY_TEXT]


def test_unknown_label_and_free_text():
    outcome = parse_completion("Quantity: 5 m\nQualifier: roughly\nthe rod was long\n")
    assert outcome.blocks == [QuantityBlock("5 m")]
    assert kinds(outcome) == [WarningKind.UNKNOWN_LABEL, WarningKind.STRAY_TEXT]


def test_empty_values_warn():
    outcome = parse_completion("Quantity:\nUnit: m\n\nQuantity: 3\nEntity:   \n")
    assert outcome.blocks == [QuantityBlock("3")]
    assert kinds(outcome) == [WarningKind.EMPTY_VALUE, WarningKind.STRAY_TEXT, WarningKind.EMPTY_VALUE]


def test_values_trimmed_case_kept():
    outcome = parse_completion("Quantity:   About 900 K  \r\nEntity: Jovian Atmosphere\r\n")
    assert outcome.blocks == [QuantityBlock("About 900 K", entity="Jovian Atmosphere")]


def test_grammar_round_trip_on_bundled_examples():
    for example in load_examples():
        outcome = parse_completion(data_section(serialize_example(example)), FinishReason.STOP)
        assert outcome.blocks == list(example.blocks)
        assert outcome.warnings == []


_value = st.text(
    alphabet=st.characters(blacklist_categories=("Cs", "Cc", "Zl", "Zp"), blacklist_characters="\x85"),
    min_size=1,
    max_size=20,
).filter(lambda s: s.strip() and "<|endoftext|>" not in s and "</endoftext|>" not in s)
_blocks = st.builds(
    QuantityBlock,
    quantity=_value,
    unit=st.none() | _value,
    property=st.none() | _value,
    entity=st.none() | _value,
)


@given(st.lists(_blocks, min_size=1, max_size=5))
def test_grammar_round_trip_property(blocks):
    example = FewShotExample("Some paragraph.", blocks)
    outcome = parse_completion(data_section(serialize_example(example)), FinishReason.STOP)
    assert outcome.blocks == blocks


@given(st.lists(_blocks, min_size=1, max_size=5), st.randoms(use_true_random=False))
def test_label_synonyms_equivalent(blocks, rnd):
    text = data_section(serialize_example(FewShotExample("p", blocks)))

    def swap(match):
        label = match.group(1)
        if rnd.random() < 0.5:
            return match.group(0)
        return {"Entity": "MeasuredEntity", "Property": "MeasuredProperty"}[label] + ":"

    swapped = re.sub(r"(?m)^(Entity|Property):", swap, text)
    assert parse_completion(swapped).blocks == parse_completion(text).blocks


@given(st.text(), st.sampled_from(list(FinishReason)))
def test_total_on_arbitrary_text(text, finish):
    outcome = parse_completion(text, finish)
    assert all(b.quantity for b in outcome.blocks)
    assert outcome.blocks or outcome.warnings
