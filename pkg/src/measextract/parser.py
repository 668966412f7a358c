"""Turn raw completion text into QuantityBlocks.

Never raises on odd input: anything that cannot be used becomes a
ParseWarning and parsing carries on.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

from .backend import FinishReason
from .promptkit import END_OF_TEXT, QuantityBlock

# the model sometimes imitates the malformed separator seen in prompts
_TERMINATORS = (END_OF_TEXT, "</endoftext|>")

LABEL_FIELDS = {
    "Quantity": "quantity",
    "Unit": "unit",
    "Property": "property",
    "MeasuredProperty": "property",
    "Entity": "entity",
    "MeasuredEntity": "entity",
}
_LABEL_LINE = re.compile(r"^([A-Za-z][A-Za-z ]*?)\s*:(.*)$")


class WarningKind(str, enum.Enum):
    UNKNOWN_LABEL = "UnknownLabel"
    STRAY_TEXT = "StrayText"
    DUPLICATE_LABEL = "DuplicateLabel"
    EMPTY_VALUE = "EmptyValue"
    TRUNCATED_FINAL_BLOCK = "TruncatedFinalBlock"
    EMPTY_OUTPUT = "EmptyOutput"


@dataclass(frozen=True)
class ParseWarning:
    kind: WarningKind
    line: str | None = None


@dataclass
class ParseOutcome:
    blocks: list[QuantityBlock] = field(default_factory=list)
    warnings: list[ParseWarning] = field(default_factory=list)
    truncated: bool = False
    # the text ran out while a block was still open (no blank line or marker after it)
    final_block_open: bool = False

    def complete_blocks(self) -> list[QuantityBlock]:
        """Blocks minus a final block that a length cutoff may have cut short."""
        if self.truncated and self.final_block_open:
            return self.blocks[:-1]
        return list(self.blocks)


def _answer_section(text: str) -> tuple[str, bool]:
    cut = len(text)
    for marker in _TERMINATORS:
        pos = text.find(marker)
        if pos != -1:
            cut = min(cut, pos)
    return text[:cut], cut < len(text)


def parse_completion(text: str, finish_reason=FinishReason.STOP) -> ParseOutcome:
    outcome = ParseOutcome(truncated=FinishReason.coerce(finish_reason) is FinishReason.LENGTH)
    warn = lambda kind, line=None: outcome.warnings.append(ParseWarning(kind, line))  # noqa: E731

    current: dict[str, str] | None = None
    saw_content = False

    def close():
        nonlocal current
        if current is not None:
            outcome.blocks.append(QuantityBlock(**current))
        current = None

    answer, stopped = _answer_section(text)
    answer = answer.replace("\r\n", "\n").replace("\r", "\n")
    for raw_line in answer.split("\n"):
        line = raw_line.strip()
        if not line:
            close()
            continue
        if line.startswith("Text:"):
            # the model has started inventing a new example
            stopped = True
            break
        if line == "Data:":
            continue
        saw_content = True
        match = _LABEL_LINE.match(line)
        if match is None:
            warn(WarningKind.STRAY_TEXT, raw_line)
            continue
        label, value = match.group(1), match.group(2).strip()
        name = LABEL_FIELDS.get(label)
        if name is None:
            warn(WarningKind.UNKNOWN_LABEL, raw_line)
            continue
        if name == "quantity":
            close()
            if value:
                current = {"quantity": value}
            else:
                warn(WarningKind.EMPTY_VALUE, raw_line)
            continue
        if current is None:
            warn(WarningKind.STRAY_TEXT, raw_line)
        elif not value:
            warn(WarningKind.EMPTY_VALUE, raw_line)
        elif name in current:
            warn(WarningKind.DUPLICATE_LABEL, raw_line)
        else:
            current[name] = value
    outcome.final_block_open = current is not None and not stopped
    close()

    if not saw_content:
        warn(WarningKind.EMPTY_OUTPUT)
    if outcome.truncated and outcome.blocks:
        warn(WarningKind.TRUNCATED_FINAL_BLOCK, outcome.blocks[-1].lines()[0])
    return outcome


def data_section(serialized_example: str) -> str:
    """The part of a serialized example the model would have to generate."""
    _, _, data = serialized_example.partition("\n\nData:\n")
    return data
