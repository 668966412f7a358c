"""Paragraphs, stand-off annotations and their TSV representation.

Offsets are 0-based Unicode code point indices into the paragraph text,
end exclusive, so ``paragraph.text[start:end] == annotation.text``.
"""
from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import AnnotationParseError

TSV_COLUMNS = (
    "docId",
    "annotSet",
    "annotType",
    "startOffset",
    "endOffset",
    "annotId",
    "text",
    "other",
)
_REQUIRED_COLUMNS = ("annotType", "startOffset", "endOffset", "annotId", "text", "other")
_RELATION_KEYS = ("HasQuantity", "HasProperty", "Qualifies")
# canonical serialization order of the "other" payload
_OTHER_KEYS = ("unit", "mods") + _RELATION_KEYS


class AnnotationType(str, enum.Enum):
    QUANTITY = "Quantity"
    MEASURED_ENTITY = "MeasuredEntity"
    MEASURED_PROPERTY = "MeasuredProperty"
    QUALIFIER = "Qualifier"


@dataclass(frozen=True)
class Paragraph:
    doc_id: str
    text: str

    def __post_init__(self):
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        if not self.text:
            raise ValueError(f"paragraph {self.doc_id!r} has empty text")


@dataclass(frozen=True)
class Other:
    """The key-value payload of the ``other`` column."""

    unit: str | None = None
    mods: tuple[str, ...] | None = None
    HasQuantity: int | None = None
    HasProperty: int | None = None
    Qualifies: int | None = None

    def relations(self) -> dict[str, int]:
        return {k: getattr(self, k) for k in _RELATION_KEYS if getattr(self, k) is not None}

    def is_empty(self) -> bool:
        return all(getattr(self, k) is None for k in _OTHER_KEYS)

    def to_json(self) -> str:
        if self.is_empty():
            return ""
        payload = {}
        for key in _OTHER_KEYS:
            value = getattr(self, key)
            if value is None:
                continue
            if key == "mods":
                value = list(value)
            elif key in _RELATION_KEYS:
                value = str(value)
            payload[key] = value
        return json.dumps(payload, ensure_ascii=False)

    @classmethod
    def from_json(cls, raw: str) -> "Other":
        if not raw.strip():
            return cls()
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise AnnotationParseError(f"malformed other payload {raw!r}: {exc}", raw=raw) from None
        if not isinstance(payload, dict):
            raise AnnotationParseError(f"other payload is not an object: {raw!r}", raw=raw)
        unknown = set(payload) - set(_OTHER_KEYS)
        if unknown:
            raise AnnotationParseError(
                f"unknown keys {sorted(unknown)} in other payload {raw!r}", raw=raw
            )
        kwargs = {}
        unit = payload.get("unit")
        if unit is not None:
            if not isinstance(unit, str):
                raise AnnotationParseError(f"unit must be a string in {raw!r}", raw=raw)
            kwargs["unit"] = unit
        mods = payload.get("mods")
        if mods is not None:
            if not isinstance(mods, list) or not all(isinstance(m, str) for m in mods):
                raise AnnotationParseError(f"mods must be a list of strings in {raw!r}", raw=raw)
            kwargs["mods"] = tuple(mods)
        for key in _RELATION_KEYS:
            if key not in payload:
                continue
            value = payload[key]
            try:
                if isinstance(value, bool):
                    raise ValueError
                kwargs[key] = int(value)
            except (TypeError, ValueError):
                raise AnnotationParseError(
                    f"{key} must reference an integer annotation id in {raw!r}", raw=raw
                ) from None
        return cls(**kwargs)


@dataclass(frozen=True)
class Annotation:
    doc_id: str
    annot_set: int
    annot_type: AnnotationType
    start_offset: int
    end_offset: int
    annot_id: int
    text: str
    other: Other = field(default_factory=Other)

    @property
    def span(self) -> tuple[int, int]:
        return (self.start_offset, self.end_offset)


@dataclass(frozen=True)
class Corpus:
    paragraphs: dict[str, Paragraph] = field(default_factory=dict)
    annotations: dict[str, list[Annotation]] = field(default_factory=dict)

    def doc_ids(self) -> set[str]:
        return set(self.paragraphs) | set(self.annotations)

    @classmethod
    def from_annotations(cls, annotations: Iterable[Annotation], paragraphs=None) -> "Corpus":
        grouped: dict[str, list[Annotation]] = {}
        for annotation in annotations:
            grouped.setdefault(annotation.doc_id, []).append(annotation)
        return cls(paragraphs=dict(paragraphs or {}), annotations=grouped)

    def all_annotations(self) -> list[Annotation]:
        return [a for doc_id in sorted(self.annotations) for a in self.annotations[doc_id]]


def load_paragraphs(directory) -> Corpus:
    """Read one paragraph per ``*.txt`` file; the file stem is the doc id."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"paragraph directory not found: {directory}")
    paragraphs = {}
    for path in sorted(directory.glob("*.txt")):
        try:
            # newline="" keeps \r\n intact so offsets match the raw file
            with open(path, encoding="utf-8", newline="") as fh:
                text = fh.read()
        except UnicodeDecodeError as exc:
            raise UnicodeDecodeError(
                exc.encoding, exc.object, exc.start, exc.end, f"{exc.reason} in {path}"
            ) from None
        except OSError as exc:
            raise OSError(exc.errno, f"cannot read paragraph file {path}: {exc.strerror}") from exc
        paragraphs[path.stem] = Paragraph(path.stem, text)
    return Corpus(paragraphs=paragraphs)


def _parse_int(value: str, column: str, row: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise AnnotationParseError(f"{column} is not an integer: {value!r}", row=row) from None


def parse_annotation_tsv(content: str, doc_id: str | None = None) -> list[Annotation]:
    """Parse a MeasEval-style annotation TSV.

    ``docId`` and ``annotSet`` columns are optional: a missing ``docId`` is
    taken from the ``doc_id`` argument, a missing ``annotSet`` defaults to 1.
    """
    reader = csv.reader(
        io.StringIO(content), delimiter="\t", quoting=csv.QUOTE_NONE, quotechar=None
    )
    try:
        header = next(reader)
    except StopIteration:
        raise AnnotationParseError("annotation TSV has no header row") from None
    header = [h.strip() for h in header]
    missing = [c for c in _REQUIRED_COLUMNS if c not in header]
    if missing:
        raise AnnotationParseError(f"header lacks columns {missing}")
    if "docId" not in header and doc_id is None:
        raise AnnotationParseError("no docId column and no doc_id supplied")
    index = {name: i for i, name in enumerate(header)}

    annotations = []
    for row_no, row in enumerate(reader, start=1):
        if not any(cell.strip() for cell in row):
            continue
        # trailing empty cells are often dropped by spreadsheet exports
        row = row + [""] * (len(header) - len(row))
        cell = {name: row[i] for name, i in index.items()}
        type_name = cell["annotType"].strip()
        try:
            annot_type = AnnotationType(type_name)
        except ValueError:
            raise AnnotationParseError(f"unknown annotType {type_name!r}", row=row_no) from None
        try:
            other = Other.from_json(cell["other"])
        except AnnotationParseError as exc:
            raise AnnotationParseError(str(exc), row=row_no, raw=exc.raw) from None
        annot_set = _parse_int(cell["annotSet"], "annotSet", row_no) if "annotSet" in cell else 1
        annotations.append(
            Annotation(
                doc_id=cell["docId"] if "docId" in cell else doc_id,
                annot_set=annot_set,
                annot_type=annot_type,
                start_offset=_parse_int(cell["startOffset"], "startOffset", row_no),
                end_offset=_parse_int(cell["endOffset"], "endOffset", row_no),
                annot_id=_parse_int(cell["annotId"], "annotId", row_no),
                text=cell["text"],
                other=other,
            )
        )
    return annotations


def write_annotation_tsv(annotations: Iterable[Annotation]) -> str:
    """Render annotations sorted by (doc_id, annot_set, annot_id).

    Raises ValueError for text containing tabs or line breaks, which the
    format cannot carry.
    """
    out = io.StringIO()
    writer = csv.writer(
        out, delimiter="\t", quoting=csv.QUOTE_NONE, quotechar=None, lineterminator="\n"
    )
    writer.writerow(TSV_COLUMNS)
    for a in sorted(annotations, key=lambda a: (a.doc_id, a.annot_set, a.annot_id)):
        if any(ch in a.text for ch in "\t\r\n"):
            raise ValueError(
                f"annotation {a.doc_id}/{a.annot_id} text contains a tab or line break"
            )
        writer.writerow(
            [
                a.doc_id,
                a.annot_set,
                a.annot_type.value,
                a.start_offset,
                a.end_offset,
                a.annot_id,
                a.text,
                a.other.to_json(),
            ]
        )
    return out.getvalue()


def read_annotation_file(path, doc_id: str | None = None) -> list[Annotation]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_annotation_tsv(fh.read(), doc_id=doc_id)


class Rule(str, enum.Enum):
    MISSING_PARAGRAPH = "MissingParagraph"
    OFFSET_RANGE = "OffsetRange"
    TEXT_MISMATCH = "TextMismatch"
    DUPLICATE_ID = "DuplicateId"
    DANGLING_REFERENCE = "DanglingReference"
    WRONG_REFERENCE_TYPE = "WrongReferenceType"
    UNIT_ON_NON_QUANTITY = "UnitOnNonQuantity"
    BAD_ANNOT_SET = "BadAnnotSet"


@dataclass(frozen=True)
class Violation:
    doc_id: str
    annot_id: int | None
    rule: Rule
    message: str


_REFERENCE_TARGETS = {
    "HasQuantity": {AnnotationType.QUANTITY},
    "HasProperty": {AnnotationType.MEASURED_PROPERTY},
    "Qualifies": {AnnotationType.QUANTITY, AnnotationType.MEASURED_PROPERTY},
}


def validate(corpus: Corpus) -> list[Violation]:
    violations = []
    for doc_id in sorted(corpus.annotations):
        annotations = corpus.annotations[doc_id]
        paragraph = corpus.paragraphs.get(doc_id)
        if paragraph is None:
            violations.append(
                Violation(doc_id, None, Rule.MISSING_PARAGRAPH, "annotations without a paragraph")
            )
        by_id: dict[int, Annotation] = {}
        for a in annotations:
            if a.annot_id in by_id:
                violations.append(
                    Violation(doc_id, a.annot_id, Rule.DUPLICATE_ID, "annot_id used twice")
                )
            else:
                by_id[a.annot_id] = a
        for a in annotations:
            v = lambda rule, msg: violations.append(Violation(doc_id, a.annot_id, rule, msg))  # noqa: E731
            if a.annot_set < 1:
                v(Rule.BAD_ANNOT_SET, f"annot_set {a.annot_set} is not positive")
            if paragraph is not None:
                if not 0 <= a.start_offset < a.end_offset <= len(paragraph.text):
                    v(
                        Rule.OFFSET_RANGE,
                        f"span [{a.start_offset},{a.end_offset}) outside"
                        f" text of length {len(paragraph.text)}",
                    )
                elif paragraph.text[a.start_offset : a.end_offset] != a.text:
                    v(
                        Rule.TEXT_MISMATCH,
                        f"slice {paragraph.text[a.start_offset:a.end_offset]!r} != {a.text!r}",
                    )
            if a.other.unit is not None and a.annot_type is not AnnotationType.QUANTITY:
                v(Rule.UNIT_ON_NON_QUANTITY, f"unit on {a.annot_type.value}")
            for key, target_id in a.other.relations().items():
                target = by_id.get(target_id)
                if target is None:
                    v(Rule.DANGLING_REFERENCE, f"{key} -> {target_id} not in document")
                elif target.annot_type not in _REFERENCE_TARGETS[key]:
                    v(
                        Rule.WRONG_REFERENCE_TYPE,
                        f"{key} -> {target_id} is a {target.annot_type.value}",
                    )
    return violations
