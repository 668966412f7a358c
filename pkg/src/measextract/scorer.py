"""Overlap-based scoring of predicted against gold annotations.

Annotations of the same type are paired greedily by character-overlap F1.
Units and relations are scored as derived classes on top of those pairs.
Every class gets partial-credit precision and recall:

    precision = sum of matched scores / number predicted
    recall    = sum of matched scores / number in gold
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

from .corpus import Annotation, AnnotationType, Corpus

UNIT = "Unit"
RELATIONS = ("HasQuantity", "HasProperty", "Qualifies")
CLASS_ORDER = (
    AnnotationType.QUANTITY.value,
    UNIT,
    AnnotationType.MEASURED_ENTITY.value,
    AnnotationType.MEASURED_PROPERTY.value,
    AnnotationType.QUALIFIER.value,
) + RELATIONS


@dataclass(frozen=True)
class MatchRecord:
    doc_id: str
    annot_class: str
    gold_id: int | None
    pred_id: int | None
    score: float


@dataclass
class ClassScore:
    precision: float
    recall: float
    f_measure: float
    n_gold: int
    n_pred: int
    matched_score_sum: float


@dataclass
class ScoreReport:
    per_class: dict[str, ClassScore] = field(default_factory=dict)
    overall: tuple[float, float, float] = (0.0, 0.0, 0.0)
    matches: list[MatchRecord] = field(default_factory=list)


def overlap_score(gold_span: tuple[int, int], pred_span: tuple[int, int]) -> float:
    """Character-overlap F1: 2 * |intersection| / (|gold| + |pred|)."""
    (gs, ge), (ps, pe) = gold_span, pred_span
    if not gs < ge or not ps < pe:
        raise ValueError(f"invalid span {gold_span if not gs < ge else pred_span}")
    inter = min(ge, pe) - max(gs, ps)
    if inter <= 0:
        return 0.0
    return 2.0 * inter / ((ge - gs) + (pe - ps))


def greedy_assign(pairs: Sequence[tuple[float, int, int]]) -> list[tuple[float, int, int]]:
    """One-to-one assignment taking the best remaining (score, gold, pred) first.

    Ties are broken by ascending gold id, then pred id.
    """
    used_gold, used_pred, chosen = set(), set(), []
    for score, g, p in sorted(pairs, key=lambda t: (-t[0], t[1], t[2])):
        if g in used_gold or p in used_pred:
            continue
        used_gold.add(g)
        used_pred.add(p)
        chosen.append((score, g, p))
    return chosen


def _unmatched(doc_id, cls, gold_ids, pred_ids, matched_gold, matched_pred):
    records = [MatchRecord(doc_id, cls, g, None, 0.0) for g in gold_ids if g not in matched_gold]
    records += [MatchRecord(doc_id, cls, None, p, 0.0) for p in pred_ids if p not in matched_pred]
    return records


def match_document(gold: Sequence[Annotation], pred: Sequence[Annotation]) -> list[MatchRecord]:
    doc_ids = {a.doc_id for a in gold} | {a.doc_id for a in pred}
    if len(doc_ids) > 1:
        raise ValueError(f"annotations from several documents: {sorted(doc_ids)}")
    if not doc_ids:
        return []
    doc_id = doc_ids.pop()
    records: list[MatchRecord] = []
    # gold id -> (pred id, span score), over all annotation types
    span_match: dict[int, tuple[int, float]] = {}

    for annot_type in AnnotationType:
        g_items = [a for a in gold if a.annot_type is annot_type]
        p_items = [a for a in pred if a.annot_type is annot_type]
        pairs = []
        for g in g_items:
            for p in p_items:
                score = overlap_score(g.span, p.span)
                if score > 0:
                    pairs.append((score, g.annot_id, p.annot_id))
        chosen = greedy_assign(pairs)
        for score, g, p in chosen:
            span_match[g] = (p, score)
            records.append(MatchRecord(doc_id, annot_type.value, g, p, score))
        records += _unmatched(
            doc_id,
            annot_type.value,
            [a.annot_id for a in g_items],
            [a.annot_id for a in p_items],
            {g for _, g, _ in chosen},
            {p for _, _, p in chosen},
        )

    gold_by_id = {a.annot_id: a for a in gold}
    pred_by_id = {a.annot_id: a for a in pred}

    gold_units = [a.annot_id for a in gold if a.other.unit is not None]
    pred_units = [a.annot_id for a in pred if a.other.unit is not None]
    unit_gold, unit_pred = set(), set()
    for g in gold_units:
        if g not in span_match:
            continue
        p, score = span_match[g]
        pred_unit = pred_by_id[p].other.unit
        if pred_unit is not None and pred_unit.strip() == gold_by_id[g].other.unit.strip():
            records.append(MatchRecord(doc_id, UNIT, g, p, score))
            unit_gold.add(g)
            unit_pred.add(p)
    records += _unmatched(doc_id, UNIT, gold_units, pred_units, unit_gold, unit_pred)

    for kind in RELATIONS:
        gold_rel = {a.annot_id: getattr(a.other, kind) for a in gold if getattr(a.other, kind) is not None}
        pred_rel = {a.annot_id: getattr(a.other, kind) for a in pred if getattr(a.other, kind) is not None}
        rel_gold, rel_pred = set(), set()
        for source, target in gold_rel.items():
            if source not in span_match or target not in span_match:
                continue
            p_source, s_score = span_match[source]
            p_target, t_score = span_match[target]
            if pred_rel.get(p_source) == p_target:
                records.append(MatchRecord(doc_id, kind, source, p_source, min(s_score, t_score)))
                rel_gold.add(source)
                rel_pred.add(p_source)
        records += _unmatched(doc_id, kind, list(gold_rel), list(pred_rel), rel_gold, rel_pred)
    return records


def _ratio(matched: float, count: int, other_count: int) -> float:
    if count == 0:
        return 1.0 if other_count == 0 else 0.0
    return matched / count


def _f(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def summarize(records: Sequence[MatchRecord]) -> ScoreReport:
    totals: dict[str, list] = {}
    for r in records:
        t = totals.setdefault(r.annot_class, [0, 0, 0.0])
        if r.gold_id is not None:
            t[0] += 1
        if r.pred_id is not None:
            t[1] += 1
        if r.gold_id is not None and r.pred_id is not None:
            t[2] += r.score
    report = ScoreReport(matches=list(records))
    for cls in sorted(totals, key=_class_rank):
        n_gold, n_pred, matched = totals[cls]
        p = _ratio(matched, n_pred, n_gold)
        r = _ratio(matched, n_gold, n_pred)
        report.per_class[cls] = ClassScore(p, r, _f(p, r), n_gold, n_pred, matched)
    if totals:
        n_gold = sum(t[0] for t in totals.values())
        n_pred = sum(t[1] for t in totals.values())
        matched = sum(t[2] for t in totals.values())
        p = _ratio(matched, n_pred, n_gold)
        r = _ratio(matched, n_gold, n_pred)
        report.overall = (p, r, _f(p, r))
    return report


def _class_rank(cls: str):
    return (CLASS_ORDER.index(cls), cls) if cls in CLASS_ORDER else (len(CLASS_ORDER), cls)


def score_corpus(gold: Corpus, pred: Corpus) -> ScoreReport:
    unknown = sorted(set(pred.annotations) - gold.doc_ids())
    if unknown:
        raise ValueError(f"predicted documents missing from gold: {', '.join(unknown)}")
    records = []
    for doc_id in sorted(gold.doc_ids()):
        records += match_document(gold.annotations.get(doc_id, []), pred.annotations.get(doc_id, []))
    return summarize(records)


def render_report(report: ScoreReport, fmt: str = "table") -> str:
    rows = [(cls, s.precision, s.recall, s.f_measure, s.n_gold, s.n_pred) for cls, s in report.per_class.items()]
    n_gold = sum(s.n_gold for s in report.per_class.values())
    n_pred = sum(s.n_pred for s in report.per_class.values())
    rows.append(("Overall", *report.overall, n_gold, n_pred))
    if fmt == "table":
        lines = [f"{'Class':<18}{'P':<5}  {'R':<5}  {'F':<5}  {'Gold':>6}  {'Pred':>6}"]
        for cls, p, r, f, g, n in rows:
            lines.append(f"{cls:<18}{p:.3f}  {r:.3f}  {f:.3f}  {g:>6}  {n:>6}")
        return "\n".join(lines) + "\n"
    if fmt in ("tsv", "delimited"):
        out = io.StringIO()
        writer = csv.writer(out, delimiter="\t", lineterminator="\n")
        writer.writerow(["class", "precision", "recall", "f_measure", "n_gold", "n_pred"])
        for cls, p, r, f, g, n in rows:
            writer.writerow([cls, f"{p:.3f}", f"{r:.3f}", f"{f:.3f}", g, n])
        return out.getvalue()
    raise ValueError(f"unknown report format {fmt!r}")
