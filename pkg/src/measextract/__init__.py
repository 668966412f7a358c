"""Few-shot extraction of measurement annotations from scientific paragraphs."""

from .corpus import (
    Annotation,
    AnnotationType,
    Corpus,
    Other,
    Paragraph,
    load_paragraphs,
    parse_annotation_tsv,
    validate,
    write_annotation_tsv,
)
from .parser import parse_completion
from .promptkit import (
    BudgetPolicy,
    FewShotExample,
    QuantityBlock,
    build_prompt,
    compute_max_tokens,
    estimate_tokens,
    load_examples,
    serialize_example,
)
from .reconstruct import dedup_blocks, locate_span, reconstruct
from .scorer import match_document, overlap_score, render_report, score_corpus

__version__ = "0.1.0"
