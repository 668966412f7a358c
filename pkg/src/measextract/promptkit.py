"""Few-shot prompt construction and token budgeting.

Each example is rendered as::

    Text:
    <paragraph>

    Data:
    Quantity: ...
    Unit: ...

    Quantity: ...
    <|endoftext|>

and the target paragraph is appended with a dangling ``Data:`` label that
the model is expected to continue.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

from .corpus import Paragraph
from .errors import ConfigurationError, OversizedPrompt

END_OF_TEXT = "<|endoftext|>"
DEFAULT_TOKEN_LIMIT = 2049
DEFAULT_MAX_TOKENS = 350
DEFAULT_CHARS_PER_TOKEN = 4.0

# label order used when rendering a block
BLOCK_LABELS = (("Quantity", "quantity"), ("Unit", "unit"), ("Property", "property"), ("Entity", "entity"))


@dataclass(frozen=True)
class QuantityBlock:
    """One measured quantity with its optional unit, property and entity strings.

    Values are stripped on construction; they must be non-empty and fit on
    one line.
    """

    quantity: str
    unit: str | None = None
    property: str | None = None
    entity: str | None = None

    def __post_init__(self):
        for _, name in BLOCK_LABELS:
            value = getattr(self, name)
            if value is None:
                if name == "quantity":
                    raise ValueError("quantity is required")
                continue
            if "\n" in value or "\r" in value:
                raise ValueError(f"{name} value spans several lines: {value!r}")
            stripped = value.strip()
            if not stripped:
                raise ValueError(f"{name} value is blank")
            object.__setattr__(self, name, stripped)

    def lines(self) -> list[str]:
        return [
            f"{label}: {getattr(self, name)}"
            for label, name in BLOCK_LABELS
            if getattr(self, name) is not None
        ]


@dataclass(frozen=True)
class FewShotExample:
    paragraph_text: str
    blocks: tuple[QuantityBlock, ...]

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise ValueError("a few-shot example needs at least one quantity block")
        if not self.paragraph_text.strip():
            raise ValueError("a few-shot example needs paragraph text")


class EstimatorMode(str, enum.Enum):
    HEURISTIC = "heuristic"
    EXACT = "exact"


@dataclass(frozen=True)
class BudgetPolicy:
    token_limit: int = DEFAULT_TOKEN_LIMIT
    max_tokens_cap: int = DEFAULT_MAX_TOKENS
    chars_per_token: float = DEFAULT_CHARS_PER_TOKEN
    safety_margin: int = 0
    estimator_mode: EstimatorMode = EstimatorMode.HEURISTIC
    # sub-word token counter used in EXACT mode
    tokenizer: Callable[[str], int] | None = None

    def __post_init__(self):
        if self.token_limit <= 0:
            raise ConfigurationError("token_limit must be positive")
        if not 0 < self.max_tokens_cap <= self.token_limit:
            raise ConfigurationError("max_tokens_cap must be in (0, token_limit]")
        if self.chars_per_token <= 0:
            raise ConfigurationError("chars_per_token must be positive")
        if self.safety_margin < 0:
            raise ConfigurationError("safety_margin must be non-negative")
        object.__setattr__(self, "estimator_mode", EstimatorMode(self.estimator_mode))


def serialize_blocks(blocks: Sequence[QuantityBlock]) -> str:
    return "\n\n".join("\n".join(block.lines()) for block in blocks)


def serialize_example(example: FewShotExample) -> str:
    return (
        f"Text:\n{example.paragraph_text}\n\nData:\n"
        f"{serialize_blocks(example.blocks)}\n{END_OF_TEXT}\n"
    )


def build_prompt(base_examples: Sequence[FewShotExample], target: Paragraph) -> str:
    if not base_examples:
        raise ConfigurationError("at least one few-shot example is required")
    shots = "".join(serialize_example(e) for e in base_examples)
    return f"{shots}Text:\n{target.text}\n\nData:\n"


def estimate_tokens(text: str, policy: BudgetPolicy) -> int:
    if policy.estimator_mode is EstimatorMode.EXACT:
        if policy.tokenizer is None:
            raise ConfigurationError("exact token estimation needs a tokenizer")
        return int(policy.tokenizer(text))
    return math.ceil(len(text) / policy.chars_per_token)


def compute_max_tokens(prompt_tokens: int, policy: BudgetPolicy) -> int:
    """Largest completion budget that keeps the request under the hard limit."""
    if prompt_tokens < 0:
        raise ValueError("prompt_tokens must be non-negative")
    room = policy.token_limit - policy.safety_margin - prompt_tokens
    if room <= 0:
        raise OversizedPrompt(prompt_tokens, policy.token_limit, policy.safety_margin)
    return min(policy.max_tokens_cap, room)


def gpt2_token_counter() -> Callable[[str], int]:
    """Return a GPT-2 BPE token counter (needs the ``gpt3_tokenizer`` package).

    The text is tokenized as plain text, so ``<|endoftext|>`` counts as
    several tokens rather than one special token; this over-estimates.
    """
    try:
        import gpt3_tokenizer
    except ImportError:
        raise ConfigurationError(
            "exact token counting needs the gpt3_tokenizer package"
            " (pip install 'artifact[exact]')"
        ) from None
    return gpt3_tokenizer.count_tokens


def parse_examples(content: str) -> list[FewShotExample]:
    """Parse text in the ``serialize_example`` grammar back into examples."""
    from .parser import parse_completion

    examples = []
    for chunk in content.split(END_OF_TEXT):
        chunk = chunk.strip("\n")
        if not chunk.strip():
            continue
        if not chunk.startswith("Text:\n"):
            raise ConfigurationError(f"example does not start with 'Text:': {chunk[:60]!r}")
        paragraph, sep, data = chunk[len("Text:\n"):].partition("\n\nData:\n")
        if not sep:
            raise ConfigurationError(f"example lacks a 'Data:' section: {chunk[:60]!r}")
        outcome = parse_completion(data)
        if outcome.warnings:
            raise ConfigurationError(
                f"malformed data section in example {paragraph[:40]!r}: {outcome.warnings}"
            )
        examples.append(FewShotExample(paragraph, outcome.blocks))
    return examples


def load_examples(path=None) -> list[FewShotExample]:
    """Load few-shot examples from a file, or the bundled base prompt."""
    if path is None:
        content = resources.files("measextract").joinpath("data/base_prompt.txt").read_text("utf-8")
    else:
        content = Path(path).read_text(encoding="utf-8")
    return parse_examples(content)
