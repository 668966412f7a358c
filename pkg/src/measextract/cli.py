"""Command-line driver: ``prompt``, ``run``, ``post`` and ``score`` stages.

Every stage reads and writes files under ``--out`` so each one can be
re-run on its own:

    <out>/prompts/<doc_id>.prompt.txt   prompt stage
    <out>/prompts/estimates.tsv
    <out>/raw/<doc_id>.response          run stage
    <out>/raw/manifest.json
    <out>/predictions.tsv                post stage
    <out>/diagnostics.jsonl
    <out>/report.txt                     score stage

Settings come from flags, then an optional ``--config`` file of
``key = value`` lines, then built-in defaults.
"""
from __future__ import annotations

import argparse
import enum
import logging
import sys
from pathlib import Path

from . import backend as be
from .corpus import Corpus, load_paragraphs, read_annotation_file, validate, write_annotation_tsv
from .errors import BackendError, ConfigurationError, MeasExtractError, OversizedPrompt
from .parser import parse_completion
from .promptkit import (
    BudgetPolicy,
    EstimatorMode,
    build_prompt,
    compute_max_tokens,
    estimate_tokens,
    gpt2_token_counter,
    load_examples,
)
from .reconstruct import diagnostics_jsonl, reconstruct_completion
from .scorer import render_report, score_corpus

log = logging.getLogger("measextract")


class ExitCode(enum.IntEnum):
    OK = 0
    CONFIG = 2
    BACKEND = 3
    VALIDATION = 4
    OVERSIZED = 5


DEFAULTS = {
    "out": "out",
    "corpus": None,
    "base_prompt": None,
    "backend": "live",
    "gold": None,
    "pred": None,
    "report": None,
    "format": "table",
    "batch_size": 25,
    "model": "davinci",
    "temperature": 0.0,
    "top_p": 1.0,
    "token_limit": 2049,
    "max_tokens_cap": 350,
    "chars_per_token": 4.0,
    "safety_margin": 0,
    "estimator": "heuristic",
    "retry_limit": 3,
    "concurrency": 1,
    "endpoint": be.DEFAULT_ENDPOINT,
    "api_key_env": be.DEFAULT_API_KEY_ENV,
}
_CONVERTERS = {
    "batch_size": int,
    "temperature": float,
    "top_p": float,
    "token_limit": int,
    "max_tokens_cap": int,
    "chars_per_token": float,
    "safety_margin": int,
    "retry_limit": int,
    "concurrency": int,
}


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    settings = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from None
    for line_no, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigurationError(f"{path}:{line_no}: expected 'key = value'")
        if key not in DEFAULTS:
            hint = "; credentials belong in the environment" if "key" in key else ""
            raise ConfigurationError(f"{path}:{line_no}: unknown setting {key!r}{hint}")
        settings[key] = value.strip()
    return settings


def resolve_settings(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    if args.config:
        settings.update(read_config_file(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    for key, convert in _CONVERTERS.items():
        try:
            settings[key] = convert(settings[key])
        except (TypeError, ValueError):
            raise ConfigurationError(f"setting {key} has invalid value {settings[key]!r}") from None
    return settings


def _require(path, what, kind="file") -> Path:
    if path is None:
        raise ConfigurationError(f"{what} is required")
    path = Path(path)
    exists = path.is_dir() if kind == "dir" else path.is_file()
    if not exists:
        raise ConfigurationError(f"{what} not found: {path}")
    return path


def _policy(settings) -> BudgetPolicy:
    try:
        mode = EstimatorMode(settings["estimator"])
    except ValueError:
        raise ConfigurationError(f"unknown estimator {settings['estimator']!r}") from None
    return BudgetPolicy(
        token_limit=settings["token_limit"],
        max_tokens_cap=settings["max_tokens_cap"],
        chars_per_token=settings["chars_per_token"],
        safety_margin=settings["safety_margin"],
        estimator_mode=mode,
        tokenizer=gpt2_token_counter() if mode is EstimatorMode.EXACT else None,
    )


def _examples(settings):
    path = settings["base_prompt"]
    return load_examples(_require(path, "base prompt") if path else None)


def _make_backend(settings):
    choice = settings["backend"]
    if choice == "live":
        return be.HttpBackend(
            endpoint=settings["endpoint"],
            api_key_env=settings["api_key_env"],
            retry_limit=settings["retry_limit"],
        )
    if choice.startswith("fixture:"):
        return be.FixtureBackend.from_file(_require(choice[len("fixture:"):], "fixture file"))
    raise ConfigurationError(f"--backend must be 'live' or 'fixture:<path>', got {choice!r}")


def cmd_prompt(settings) -> ExitCode:
    corpus = load_paragraphs(_require(settings["corpus"], "corpus directory", "dir"))
    examples = _examples(settings)
    policy = _policy(settings)
    out = Path(settings["out"]) / "prompts"
    out.mkdir(parents=True, exist_ok=True)
    rows = ["doc_id\tprompt_tokens\tmax_tokens"]
    oversized = []
    for doc_id in sorted(corpus.paragraphs):
        prompt = build_prompt(examples, corpus.paragraphs[doc_id])
        (out / f"{doc_id}.prompt.txt").write_text(prompt, encoding="utf-8")
        tokens = estimate_tokens(prompt, policy)
        try:
            max_tokens = str(compute_max_tokens(tokens, policy))
        except OversizedPrompt:
            max_tokens = "OVERSIZED"
            oversized.append(doc_id)
        rows.append(f"{doc_id}\t{tokens}\t{max_tokens}")
    (out / "estimates.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"wrote {len(corpus.paragraphs)} prompts to {out}")
    for doc_id in oversized:
        print(f"oversized prompt: {doc_id}", file=sys.stderr)
    return ExitCode.OVERSIZED if oversized else ExitCode.OK


def cmd_run(settings) -> ExitCode:
    corpus = load_paragraphs(_require(settings["corpus"], "corpus directory", "dir"))
    examples = _examples(settings)
    config = be.RunConfig(
        output_directory=Path(settings["out"]) / "raw",
        batch_size=settings["batch_size"],
        model=settings["model"],
        temperature=settings["temperature"],
        top_p=settings["top_p"],
        budget=_policy(settings),
        retry_limit=settings["retry_limit"],
        request_concurrency=settings["concurrency"],
    )
    manifest = be.run_batch(corpus, examples, config, _make_backend(settings))
    counts = {}
    for entry in manifest.entries:
        counts[entry.status.value] = counts.get(entry.status.value, 0) + 1
        if entry.status is not be.Status.COMPLETED:
            print(f"{entry.doc_id}: {entry.status.value}: {entry.reason}", file=sys.stderr)
    print(", ".join(f"{k}: {v}" for k, v in sorted(counts.items())) or "no paragraphs")
    if counts.get(be.Status.FAILED.value):
        return ExitCode.BACKEND
    if counts.get(be.Status.OVERSIZED_PROMPT.value):
        return ExitCode.OVERSIZED
    return ExitCode.OK


def cmd_post(settings) -> ExitCode:
    corpus = load_paragraphs(_require(settings["corpus"], "corpus directory", "dir"))
    out = Path(settings["out"])
    raw_dir = _require(out / "raw", "raw response directory", "dir")
    annotations, records = [], []
    for path in sorted(raw_dir.glob(f"*{be.RESPONSE_SUFFIX}")):
        _, result = be.read_raw_response(path)
        paragraph = corpus.paragraphs.get(result.doc_id)
        if paragraph is None:
            raise ConfigurationError(f"response for unknown paragraph {result.doc_id!r}")
        outcome = parse_completion(result.text, result.finish_reason)
        for w in outcome.warnings:
            records.append({"doc_id": result.doc_id, "kind": "parse_warning", "warning": w.kind.value, "line": w.line})
        blocks = outcome.complete_blocks()
        if len(blocks) < len(outcome.blocks):
            records.append({"doc_id": result.doc_id, "kind": "cut_block_discarded", "block": outcome.blocks[-1].lines()})
        report = reconstruct_completion(paragraph, blocks)
        records += report.diagnostics()
        annotations += report.annotations
    violations = validate(Corpus.from_annotations(annotations, corpus.paragraphs))
    for v in violations:
        print(f"{v.doc_id}/{v.annot_id}: {v.rule.value}: {v.message}", file=sys.stderr)
    (out / "predictions.tsv").write_text(write_annotation_tsv(annotations), encoding="utf-8")
    (out / "diagnostics.jsonl").write_text(diagnostics_jsonl(records), encoding="utf-8")
    print(f"wrote {len(annotations)} annotations to {out / 'predictions.tsv'}")
    return ExitCode.VALIDATION if violations else ExitCode.OK


def cmd_score(settings) -> ExitCode:
    gold_path = _require(settings["gold"], "gold annotation file")
    pred_path = _require(settings["pred"] or Path(settings["out"]) / "predictions.tsv", "predicted annotation file")
    paragraphs = {}
    if settings["corpus"]:
        paragraphs = load_paragraphs(_require(settings["corpus"], "corpus directory", "dir")).paragraphs
    gold = Corpus.from_annotations(read_annotation_file(gold_path), paragraphs)
    pred = Corpus.from_annotations(read_annotation_file(pred_path))
    try:
        report = score_corpus(gold, pred)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ExitCode.VALIDATION
    text = render_report(report, settings["format"])
    sys.stdout.write(text)
    if settings["report"]:
        Path(settings["report"]).write_text(text, encoding="utf-8")
    return ExitCode.OK


COMMANDS = {"prompt": cmd_prompt, "run": cmd_run, "post": cmd_post, "score": cmd_score}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--out", help="working directory for stage outputs (default: out)")
    common.add_argument("--corpus", help="directory of <doc_id>.txt paragraph files")
    common.add_argument("-v", "--verbose", action="store_true")

    budget = argparse.ArgumentParser(add_help=False)
    budget.add_argument("--base-prompt", dest="base_prompt", help="few-shot example file (default: bundled)")
    budget.add_argument("--token-limit", dest="token_limit", type=int)
    budget.add_argument("--max-tokens-cap", dest="max_tokens_cap", type=int)
    budget.add_argument("--chars-per-token", dest="chars_per_token", type=float)
    budget.add_argument("--safety-margin", dest="safety_margin", type=int)
    budget.add_argument("--estimator", choices=[m.value for m in EstimatorMode])

    parser = argparse.ArgumentParser(
        prog="measextract", description="Few-shot measurement extraction pipeline."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prompt", parents=[common, budget], help="write prompts and token estimates")

    run = sub.add_parser("run", parents=[common, budget], help="submit prompts to a backend")
    run.add_argument("--backend", help="'live' or 'fixture:<path>'")
    run.add_argument("--batch-size", dest="batch_size", type=int)
    run.add_argument("--model")
    run.add_argument("--temperature", type=float)
    run.add_argument("--top-p", dest="top_p", type=float)
    run.add_argument("--retry-limit", dest="retry_limit", type=int)
    run.add_argument("--concurrency", type=int)
    run.add_argument("--endpoint")
    run.add_argument("--api-key-env", dest="api_key_env", help="environment variable holding the API key")

    sub.add_parser("post", parents=[common], help="turn raw responses into annotations")

    score = sub.add_parser("score", parents=[common], help="score predictions against gold")
    score.add_argument("--gold")
    score.add_argument("--pred", help="predicted TSV (default: <out>/predictions.tsv)")
    score.add_argument("--format", choices=["table", "tsv"])
    score.add_argument("--report", help="also write the report to this file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        settings = resolve_settings(args)
        return int(COMMANDS[args.command](settings))
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return int(ExitCode.CONFIG)
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return int(ExitCode.CONFIG)
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return int(ExitCode.BACKEND)
    except MeasExtractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return int(ExitCode.VALIDATION)


if __name__ == "__main__":
    sys.exit(main())
