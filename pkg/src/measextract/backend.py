"""Completion backends and the batch driver.

Two backends share one ``complete`` interface: ``HttpBackend`` posts to a
completion-API-compatible endpoint, ``FixtureBackend`` replays recorded
completions so the whole pipeline can run offline.
"""
from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx

from .errors import (
    BackendError,
    BudgetRejected,
    ConfigurationError,
    FixtureMissing,
    OversizedPrompt,
    TransportError,
)
from .promptkit import BudgetPolicy, build_prompt, compute_max_tokens, estimate_tokens

log = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://api.openai.com/v1/completions"
DEFAULT_API_KEY_ENV = "OPENAI_API_KEY"
RESPONSE_SUFFIX = ".response"
MANIFEST_NAME = "manifest.json"

_RETRYABLE_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}
_BUDGET_HINTS = ("maximum context length", "max_tokens", "context_length_exceeded", "too many tokens")


class FinishReason(str, enum.Enum):
    STOP = "stop"
    LENGTH = "length"
    OTHER = "other"

    @classmethod
    def coerce(cls, value) -> "FinishReason":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            return cls.OTHER


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    max_tokens: int
    temperature: float = 0.0
    top_p: float = 1.0
    model: str = "davinci"
    # routing key for fixtures; never sent over the wire
    doc_id: str | None = None

    def __post_init__(self):
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")

    def payload(self, model_key: str = "model") -> dict:
        return {
            "prompt": self.prompt,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
            "top_p": self.top_p,
            model_key: self.model,
        }


@dataclass(frozen=True)
class CompletionResult:
    doc_id: str | None
    text: str
    finish_reason: FinishReason
    raw_response: str


def parse_response_body(body: str, doc_id: str | None = None) -> CompletionResult:
    """Pull the first choice out of a completion-API JSON response."""
    try:
        data = json.loads(body)
        choice = data["choices"][0]
        text = choice["text"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise BackendError(f"unexpected completion response: {exc}: {body[:200]}") from None
    return CompletionResult(
        doc_id=doc_id,
        text=text,
        finish_reason=FinishReason.coerce(choice.get("finish_reason")),
        raw_response=body,
    )


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResult: ...


class HttpBackend:
    """POSTs requests to a completion endpoint, retrying transient failures.

    The credential comes from the environment variable named by
    ``api_key_env``; it is never read from config files.
    """

    def __init__(
        self,
        endpoint: str = DEFAULT_ENDPOINT,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        retry_limit: int = 3,
        backoff: float = 1.0,
        timeout: float = 60.0,
        model_key: str = "model",
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        api_key = os.environ.get(api_key_env)
        if not api_key:
            raise ConfigurationError(f"environment variable {api_key_env} is not set")
        if retry_limit < 0:
            raise ConfigurationError("retry_limit must be non-negative")
        self.endpoint = endpoint
        self.retry_limit = retry_limit
        self.backoff = backoff
        self.model_key = model_key
        self._headers = {"Authorization": f"Bearer {api_key}"}
        self._client = client or httpx.Client(timeout=timeout)
        self._sleep = sleep

    def complete(self, request: CompletionRequest) -> CompletionResult:
        payload = request.payload(self.model_key)
        attempt = 0
        while True:
            try:
                response = self._client.post(self.endpoint, json=payload, headers=self._headers)
                status, body = response.status_code, response.text
            except httpx.TransportError as exc:
                status, body = 0, f"{type(exc).__name__}: {exc}"
            if 200 <= status < 300:
                return parse_response_body(body, request.doc_id)
            if status == 400 and any(h in body.lower() for h in _BUDGET_HINTS):
                raise BudgetRejected(body)
            retryable = status == 0 or status in _RETRYABLE_STATUS
            if not retryable or attempt >= self.retry_limit:
                raise TransportError(status, body)
            delay = self.backoff * 2**attempt
            log.warning("HTTP %s for %s; retry %d in %.1fs", status, request.doc_id, attempt + 1, delay)
            self._sleep(delay)
            attempt += 1


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class FixtureBackend:
    """Replays recorded completions from a JSON-lines file.

    Each line holds ``text`` and ``finish_reason`` plus a ``doc_id`` and/or
    ``prompt_sha256`` key. ``calls`` counts every ``complete`` invocation.
    """

    def __init__(self, entries: Sequence[dict]):
        self._by_doc = {}
        self._by_prompt = {}
        for entry in entries:
            if "doc_id" in entry:
                self._by_doc[entry["doc_id"]] = entry
            if "prompt_sha256" in entry:
                self._by_prompt[entry["prompt_sha256"]] = entry
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path) -> "FixtureBackend":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    entries.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ConfigurationError(f"{path}:{line_no}: bad fixture line: {exc}") from None
        return cls(entries)

    def complete(self, request: CompletionRequest) -> CompletionResult:
        with self._lock:
            self.calls += 1
        entry = self._by_doc.get(request.doc_id) if request.doc_id is not None else None
        if entry is None:
            entry = self._by_prompt.get(prompt_key(request.prompt))
        if entry is None:
            raise FixtureMissing(request.doc_id or prompt_key(request.prompt))
        finish = FinishReason.coerce(entry.get("finish_reason", "stop"))
        body = json.dumps(
            {
                "object": "text_completion",
                "model": request.model,
                "choices": [
                    {"index": 0, "text": entry["text"], "finish_reason": finish.value}
                ],
            },
            ensure_ascii=False,
            sort_keys=True,
        )
        return CompletionResult(request.doc_id, entry["text"], finish, body)


# -- raw response files -------------------------------------------------------


def write_raw_response(path, result: CompletionResult, metadata: dict) -> None:
    header = "".join(f"# {key}: {value}\n" for key, value in metadata.items())
    _atomic_write(Path(path), header + result.raw_response)


def read_raw_response(path) -> tuple[dict, CompletionResult]:
    content = Path(path).read_text(encoding="utf-8")
    metadata = {}
    pos = 0
    while content.startswith("#", pos):
        end = content.find("\n", pos)
        if end == -1:
            end = len(content)
        key, _, value = content[pos + 1 : end].strip().partition(":")
        metadata[key.strip()] = value.strip()
        pos = end + 1
    doc_id = metadata.get("doc_id") or Path(path).name[: -len(RESPONSE_SUFFIX)]
    return metadata, parse_response_body(content[pos:], doc_id)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


# -- batch driver -------------------------------------------------------------


@dataclass
class RunConfig:
    output_directory: Path
    batch_size: int = 25
    model: str = "davinci"
    temperature: float = 0.0
    top_p: float = 1.0
    budget: BudgetPolicy = field(default_factory=BudgetPolicy)
    retry_limit: int = 3
    request_concurrency: int = 1

    def __post_init__(self):
        self.output_directory = Path(self.output_directory)
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if self.retry_limit < 0:
            raise ConfigurationError("retry_limit must be non-negative")
        if self.request_concurrency < 1:
            raise ConfigurationError("request_concurrency must be at least 1")


class Status(str, enum.Enum):
    COMPLETED = "Completed"
    OVERSIZED_PROMPT = "OversizedPrompt"
    FAILED = "Failed"


@dataclass
class ManifestEntry:
    doc_id: str
    status: Status
    batch: int
    prompt_tokens: int | None = None
    max_tokens: int | None = None
    finish_reason: str | None = None
    truncated: bool = False
    reason: str | None = None


@dataclass
class RunManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def by_doc(self) -> dict[str, ManifestEntry]:
        return {e.doc_id: e for e in self.entries}

    def completed(self) -> list[str]:
        return [e.doc_id for e in self.entries if e.status is Status.COMPLETED]

    def to_json(self) -> str:
        rows = []
        for e in self.entries:
            row = asdict(e)
            row["status"] = e.status.value
            rows.append(row)
        return json.dumps({"entries": rows}, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        data = json.loads(text)
        return cls([ManifestEntry(**{**row, "status": Status(row["status"])}) for row in data["entries"]])

    @classmethod
    def load(cls, directory) -> "RunManifest":
        path = Path(directory) / MANIFEST_NAME
        if not path.exists():
            return cls()
        return cls.from_json(path.read_text(encoding="utf-8"))

    def save(self, directory) -> None:
        _atomic_write(Path(directory) / MANIFEST_NAME, self.to_json())


def response_path(directory, doc_id: str) -> Path:
    return Path(directory) / f"{doc_id}{RESPONSE_SUFFIX}"


def batches(items: Sequence, size: int) -> list[list]:
    return [list(items[i : i + size]) for i in range(0, len(items), size)]


def run_batch(corpus, base_examples, config: RunConfig, backend: Backend) -> RunManifest:
    """Submit every paragraph of ``corpus`` and persist one response file each.

    Paragraphs already marked Completed in an existing manifest (with their
    response file present) are skipped. A transport failure aborts the rest
    of its batch; other per-paragraph failures are recorded and skipped.
    """
    out = config.output_directory
    out.mkdir(parents=True, exist_ok=True)
    previous = RunManifest.load(out).by_doc()
    manifest = RunManifest()
    doc_ids = sorted(corpus.paragraphs)

    def prepare(doc_id, batch_no):
        prompt = build_prompt(base_examples, corpus.paragraphs[doc_id])
        tokens = estimate_tokens(prompt, config.budget)
        try:
            max_tokens = compute_max_tokens(tokens, config.budget)
        except OversizedPrompt as exc:
            return None, ManifestEntry(
                doc_id, Status.OVERSIZED_PROMPT, batch_no, prompt_tokens=tokens, reason=str(exc)
            )
        request = CompletionRequest(
            prompt=prompt,
            max_tokens=max_tokens,
            temperature=config.temperature,
            top_p=config.top_p,
            model=config.model,
            doc_id=doc_id,
        )
        return request, ManifestEntry(
            doc_id, Status.COMPLETED, batch_no, prompt_tokens=tokens, max_tokens=max_tokens
        )

    def record(entry, result=None):
        if result is not None:
            write_raw_response(
                response_path(out, entry.doc_id),
                result,
                {
                    "doc_id": entry.doc_id,
                    "model": config.model,
                    "prompt_tokens": entry.prompt_tokens,
                    "max_tokens": entry.max_tokens,
                    "finish_reason": result.finish_reason.value,
                },
            )
        manifest.entries.append(entry)
        manifest.save(out)

    with ThreadPoolExecutor(max_workers=config.request_concurrency) as pool:
        for batch_no, batch in enumerate(batches(doc_ids, config.batch_size), start=1):
            pending = []
            for doc_id in batch:
                prior = previous.get(doc_id)
                if (
                    prior is not None
                    and prior.status is Status.COMPLETED
                    and response_path(out, doc_id).exists()
                ):
                    record(prior)
                    continue
                request, entry = prepare(doc_id, batch_no)
                if request is None:
                    record(entry)
                    continue
                pending.append((entry, request))

            queue, inflight = deque(pending), deque()
            aborted = None
            while queue or inflight:
                while queue and aborted is None and len(inflight) < config.request_concurrency:
                    entry, request = queue.popleft()
                    inflight.append((entry, pool.submit(backend.complete, request)))
                if not inflight:
                    entry, _ = queue.popleft()
                    entry.status, entry.reason = Status.FAILED, f"batch aborted after {aborted}"
                    record(entry)
                    continue
                entry, future = inflight.popleft()
                try:
                    result = future.result()
                except TransportError as exc:
                    entry.status, entry.reason = Status.FAILED, f"TransportError: {exc}"
                    record(entry)
                    aborted = aborted or entry.doc_id
                    continue
                except BackendError as exc:
                    entry.status, entry.reason = Status.FAILED, f"{type(exc).__name__}: {exc}"
                    record(entry)
                    continue
                entry.finish_reason = result.finish_reason.value
                entry.truncated = result.finish_reason is FinishReason.LENGTH
                record(entry, result)
            if aborted is not None:
                log.error("batch %d aborted after failure on %s", batch_no, aborted)
    manifest.save(out)
    return manifest
