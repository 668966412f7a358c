"""Exception hierarchy shared across the pipeline stages."""


class MeasExtractError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(MeasExtractError):
    pass


class AnnotationParseError(MeasExtractError):
    """A TSV row could not be turned into an Annotation.

    ``row`` is the 1-based data row number (header excluded) when known.
    """

    def __init__(self, message, row=None, raw=None):
        self.row = row
        self.raw = raw
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class OversizedPrompt(MeasExtractError):
    def __init__(self, prompt_tokens, token_limit, safety_margin=0):
        self.prompt_tokens = prompt_tokens
        self.token_limit = token_limit
        self.safety_margin = safety_margin
        super().__init__(
            f"prompt needs {prompt_tokens} tokens; limit is {token_limit}"
            f" (safety margin {safety_margin}) leaving no room for a completion"
        )


class BackendError(MeasExtractError):
    pass


class TransportError(BackendError):
    def __init__(self, status, body):
        self.status = status
        self.body = body
        super().__init__(f"HTTP {status}: {body[:200]}")


class BudgetRejected(BackendError):
    """The server refused the request because of its token limit."""

    def __init__(self, body):
        self.body = body
        super().__init__(f"request rejected for token budget: {body[:200]}")


class FixtureMissing(BackendError):
    def __init__(self, key):
        self.key = key
        super().__init__(f"no fixture completion for {key!r}")
