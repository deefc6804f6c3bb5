"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class SamRagError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(SamRagError, ValueError):
    """A caller violated an operation's precondition."""


class RecordParseError(SamRagError):
    """A line in a line-delimited input file could not be decoded."""

    def __init__(self, path, line_no: int, reason: str):
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{self.path}:{line_no}: {reason}")


CorpusParseError = RecordParseError


class IntegrityError(SamRagError):
    """Referential or uniqueness invariant broken in a corpus or fixture file."""


class BackendError(SamRagError):
    def __init__(self, message: str, *, transient: bool, attempts: int = 1, status: int | None = None):
        self.transient = transient
        self.attempts = attempts
        self.status = status
        kind = "transient" if transient else "permanent"
        super().__init__(f"{message} ({kind}, attempts={attempts})")


class FixtureMissing(BackendError):
    def __init__(self, key: str):
        self.key = key
        SamRagError.__init__(self, f"no fixture for key {key!r}")
        self.transient = False
        self.attempts = 1
        self.status = None


class ParseFailure(SamRagError):
    """Backend output did not contain a usable Reasoning/Response object."""

    def __init__(self, reason: str, raw: str = ""):
        self.raw = raw
        super().__init__(reason)


class GenerationFailure(SamRagError):
    pass


class EmptyNegatives(SamRagError):
    pass
