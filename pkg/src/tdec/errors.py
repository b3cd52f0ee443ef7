"""Exception taxonomy shared across the pipeline.

The CLI maps these onto distinct exit codes, so subcommands raise the most
specific class that applies instead of a bare Exception.
"""

from __future__ import annotations


class TdecError(Exception):
    """Base class for all package errors."""


class ConfigError(TdecError):
    """Invalid or incomplete run configuration (bad keys, missing paths)."""


class BudgetTooSmallError(TdecError):
    """max_new_tokens cannot fit the markers, the minimum answer, and EOS."""


class InvalidStateError(TdecError):
    """A controller was driven past its terminal state."""


class ConstraintViolationError(TdecError):
    """An observed token does not match the forced token it replaced."""


class DegenerateDistributionError(TdecError):
    """Every score is negative infinity; nothing can be sampled."""


class OutOfVocabularyError(TdecError):
    """A token id or character falls outside the tokenizer/model vocabulary."""


class BackendError(TdecError):
    """Base class for model-backend failures."""


class TransportError(BackendError):
    """The backend endpoint could not be reached or kept failing."""


class SchemaError(BackendError):
    """The backend answered with a malformed or inconsistent payload."""


class VocabSizeMismatchError(SchemaError):
    """The backend advertised a vocabulary size that contradicts earlier calls."""


class InconsistentMethodError(TdecError):
    """Prompt parts violate the chosen prompting method's invariants."""


class MalformedOutputError(TdecError):
    """Text passed for span extraction is missing or misordering markers."""


class EmptyBenchmarkError(TdecError):
    """Aggregation was asked to average over a benchmark with no items."""


class InsufficientEligibleItemsError(TdecError):
    """Fewer both-correct items exist than the requested judge sample size."""
